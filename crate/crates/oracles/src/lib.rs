//! Brute-force reference implementations used by the test suites.
//!
//! Everything here works on plain slices and is written for clarity, not
//! speed. Nothing is shared with the `algtd` crate on purpose.

/// Summary of an oracle sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OracleReport {
    pub cases: usize,
    pub max_abs_deviation: f64,
    pub first_failure: Option<String>,
}

impl OracleReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one comparison; the first one outside `tol` is remembered.
    pub fn check(&mut self, case: impl FnOnce() -> String, got: f64, want: f64, tol: f64) {
        self.cases += 1;
        let dev = if got == want { 0.0 } else { (got - want).abs() };
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        if dev > self.max_abs_deviation {
            self.max_abs_deviation = dev;
        }
        if dev > tol && self.first_failure.is_none() {
            self.first_failure = Some(format!("{}: got {got}, want {want}", case()));
        }
    }

    pub fn passed(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Scatteredness of a row-major `width x height` heatmap: every cell gets the
/// key (value bin, squared distance to the peak, row-major index), the peak is
/// put first and the rest are fully sorted by bin desc, distance desc, index
/// asc. The result is the mean Euclidean distance from the peak to the next
/// `points` cells, divided by the grid diagonal.
pub fn oracle_scatteredness(
    values: &[f64],
    width: usize,
    height: usize,
    bins: usize,
    points: usize,
) -> f64 {
    assert_eq!(values.len(), width * height);
    let mut peak = 0;
    for i in 0..values.len() {
        if values[i] > values[peak] {
            peak = i;
        }
    }
    let max = values[peak];
    let (px, py) = ((peak % width) as i64, (peak / width) as i64);

    let mut keyed = Vec::new();
    for (i, &value) in values.iter().enumerate() {
        if i == peak {
            continue;
        }
        let bin = if max <= 0.0 {
            0
        } else {
            let b = (value / max * bins as f64).floor() as i64;
            b.min(bins as i64 - 1)
        };
        let (x, y) = ((i % width) as i64, (i / width) as i64);
        let d2 = (x - px) * (x - px) + (y - py) * (y - py);
        keyed.push((bin, d2, i));
    }
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));

    let mut total = 0.0;
    for &(_, d2, _) in keyed.iter().take(points) {
        total += (d2 as f64).sqrt();
    }
    let diag = ((width * width + height * height) as f64).sqrt();
    total / points as f64 / diag
}

/// ROC AUC by counting every (positive, negative) pair: a win counts 1, a tie
/// counts 1/2. `None` when either class is empty.
pub fn oracle_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        if !positive[i] {
            continue;
        }
        for j in 0..scores.len() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0.0 {
        None
    } else {
        Some(wins / pairs)
    }
}

/// Central-difference gradient of `loss` at `params` with step `h`.
pub fn oracle_grad<F: FnMut(&[f64]) -> f64>(mut loss: F, params: &[f64], h: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        grad.push((up - down) / (2.0 * h));
    }
    grad
}

/// Ids of the `k` best `(id, score)` pairs: full sort by score desc, id asc.
pub fn oracle_topk(scores: &[(u64, f64)], k: usize) -> Vec<u64> {
    let mut all = scores.to_vec();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.iter().take(k).map(|p| p.0).collect()
}

/// Shannon entropy (nats) of softmax(values / tau), summed term by term.
pub fn oracle_entropy(values: &[f64], tau: f64) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = values.iter().map(|v| ((v - max) / tau).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut h = 0.0;
    for w in weights {
        let p = w / z;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Mean over cells of the population variance across `maps`, two-pass per cell.
pub fn oracle_mean_variance(maps: &[Vec<f64>]) -> f64 {
    let n = maps.len() as f64;
    let cells = maps[0].len();
    let mut total = 0.0;
    for c in 0..cells {
        let mut mean = 0.0;
        for m in maps {
            mean += m[c];
        }
        mean /= n;
        let mut var = 0.0;
        for m in maps {
            var += (m[c] - mean) * (m[c] - mean);
        }
        total += var / n;
    }
    total / cells as f64
}

/// (distance to the centroid of `gts`, distance to the nearest of `gts`).
pub fn oracle_distances(pred: (f64, f64), gts: &[(f64, f64)]) -> (f64, f64) {
    let n = gts.len() as f64;
    let cx = gts.iter().map(|g| g.0).sum::<f64>() / n;
    let cy = gts.iter().map(|g| g.1).sum::<f64>() / n;
    let avg = ((pred.0 - cx).powi(2) + (pred.1 - cy).powi(2)).sqrt();
    let mut min = f64::INFINITY;
    for g in gts {
        let d = ((pred.0 - g.0).powi(2) + (pred.1 - g.1).powi(2)).sqrt();
        if d < min {
            min = d;
        }
    }
    (avg, min)
}

/// Mean squared difference over the cells where `mask` is set.
pub fn oracle_masked_mse(a: &[f64], b: &[f64], mask: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..a.len() {
        if mask[i] {
            sum += (a[i] - b[i]) * (a[i] - b[i]);
            n += 1;
        }
    }
    sum / n as f64
}
