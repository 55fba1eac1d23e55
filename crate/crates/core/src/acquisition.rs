//! The gaze-target acquisition function.
//!
//! Three per-sample signals, each maximized over the augmented views:
//! - objectness: detector confidence of the objects hit by the heatmap peak
//! - scatteredness: mean distance from the peak to the strongest, farthest activations
//! - discrepancy: distance between the attention-map and gaze-heatmap peaks
//!
//! Scatteredness and discrepancy are measured in cells and divided by the
//! grid diagonal, so all three live in `[0, 1]`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax_peak, cell_center, BBox, GridPoint, GridSize, Heatmap};
use crate::learner::Prediction;
use crate::world::SampleId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

impl ScoreWeights {
    pub const fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            lambda3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda1, self.lambda2, self.lambda3];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ws.iter().all(|w| *w == 0.0) {
            return Err(Error::config(format!(
                "score weights must be non-negative with at least one > 0, got {ws:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Sort by (value bin desc, distance from peak desc, (y, x) asc).
    #[default]
    Lexicographic,
    /// Repeatedly take the cell maximizing bin level times its distance to
    /// the cells already taken.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatterConfig {
    pub bins: usize,
    pub points: usize,
    #[serde(default)]
    pub rank_mode: RankMode,
}

impl Default for ScatterConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            points: 5,
            rank_mode: RankMode::Lexicographic,
        }
    }
}

impl ScatterConfig {
    pub fn validate(&self, size: GridSize) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::config("scatter bins must be >= 2"));
        }
        if self.points < 1 || self.points >= size.cells() {
            return Err(Error::config(format!(
                "scatter points must be in [1, {}) for a {}x{} grid",
                size.cells(),
                size.width,
                size.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub sample_id: SampleId,
    pub gamma: f64,
    pub sigma_scatter: f64,
    pub delta: f64,
    pub combined: f64,
    pub pseudo: f64,
}

/// Max confidence among objects whose box contains the heatmap peak, 0 if none.
pub fn objectness_single(objects: &[DetectedObject], h_g: &Heatmap) -> f64 {
    let peak = cell_center(argmax_peak(h_g), h_g.size());
    objects
        .iter()
        .filter(|o| o.bbox.contains(peak))
        .map(|o| o.confidence)
        .fold(0.0, f64::max)
}

/// Max of per-view objectness; `views[i]` pairs that view's detections with its heatmap.
pub fn objectness(views: &[(&[DetectedObject], &Heatmap)]) -> f64 {
    views
        .iter()
        .map(|(objs, h)| objectness_single(objs, h))
        .fold(0.0, f64::max)
}

fn bin_of(v: f64, max: f64, bins: usize) -> usize {
    if max <= 0.0 {
        0
    } else {
        ((v / max * bins as f64).floor() as usize).min(bins - 1)
    }
}

fn sq_dist(a: GridPoint, b: GridPoint) -> usize {
    let dx = a.x.abs_diff(b.x);
    let dy = a.y.abs_diff(b.y);
    dx * dx + dy * dy
}

/// Ranked cell coordinates, peak first. At most `len` entries are returned.
pub fn ranked_prefix(h: &Heatmap, cfg: &ScatterConfig, len: usize) -> Vec<GridPoint> {
    let peak = argmax_peak(h);
    let max = h.get(peak);
    let w = h.width();
    let len = len.min(h.values().len());
    if len == 0 {
        return Vec::new();
    }

    match cfg.rank_mode {
        RankMode::Lexicographic => {
            // (bin, squared distance, index); the squared distance keeps ties exact.
            let mut keyed: Vec<(usize, usize, usize)> = h
                .values()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != peak.y * w + peak.x)
                .map(|(i, &v)| {
                    let p = GridPoint::new(i % w, i / w);
                    (bin_of(v, max, cfg.bins), sq_dist(p, peak), i)
                })
                .collect();
            let cmp = |a: &(usize, usize, usize), b: &(usize, usize, usize)| {
                b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2))
            };
            let rest = len - 1;
            if rest > 0 && rest < keyed.len() {
                keyed.select_nth_unstable_by(rest - 1, cmp);
                keyed.truncate(rest);
            }
            keyed.sort_unstable_by(cmp);
            std::iter::once(peak)
                .chain(
                    keyed
                        .into_iter()
                        .take(rest)
                        .map(|(_, _, i)| GridPoint::new(i % w, i / w)),
                )
                .collect()
        }
        RankMode::Greedy => {
            let levels: Vec<f64> = h
                .values()
                .iter()
                .map(|&v| (bin_of(v, max, cfg.bins) + 1) as f64 / cfg.bins as f64)
                .collect();
            let mut taken = vec![false; levels.len()];
            let mut nearest: Vec<f64> = (0..levels.len())
                .map(|i| (sq_dist(GridPoint::new(i % w, i / w), peak) as f64).sqrt())
                .collect();
            taken[peak.y * w + peak.x] = true;
            let mut out = vec![peak];
            while out.len() < len {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..levels.len() {
                    if taken[i] {
                        continue;
                    }
                    let s = levels[i] * nearest[i];
                    if best.is_none_or(|(_, bs)| s > bs) {
                        best = Some((i, s));
                    }
                }
                let Some((i, _)) = best else { break };
                taken[i] = true;
                let p = GridPoint::new(i % w, i / w);
                for (j, n) in nearest.iter_mut().enumerate() {
                    let d = (sq_dist(GridPoint::new(j % w, j / w), p) as f64).sqrt();
                    if d < *n {
                        *n = d;
                    }
                }
                out.push(p);
            }
            out
        }
    }
}

/// The full ranking of every cell.
pub fn ranked_cells(h: &Heatmap, cfg: &ScatterConfig) -> Vec<GridPoint> {
    ranked_prefix(h, cfg, h.values().len())
}

/// Mean distance from the peak to the next `P` ranked cells, over the grid diagonal.
pub fn scatteredness_single(h: &Heatmap, cfg: &ScatterConfig) -> Result<f64> {
    cfg.validate(h.size())?;
    let ranked = ranked_prefix(h, cfg, cfg.points + 1);
    let first = ranked[0];
    let sum: f64 = ranked[1..].iter().map(|p| first.dist(p)).sum();
    Ok(sum / cfg.points as f64 / h.size().diagonal())
}

pub fn scatteredness(heatmaps: &[&Heatmap], cfg: &ScatterConfig) -> Result<f64> {
    if heatmaps.is_empty() {
        return Err(Error::InvalidInput(
            "scatteredness needs at least one view".into(),
        ));
    }
    heatmaps
        .iter()
        .map(|h| scatteredness_single(h, cfg))
        .try_fold(0.0_f64, |acc, s| s.map(|s| acc.max(s)))
}

/// Peak-to-peak distance between attention map and gaze heatmap, over the grid diagonal.
pub fn discrepancy_single(m_a: &Heatmap, h_g: &Heatmap) -> Result<f64> {
    m_a.same_size(h_g)?;
    let d = argmax_peak(m_a).dist(&argmax_peak(h_g));
    Ok(d / h_g.size().diagonal())
}

pub fn discrepancy(pairs: &[(&Heatmap, &Heatmap)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "discrepancy needs at least one view".into(),
        ));
    }
    pairs
        .iter()
        .map(|(m, h)| discrepancy_single(m, h))
        .try_fold(0.0_f64, |acc, d| d.map(|d| acc.max(d)))
}

pub fn acquisition_score(gamma: f64, sigma_scatter: f64, delta: f64, w: &ScoreWeights) -> f64 {
    w.lambda1 * gamma + w.lambda2 * sigma_scatter + w.lambda3 * delta
}

pub fn pseudo_score(h_g: &Heatmap, sigma_scatter_norm: f64) -> f64 {
    h_g.max_value() * (1.0 - sigma_scatter_norm)
}

/// Scores one sample from its per-view predictions. `detections[i]` are the
/// detector outputs already mapped into view `i`; view 0 is the identity view.
pub fn score_views(
    sample_id: SampleId,
    views: &[Prediction],
    detections: &[Vec<DetectedObject>],
    scatter: &ScatterConfig,
    weights: &ScoreWeights,
) -> Result<SampleScore> {
    if views.is_empty() || views.len() != detections.len() {
        return Err(Error::InvalidInput(format!(
            "sample {sample_id}: {} views but {} detection sets",
            views.len(),
            detections.len()
        )));
    }
    let gamma = views
        .iter()
        .zip(detections)
        .map(|(v, d)| objectness_single(d, &v.gaze))
        .fold(0.0, f64::max);
    let gazes: Vec<&Heatmap> = views.iter().map(|v| &v.gaze).collect();
    let sigma_scatter = scatteredness(&gazes, scatter)?;
    let pairs: Vec<(&Heatmap, &Heatmap)> = views.iter().map(|v| (&v.attention, &v.gaze)).collect();
    let delta = discrepancy(&pairs)?;
    Ok(SampleScore {
        sample_id,
        gamma,
        sigma_scatter,
        delta,
        combined: acquisition_score(gamma, sigma_scatter, delta, weights),
        pseudo: pseudo_score(&views[0].gaze, sigma_scatter),
    })
}

pub enum ScoreKey<'a> {
    Combined,
    Pseudo,
    Custom(&'a dyn Fn(&SampleScore) -> f64),
}

impl ScoreKey<'_> {
    pub fn value(&self, s: &SampleScore) -> f64 {
        match self {
            ScoreKey::Combined => s.combined,
            ScoreKey::Pseudo => s.pseudo,
            ScoreKey::Custom(f) => f(s),
        }
    }
}

/// Orders `(id, score)` pairs by score descending, then id ascending.
pub fn rank_by_score(items: &mut [(SampleId, f64)]) {
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Ids of the `k` highest-scoring samples; ties go to the smaller id.
pub fn select_top_k(scores: &[SampleScore], k: usize, key: &ScoreKey<'_>) -> Result<Vec<SampleId>> {
    if k > scores.len() {
        return Err(Error::InvalidInput(format!(
            "cannot select {k} samples from a pool of {}",
            scores.len()
        )));
    }
    let mut keyed: Vec<(SampleId, f64)> =
        scores.iter().map(|s| (s.sample_id, key.value(s))).collect();
    rank_by_score(&mut keyed);
    Ok(keyed.into_iter().take(k).map(|(id, _)| id).collect())
}

/// Coordinate ascent over a candidate grid for the score weights.
///
/// Not part of the acquisition rule itself: the objective is supplied by the
/// caller (typically validation AUC of a full run) and the search stops after
/// `rounds` sweeps or when a sweep makes no improvement.
pub fn tune_weights(
    start: ScoreWeights,
    candidates: &[f64],
    rounds: usize,
    mut objective: impl FnMut(&ScoreWeights) -> f64,
) -> (ScoreWeights, f64) {
    let mut best = start;
    let mut best_val = objective(&best);
    for _ in 0..rounds {
        let mut improved = false;
        for coord in 0..3 {
            for &c in candidates {
                let mut w = best;
                match coord {
                    0 => w.lambda1 = c,
                    1 => w.lambda2 = c,
                    _ => w.lambda3 = c,
                }
                if w == best || w.validate().is_err() {
                    continue;
                }
                let v = objective(&w);
                if v.partial_cmp(&best_val) == Some(Ordering::Greater) {
                    best = w;
                    best_val = v;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (best, best_val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::NormPoint;

    fn boxed(cx: f64, cy: f64, w: f64, h: f64, c: f64) -> DetectedObject {
        DetectedObject {
            bbox: BBox { cx, cy, w, h },
            confidence: c,
            class_id: 0,
        }
    }

    fn delta_map(w: usize, h: usize, at: GridPoint) -> Heatmap {
        Heatmap::from_fn(GridSize::new(w, h), |p| (p == at) as u8 as f64).unwrap()
    }

    /// 8x8 fixture: 1.0 at (0,0), 0.9 at (3,0), 0.8 at (0,4).
    fn fixture() -> Heatmap {
        Heatmap::from_fn(GridSize::new(8, 8), |p| match (p.x, p.y) {
            (0, 0) => 1.0,
            (3, 0) => 0.9,
            (0, 4) => 0.8,
            _ => 0.0,
        })
        .unwrap()
    }

    #[test]
    fn objectness_examples() {
        // peak at cell (4,4) of 10x10 -> center (0.45, 0.45)
        let h = delta_map(10, 10, GridPoint::new(4, 4));
        let inside = boxed(0.45, 0.45, 0.2, 0.2, 0.9);
        let outside = boxed(0.9, 0.9, 0.1, 0.1, 0.7);
        assert_eq!(objectness_single(&[inside, outside], &h), 0.9);
        assert_eq!(objectness_single(&[outside], &h), 0.0);
        assert_eq!(objectness_single(&[], &h), 0.0);
        let a = boxed(0.4, 0.4, 0.2, 0.2, 0.4);
        let b = boxed(0.5, 0.5, 0.2, 0.2, 0.6);
        assert_eq!(objectness_single(&[a, b], &h), 0.6);
    }

    #[test]
    fn objectness_over_views() {
        let h1 = delta_map(10, 10, GridPoint::new(4, 4));
        let h2 = delta_map(10, 10, GridPoint::new(8, 8));
        let o1 = [boxed(0.45, 0.45, 0.2, 0.2, 0.3)];
        let o2 = [boxed(0.85, 0.85, 0.2, 0.2, 0.7)];
        assert_eq!(objectness(&[(&o1, &h1), (&o2, &h2)]), 0.7);
        assert_eq!(objectness(&[(&[], &h1), (&[], &h2)]), 0.0);
    }

    #[test]
    fn ranking_fixture_prefix() {
        let cfg = ScatterConfig::default();
        let r = ranked_cells(&fixture(), &cfg);
        assert_eq!(r.len(), 64);
        assert_eq!(
            &r[..3],
            &[
                GridPoint::new(0, 0),
                GridPoint::new(3, 0),
                GridPoint::new(0, 4)
            ]
        );
        // then the zero bin, farthest from the peak first
        assert_eq!(r[3], GridPoint::new(7, 7));
    }

    #[test]
    fn ranking_uniform_corner_first() {
        let h = Heatmap::new(4, 4, vec![0.5; 16]).unwrap();
        let r = ranked_cells(&h, &ScatterConfig::default());
        assert_eq!(r[0], GridPoint::new(0, 0));
        assert_eq!(r[1], GridPoint::new(3, 3));
        // (3,2) and (2,3) tie on distance; row-major order decides
        assert_eq!(r[2], GridPoint::new(3, 2));
        assert_eq!(r[3], GridPoint::new(2, 3));
        let zero = Heatmap::zeros(GridSize::new(4, 4));
        assert_eq!(ranked_cells(&zero, &ScatterConfig::default()), r);
    }

    #[test]
    fn scatter_fixture_value() {
        let cfg = ScatterConfig {
            points: 2,
            ..Default::default()
        };
        let s = scatteredness_single(&fixture(), &cfg).unwrap();
        assert!((s - 3.5 / 128f64.sqrt()).abs() < 1e-15);
        assert!((s - 0.3094).abs() < 1e-4);
    }

    #[test]
    fn scatter_of_delta_is_farthest_corner() {
        let h = delta_map(8, 8, GridPoint::new(2, 1));
        let cfg = ScatterConfig {
            points: 1,
            ..Default::default()
        };
        let s = scatteredness_single(&h, &cfg).unwrap();
        let far = GridPoint::new(2, 1).dist(&GridPoint::new(7, 7));
        assert!((s - far / 128f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn scatter_config_limits() {
        let h = Heatmap::zeros(GridSize::new(2, 2));
        let bad = ScatterConfig {
            points: 4,
            ..Default::default()
        };
        assert!(scatteredness_single(&h, &bad).is_err());
        let ok = ScatterConfig {
            points: 3,
            ..Default::default()
        };
        assert!(scatteredness_single(&h, &ok).is_ok());
        assert!(scatteredness(&[], &ok).is_err());
    }

    #[test]
    fn scatter_max_over_views() {
        let cfg = ScatterConfig::default();
        let a = fixture();
        let b = Heatmap::new(8, 8, vec![1.0; 64]).unwrap();
        let sa = scatteredness_single(&a, &cfg).unwrap();
        let sb = scatteredness_single(&b, &cfg).unwrap();
        assert_eq!(scatteredness(&[&a, &b], &cfg).unwrap(), sa.max(sb));
        assert_eq!(scatteredness(&[&a], &cfg).unwrap(), sa);
    }

    #[test]
    fn greedy_mode_is_peak_first_and_spread() {
        let cfg = ScatterConfig {
            rank_mode: RankMode::Greedy,
            points: 3,
            ..Default::default()
        };
        let h = Heatmap::new(4, 4, vec![1.0; 16]).unwrap();
        let r = ranked_prefix(&h, &cfg, 4);
        assert_eq!(r[0], GridPoint::new(0, 0));
        assert_eq!(r[1], GridPoint::new(3, 3));
        assert!(scatteredness_single(&h, &cfg).unwrap() > 0.0);
    }

    #[test]
    fn discrepancy_examples() {
        let a = delta_map(64, 64, GridPoint::new(1, 2));
        let b = delta_map(64, 64, GridPoint::new(4, 6));
        assert_eq!(discrepancy_single(&a, &a).unwrap(), 0.0);
        let d = discrepancy_single(&a, &b).unwrap();
        assert!((d - 5.0 / 8192f64.sqrt()).abs() < 1e-15);
        assert!((d - 0.05524).abs() < 1e-5);
        assert_eq!(discrepancy(&[(&a, &a), (&a, &b)]).unwrap(), d);
        assert_eq!(discrepancy(&[(&a, &a), (&b, &b)]).unwrap(), 0.0);
        let small = Heatmap::zeros(GridSize::new(4, 4));
        assert!(discrepancy_single(&a, &small).is_err());
    }

    #[test]
    fn combined_and_pseudo() {
        let w = ScoreWeights::default();
        assert!((acquisition_score(0.9, 0.5, 0.2, &w) - 1.6).abs() < 1e-15);
        assert_eq!(acquisition_score(0.0, 0.0, 0.0, &w), 0.0);
        let only_gamma = ScoreWeights::new(1.0, 0.0, 0.0);
        assert_eq!(acquisition_score(0.37, 0.9, 0.8, &only_gamma), 0.37);

        let h =
            Heatmap::from_fn(GridSize::new(4, 4), |p| if p.x == 1 { 0.8 } else { 0.1 }).unwrap();
        assert!((pseudo_score(&h, 0.25) - 0.6).abs() < 1e-15);
        assert_eq!(pseudo_score(&h, 1.0), 0.0);
        assert_eq!(pseudo_score(&h, 0.0), 0.8);
    }

    fn score(id: u64, combined: f64) -> SampleScore {
        SampleScore {
            sample_id: SampleId(id),
            gamma: 0.0,
            sigma_scatter: 0.0,
            delta: 0.0,
            combined,
            pseudo: -combined,
        }
    }

    #[test]
    fn top_k_tie_break_and_errors() {
        let s = [score(0, 0.9), score(1, 0.1), score(2, 0.9)];
        assert_eq!(
            select_top_k(&s, 2, &ScoreKey::Combined).unwrap(),
            vec![SampleId(0), SampleId(2)]
        );
        assert_eq!(select_top_k(&s, 3, &ScoreKey::Combined).unwrap().len(), 3);
        assert!(select_top_k(&s, 4, &ScoreKey::Combined).is_err());
        assert_eq!(
            select_top_k(&s, 1, &ScoreKey::Pseudo).unwrap(),
            vec![SampleId(1)]
        );
        let by_id = |x: &SampleScore| x.sample_id.0 as f64;
        assert_eq!(
            select_top_k(&s, 1, &ScoreKey::Custom(&by_id)).unwrap(),
            vec![SampleId(2)]
        );
    }

    #[test]
    fn weights_validation() {
        assert!(ScoreWeights::new(0.0, 0.0, 0.0).validate().is_err());
        assert!(ScoreWeights::new(-1.0, 1.0, 0.0).validate().is_err());
        assert!(ScoreWeights::new(0.0, 0.0, 2.0).validate().is_ok());
    }

    #[test]
    fn tuner_climbs_a_concave_objective() {
        let target = [0.5, 1.0, 0.0];
        let obj = |w: &ScoreWeights| {
            -((w.lambda1 - target[0]).powi(2)
                + (w.lambda2 - target[1]).powi(2)
                + (w.lambda3 - target[2]).powi(2))
        };
        let (best, val) = tune_weights(ScoreWeights::default(), &[0.0, 0.5, 1.0, 2.0], 5, obj);
        assert_eq!(best, ScoreWeights::new(0.5, 1.0, 0.0));
        assert_eq!(val, 0.0);
    }

    #[test]
    fn peak_center_inside_box_edge() {
        // the peak's cell center, not the cell corner, is what boxes are tested against
        let h = delta_map(4, 4, GridPoint::new(0, 0));
        let b = boxed(0.0625, 0.0625, 0.125, 0.125, 0.5);
        assert!(b.bbox.contains(NormPoint::new(0.125, 0.125)));
        assert_eq!(objectness_single(&[b], &h), 0.5);
    }
}
