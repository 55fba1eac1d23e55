//! Acquisition strategies sharing the learner: AL-GTD and the baselines it is
//! compared against.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    rank_by_score, score_views, DetectedObject, SampleScore, ScatterConfig, ScoreWeights,
};
use crate::augment::{apply_sample, inverse_heatmap, AugKind, AugmentationSpec};
use crate::error::{Error, Result};
use crate::grid::Heatmap;
use crate::learner::{forward, forward_inputs, mc_forward, LearnerParams, Prediction, ViewInputs};
use crate::seed;
use crate::world::{detect, Sample, SampleId, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Random,
    #[serde(rename = "algtd")]
    AlGtd,
    Entropy,
    #[serde(rename = "mcdropout")]
    McDropout,
    #[serde(rename = "alssl")]
    AlSsl,
    Committee,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Random,
        StrategyKind::AlGtd,
        StrategyKind::Entropy,
        StrategyKind::McDropout,
        StrategyKind::AlSsl,
        StrategyKind::Committee,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::AlGtd => "algtd",
            StrategyKind::Entropy => "entropy",
            StrategyKind::McDropout => "mcdropout",
            StrategyKind::AlSsl => "alssl",
            StrategyKind::Committee => "committee",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown strategy {s:?}; expected one of random, algtd, entropy, mcdropout, alssl, committee"
                ))
            })
    }
}

/// Knobs of the baseline strategies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Softmax temperature of the entropy baseline.
    pub entropy_tau: f64,
    pub mc_passes: usize,
    pub mc_dropout_rate: f64,
    /// Fraction of the pool the AL-SSL baseline pseudo-labels per cycle.
    pub alssl_pseudo_fraction: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            entropy_tau: 0.05,
            mc_passes: 16,
            mc_dropout_rate: 0.1,
            alssl_pseudo_fraction: 0.02,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entropy_tau.is_nan() || self.entropy_tau <= 0.0 {
            return Err(Error::config("entropy_tau must be > 0"));
        }
        if self.mc_passes < 2 {
            return Err(Error::config("mc_passes must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.mc_dropout_rate) {
            return Err(Error::config("mc_dropout_rate must be in [0,1)"));
        }
        if !(0.0..=1.0).contains(&self.alssl_pseudo_fraction) {
            return Err(Error::config("alssl_pseudo_fraction must be in [0,1]"));
        }
        Ok(())
    }
}

/// Shannon entropy (nats) of softmax(h / tau) over all cells.
pub fn entropy_score(h_g: &Heatmap, tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    let max = h_g.max_value();
    let a: Vec<f64> = h_g.values().iter().map(|v| (v - max) / tau).collect();
    let z: f64 = a.iter().map(|x| x.exp()).sum();
    let mean_a: f64 = a.iter().map(|x| x.exp() * x).sum::<f64>() / z;
    Ok(z.ln() - mean_a)
}

/// Mean over cells of the population variance across maps.
fn mean_cell_variance(maps: &[Heatmap], what: &str) -> Result<f64> {
    if maps.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{what} needs at least 2 maps, got {}",
            maps.len()
        )));
    }
    for m in &maps[1..] {
        maps[0].same_size(m)?;
    }
    let n = maps.len() as f64;
    let cells = maps[0].values().len();
    let mut total = 0.0;
    for c in 0..cells {
        let mean = maps.iter().map(|m| m.values()[c]).sum::<f64>() / n;
        total += maps
            .iter()
            .map(|m| (m.values()[c] - mean).powi(2))
            .sum::<f64>()
            / n;
    }
    Ok(total / cells as f64)
}

pub fn mc_dropout_score(passes: &[Heatmap]) -> Result<f64> {
    mean_cell_variance(passes, "MC-dropout score")
}

pub fn committee_score(checkpoint_predictions: &[Heatmap]) -> Result<f64> {
    mean_cell_variance(checkpoint_predictions, "committee score")
}

/// Mean squared difference between a prediction and the un-flipped
/// prediction of the flipped input.
pub fn alssl_inconsistency(h_g: &Heatmap, h_g_flipped: &Heatmap) -> Result<f64> {
    h_g.same_size(h_g_flipped)?;
    let back = inverse_heatmap(&AugmentationSpec::HFLIP, h_g_flipped)?;
    let n = h_g.values().len() as f64;
    Ok(h_g
        .values()
        .iter()
        .zip(back.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Everything a strategy may look at when scoring the unlabeled pool.
#[derive(Debug, Clone, Copy)]
pub struct ScoringContext<'a> {
    pub params: &'a LearnerParams,
    /// Epoch checkpoints of the current model, oldest first.
    pub checkpoints: &'a [LearnerParams],
    pub world: &'a WorldConfig,
    pub specs: &'a [AugmentationSpec],
    pub scatter: ScatterConfig,
    pub weights: ScoreWeights,
    pub strategy: StrategyConfig,
    pub seed: u64,
}

/// Predictions and view-mapped detections for every view of the bundle.
pub fn predict_views(
    ctx: &ScoringContext<'_>,
    sample: &Sample,
) -> Result<(Vec<Prediction>, Vec<Vec<DetectedObject>>)> {
    let detections = detect(sample, ctx.world);
    let size = sample.grid();
    let mut rng = seed::rng(ctx.seed, &[seed::tag("views"), sample.id.0]);
    let mut preds = Vec::with_capacity(ctx.specs.len());
    let mut dets = Vec::with_capacity(ctx.specs.len());
    for spec in ctx.specs {
        if spec.kind == AugKind::Identity && spec.photometric_jitter == 0.0 {
            preds.push(forward(ctx.params, sample, None)?);
            dets.push(detections.clone());
        } else {
            let view = apply_sample(spec, sample, &mut rng)?;
            preds.push(forward_inputs(
                ctx.params,
                &ViewInputs::from_sample(&view),
                None,
            )?);
            dets.push(spec.apply_objects(&detections, size));
        }
    }
    Ok((preds, dets))
}

/// Acquisition scores for each sample, in input order.
pub fn algtd_scores(ctx: &ScoringContext<'_>, samples: &[&Sample]) -> Result<Vec<SampleScore>> {
    samples
        .par_iter()
        .map(|s| {
            let (preds, dets) = predict_views(ctx, s)?;
            score_views(s.id, &preds, &dets, &ctx.scatter, &ctx.weights)
        })
        .collect()
}

fn per_sample<F>(samples: &[&Sample], f: F) -> Result<Vec<(SampleId, f64)>>
where
    F: Fn(&Sample) -> Result<f64> + Sync,
{
    samples.par_iter().map(|s| Ok((s.id, f(s)?))).collect()
}

/// The result of ranking the unlabeled pool.
#[derive(Debug, Clone)]
pub struct Ranking {
    /// Best candidate first; a permutation of the input ids.
    pub order: Vec<SampleId>,
    /// Strategy score per sample, in input order. Empty for Random.
    pub scores: Vec<(SampleId, f64)>,
    /// Full acquisition breakdown, present for AL-GTD.
    pub algtd: Option<Vec<SampleScore>>,
    /// Pseudo-label candidates with their pseudo scores (AL-GTD and AL-SSL).
    pub pseudo: Option<Vec<(SampleId, f64)>>,
}

/// Scores every sample with the given strategy and orders them: descending
/// score with ties to the smaller id, or a seeded shuffle for Random.
pub fn strategy_rank<R: Rng + ?Sized>(
    kind: StrategyKind,
    ctx: &ScoringContext<'_>,
    samples: &[&Sample],
    rng: &mut R,
) -> Result<Ranking> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot rank an empty pool".into()));
    }
    let mut algtd = None;
    let mut pseudo = None;
    let scores = match kind {
        StrategyKind::Random => {
            let mut order: Vec<SampleId> = samples.iter().map(|s| s.id).collect();
            order.sort();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            return Ok(Ranking {
                order,
                scores: Vec::new(),
                algtd: None,
                pseudo: None,
            });
        }
        StrategyKind::AlGtd => {
            let full = algtd_scores(ctx, samples)?;
            let scores = full.iter().map(|s| (s.sample_id, s.combined)).collect();
            pseudo = Some(full.iter().map(|s| (s.sample_id, s.pseudo)).collect());
            algtd = Some(full);
            scores
        }
        StrategyKind::Entropy => per_sample(samples, |s| {
            entropy_score(
                &forward(ctx.params, s, None)?.gaze,
                ctx.strategy.entropy_tau,
            )
        })?,
        StrategyKind::McDropout => per_sample(samples, |s| {
            let passes = mc_forward(
                ctx.params,
                s,
                ctx.strategy.mc_passes,
                ctx.strategy.mc_dropout_rate,
                ctx.seed,
            )?;
            mc_dropout_score(&passes)
        })?,
        StrategyKind::AlSsl => {
            let flip_ctx = ScoringContext {
                specs: &[AugmentationSpec::IDENTITY, AugmentationSpec::HFLIP],
                ..*ctx
            };
            let both: Vec<(SampleId, f64, f64)> = samples
                .par_iter()
                .map(|s| {
                    let (preds, dets) = predict_views(&flip_ctx, s)?;
                    let inc = alssl_inconsistency(&preds[0].gaze, &preds[1].gaze)?;
                    let full = score_views(s.id, &preds, &dets, &ctx.scatter, &ctx.weights)?;
                    Ok((s.id, inc, full.pseudo))
                })
                .collect::<Result<_>>()?;
            pseudo = Some(both.iter().map(|(id, _, p)| (*id, *p)).collect());
            both.into_iter().map(|(id, inc, _)| (id, inc)).collect()
        }
        StrategyKind::Committee => {
            if ctx.checkpoints.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "committee needs at least 2 checkpoints, got {}",
                    ctx.checkpoints.len()
                )));
            }
            per_sample(samples, |s| {
                let x = ViewInputs::from_sample(s);
                let preds = ctx
                    .checkpoints
                    .iter()
                    .map(|p| forward_inputs(p, &x, None).map(|o| o.gaze))
                    .collect::<Result<Vec<_>>>()?;
                committee_score(&preds)
            })?
        }
    };
    let mut ranked = scores.clone();
    rank_by_score(&mut ranked);
    Ok(Ranking {
        order: ranked.into_iter().map(|(id, _)| id).collect(),
        scores,
        algtd,
        pseudo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::apply_heatmap;
    use crate::grid::{GridPoint, GridSize};
    use crate::world::{generate_pool, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(w: usize, h: usize) -> Heatmap {
        Heatmap::new(w, h, vec![0.5; w * h]).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_score(&uniform(64, 64), 0.05).unwrap() - 4096f64.ln()).abs() < 1e-9);
        assert!((entropy_score(&uniform(2, 2), 0.05).unwrap() - 4f64.ln()).abs() < 1e-12);
        let delta = Heatmap::from_fn(GridSize::new(16, 16), |p| {
            if p == GridPoint::new(3, 9) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let e = entropy_score(&delta, 0.05).unwrap();
        let direct = algtd_oracles::oracle_entropy(delta.values(), 0.05);
        assert!((e - direct).abs() < 1e-12 && e < 1e-4, "{e} vs {direct}");
        assert!(entropy_score(&delta, 0.0).is_err());
    }

    #[test]
    fn variance_examples() {
        let g = GridSize::new(4, 4);
        let zero = Heatmap::zeros(g);
        let one = Heatmap::new(4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(
            mc_dropout_score(&[zero.clone(), zero.clone()]).unwrap(),
            0.0
        );
        assert_eq!(mc_dropout_score(&[zero.clone(), one]).unwrap(), 0.25);
        assert!(mc_dropout_score(std::slice::from_ref(&zero)).is_err());
        let half = Heatmap::new(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(committee_score(&[zero.clone(), half]).unwrap(), 0.0625);
        assert!(committee_score(&[zero]).is_err());
    }

    #[test]
    fn alssl_aligned_flip_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Heatmap::from_fn(GridSize::new(7, 5), |_| rng.random::<f64>()).unwrap();
        let f = apply_heatmap(&AugmentationSpec::HFLIP, &h).unwrap();
        assert_eq!(alssl_inconsistency(&h, &f).unwrap(), 0.0);
        assert!(alssl_inconsistency(&h, &h).unwrap() > 0.0);
    }

    #[test]
    fn names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.name())
            );
        }
        assert!("vaal".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn every_strategy_ranks_a_permutation() {
        let world = WorldConfig {
            grid: GridSize::new(12, 12),
            ..Default::default()
        };
        let pool = generate_pool(&world, 30).unwrap();
        let refs: Vec<&Sample> = pool.iter().collect();
        let params = LearnerParams::init(8, 1);
        let mut other = params.clone();
        other.b2 = 0.3;
        let checkpoints = vec![params.clone(), other];
        let specs = crate::augment::default_bundle();
        let ctx = ScoringContext {
            params: &params,
            checkpoints: &checkpoints,
            world: &world,
            specs: &specs,
            scatter: ScatterConfig::default(),
            weights: ScoreWeights::default(),
            strategy: StrategyConfig::default(),
            seed: 5,
        };
        for kind in StrategyKind::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let r = strategy_rank(kind, &ctx, &refs, &mut rng).unwrap();
            let mut ids = r.order.clone();
            ids.sort();
            assert_eq!(ids, pool.iter().map(|s| s.id).collect::<Vec<_>>(), "{kind}");
            if kind != StrategyKind::Random {
                let mut sorted = r.scores.clone();
                sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                assert_eq!(r.order, sorted.iter().map(|p| p.0).collect::<Vec<_>>());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            assert_eq!(
                strategy_rank(kind, &ctx, &refs, &mut rng).unwrap().order,
                r.order
            );
        }
    }
}
