//! Pool-based active-learning loop: initial split, per-cycle acquisition,
//! oracle and pseudo labeling, retraining and held-out evaluation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::rank_by_score;
use crate::baselines::{algtd_scores, strategy_rank, ScoringContext, StrategyKind};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{argmax_peak, cell_center};
use crate::learner::{forward, train, LearnerParams, TrainConfig, TrainItem};
use crate::metrics::{evaluate_heatmap, EvalResult, DEFAULT_AUC_RADIUS};
use crate::seed;
use crate::world::{
    generate_range, oracle_label, LabeledSample, Provenance, Sample, SampleId, WorldConfig,
};

pub const RESULTS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ALConfig {
    pub pool_size: usize,
    pub init_labeled: usize,
    /// Oracle labels spent after the initial split.
    pub budget: usize,
    pub cycles: usize,
    /// Pseudo-labels per cycle for AL-GTD; `None` means one per oracle label.
    pub pseudo_per_cycle: Option<usize>,
    /// Replaces the pseudo-label count by this fraction of the pool.
    pub pseudo_fraction_override: Option<f64>,
    /// Let strategies other than AL-GTD and AL-SSL pseudo-label too.
    pub pseudo_for_all_strategies: bool,
    /// Re-predict existing pseudo-labels with the latest model every cycle.
    pub refresh_pseudo_labels: bool,
    pub strategy: StrategyKind,
    pub reset_weights: bool,
    pub eval_set_size: usize,
    pub auc_radius: f64,
    pub seeds: Vec<u64>,
    /// Mixed into the per-cycle strategy seed only.
    pub strategy_seed_salt: u64,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            pool_size: 2000,
            init_labeled: 200,
            budget: 500,
            cycles: 5,
            pseudo_per_cycle: None,
            pseudo_fraction_override: None,
            pseudo_for_all_strategies: false,
            refresh_pseudo_labels: false,
            strategy: StrategyKind::AlGtd,
            reset_weights: true,
            eval_set_size: 500,
            auc_radius: DEFAULT_AUC_RADIUS,
            seeds: (0..10).collect(),
            strategy_seed_salt: 0,
        }
    }
}

impl ALConfig {
    pub fn per_cycle(&self) -> usize {
        self.budget / self.cycles.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::config("cycles must be >= 1"));
        }
        if !self.budget.is_multiple_of(self.cycles) {
            return Err(Error::config(format!(
                "budget {} is not divisible by {} cycles",
                self.budget, self.cycles
            )));
        }
        if self.init_labeled == 0 {
            return Err(Error::config("init_labeled must be >= 1"));
        }
        if self.init_labeled + self.budget > self.pool_size {
            return Err(Error::config(format!(
                "init_labeled + budget = {} exceeds pool_size {}",
                self.init_labeled + self.budget,
                self.pool_size
            )));
        }
        if self.eval_set_size == 0 {
            return Err(Error::config("eval_set_size must be >= 1"));
        }
        if let Some(f) = self.pseudo_fraction_override {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::config("pseudo_fraction_override must be in [0,1]"));
            }
        }
        if self.auc_radius.is_nan() || self.auc_radius <= 0.0 {
            return Err(Error::config("auc_radius must be > 0"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        Ok(())
    }

    /// Pseudo-labels `strategy` adds per cycle, before capping by what is left.
    pub fn pseudo_count(&self, strategy: StrategyKind, alssl_fraction: f64) -> usize {
        let labels = strategy == StrategyKind::AlGtd
            || strategy == StrategyKind::AlSsl
            || self.pseudo_for_all_strategies;
        if !labels {
            return 0;
        }
        let of_pool = |f: f64| (f * self.pool_size as f64).round() as usize;
        match (self.pseudo_fraction_override, strategy) {
            (Some(f), _) => of_pool(f),
            (None, StrategyKind::AlSsl) => of_pool(alssl_fraction),
            (None, _) => self.pseudo_per_cycle.unwrap_or(self.per_cycle()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl ScoreStats {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Oracle-labeled samples in the training set.
    pub labeled_total: usize,
    pub pseudo_total: usize,
    pub unlabeled_total: usize,
    pub auc: f64,
    pub avg_dist: f64,
    pub min_dist: f64,
    /// Acquisition key over the samples selected this cycle.
    pub score: Option<ScoreStats>,
    pub train_loss_first: f64,
    pub train_loss_last: f64,
}

/// Pool bookkeeping after one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolSnapshot {
    pub cycle: usize,
    pub oracle: Vec<SampleId>,
    pub pseudo: Vec<SampleId>,
    pub unlabeled: Vec<SampleId>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<CycleRecord>,
    pub snapshots: Vec<PoolSnapshot>,
    /// Labeled set of the last cycle, sorted by id.
    pub final_labeled: Vec<LabeledSample>,
    pub final_params: LearnerParams,
}

/// The world a given experiment seed plays in.
pub fn world_for_seed(world: &WorldConfig, seed: u64) -> WorldConfig {
    WorldConfig {
        seed: seed::derive(world.seed, &[seed::tag("world"), seed]),
        ..world.clone()
    }
}

pub fn initial_params(cfg: &ExperimentConfig, seed: u64) -> LearnerParams {
    LearnerParams::init(
        cfg.train.hidden,
        seed::derive(cfg.train.seed, &[seed::tag("init"), seed]),
    )
}

/// Training configuration of cycle `cycle`; independent of the strategy.
pub fn cycle_train_config(cfg: &ExperimentConfig, seed: u64, cycle: usize) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(cfg.train.seed, &[seed::tag("cycle"), seed, cycle as u64]),
        ..cfg.train.clone()
    }
}

fn strategy_seed(cfg: &ExperimentConfig, kind: StrategyKind, seed: u64, cycle: usize) -> u64 {
    seed::derive(
        seed,
        &[
            seed::tag(kind.name()),
            cycle as u64,
            cfg.al.strategy_seed_salt,
        ],
    )
}

/// Mean metrics of the identity-view predictions over `eval_set`.
pub fn evaluate(
    params: &LearnerParams,
    eval_set: &[Sample],
    radius_cells: f64,
) -> Result<EvalResult> {
    if eval_set.is_empty() {
        return Err(Error::InvalidInput("evaluation set is empty".into()));
    }
    let per: Vec<EvalResult> = eval_set
        .par_iter()
        .map(|s| {
            evaluate_heatmap(
                &forward(params, s, None)?.gaze,
                &s.annotations,
                radius_cells,
            )
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok(EvalResult {
        auc: per.iter().map(|r| r.auc).sum::<f64>() / n,
        avg_dist: per.iter().map(|r| r.avg_dist).sum::<f64>() / n,
        min_dist: per.iter().map(|r| r.min_dist).sum::<f64>() / n,
    })
}

fn peak_label(params: &LearnerParams, s: &Sample) -> Result<LabeledSample> {
    let g = forward(params, s, None)?.gaze;
    Ok(LabeledSample {
        sample_id: s.id,
        label: cell_center(argmax_peak(&g), g.size()),
        provenance: Provenance::Pseudo,
    })
}

fn pseudo_from_scores(
    params: &LearnerParams,
    unlabeled: &[&Sample],
    mut scores: Vec<(SampleId, f64)>,
    k: usize,
) -> Result<Vec<LabeledSample>> {
    if k > unlabeled.len() {
        return Err(Error::InvalidInput(format!(
            "cannot pseudo-label {k} of {} samples",
            unlabeled.len()
        )));
    }
    rank_by_score(&mut scores);
    let by_id: HashMap<SampleId, &Sample> = unlabeled.iter().map(|s| (s.id, *s)).collect();
    scores
        .iter()
        .take(k)
        .map(|(id, _)| peak_label(params, by_id[id]))
        .collect()
}

/// The `k` most confident unlabeled samples, labeled with their predicted peaks.
pub fn pseudo_label_step(
    ctx: &ScoringContext<'_>,
    unlabeled: &[&Sample],
    k: usize,
) -> Result<Vec<LabeledSample>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let scores = algtd_scores(ctx, unlabeled)?
        .into_iter()
        .map(|s| (s.sample_id, s.pseudo))
        .collect();
    pseudo_from_scores(ctx.params, unlabeled, scores, k)
}

/// Train items for a labeled set, cached by sample so views are built once.
struct ItemCache<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    items: HashMap<(SampleId, u64, u64), TrainItem>,
}

impl<'a> ItemCache<'a> {
    fn new(cfg: &'a ExperimentConfig, seed: u64) -> Self {
        Self {
            cfg,
            seed,
            items: HashMap::new(),
        }
    }

    fn build(&mut self, pool: &[Sample], labeled: &[LabeledSample]) -> Result<Vec<TrainItem>> {
        let mut out = Vec::with_capacity(labeled.len());
        for l in labeled {
            let key = (l.sample_id, l.label.x.to_bits(), l.label.y.to_bits());
            if !self.items.contains_key(&key) {
                let mut rng = seed::rng(self.seed, &[seed::tag("views"), l.sample_id.0]);
                let item = TrainItem::new(
                    &pool[l.sample_id.0 as usize],
                    l.label,
                    &self.cfg.train.augmentations,
                    self.cfg.world.gt_sigma,
                    &mut rng,
                )?;
                self.items.insert(key, item);
            }
            out.push(self.items[&key].clone());
        }
        Ok(out)
    }
}

/// Runs one experiment seed with one strategy.
pub fn run_seed(cfg: &ExperimentConfig, kind: StrategyKind, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let al = &cfg.al;
    let world = world_for_seed(&cfg.world, seed);
    // Pool ids are 0..pool_size, evaluation ids follow, so the two never overlap.
    let pool = generate_range(&world, 0, al.pool_size);
    let eval_set = generate_range(&world, al.pool_size as u64, al.eval_set_size);
    let init = initial_params(cfg, seed);

    let mut init_rng = seed::rng(seed, &[seed::tag("initial-split")]);
    let mut ids: Vec<u64> = (0..al.pool_size as u64).collect();
    for i in (1..ids.len()).rev() {
        ids.swap(i, init_rng.random_range(0..=i));
    }
    let oracle_pick = |id: SampleId| -> LabeledSample {
        let mut rng = seed::rng(seed, &[seed::tag("oracle"), id.0]);
        LabeledSample {
            sample_id: id,
            label: oracle_label(&pool[id.0 as usize], &mut rng),
            provenance: Provenance::Oracle,
        }
    };

    let mut labeled: BTreeMap<SampleId, LabeledSample> = ids[..al.init_labeled]
        .iter()
        .map(|&i| (SampleId(i), oracle_pick(SampleId(i))))
        .collect();
    let mut unlabeled: BTreeSet<SampleId> = ids[al.init_labeled..]
        .iter()
        .map(|&i| SampleId(i))
        .collect();
    let mut cache = ItemCache::new(cfg, seed);

    let mut records = Vec::with_capacity(al.cycles + 1);
    let mut snapshots = Vec::with_capacity(al.cycles + 1);
    let mut params = init.clone();
    let mut checkpoints: Vec<LearnerParams> = Vec::new();
    let mut score_stats = None;

    for cycle in 0..=al.cycles {
        if cycle > 0 {
            let candidates: Vec<&Sample> =
                unlabeled.iter().map(|id| &pool[id.0 as usize]).collect();
            let ctx = ScoringContext {
                params: &params,
                checkpoints: &checkpoints,
                world: &world,
                specs: &cfg.train.augmentations,
                scatter: cfg.scatter,
                weights: cfg.weights,
                strategy: cfg.baselines,
                seed: strategy_seed(cfg, kind, seed, cycle),
            };
            let mut rng = seed::rng(ctx.seed, &[seed::tag("rank")]);
            let ranking = strategy_rank(kind, &ctx, &candidates, &mut rng)?;
            let chosen: Vec<SampleId> = ranking.order[..al.per_cycle()].to_vec();
            let chosen_set: BTreeSet<SampleId> = chosen.iter().copied().collect();
            let score_of: HashMap<SampleId, f64> = ranking.scores.iter().copied().collect();
            score_stats = ScoreStats::of(
                &chosen
                    .iter()
                    .filter_map(|id| score_of.get(id).copied())
                    .collect::<Vec<_>>(),
            );

            if al.refresh_pseudo_labels {
                for l in labeled
                    .values_mut()
                    .filter(|l| l.provenance == Provenance::Pseudo)
                {
                    *l = peak_label(&params, &pool[l.sample_id.0 as usize])?;
                }
            }
            for id in &chosen {
                unlabeled.remove(id);
                labeled.insert(*id, oracle_pick(*id));
            }

            let rest: Vec<&Sample> = candidates
                .iter()
                .filter(|s| !chosen_set.contains(&s.id))
                .copied()
                .collect();
            let k = al
                .pseudo_count(kind, cfg.baselines.alssl_pseudo_fraction)
                .min(rest.len());
            let pseudo = if k == 0 {
                Vec::new()
            } else if let Some(scores) = ranking.pseudo {
                let scores = scores
                    .into_iter()
                    .filter(|(id, _)| !chosen_set.contains(id))
                    .collect();
                pseudo_from_scores(&params, &rest, scores, k)?
            } else {
                pseudo_label_step(&ctx, &rest, k)?
            };
            for p in pseudo {
                unlabeled.remove(&p.sample_id);
                labeled.insert(p.sample_id, p);
            }
        }

        let set: Vec<LabeledSample> = labeled.values().copied().collect();
        let items = cache.build(&pool, &set)?;
        let start = if al.reset_weights || cycle == 0 {
            &init
        } else {
            &params
        };
        let outcome = train(start, &items, &cycle_train_config(cfg, seed, cycle))?;
        params = outcome.params;
        checkpoints = outcome.checkpoints.into_iter().map(|c| c.params).collect();
        let eval = evaluate(&params, &eval_set, al.auc_radius)?;

        let (oracle, pseudo): (Vec<&LabeledSample>, Vec<&LabeledSample>) =
            set.iter().partition(|l| l.provenance == Provenance::Oracle);
        records.push(CycleRecord {
            cycle,
            labeled_total: oracle.len(),
            pseudo_total: pseudo.len(),
            unlabeled_total: unlabeled.len(),
            auc: eval.auc,
            avg_dist: eval.avg_dist,
            min_dist: eval.min_dist,
            score: score_stats,
            train_loss_first: outcome.epoch_losses[0],
            train_loss_last: *outcome.epoch_losses.last().expect("at least one epoch"),
        });
        snapshots.push(PoolSnapshot {
            cycle,
            oracle: oracle.iter().map(|l| l.sample_id).collect(),
            pseudo: pseudo.iter().map(|l| l.sample_id).collect(),
            unlabeled: unlabeled.iter().copied().collect(),
        });
    }

    Ok(SeedRun {
        seed,
        records,
        snapshots,
        final_labeled: labeled.into_values().collect(),
        final_params: params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    #[serde(flatten)]
    pub record: CycleRecord,
}

/// Everything written to a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub schema: u32,
    pub strategy: StrategyKind,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub records: Vec<SeedRecord>,
}

impl RunResults {
    pub fn from_runs(cfg: &ExperimentConfig, strategy: StrategyKind, runs: &[SeedRun]) -> Self {
        Self {
            schema: RESULTS_SCHEMA,
            strategy,
            // Results must not depend on where they are written.
            config: ExperimentConfig {
                output_dir: Default::default(),
                ..cfg.clone()
            },
            seeds: runs.iter().map(|r| r.seed).collect(),
            records: runs
                .iter()
                .flat_map(|r| {
                    r.records.iter().map(|c| SeedRecord {
                        seed: r.seed,
                        record: c.clone(),
                    })
                })
                .collect(),
        }
    }

    /// Records of one cycle across seeds, in seed order.
    pub fn cycle(&self, cycle: usize) -> Vec<&CycleRecord> {
        self.records
            .iter()
            .filter(|r| r.record.cycle == cycle)
            .map(|r| &r.record)
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema").and_then(|v| v.as_u64()) {
            Some(v) if v == RESULTS_SCHEMA as u64 => Ok(serde_json::from_value(value)?),
            other => Err(Error::InvalidInput(format!(
                "unsupported results schema {other:?}, expected {RESULTS_SCHEMA}"
            ))),
        }
    }

    pub const CSV_HEADER: &'static str = "strategy,seed,cycle,labeled_total,pseudo_total,unlabeled_total,auc,avg_dist,min_dist,score_min,score_mean,score_max,train_loss_first,train_loss_last";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let c = &r.record;
            let (smin, smean, smax) = match c.score {
                Some(s) => (s.min.to_string(), s.mean.to_string(), s.max.to_string()),
                None => Default::default(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                self.strategy,
                r.seed,
                c.cycle,
                c.labeled_total,
                c.pseudo_total,
                c.unlabeled_total,
                c.auc,
                c.avg_dist,
                c.min_dist,
                smin,
                smean,
                smax,
                c.train_loss_first,
                c.train_loss_last
            ));
        }
        out
    }
}

/// All seeds of `cfg.al.seeds` for one strategy. Seeds run concurrently.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    strategy: StrategyKind,
) -> Result<(RunResults, Vec<SeedRun>)> {
    cfg.validate()?;
    let runs: Vec<SeedRun> = cfg
        .al
        .seeds
        .par_iter()
        .map(|&s| run_seed(cfg, strategy, s))
        .collect::<Result<_>>()?;
    Ok((RunResults::from_runs(cfg, strategy, &runs), runs))
}
