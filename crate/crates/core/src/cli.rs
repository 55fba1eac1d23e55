//! Subcommand implementations behind the `algtd` binary: pool generation,
//! experiment runs, archive scoring and result reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::acquisition::{
    acquisition_score, discrepancy_single, objectness_single, pseudo_score, rank_by_score,
    scatteredness_single, DetectedObject, SampleScore,
};
use crate::alloop::{run_experiment, CycleRecord, RunResults, SeedRun};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::grid::{Heatmap, NormPoint};
use crate::hmap;
use crate::world::{generate_pool, Sample, SampleId, WorldConfig};

pub const POOL_FORMAT_VERSION: u32 = 1;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Error::config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Everything about a sample except its maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SampleMeta {
    id: SampleId,
    head: NormPoint,
    gaze_cue: [f64; 2],
    true_gaze: NormPoint,
    annotations: Vec<NormPoint>,
    true_objects: Vec<DetectedObject>,
    object_salience: Vec<f64>,
    gaze_on_object: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PoolHeader {
    format_version: u32,
    world: WorldConfig,
    n: usize,
    samples: Vec<SampleMeta>,
}

pub const POOL_JSON: &str = "pool.json";
pub const SALIENCE_HMAP: &str = "salience.hmap";
pub const DEPTH_HMAP: &str = "depth.hmap";

pub fn write_pool(dir: &Path, world: &WorldConfig, samples: &[Sample]) -> Result<()> {
    let header = PoolHeader {
        format_version: POOL_FORMAT_VERSION,
        world: world.clone(),
        n: samples.len(),
        samples: samples
            .iter()
            .map(|s| SampleMeta {
                id: s.id,
                head: s.head,
                gaze_cue: s.gaze_cue,
                true_gaze: s.true_gaze,
                annotations: s.annotations.clone(),
                true_objects: s.true_objects.clone(),
                object_salience: s.object_salience.clone(),
                gaze_on_object: s.gaze_on_object,
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&header)?;
    json.push('\n');
    write(&dir.join(POOL_JSON), json)?;
    let sal: Vec<Heatmap> = samples.iter().map(|s| s.salience_map.clone()).collect();
    let dep: Vec<Heatmap> = samples.iter().map(|s| s.depth_map.clone()).collect();
    hmap::write_file(&dir.join(SALIENCE_HMAP), &sal)?;
    hmap::write_file(&dir.join(DEPTH_HMAP), &dep)
}

pub fn read_pool(dir: &Path) -> Result<(WorldConfig, Vec<Sample>)> {
    let header: PoolHeader = serde_json::from_str(&read_to_string(&dir.join(POOL_JSON))?)?;
    if header.format_version != POOL_FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "unsupported pool format version {}",
            header.format_version
        )));
    }
    let sal = hmap::read_file(&dir.join(SALIENCE_HMAP))?;
    let dep = hmap::read_file(&dir.join(DEPTH_HMAP))?;
    if sal.len() != header.n || dep.len() != header.n || header.samples.len() != header.n {
        return Err(Error::InvalidInput(format!(
            "pool declares {} samples but holds {} metadata, {} salience and {} depth records",
            header.n,
            header.samples.len(),
            sal.len(),
            dep.len()
        )));
    }
    let samples = header
        .samples
        .into_iter()
        .zip(sal.into_iter().zip(dep))
        .map(|(m, (salience_map, depth_map))| Sample {
            id: m.id,
            head: m.head,
            gaze_cue: m.gaze_cue,
            true_gaze: m.true_gaze,
            annotations: m.annotations,
            salience_map,
            depth_map,
            true_objects: m.true_objects,
            object_salience: m.object_salience,
            gaze_on_object: m.gaze_on_object,
        })
        .collect();
    Ok((header.world, samples))
}

/// Generates a pool of `n` samples into `out`.
pub fn cmd_gen(cfg: &ExperimentConfig, n: usize, out: &Path, force: bool) -> Result<()> {
    cfg.world.validate()?;
    if n == 0 {
        return Err(Error::config("cannot generate an empty pool (n = 0)"));
    }
    let pool = generate_pool(&cfg.world, n)?;
    prepare_dir(out, force)?;
    write_pool(out, &cfg.world, &pool)
}

#[derive(Debug, Serialize)]
struct RunMeta {
    created_unix_secs: u64,
    version: &'static str,
}

pub const RESULTS_JSON: &str = "results.json";
pub const RESULTS_CSV: &str = "results.csv";

/// Runs every configured strategy over every seed and writes
/// `<out>/<strategy>/results.{json,csv}` plus a combined report.
pub fn cmd_run(cfg: &ExperimentConfig, force: bool) -> Result<Vec<(RunResults, Vec<SeedRun>)>> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    prepare_dir(out, force)?;
    let mut all = Vec::new();
    for strategy in cfg.strategies() {
        let (results, runs) = run_experiment(cfg, strategy)?;
        let dir = out.join(strategy.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join(RESULTS_JSON), results.to_json())?;
        write(&dir.join(RESULTS_CSV), results.to_csv())?;
        all.push((results, runs));
    }
    let meta = RunMeta {
        created_unix_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        version: env!("CARGO_PKG_VERSION"),
    };
    write(
        &out.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    let report = Report::build(all.iter().map(|(r, _)| (None, r)))?;
    write(&out.join("report.md"), report.to_markdown())?;
    write(&out.join("report.csv"), report.to_csv())?;
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cycle: usize,
    pub seeds: usize,
    pub labeled_count: f64,
    pub auc: MeanStd,
    pub avg_dist: MeanStd,
    pub min_dist: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub label: String,
    pub rows: Vec<ReportRow>,
}

/// Mean ± std over seeds per (group, cycle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub blocks: Vec<ReportBlock>,
}

impl Report {
    /// Groups results by label (the strategy name when no label is given).
    /// Results sharing a label are pooled.
    pub fn build<'a>(
        results: impl IntoIterator<Item = (Option<String>, &'a RunResults)>,
    ) -> Result<Self> {
        let mut groups: Vec<(String, BTreeMap<usize, Vec<&CycleRecord>>)> = Vec::new();
        for (label, r) in results {
            if r.schema != crate::alloop::RESULTS_SCHEMA {
                return Err(Error::InvalidInput(format!(
                    "unsupported results schema {}",
                    r.schema
                )));
            }
            let label = label.unwrap_or_else(|| r.strategy.name().to_string());
            let idx = match groups.iter().position(|(l, _)| *l == label) {
                Some(i) => i,
                None => {
                    groups.push((label, BTreeMap::new()));
                    groups.len() - 1
                }
            };
            for rec in &r.records {
                groups[idx]
                    .1
                    .entry(rec.record.cycle)
                    .or_default()
                    .push(&rec.record);
            }
        }
        if groups.is_empty() {
            return Err(Error::InvalidInput(
                "report needs at least one results file".into(),
            ));
        }
        let blocks = groups
            .into_iter()
            .map(|(label, cycles)| ReportBlock {
                label,
                rows: cycles
                    .into_iter()
                    .map(|(cycle, recs)| {
                        let col = |f: fn(&CycleRecord) -> f64| {
                            recs.iter().map(|r| f(r)).collect::<Vec<_>>()
                        };
                        ReportRow {
                            cycle,
                            seeds: recs.len(),
                            labeled_count: MeanStd::of(&col(|r| r.labeled_total as f64)).mean,
                            auc: MeanStd::of(&col(|r| r.auc)),
                            avg_dist: MeanStd::of(&col(|r| r.avg_dist)),
                            min_dist: MeanStd::of(&col(|r| r.min_dist)),
                        }
                    })
                    .collect(),
            })
            .collect();
        Ok(Self { blocks })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("# Results\n\n## Final cycle\n\n| run | seeds | labeled | AUC | Avg. Dist. | Min. Dist. |\n|---|---|---|---|---|---|\n");
        for b in &self.blocks {
            if let Some(r) = b.rows.last() {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                    b.label,
                    r.seeds,
                    r.labeled_count,
                    r.auc.mean,
                    r.auc.std,
                    r.avg_dist.mean,
                    r.avg_dist.std,
                    r.min_dist.mean,
                    r.min_dist.std
                );
            }
        }
        for b in &self.blocks {
            let _ = write!(
                s,
                "\n## {}\n\n| cycle | labeled | AUC | Avg. Dist. | Min. Dist. |\n|---|---|---|---|---|\n",
                b.label
            );
            for r in &b.rows {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |",
                    r.cycle,
                    r.labeled_count,
                    r.auc.mean,
                    r.auc.std,
                    r.avg_dist.mean,
                    r.avg_dist.std,
                    r.min_dist.mean,
                    r.min_dist.std
                );
            }
        }
        s
    }

    /// Long format: one row per (group, cycle, metric).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,cycle,labeled_count,metric,mean,std\n");
        for b in &self.blocks {
            for r in &b.rows {
                for (name, m) in [
                    ("auc", r.auc),
                    ("avg_dist", r.avg_dist),
                    ("min_dist", r.min_dist),
                ] {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{}",
                        b.label, r.cycle, r.labeled_count, name, m.mean, m.std
                    );
                }
            }
        }
        s
    }
}

pub fn read_results(path: &Path) -> Result<RunResults> {
    RunResults::from_json(&read_to_string(path)?).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Aggregates results files; writes `report.md` and `report.csv` into `out` when given.
pub fn cmd_report(files: &[PathBuf], out: Option<&Path>) -> Result<Report> {
    if files.is_empty() {
        return Err(Error::config("report needs at least one results file"));
    }
    let results = files
        .iter()
        .map(|f| read_results(f))
        .collect::<Result<Vec<_>>>()?;
    let report = Report::build(results.iter().map(|r| (None, r)))?;
    if let Some(out) = out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write(&out.join("report.md"), report.to_markdown())?;
        write(&out.join("report.csv"), report.to_csv())?;
    }
    Ok(report)
}

/// Scores paired `(M_A, H_G)` archives, one view per record. Sample ids are
/// record indices. `detections[i]` belongs to record `i`; missing means none.
pub fn score_archives(
    attention: &[Heatmap],
    gaze: &[Heatmap],
    detections: &[Vec<DetectedObject>],
    cfg: &ExperimentConfig,
) -> Result<Vec<SampleScore>> {
    if attention.len() != gaze.len() {
        return Err(Error::InvalidInput(format!(
            "attention archive has {} records but gaze archive has {}",
            attention.len(),
            gaze.len()
        )));
    }
    if !detections.is_empty() && detections.len() != gaze.len() {
        return Err(Error::InvalidInput(format!(
            "{} detection lists for {} records",
            detections.len(),
            gaze.len()
        )));
    }
    let mut scores = Vec::with_capacity(gaze.len());
    for (i, (m_a, h_g)) in attention.iter().zip(gaze).enumerate() {
        let objects = detections.get(i).map(Vec::as_slice).unwrap_or(&[]);
        let gamma = objectness_single(objects, h_g);
        let sigma = scatteredness_single(h_g, &cfg.scatter)?;
        let delta = discrepancy_single(m_a, h_g)?;
        scores.push(SampleScore {
            sample_id: SampleId(i as u64),
            gamma,
            sigma_scatter: sigma,
            delta,
            combined: acquisition_score(gamma, sigma, delta, &cfg.weights),
            pseudo: pseudo_score(h_g, sigma),
        });
    }
    Ok(scores)
}

/// Ranking CSV, best score first.
pub fn scores_to_csv(scores: &[SampleScore]) -> String {
    let mut order: Vec<(SampleId, f64)> =
        scores.iter().map(|s| (s.sample_id, s.combined)).collect();
    rank_by_score(&mut order);
    let by_id: BTreeMap<SampleId, &SampleScore> = scores.iter().map(|s| (s.sample_id, s)).collect();
    let mut out = String::from("rank,sample_id,gamma,sigma,delta,score,pseudo_score\n");
    for (rank, (id, _)) in order.iter().enumerate() {
        let s = by_id[id];
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rank + 1,
            id,
            s.gamma,
            s.sigma_scatter,
            s.delta,
            s.combined,
            s.pseudo
        );
    }
    out
}

pub fn cmd_score(
    attention: &Path,
    gaze: &Path,
    detections: Option<&Path>,
    cfg: &ExperimentConfig,
) -> Result<String> {
    let m_a = hmap::read_file(attention)?;
    let h_g = hmap::read_file(gaze)?;
    let dets: Vec<Vec<DetectedObject>> = match detections {
        Some(p) => serde_json::from_str(&read_to_string(p)?)?,
        None => Vec::new(),
    };
    if let Some(first) = h_g.first() {
        cfg.scatter.validate(first.size())?;
    }
    cfg.weights.validate()?;
    Ok(scores_to_csv(&score_archives(&m_a, &h_g, &dets, cfg)?))
}
