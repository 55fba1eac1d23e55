//! Seeded synthetic scenes, a simulated object detector and the labeling oracle.
//!
//! A scene holds one person (head position plus a noisy gaze-direction cue),
//! a handful of salient objects, a salience map, a depth map and one to
//! three jittered annotator clicks around the true gaze target. Most people
//! look at an object center, which gives object-biased predictors an easy
//! shortcut that fails on the remaining samples.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::acquisition::DetectedObject;
use crate::error::{Error, Result};
use crate::grid::{
    l2_norm_dist, render_gaussian, BBox, GaussianSpec, GridSize, Heatmap, NormPoint,
    DEFAULT_GT_SIGMA,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl std::fmt::Display for SampleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub miss_rate: f64,
    /// Expected number of false positives per scene.
    pub false_positive_rate: f64,
    pub confidence_noise: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            miss_rate: 0.1,
            false_positive_rate: 0.5,
            confidence_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub grid: GridSize,
    pub objects_per_scene: CountRange,
    pub p_gaze_on_object: f64,
    /// Angular standard deviation of the gaze cue, radians.
    pub gaze_cue_noise: f64,
    pub annotations_per_sample: CountRange,
    /// Per-axis standard deviation of annotator clicks, normalized units.
    pub annotation_jitter: f64,
    pub detector: DetectorConfig,
    /// Standard deviation (cells) of ground-truth heatmaps.
    pub gt_sigma: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            grid: GridSize::new(32, 32),
            objects_per_scene: CountRange::new(2, 6),
            p_gaze_on_object: 0.7,
            gaze_cue_noise: 0.3,
            annotations_per_sample: CountRange::new(1, 3),
            annotation_jitter: 0.05,
            detector: DetectorConfig::default(),
            gt_sigma: DEFAULT_GT_SIGMA,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be in [0,1], got {p}")))
            }
        };
        prob("p_gaze_on_object", self.p_gaze_on_object)?;
        prob("detector.miss_rate", self.detector.miss_rate)?;
        if self.objects_per_scene.min > self.objects_per_scene.max {
            return Err(Error::config("objects_per_scene range is empty"));
        }
        if self.annotations_per_sample.min == 0
            || self.annotations_per_sample.min > self.annotations_per_sample.max
        {
            return Err(Error::config(
                "annotations_per_sample must be a non-empty range >= 1",
            ));
        }
        let non_neg = [
            ("gaze_cue_noise", self.gaze_cue_noise),
            ("annotation_jitter", self.annotation_jitter),
            (
                "detector.false_positive_rate",
                self.detector.false_positive_rate,
            ),
            ("detector.confidence_noise", self.detector.confidence_noise),
        ];
        for (name, v) in non_neg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.gt_sigma.is_nan() || self.gt_sigma <= 0.0 {
            return Err(Error::config("gt_sigma must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: SampleId,
    pub head: NormPoint,
    /// Unit vector; the person's (noisy) gaze direction.
    pub gaze_cue: [f64; 2],
    pub true_gaze: NormPoint,
    pub annotations: Vec<NormPoint>,
    pub salience_map: Heatmap,
    pub depth_map: Heatmap,
    /// Ground-truth objects, confidence 1.
    pub true_objects: Vec<DetectedObject>,
    /// Per-object salience, parallel to `true_objects`.
    pub object_salience: Vec<f64>,
    pub gaze_on_object: bool,
}

impl Sample {
    pub fn grid(&self) -> GridSize {
        self.salience_map.size()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Oracle,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: SampleId,
    pub label: NormPoint,
    pub provenance: Provenance,
}

const MIN_GAZE_DIST: f64 = 0.15;
const OBJECT_EXTENT: (f64, f64) = (0.08, 0.2);
const OBJECT_SALIENCE: (f64, f64) = (0.3, 1.0);
const NUM_CLASSES: u32 = 8;
const DEPTH_NOISE: f64 = 0.05;

fn uniform_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> NormPoint {
    NormPoint::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n == 0.0 {
        [1.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

fn rotate(v: [f64; 2], angle: f64) -> [f64; 2] {
    let (s, c) = angle.sin_cos();
    normalize([c * v[0] - s * v[1], s * v[0] + c * v[1]])
}

pub fn generate_sample(cfg: &WorldConfig, id: SampleId) -> Sample {
    let mut rng = seed::rng(cfg.seed, &[seed::tag("scene"), id.0]);
    let size = cfg.grid;

    let head = uniform_point(&mut rng, 0.1, 0.9);

    let n_objects = cfg.objects_per_scene.draw(&mut rng);
    let mut true_objects = Vec::with_capacity(n_objects);
    let mut object_salience = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let w = rng.random_range(OBJECT_EXTENT.0..OBJECT_EXTENT.1);
        let h = rng.random_range(OBJECT_EXTENT.0..OBJECT_EXTENT.1);
        let mut center = uniform_point(&mut rng, 0.08, 0.92);
        while l2_norm_dist(head, center) < MIN_GAZE_DIST {
            center = uniform_point(&mut rng, 0.08, 0.92);
        }
        true_objects.push(DetectedObject {
            bbox: BBox {
                cx: center.x,
                cy: center.y,
                w,
                h,
            },
            confidence: 1.0,
            class_id: rng.random_range(0..NUM_CLASSES),
        });
        object_salience.push(rng.random_range(OBJECT_SALIENCE.0..OBJECT_SALIENCE.1));
    }

    let wants_object = rng.random::<f64>() < cfg.p_gaze_on_object;
    let (true_gaze, gaze_on_object) = if wants_object && !true_objects.is_empty() {
        let b = true_objects[rng.random_range(0..true_objects.len())].bbox;
        (NormPoint::new(b.cx, b.cy), true)
    } else {
        let mut p = uniform_point(&mut rng, 0.05, 0.95);
        for _ in 0..100 {
            let far = l2_norm_dist(head, p) >= MIN_GAZE_DIST;
            let free = !true_objects.iter().any(|o| o.bbox.contains(p));
            if far && free {
                break;
            }
            p = uniform_point(&mut rng, 0.05, 0.95);
        }
        (p, false)
    };

    let dir = normalize([true_gaze.x - head.x, true_gaze.y - head.y]);
    let gaze_cue = if cfg.gaze_cue_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.gaze_cue_noise).expect("validated noise");
        rotate(dir, noise.sample(&mut rng))
    } else {
        dir
    };

    let n_ann = cfg.annotations_per_sample.draw(&mut rng);
    let annotations = (0..n_ann)
        .map(|_| {
            if cfg.annotation_jitter > 0.0 {
                let j = Normal::new(0.0, cfg.annotation_jitter).expect("validated jitter");
                NormPoint::clamped(
                    true_gaze.x + j.sample(&mut rng),
                    true_gaze.y + j.sample(&mut rng),
                )
            } else {
                true_gaze
            }
        })
        .collect();

    // Salience: one Gaussian blob per object, radius tied to the box size.
    let blobs: Vec<(f64, f64, f64, f64)> = true_objects
        .iter()
        .zip(&object_salience)
        .map(|(o, &sal)| {
            let (mx, my) = NormPoint::new(o.bbox.cx, o.bbox.cy).to_cell_coords(size);
            let extent = 0.5 * (o.bbox.w * size.width as f64 + o.bbox.h * size.height as f64);
            let sigma = (0.35 * extent).max(0.75);
            (mx, my, 1.0 / (2.0 * sigma * sigma), sal)
        })
        .collect();
    let mut salience = Vec::with_capacity(size.cells());
    for y in 0..size.height {
        for x in 0..size.width {
            let v: f64 = blobs
                .iter()
                .map(|&(mx, my, inv, sal)| {
                    let (dx, dy) = (x as f64 - mx, y as f64 - my);
                    sal * (-(dx * dx + dy * dy) * inv).exp()
                })
                .sum();
            salience.push(v.clamp(0.0, 1.0));
        }
    }

    // Depth: radial ramp away from a vanishing point, plus noise.
    let vp = uniform_point(&mut rng, 0.0, 1.0);
    let depth_noise = Normal::new(0.0, DEPTH_NOISE).expect("constant");
    let mut depth = Vec::with_capacity(size.cells());
    for y in 0..size.height {
        for x in 0..size.width {
            let c = crate::grid::cell_center(crate::grid::GridPoint::new(x, y), size);
            let ramp = l2_norm_dist(c, vp) / std::f64::consts::SQRT_2;
            depth.push((ramp + depth_noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }

    Sample {
        id,
        head,
        gaze_cue,
        true_gaze,
        annotations,
        salience_map: Heatmap::from_trusted(size, salience),
        depth_map: Heatmap::from_trusted(size, depth),
        true_objects,
        object_salience,
        gaze_on_object,
    }
}

/// Samples with ids `start..start + n`.
pub fn generate_range(cfg: &WorldConfig, start: u64, n: usize) -> Vec<Sample> {
    (0..n as u64)
        .map(|i| generate_sample(cfg, SampleId(start + i)))
        .collect()
}

pub fn generate_pool(cfg: &WorldConfig, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::config("pool size must be >= 1"));
    }
    cfg.validate()?;
    Ok(generate_range(cfg, 0, n))
}

/// Simulated frozen detector: drops true objects at `miss_rate`, perturbs
/// confidences around object salience and adds Poisson false positives.
pub fn detect(sample: &Sample, cfg: &WorldConfig) -> Vec<DetectedObject> {
    let det = &cfg.detector;
    let mut rng = seed::rng(cfg.seed, &[seed::tag("detect"), sample.id.0]);
    let mut out = Vec::new();
    for (o, &sal) in sample.true_objects.iter().zip(&sample.object_salience) {
        if rng.random::<f64>() < det.miss_rate {
            continue;
        }
        let noise = if det.confidence_noise > 0.0 {
            Normal::new(0.0, det.confidence_noise)
                .expect("validated noise")
                .sample(&mut rng)
        } else {
            0.0
        };
        out.push(DetectedObject {
            bbox: o.bbox,
            confidence: (sal + noise).clamp(0.0, 1.0),
            class_id: o.class_id,
        });
    }
    if det.false_positive_rate > 0.0 {
        let n_fp = Poisson::new(det.false_positive_rate)
            .expect("validated rate")
            .sample(&mut rng) as usize;
        for _ in 0..n_fp {
            let c = uniform_point(&mut rng, 0.05, 0.95);
            out.push(DetectedObject {
                bbox: BBox {
                    cx: c.x,
                    cy: c.y,
                    w: rng.random_range(OBJECT_EXTENT.0..OBJECT_EXTENT.1),
                    h: rng.random_range(OBJECT_EXTENT.0..OBJECT_EXTENT.1),
                },
                confidence: rng.random_range(0.1..0.6),
                class_id: rng.random_range(0..NUM_CLASSES),
            });
        }
    }
    out
}

/// One annotator's click, chosen uniformly.
pub fn oracle_label<R: Rng + ?Sized>(sample: &Sample, rng: &mut R) -> NormPoint {
    sample.annotations[rng.random_range(0..sample.annotations.len())]
}

pub fn gt_heatmap(label: NormPoint, grid: GridSize, sigma: f64) -> Heatmap {
    render_gaussian(
        GaussianSpec {
            center: label,
            sigma,
        },
        grid,
    )
}
