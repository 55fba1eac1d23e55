//! Invertible augmentations acting on heatmaps and samples.
//!
//! All geometric actions move whole cells, so `inverse_heatmap` undoes
//! `apply_heatmap` bit-exactly on every cell that was not zero-filled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::DetectedObject;
use crate::error::{Error, Result};
use crate::grid::{BBox, GridSize, Heatmap, NormPoint};
use crate::world::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum AugKind {
    Identity,
    HFlip,
    Translate { dx: i32, dy: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub kind: AugKind,
    /// Brightness/contrast amplitude in `[0, 0.5]`; only touches learner inputs.
    #[serde(default)]
    pub photometric_jitter: f64,
}

impl AugmentationSpec {
    pub const IDENTITY: Self = Self {
        kind: AugKind::Identity,
        photometric_jitter: 0.0,
    };
    pub const HFLIP: Self = Self {
        kind: AugKind::HFlip,
        photometric_jitter: 0.0,
    };

    pub fn translate(dx: i32, dy: i32) -> Self {
        Self {
            kind: AugKind::Translate { dx, dy },
            photometric_jitter: 0.0,
        }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.photometric_jitter = jitter;
        self
    }

    /// The geometric inverse. Jitter is not inverted since it never reaches heatmaps.
    pub fn inverse(&self) -> Self {
        let kind = match self.kind {
            AugKind::Translate { dx, dy } => AugKind::Translate { dx: -dx, dy: -dy },
            k => k,
        };
        Self {
            kind,
            photometric_jitter: 0.0,
        }
    }

    pub fn validate(&self, size: GridSize) -> Result<()> {
        let jitter_ok = (0.0..=0.5).contains(&self.photometric_jitter);
        let geom_ok = match self.kind {
            AugKind::Translate { dx, dy } => {
                (dx.unsigned_abs() as usize) * 2 < size.width
                    && (dy.unsigned_abs() as usize) * 2 < size.height
            }
            _ => true,
        };
        if jitter_ok && geom_ok {
            Ok(())
        } else {
            Err(Error::AugmentationRange {
                spec: format!("{self:?}"),
                width: size.width,
                height: size.height,
            })
        }
    }

    pub fn apply_point(&self, p: NormPoint, size: GridSize) -> NormPoint {
        match self.kind {
            AugKind::Identity => p,
            AugKind::HFlip => NormPoint::new(1.0 - p.x, p.y),
            AugKind::Translate { dx, dy } => NormPoint::clamped(
                p.x + dx as f64 / size.width as f64,
                p.y + dy as f64 / size.height as f64,
            ),
        }
    }

    pub fn apply_direction(&self, d: [f64; 2]) -> [f64; 2] {
        match self.kind {
            AugKind::HFlip => [-d[0], d[1]],
            _ => d,
        }
    }

    /// Transformed box, or `None` when it leaves the frame entirely.
    pub fn apply_bbox(&self, b: BBox, size: GridSize) -> Option<BBox> {
        let out = match self.kind {
            AugKind::Identity => b,
            AugKind::HFlip => BBox {
                cx: 1.0 - b.cx,
                ..b
            },
            AugKind::Translate { dx, dy } => BBox {
                cx: b.cx + dx as f64 / size.width as f64,
                cy: b.cy + dy as f64 / size.height as f64,
                ..b
            },
        };
        out.intersects_unit().then_some(out)
    }

    pub fn apply_objects(&self, objects: &[DetectedObject], size: GridSize) -> Vec<DetectedObject> {
        objects
            .iter()
            .filter_map(|o| {
                self.apply_bbox(o.bbox, size)
                    .map(|bbox| DetectedObject { bbox, ..*o })
            })
            .collect()
    }
}

fn translate_values(h: &Heatmap, dx: i32, dy: i32) -> Vec<f64> {
    let (w, ht) = (h.width() as i64, h.height() as i64);
    let src = h.values();
    let mut out = vec![0.0; src.len()];
    for y in 0..ht {
        let sy = y - dy as i64;
        if sy < 0 || sy >= ht {
            continue;
        }
        for x in 0..w {
            let sx = x - dx as i64;
            if sx >= 0 && sx < w {
                out[(y * w + x) as usize] = src[(sy * w + sx) as usize];
            }
        }
    }
    out
}

pub fn apply_heatmap(spec: &AugmentationSpec, h: &Heatmap) -> Result<Heatmap> {
    spec.validate(h.size())?;
    let size = h.size();
    let values = match spec.kind {
        AugKind::Identity => h.values().to_vec(),
        AugKind::HFlip => {
            let w = size.width;
            let mut out = Vec::with_capacity(size.cells());
            for row in h.values().chunks_exact(w) {
                out.extend(row.iter().rev());
            }
            out
        }
        AugKind::Translate { dx, dy } => translate_values(h, dx, dy),
    };
    Ok(Heatmap::from_trusted(size, values))
}

pub fn inverse_heatmap(spec: &AugmentationSpec, h: &Heatmap) -> Result<Heatmap> {
    apply_heatmap(&spec.inverse(), h)
}

/// Cells of the original frame that survive `inverse(apply(.))`.
pub fn valid_mask(spec: &AugmentationSpec, size: GridSize) -> Vec<bool> {
    match spec.kind {
        AugKind::Identity | AugKind::HFlip => vec![true; size.cells()],
        AugKind::Translate { dx, dy } => {
            let mut mask = Vec::with_capacity(size.cells());
            for y in 0..size.height as i64 {
                for x in 0..size.width as i64 {
                    let tx = x + dx as i64;
                    let ty = y + dy as i64;
                    mask.push(
                        tx >= 0 && tx < size.width as i64 && ty >= 0 && ty < size.height as i64,
                    );
                }
            }
            mask
        }
    }
}

fn jitter_map<R: Rng + ?Sized>(h: &Heatmap, jitter: f64, rng: &mut R) -> Heatmap {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let gain = 1.0 + jitter * u;
    let values = h
        .values()
        .iter()
        .map(|v| (v * gain).clamp(0.0, 1.0))
        .collect();
    Heatmap::from_trusted(h.size(), values)
}

/// Geometric action on every spatial field of a sample, plus optional
/// photometric jitter of its input maps.
pub fn apply_sample<R: Rng + ?Sized>(
    spec: &AugmentationSpec,
    s: &Sample,
    rng: &mut R,
) -> Result<Sample> {
    let size = s.salience_map.size();
    spec.validate(size)?;
    let mut salience_map = apply_heatmap(spec, &s.salience_map)?;
    let mut depth_map = apply_heatmap(spec, &s.depth_map)?;
    if spec.photometric_jitter > 0.0 {
        salience_map = jitter_map(&salience_map, spec.photometric_jitter, rng);
        depth_map = jitter_map(&depth_map, spec.photometric_jitter, rng);
    }
    let mut true_objects = Vec::with_capacity(s.true_objects.len());
    let mut object_salience = Vec::with_capacity(s.true_objects.len());
    for (o, &sal) in s.true_objects.iter().zip(&s.object_salience) {
        if let Some(bbox) = spec.apply_bbox(o.bbox, size) {
            true_objects.push(DetectedObject { bbox, ..*o });
            object_salience.push(sal);
        }
    }
    Ok(Sample {
        id: s.id,
        head: spec.apply_point(s.head, size),
        gaze_cue: spec.apply_direction(s.gaze_cue),
        true_gaze: spec.apply_point(s.true_gaze, size),
        annotations: s
            .annotations
            .iter()
            .map(|&a| spec.apply_point(a, size))
            .collect(),
        salience_map,
        depth_map,
        true_objects,
        object_salience,
        gaze_on_object: s.gaze_on_object,
    })
}

/// The augmented views of one sample; `specs[0]` is always the identity.
#[derive(Debug, Clone)]
pub struct AugmentedBundle {
    pub specs: Vec<AugmentationSpec>,
    pub views: Vec<Sample>,
}

impl AugmentedBundle {
    pub fn new<R: Rng + ?Sized>(
        sample: &Sample,
        specs: &[AugmentationSpec],
        rng: &mut R,
    ) -> Result<Self> {
        validate_bundle_specs(specs)?;
        let mut views = Vec::with_capacity(specs.len());
        views.push(sample.clone());
        for spec in &specs[1..] {
            views.push(apply_sample(spec, sample, rng)?);
        }
        Ok(Self {
            specs: specs.to_vec(),
            views,
        })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

pub fn validate_bundle_specs(specs: &[AugmentationSpec]) -> Result<()> {
    match specs.first() {
        Some(first) if first.kind == AugKind::Identity => Ok(()),
        _ => Err(Error::config(
            "augmentation bundle must start with Identity",
        )),
    }
}

/// `[Identity, HFlip]`.
pub fn default_bundle() -> Vec<AugmentationSpec> {
    vec![AugmentationSpec::IDENTITY, AugmentationSpec::HFLIP]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{argmax_peak, GridPoint};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(size: GridSize, rng: &mut ChaCha8Rng) -> Heatmap {
        Heatmap::from_fn(size, |_| rng.random::<f64>()).unwrap()
    }

    #[test]
    fn hflip_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_map(GridSize::new(7, 5), &mut rng);
        let f = apply_heatmap(&AugmentationSpec::HFLIP, &h).unwrap();
        assert_ne!(f, h);
        assert_eq!(apply_heatmap(&AugmentationSpec::HFLIP, &f).unwrap(), h);
    }

    #[test]
    fn translate_moves_delta() {
        let size = GridSize::new(8, 8);
        let h = Heatmap::from_fn(size, |p| (p == GridPoint::new(3, 3)) as u8 as f64).unwrap();
        let t = apply_heatmap(&AugmentationSpec::translate(1, 0), &h).unwrap();
        assert_eq!(argmax_peak(&t), GridPoint::new(4, 3));
        assert_eq!(t.values().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn inverses() {
        assert_eq!(AugmentationSpec::HFLIP.inverse(), AugmentationSpec::HFLIP);
        assert_eq!(
            AugmentationSpec::translate(2, -1).inverse(),
            AugmentationSpec::translate(-2, 1)
        );
    }

    #[test]
    fn translate_round_trip_on_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let size = GridSize::new(9, 6);
        let spec = AugmentationSpec::translate(2, 1);
        let mask = valid_mask(&spec, size);
        let h = random_map(size, &mut rng);
        let back = inverse_heatmap(&spec, &apply_heatmap(&spec, &h).unwrap()).unwrap();
        for (i, ok) in mask.iter().enumerate() {
            if *ok {
                assert_eq!(back.values()[i], h.values()[i]);
            } else {
                assert_eq!(back.values()[i], 0.0);
            }
        }
        assert_eq!(mask.iter().filter(|m| **m).count(), 7 * 5);
    }

    #[test]
    fn out_of_range_translate_is_rejected() {
        let h = Heatmap::zeros(GridSize::new(8, 8));
        assert!(apply_heatmap(&AugmentationSpec::translate(4, 0), &h).is_err());
        assert!(apply_heatmap(&AugmentationSpec::translate(3, -3), &h).is_ok());
        let jittery = AugmentationSpec::IDENTITY.with_jitter(0.7);
        assert!(apply_heatmap(&jittery, &h).is_err());
    }

    #[test]
    fn jitter_does_not_touch_heatmaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_map(GridSize::new(6, 6), &mut rng);
        let spec = AugmentationSpec::HFLIP.with_jitter(0.4);
        assert_eq!(
            apply_heatmap(&spec, &h).unwrap(),
            apply_heatmap(&AugmentationSpec::HFLIP, &h).unwrap()
        );
    }

    #[test]
    fn point_and_direction_actions() {
        let size = GridSize::new(32, 32);
        let p = AugmentationSpec::HFLIP.apply_point(NormPoint::new(0.2, 0.5), size);
        assert!((p.x - 0.8).abs() < 1e-15 && p.y == 0.5);
        assert_eq!(
            AugmentationSpec::HFLIP.apply_direction([1.0, 0.0]),
            [-1.0, 0.0]
        );
    }

    #[test]
    fn sample_actions() {
        let cfg = crate::world::WorldConfig::default();
        let s = crate::world::generate_sample(&cfg, crate::world::SampleId(4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = apply_sample(&AugmentationSpec::IDENTITY, &s, &mut rng).unwrap();
        assert_eq!(same, s);

        let f = apply_sample(&AugmentationSpec::HFLIP, &s, &mut rng).unwrap();
        assert!((f.head.x - (1.0 - s.head.x)).abs() < 1e-15);
        assert_eq!(f.gaze_cue, [-s.gaze_cue[0], s.gaze_cue[1]]);
        assert_eq!(
            f.salience_map,
            apply_heatmap(&AugmentationSpec::HFLIP, &s.salience_map).unwrap()
        );
        let ff = apply_sample(&AugmentationSpec::HFLIP, &f, &mut rng).unwrap();
        assert_eq!(ff.salience_map, s.salience_map);

        let j = apply_sample(&AugmentationSpec::IDENTITY.with_jitter(0.3), &s, &mut rng).unwrap();
        assert!(j
            .salience_map
            .values()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(j.head, s.head);
    }

    #[test]
    fn bundle_requires_identity_first() {
        let cfg = crate::world::WorldConfig::default();
        let s = crate::world::generate_sample(&cfg, crate::world::SampleId(0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(AugmentedBundle::new(&s, &[AugmentationSpec::HFLIP], &mut rng).is_err());
        let b = AugmentedBundle::new(&s, &default_bundle(), &mut rng).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.views[0], s);
    }
}
