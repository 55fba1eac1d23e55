//! A small two-head gaze network trained from scratch.
//!
//! The attention head maps the head position and gaze cue to a softmax
//! attention map over cells. The heatmap head is a per-cell two-layer
//! perceptron over `[alignment, -distance, salience, depth, attention]` with a
//! logistic output. The attention feature is fed as `M_A(c) * cells`, so a
//! uniform attention map contributes exactly 1 per cell.
//!
//! Training minimizes, per labeled sample and its augmented views, the
//! mean-squared heatmap error of every view plus the mean-squared disagreement
//! between every ordered pair of views after mapping both back into the
//! identity frame. Gradients are analytic.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{validate_bundle_specs, AugKind, AugmentationSpec};
use crate::error::{Error, Result};
use crate::grid::{cell_center, GridPoint, GridSize, Heatmap, NormPoint};
use crate::seed;
use crate::world::{gt_heatmap, Sample};

/// Per-cell input width of the heatmap head.
pub const FEATURES: usize = 5;
const BASE_FEATURES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams {
    #[serde(rename = "theta_A")]
    pub theta_a: [f64; 3],
    /// `hidden x FEATURES`, row-major.
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub v: Vec<f64>,
    pub b2: f64,
    pub hidden: usize,
}

impl LearnerParams {
    /// Attention aligned with the gaze cue; heatmap head uniform in `±1/sqrt(fan_in)`.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed, &[seed::tag("init")]);
        let a1 = 1.0 / (FEATURES as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        Self {
            theta_a: [1.0, 0.5, 0.0],
            w1: (0..hidden * FEATURES)
                .map(|_| rng.random_range(-a1..a1))
                .collect(),
            b1: vec![0.0; hidden],
            v: (0..hidden).map(|_| rng.random_range(-a2..a2)).collect(),
            b2: 0.0,
            hidden,
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            theta_a: [0.0; 3],
            w1: vec![0.0; hidden * FEATURES],
            b1: vec![0.0; hidden],
            v: vec![0.0; hidden],
            b2: 0.0,
            hidden,
        }
    }

    pub fn num_params(&self) -> usize {
        3 + self.hidden * FEATURES + 2 * self.hidden + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be >= 1"));
        }
        if self.w1.len() != self.hidden * FEATURES
            || self.b1.len() != self.hidden
            || self.v.len() != self.hidden
        {
            return Err(Error::config(
                "learner parameter shapes do not match hidden width",
            ));
        }
        let groups: [(&'static str, &[f64]); 5] = [
            ("theta_A", &self.theta_a),
            ("W1", &self.w1),
            ("b1", &self.b1),
            ("v", &self.v),
            ("b2", std::slice::from_ref(&self.b2)),
        ];
        for (name, vals) in groups {
            if vals.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteParam(name));
            }
        }
        Ok(())
    }

    /// Flat layout: theta_A, W1, b1, v, b2.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.theta_a);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.v);
        out.push(self.b2);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let k = self.hidden;
        let (ta, rest) = flat.split_at(3);
        let (w1, rest) = rest.split_at(k * FEATURES);
        let (b1, rest) = rest.split_at(k);
        let (v, rest) = rest.split_at(k);
        self.theta_a.copy_from_slice(ta);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.v.copy_from_slice(v);
        self.b2 = rest[0];
    }

    /// `W1` transposed to `FEATURES x hidden`, the layout the inner loops want.
    fn w1_transposed(&self) -> Vec<f64> {
        let k = self.hidden;
        let mut t = vec![0.0; FEATURES * k];
        for row in 0..k {
            for j in 0..FEATURES {
                t[j * k + row] = self.w1[row * FEATURES + j];
            }
        }
        t
    }
}

/// Snapshot of the parameters taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    #[serde(flatten)]
    pub params: LearnerParams,
    pub grid: GridSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_cycle: usize,
    pub eval_every: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub dropout_rate: f64,
    pub consistency_weight: f64,
    /// Sum the consistency term over ordered view pairs (each pair twice).
    pub ordered_pairs: bool,
    pub hidden: usize,
    pub augmentations: Vec<AugmentationSpec>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2.5e-4,
            epochs_per_cycle: 15,
            eval_every: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            dropout_rate: 0.1,
            consistency_weight: 1.0,
            ordered_pairs: true,
            hidden: 16,
            augmentations: crate::augment::default_bundle(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and >= 0"));
        }
        if self.epochs_per_cycle == 0 || self.eval_every == 0 {
            return Err(Error::config(
                "epochs_per_cycle and eval_every must be >= 1",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must be in [0,1)"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden must be >= 1"));
        }
        if self.consistency_weight.is_nan() || self.consistency_weight < 0.0 {
            return Err(Error::config("consistency_weight must be >= 0"));
        }
        validate_bundle_specs(&self.augmentations)
    }
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub attention: Heatmap,
    pub gaze: Heatmap,
}

/// Engineered per-cell inputs for one view of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewInputs {
    size: GridSize,
    /// `[alignment, -distance, salience, depth]` per cell.
    base: Vec<[f64; BASE_FEATURES]>,
}

impl ViewInputs {
    pub fn from_sample(s: &Sample) -> Self {
        let size = s.grid();
        let sal = s.salience_map.values();
        let dep = s.depth_map.values();
        let mut base = Vec::with_capacity(size.cells());
        for y in 0..size.height {
            for x in 0..size.width {
                let c = cell_center(GridPoint::new(x, y), size);
                let (dx, dy) = (c.x - s.head.x, c.y - s.head.y);
                let dist = dx.hypot(dy);
                let align = if dist > 0.0 {
                    ((dx * s.gaze_cue[0] + dy * s.gaze_cue[1]) / dist).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                let i = y * size.width + x;
                base.push([align, -dist, sal[i], dep[i]]);
            }
        }
        Self { size, base }
    }

    pub fn size(&self) -> GridSize {
        self.size
    }

    /// Per-cell feature rows `[alignment, -distance, salience, depth]`.
    pub fn rows(&self) -> &[[f64; BASE_FEATURES]] {
        &self.base
    }
}

struct ForwardPass {
    attention: Vec<f64>,
    gaze: Vec<f64>,
    /// Pre-activations, `cells x hidden`.
    z: Vec<f64>,
}

fn softmax_logits(theta: &[f64; 3], x: &ViewInputs) -> Vec<f64> {
    let mut m: Vec<f64> = x
        .base
        .iter()
        .map(|f| theta[0] * f[0] + theta[1] * f[1] + theta[2])
        .collect();
    let max = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in m.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in m.iter_mut() {
        *v /= sum;
    }
    m
}

fn forward_pass(
    p: &LearnerParams,
    w1t: &[f64],
    x: &ViewInputs,
    mask: &[f64],
    keep_z: bool,
) -> ForwardPass {
    let k = p.hidden;
    let n = x.base.len();
    let scale = n as f64;
    let attention = softmax_logits(&p.theta_a, x);
    let mut gaze = Vec::with_capacity(n);
    let mut z_all = if keep_z { vec![0.0; n * k] } else { Vec::new() };
    let mut z_tmp = vec![0.0; k];
    let (c0, rest) = w1t.split_at(k);
    let (c1, rest) = rest.split_at(k);
    let (c2, rest) = rest.split_at(k);
    let (c3, c4) = rest.split_at(k);
    for (c, f) in x.base.iter().enumerate() {
        let att = attention[c] * scale;
        let z = if keep_z {
            &mut z_all[c * k..(c + 1) * k]
        } else {
            &mut z_tmp[..]
        };
        for (i, zi) in z.iter_mut().enumerate() {
            *zi = p.b1[i] + c0[i] * f[0] + c1[i] * f[1] + c2[i] * f[2] + c3[i] * f[3] + c4[i] * att;
        }
        let mut o = p.b2;
        for ((zi, vi), mi) in z.iter().zip(&p.v).zip(mask) {
            o += vi * zi.max(0.0) * mi;
        }
        gaze.push(1.0 / (1.0 + (-o).exp()));
    }
    ForwardPass {
        attention,
        gaze,
        z: z_all,
    }
}

fn ones(k: usize) -> Vec<f64> {
    vec![1.0; k]
}

fn check_mask(p: &LearnerParams, mask: Option<&[f64]>) -> Result<Vec<f64>> {
    match mask {
        None => Ok(ones(p.hidden)),
        Some(m) if m.len() == p.hidden && m.iter().all(|v| v.is_finite() && *v >= 0.0) => {
            Ok(m.to_vec())
        }
        Some(m) => Err(Error::InvalidInput(format!(
            "dropout mask must hold {} non-negative values, got {}",
            p.hidden,
            m.len()
        ))),
    }
}

/// Forward pass on precomputed inputs. `mask` scales hidden units (inverted dropout).
pub fn forward_inputs(
    p: &LearnerParams,
    x: &ViewInputs,
    mask: Option<&[f64]>,
) -> Result<Prediction> {
    p.validate()?;
    let mask = check_mask(p, mask)?;
    let out = forward_pass(p, &p.w1_transposed(), x, &mask, false);
    Ok(Prediction {
        attention: Heatmap::from_trusted(x.size, out.attention),
        gaze: Heatmap::from_trusted(x.size, out.gaze),
    })
}

pub fn forward(p: &LearnerParams, sample: &Sample, mask: Option<&[f64]>) -> Result<Prediction> {
    forward_inputs(p, &ViewInputs::from_sample(sample), mask)
}

/// Inverted-dropout mask over hidden units: each unit kept with probability
/// `1 - rate` and scaled by `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(hidden: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return ones(hidden);
    }
    let keep = 1.0 / (1.0 - rate);
    (0..hidden)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep
            }
        })
        .collect()
}

/// `n_passes` stochastic forward passes on the identity view.
pub fn mc_forward(
    p: &LearnerParams,
    sample: &Sample,
    n_passes: usize,
    dropout_rate: f64,
    seed: u64,
) -> Result<Vec<Heatmap>> {
    p.validate()?;
    let x = ViewInputs::from_sample(sample);
    let w1t = p.w1_transposed();
    let mut rng = seed::rng(seed, &[seed::tag("mc"), sample.id.0]);
    Ok((0..n_passes)
        .map(|_| {
            let mask = dropout_mask(p.hidden, dropout_rate, &mut rng);
            Heatmap::from_trusted(x.size, forward_pass(p, &w1t, &x, &mask, false).gaze)
        })
        .collect())
}

/// Mean squared error over cells.
pub fn loss_supervised(h_g: &Heatmap, target: &Heatmap) -> Result<f64> {
    h_g.same_size(target)?;
    Ok(mse(h_g.values(), target.values()))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// For every identity-frame cell, where it lives in the augmented view.
fn view_index(spec: &AugmentationSpec, size: GridSize) -> Vec<Option<usize>> {
    let (w, h) = (size.width as i64, size.height as i64);
    let mut out = Vec::with_capacity(size.cells());
    for y in 0..h {
        for x in 0..w {
            let (tx, ty) = match spec.kind {
                AugKind::Identity => (x, y),
                AugKind::HFlip => (w - 1 - x, y),
                AugKind::Translate { dx, dy } => (x + dx as i64, y + dy as i64),
            };
            out.push((tx >= 0 && tx < w && ty >= 0 && ty < h).then(|| (ty * w + tx) as usize));
        }
    }
    out
}

/// Mean squared difference of two view predictions after mapping both back
/// to the identity frame, over cells valid in both.
pub fn loss_consistency(
    h_a: &Heatmap,
    h_b: &Heatmap,
    spec_a: &AugmentationSpec,
    spec_b: &AugmentationSpec,
) -> Result<f64> {
    h_a.same_size(h_b)?;
    let size = h_a.size();
    spec_a.validate(size)?;
    spec_b.validate(size)?;
    let (ia, ib) = (view_index(spec_a, size), view_index(spec_b, size));
    let (va, vb) = (h_a.values(), h_b.values());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in ia.iter().zip(&ib) {
        if let (Some(a), Some(b)) = (a, b) {
            let d = va[*a] - vb[*b];
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "augmentations share no valid cells".into(),
        ));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub supervised: f64,
    pub consistency: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.supervised + self.consistency
    }
}

/// Combines per-view supervised losses and pairwise consistency losses exactly
/// as the training objective does.
pub fn loss_total(
    predictions: &[Heatmap],
    targets: &[Heatmap],
    specs: &[AugmentationSpec],
    consistency_weight: f64,
    ordered_pairs: bool,
) -> Result<LossBreakdown> {
    if predictions.len() != targets.len() || predictions.len() != specs.len() {
        return Err(Error::InvalidInput(
            "predictions, targets and specs differ in length".into(),
        ));
    }
    let mut out = LossBreakdown::default();
    for (p, t) in predictions.iter().zip(targets) {
        out.supervised += loss_supervised(p, t)?;
    }
    for a in 0..predictions.len() {
        for b in 0..predictions.len() {
            if a == b || (!ordered_pairs && b < a) {
                continue;
            }
            out.consistency += consistency_weight
                * loss_consistency(&predictions[a], &predictions[b], &specs[a], &specs[b])?;
        }
    }
    Ok(out)
}

/// One labeled sample prepared for training: inputs and targets for every view.
#[derive(Debug, Clone)]
pub struct TrainItem {
    views: Vec<ViewInputs>,
    targets: Vec<Vec<f64>>,
    index: Vec<Vec<Option<usize>>>,
    specs: Vec<AugmentationSpec>,
}

impl TrainItem {
    pub fn new<R: Rng + ?Sized>(
        sample: &Sample,
        label: NormPoint,
        specs: &[AugmentationSpec],
        gt_sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        validate_bundle_specs(specs)?;
        let size = sample.grid();
        let gt = gt_heatmap(label, size, gt_sigma);
        let mut views = Vec::with_capacity(specs.len());
        let mut targets = Vec::with_capacity(specs.len());
        let mut index = Vec::with_capacity(specs.len());
        for spec in specs {
            let view = if spec.kind == AugKind::Identity && spec.photometric_jitter == 0.0 {
                ViewInputs::from_sample(sample)
            } else {
                ViewInputs::from_sample(&crate::augment::apply_sample(spec, sample, rng)?)
            };
            views.push(view);
            targets.push(crate::augment::apply_heatmap(spec, &gt)?.into_values());
            index.push(view_index(spec, size));
        }
        Ok(Self {
            views,
            targets,
            index,
            specs: specs.to_vec(),
        })
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[ViewInputs] {
        &self.views
    }

    pub fn specs(&self) -> &[AugmentationSpec] {
        &self.specs
    }

    pub fn targets(&self) -> Vec<Heatmap> {
        self.targets
            .iter()
            .map(|t| Heatmap::from_trusted(self.views[0].size, t.clone()))
            .collect()
    }
}

/// Objective options shared by the loss and its gradient.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub consistency_weight: f64,
    pub ordered_pairs: bool,
}

impl From<&TrainConfig> for Objective {
    fn from(c: &TrainConfig) -> Self {
        Self {
            consistency_weight: c.consistency_weight,
            ordered_pairs: c.ordered_pairs,
        }
    }
}

/// Smallest |pre-activation| over every view and hidden unit of `item`.
/// Finite differences are only meaningful when this exceeds their step.
pub fn relu_margin(p: &LearnerParams, item: &TrainItem) -> f64 {
    let w1t = p.w1_transposed();
    let ones = ones(p.hidden);
    item.views
        .iter()
        .flat_map(|x| forward_pass(p, &w1t, x, &ones, true).z)
        .fold(f64::INFINITY, |m, z| m.min(z.abs()))
}

/// Loss of one item and its gradient in the flat parameter layout.
/// `masks[v]` is the dropout mask for view `v` (`None` = no dropout).
pub fn loss_and_grad(
    p: &LearnerParams,
    item: &TrainItem,
    masks: &[Option<Vec<f64>>],
    obj: Objective,
) -> Result<(LossBreakdown, Vec<f64>)> {
    p.validate()?;
    let mut grad = vec![0.0; p.num_params()];
    let loss = accumulate(p, &p.w1_transposed(), item, masks, obj, &mut grad)?;
    Ok((loss, grad))
}

/// Summed loss and gradient over a batch, without dropout.
pub fn backward(p: &LearnerParams, batch: &[TrainItem], obj: Objective) -> Result<(f64, Vec<f64>)> {
    p.validate()?;
    let w1t = p.w1_transposed();
    let mut grad = vec![0.0; p.num_params()];
    let mut total = 0.0;
    for item in batch {
        let masks = vec![None; item.num_views()];
        total += accumulate(p, &w1t, item, &masks, obj, &mut grad)?.total();
    }
    Ok((total, grad))
}

fn accumulate(
    p: &LearnerParams,
    w1t: &[f64],
    item: &TrainItem,
    masks: &[Option<Vec<f64>>],
    obj: Objective,
    grad: &mut [f64],
) -> Result<LossBreakdown> {
    let nv = item.num_views();
    if masks.len() != nv {
        return Err(Error::InvalidInput(format!(
            "{} masks for {nv} views",
            masks.len()
        )));
    }
    let masks: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| check_mask(p, m.as_deref()))
        .collect::<Result<_>>()?;
    let passes: Vec<ForwardPass> = item
        .views
        .iter()
        .zip(&masks)
        .map(|(x, m)| forward_pass(p, w1t, x, m, true))
        .collect();
    let n = item.views[0].base.len();
    let inv_n = 1.0 / n as f64;

    let mut loss = LossBreakdown::default();
    // dL/dH for every view.
    let mut g_out: Vec<Vec<f64>> = Vec::with_capacity(nv);
    for (pass, target) in passes.iter().zip(&item.targets) {
        let mut g = vec![0.0; n];
        let mut l = 0.0;
        for ((gi, h), t) in g.iter_mut().zip(&pass.gaze).zip(target) {
            let d = h - t;
            l += d * d;
            *gi = 2.0 * d * inv_n;
        }
        loss.supervised += l * inv_n;
        g_out.push(g);
    }
    if obj.consistency_weight != 0.0 {
        for a in 0..nv {
            for b in 0..nv {
                if a == b || (!obj.ordered_pairs && b < a) {
                    continue;
                }
                let (ia, ib) = (&item.index[a], &item.index[b]);
                let count = ia
                    .iter()
                    .zip(ib)
                    .filter(|(x, y)| x.is_some() && y.is_some())
                    .count();
                if count == 0 {
                    return Err(Error::InvalidInput(
                        "augmentations share no valid cells".into(),
                    ));
                }
                let scale = obj.consistency_weight / count as f64;
                let mut l = 0.0;
                for (ca, cb) in ia.iter().zip(ib) {
                    if let (Some(ca), Some(cb)) = (ca, cb) {
                        let d = passes[a].gaze[*ca] - passes[b].gaze[*cb];
                        l += d * d;
                        g_out[a][*ca] += 2.0 * d * scale;
                        g_out[b][*cb] -= 2.0 * d * scale;
                    }
                }
                loss.consistency += l * scale;
            }
        }
    }

    for v in 0..nv {
        backprop_view(
            p,
            w1t,
            &item.views[v],
            &passes[v],
            &masks[v],
            &g_out[v],
            grad,
        );
    }
    Ok(loss)
}

fn backprop_view(
    p: &LearnerParams,
    w1t: &[f64],
    x: &ViewInputs,
    pass: &ForwardPass,
    mask: &[f64],
    g_out: &[f64],
    grad: &mut [f64],
) {
    let k = p.hidden;
    let n = x.base.len();
    let scale = n as f64;
    let w1_att = &w1t[4 * k..5 * k];

    let mut d_w1t = vec![0.0; FEATURES * k];
    let mut d_b1 = vec![0.0; k];
    let mut d_v = vec![0.0; k];
    let mut d_b2 = 0.0;
    let mut d_att = vec![0.0; n];
    let mut dz = vec![0.0; k];

    for c in 0..n {
        let h = pass.gaze[c];
        let d_o = g_out[c] * h * (1.0 - h);
        if d_o == 0.0 {
            continue;
        }
        d_b2 += d_o;
        let z = &pass.z[c * k..(c + 1) * k];
        let mut da = 0.0;
        for i in 0..k {
            let active = z[i] > 0.0;
            let m = mask[i];
            d_v[i] += d_o * if active { z[i] * m } else { 0.0 };
            let g = if active { d_o * p.v[i] * m } else { 0.0 };
            dz[i] = g;
            d_b1[i] += g;
            da += g * w1_att[i];
        }
        let f = &x.base[c];
        let att = pass.attention[c] * scale;
        let feats = [f[0], f[1], f[2], f[3], att];
        for (j, fj) in feats.iter().enumerate() {
            let row = &mut d_w1t[j * k..(j + 1) * k];
            for (r, g) in row.iter_mut().zip(&dz) {
                *r += g * fj;
            }
        }
        d_att[c] = da * scale;
    }

    // Softmax backward into theta_A.
    let s: f64 = d_att.iter().zip(&pass.attention).map(|(d, m)| d * m).sum();
    let mut d_theta = [0.0; 3];
    for (c, f) in x.base.iter().enumerate() {
        let dl = pass.attention[c] * (d_att[c] - s);
        d_theta[0] += dl * f[0];
        d_theta[1] += dl * f[1];
        d_theta[2] += dl;
    }

    let mut off = 0;
    for t in d_theta {
        grad[off] += t;
        off += 1;
    }
    for row in 0..k {
        for j in 0..FEATURES {
            grad[off + row * FEATURES + j] += d_w1t[j * k + row];
        }
    }
    off += k * FEATURES;
    for i in 0..k {
        grad[off + i] += d_b1[i];
        grad[off + k + i] += d_v[i];
    }
    off += 2 * k;
    grad[off] += d_b2;
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LearnerParams,
    pub checkpoints: Vec<Checkpoint>,
    /// Mean item loss of every epoch, measured during the pass.
    pub epoch_losses: Vec<f64>,
}

/// Adam over shuffled epochs, one update per item. Checkpoints are taken
/// after every `eval_every`-th epoch.
pub fn train(init: &LearnerParams, items: &[TrainItem], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    init.validate()?;
    if items.is_empty() {
        return Err(Error::InvalidInput(
            "cannot train on an empty labeled set".into(),
        ));
    }
    let grid = items[0].views[0].size;
    let obj = Objective::from(cfg);
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), cfg);
    let mut rng: ChaCha8Rng = seed::rng(cfg.seed, &[seed::tag("train")]);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut checkpoints = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs_per_cycle);
    let mut grad = vec![0.0; flat.len()];

    for epoch in 1..=cfg.epochs_per_cycle {
        // Fisher-Yates with the run's own stream.
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let item = &items[idx];
            let masks: Vec<Option<Vec<f64>>> = (0..item.num_views())
                .map(|_| Some(dropout_mask(params.hidden, cfg.dropout_rate, &mut rng)))
                .collect();
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w1t = params.w1_transposed();
            epoch_loss += accumulate(&params, &w1t, item, &masks, obj, &mut grad)?.total();
            adam.step(&mut flat, &grad);
            params.set_flat(&flat);
        }
        params.validate()?;
        epoch_losses.push(epoch_loss / items.len() as f64);
        if epoch % cfg.eval_every == 0 {
            checkpoints.push(Checkpoint {
                epoch,
                params: params.clone(),
                grid,
            });
        }
    }
    Ok(TrainOutcome {
        params,
        checkpoints,
        epoch_losses,
    })
}
