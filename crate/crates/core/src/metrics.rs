//! Heatmap AUC and peak distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{argmax_peak, cell_center, l2_norm_dist, Heatmap, NormPoint};

/// Cells within this many cell widths of a GT point count as positives.
pub const DEFAULT_AUC_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc: f64,
    pub avg_dist: f64,
    pub min_dist: f64,
}

/// Cells whose center lies within `radius_cells` of any GT point.
pub fn positive_cells(h: &Heatmap, gt_points: &[NormPoint], radius_cells: f64) -> Vec<bool> {
    let size = h.size();
    let gts: Vec<(f64, f64)> = gt_points.iter().map(|p| p.to_cell_coords(size)).collect();
    let r2 = radius_cells * radius_cells;
    let mut out = Vec::with_capacity(size.cells());
    for y in 0..size.height {
        for x in 0..size.width {
            let (fx, fy) = (x as f64, y as f64);
            out.push(gts.iter().any(|(gx, gy)| {
                let (dx, dy) = (fx - gx, fy - gy);
                dx * dx + dy * dy <= r2
            }));
        }
    }
    out
}

/// ROC AUC of `scores` against `labels` via the rank-sum formula with midranks.
pub fn rank_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(
            "scores and labels differ in length".into(),
        ));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 {
        return Err(Error::UndefinedAuc("no positive cells"));
    }
    if n_neg == 0 {
        return Err(Error::UndefinedAuc("every cell is positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        let pos_in_run = order[i..=j].iter().filter(|&&k| labels[k]).count();
        rank_sum += mid * pos_in_run as f64;
        i = j + 1;
    }
    let (np, nn) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

pub fn heatmap_auc(h_g: &Heatmap, gt_points: &[NormPoint], radius_cells: f64) -> Result<f64> {
    if gt_points.is_empty() {
        return Err(Error::InvalidInput(
            "AUC needs at least one GT point".into(),
        ));
    }
    if radius_cells.is_nan() || radius_cells <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "AUC radius must be > 0, got {radius_cells}"
        )));
    }
    rank_auc(h_g.values(), &positive_cells(h_g, gt_points, radius_cells))
}

/// `(distance to the annotation centroid, distance to the nearest annotation)`.
pub fn distances(pred_peak: NormPoint, gt_points: &[NormPoint]) -> Result<(f64, f64)> {
    if gt_points.is_empty() {
        return Err(Error::InvalidInput(
            "distances need at least one GT point".into(),
        ));
    }
    let n = gt_points.len() as f64;
    let centroid = NormPoint::new(
        gt_points.iter().map(|p| p.x).sum::<f64>() / n,
        gt_points.iter().map(|p| p.y).sum::<f64>() / n,
    );
    let avg = l2_norm_dist(pred_peak, centroid);
    let min = gt_points
        .iter()
        .map(|p| l2_norm_dist(pred_peak, *p))
        .fold(f64::INFINITY, f64::min);
    Ok((avg, min))
}

/// All three metrics for one prediction; the predicted point is the center of the peak cell.
pub fn evaluate_heatmap(
    h_g: &Heatmap,
    gt_points: &[NormPoint],
    radius_cells: f64,
) -> Result<EvalResult> {
    let auc = heatmap_auc(h_g, gt_points, radius_cells)?;
    let peak = cell_center(argmax_peak(h_g), h_g.size());
    let (avg_dist, min_dist) = distances(peak, gt_points)?;
    Ok(EvalResult {
        auc,
        avg_dist,
        min_dist,
    })
}
