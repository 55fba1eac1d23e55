//! Grid and heatmap primitives.
//!
//! Dataset-level coordinates are normalized to `[0, 1]` (fraction of grid
//! extent) so a single pool can be rendered at any grid resolution. Cell
//! coordinates are `(x, y) = (column, row)` and heatmap storage is row-major.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default isotropic standard deviation (in cells) of ground-truth gaze heatmaps.
pub const DEFAULT_GT_SIGMA: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSize {
    #[serde(rename = "w")]
    pub width: usize,
    #[serde(rename = "h")]
    pub height: usize,
}

impl GridSize {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    /// Length of the grid diagonal in cell units.
    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A cell of a heatmap, `x` is the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: usize,
    pub y: usize,
}

impl GridPoint {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Euclidean distance in cell units.
    pub fn dist(&self, other: &GridPoint) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }
}

/// A point in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint {
    pub x: f64,
    pub y: f64,
}

impl NormPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn clamped(x: f64, y: f64) -> Self {
        Self {
            x: x.clamp(0.0, 1.0),
            y: y.clamp(0.0, 1.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    /// The cell containing this point; points on the far edge map to the last cell.
    pub fn to_cell(&self, size: GridSize) -> GridPoint {
        let cx = ((self.x * size.width as f64).floor() as isize).clamp(0, size.width as isize - 1);
        let cy =
            ((self.y * size.height as f64).floor() as isize).clamp(0, size.height as isize - 1);
        GridPoint::new(cx as usize, cy as usize)
    }

    /// Position in continuous cell-index coordinates, so that the center of
    /// cell `(i, j)` maps to exactly `(i, j)`.
    pub fn to_cell_coords(&self, size: GridSize) -> (f64, f64) {
        (
            self.x * size.width as f64 - 0.5,
            self.y * size.height as f64 - 0.5,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        if !b.is_valid() {
            return Err(Error::InvalidInput(format!("invalid bounding box {b:?}")));
        }
        Ok(b)
    }

    pub fn x0(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn x1(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y0(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// Closed-interval containment.
    pub fn contains(&self, p: NormPoint) -> bool {
        p.x >= self.x0() && p.x <= self.x1() && p.y >= self.y0() && p.y <= self.y1()
    }

    /// True when the box overlaps the unit square with positive area.
    pub fn intersects_unit(&self) -> bool {
        self.x0() < 1.0 && self.x1() > 0.0 && self.y0() < 1.0 && self.y1() > 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.w > 0.0
            && self.w <= 1.0
            && self.h > 0.0
            && self.h <= 1.0
            && self.intersects_unit()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub center: NormPoint,
    /// Isotropic standard deviation in cell units.
    pub sigma: f64,
}

/// A `width x height` grid of non-negative, finite activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHeatmap", into = "RawHeatmap")]
pub struct Heatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawHeatmap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl TryFrom<RawHeatmap> for Heatmap {
    type Error = Error;
    fn try_from(raw: RawHeatmap) -> Result<Self> {
        Heatmap::new(raw.width, raw.height, raw.values)
    }
}

impl From<Heatmap> for RawHeatmap {
    fn from(h: Heatmap) -> Self {
        RawHeatmap {
            width: h.width,
            height: h.height,
            values: h.values,
        }
    }
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidHeatmap(format!(
                "dimensions must be at least 2x2, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidHeatmap(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidHeatmap(format!(
                "value {} at index {i} is negative or non-finite",
                values[i]
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(size: GridSize) -> Self {
        Self {
            width: size.width,
            height: size.height,
            values: vec![0.0; size.cells()],
        }
    }

    pub fn from_fn(size: GridSize, mut f: impl FnMut(GridPoint) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(size.cells());
        for y in 0..size.height {
            for x in 0..size.width {
                values.push(f(GridPoint::new(x, y)));
            }
        }
        Self::new(size.width, size.height, values)
    }

    /// Builds a heatmap from values the caller guarantees are finite and non-negative.
    pub(crate) fn from_trusted(size: GridSize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), size.cells());
        debug_assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self {
            width: size.width,
            height: size.height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn size(&self) -> GridSize {
        GridSize::new(self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, p: GridPoint) -> f64 {
        self.values[p.y * self.width + p.x]
    }

    pub fn max_value(&self) -> f64 {
        self.get(argmax_peak(self))
    }

    pub fn same_size(&self, other: &Heatmap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Multiplies every value by a positive constant.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// Cell with the maximal value; ties resolve to the smallest `(y, x)`.
pub fn argmax_peak(h: &Heatmap) -> GridPoint {
    let mut best = 0;
    for (i, &v) in h.values.iter().enumerate().skip(1) {
        if v > h.values[best] {
            best = i;
        }
    }
    GridPoint::new(best % h.width, best / h.width)
}

/// Renders an isotropic, unnormalized Gaussian (peak value 1 at its center).
pub fn render_gaussian(spec: GaussianSpec, size: GridSize) -> Heatmap {
    let (mx, my) = spec.center.to_cell_coords(size);
    let inv = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut values = Vec::with_capacity(size.cells());
    for y in 0..size.height {
        let dy = y as f64 - my;
        for x in 0..size.width {
            let dx = x as f64 - mx;
            values.push((-(dx * dx + dy * dy) * inv).exp());
        }
    }
    Heatmap::from_trusted(size, values)
}

/// Normalized coordinates of the center of a cell.
pub fn cell_center(p: GridPoint, size: GridSize) -> NormPoint {
    NormPoint::new(
        (p.x as f64 + 0.5) / size.width as f64,
        (p.y as f64 + 0.5) / size.height as f64,
    )
}

pub fn l2_norm_dist(a: NormPoint, b: NormPoint) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}
