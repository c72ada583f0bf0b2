//! Grids, images and displacement fields.
//!
//! A displacement field `u` represents the map `phi(x) = x + u(x)` on a regular
//! pixel grid with unit spacing. Vectors are stored as `[row, col]`.
//!
//! All sampling is bilinear with clamp-to-edge boundary handling: query points
//! outside `[0, H-1] x [0, W-1]` are clamped onto the border before
//! interpolation. Sampling at grid nodes reproduces node values exactly.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Pixel grid with unit spacing along both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    height: usize,
    width: usize,
}

impl Grid {
    /// Both dimensions must be at least 2 so finite differences have neighbors.
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height < 2 || width < 2 {
            return Err(Error::Domain(format!(
                "grid must be at least 2x2, got {height}x{width}"
            )));
        }
        Ok(Self { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    fn check(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Clamped cell lookup shared by every bilinear sampler.
#[derive(Debug, Clone, Copy)]
struct Cell {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fr: f64,
    fc: f64,
    /// Whether the query point fell outside the domain along each axis.
    clamped_r: bool,
    clamped_c: bool,
}

#[inline]
fn locate(grid: &Grid, row: f64, col: f64) -> Cell {
    let hmax = (grid.height - 1) as f64;
    let wmax = (grid.width - 1) as f64;
    let clamped_r = !(0.0..=hmax).contains(&row);
    let clamped_c = !(0.0..=wmax).contains(&col);
    let r = row.clamp(0.0, hmax);
    let c = col.clamp(0.0, wmax);
    let r0 = (r.floor() as usize).min(grid.height - 1);
    let c0 = (c.floor() as usize).min(grid.width - 1);
    let r1 = (r0 + 1).min(grid.height - 1);
    let c1 = (c0 + 1).min(grid.width - 1);
    Cell {
        i00: grid.index(r0, c0),
        i01: grid.index(r0, c1),
        i10: grid.index(r1, c0),
        i11: grid.index(r1, c1),
        fr: r - r0 as f64,
        fc: c - c0 as f64,
        clamped_r,
        clamped_c,
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

#[inline]
fn bilerp_scalar(values: &[f64], cell: &Cell) -> f64 {
    let top = lerp(values[cell.i00], values[cell.i01], cell.fc);
    let bottom = lerp(values[cell.i10], values[cell.i11], cell.fc);
    lerp(top, bottom, cell.fr)
}

#[inline]
fn bilerp_vector(values: &[[f64; 2]], cell: &Cell) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let top = lerp(values[cell.i00][k], values[cell.i01][k], cell.fc);
        let bottom = lerp(values[cell.i10][k], values[cell.i11][k], cell.fc);
        *o = lerp(top, bottom, cell.fr);
    }
    out
}

/// Bilinear sample of a scalar array together with its spatial gradient
/// `(d/drow, d/dcol)` at the query point. The gradient along a clamped axis is zero.
#[inline]
pub(crate) fn sample_with_gradient(grid: &Grid, values: &[f64], row: f64, col: f64) -> (f64, [f64; 2]) {
    let cell = locate(grid, row, col);
    let v00 = values[cell.i00];
    let v01 = values[cell.i01];
    let v10 = values[cell.i10];
    let v11 = values[cell.i11];
    let top = lerp(v00, v01, cell.fc);
    let bottom = lerp(v10, v11, cell.fc);
    let value = lerp(top, bottom, cell.fr);
    let d_row = if cell.clamped_r { 0.0 } else { bottom - top };
    let d_col = if cell.clamped_c {
        0.0
    } else {
        lerp(v01 - v00, v11 - v10, cell.fr)
    };
    (value, [d_row, d_col])
}

/// The four node indices and bilinear weights used when sampling at a point.
/// Sampling is linear in node values, so these weights are also the exact
/// derivative of the sample with respect to each node.
#[inline]
pub(crate) fn bilinear_weights(grid: &Grid, row: f64, col: f64) -> [(usize, f64); 4] {
    let cell = locate(grid, row, col);
    let (fr, fc) = (cell.fr, cell.fc);
    [
        (cell.i00, (1.0 - fr) * (1.0 - fc)),
        (cell.i01, (1.0 - fr) * fc),
        (cell.i10, fr * (1.0 - fc)),
        (cell.i11, fr * fc),
    ]
}

/// Scalar image on a grid. Values are finite reals; generators keep them in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarImage {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarImage {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "image has {} values for a {}x{} grid",
                values.len(),
                grid.height,
                grid.width
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for r in 0..grid.height {
            for c in 0..grid.width {
                values.push(f(r, c));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }

    /// Bilinear sample with clamp-to-edge.
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        bilerp_scalar(&self.values, &locate(&self.grid, row, col))
    }

    /// Frobenius norm of the intensity array.
    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mean_squared_diff(&self, other: &ScalarImage) -> Result<f64> {
        self.grid.check(&other.grid, "mean_squared_diff")?;
        let sum: f64 = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.grid.len() as f64)
    }

    pub fn mean_abs_diff(&self, other: &ScalarImage) -> Result<f64> {
        self.grid.check(&other.grid, "mean_abs_diff")?;
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum();
        Ok(sum / self.grid.len() as f64)
    }

    /// Sum over pixels of the finite-difference gradient magnitude; an edge-sharpness score.
    pub fn gradient_magnitude_sum(&self) -> f64 {
        let g = self.grid;
        let mut total = 0.0;
        for r in 0..g.height {
            for c in 0..g.width {
                let dr = diff(g.height, r, |i| self.values[g.index(i, c)]);
                let dc = diff(g.width, c, |j| self.values[g.index(r, j)]);
                total += (dr * dr + dc * dc).sqrt();
            }
        }
        total
    }
}

/// Integer label image; label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    grid: Grid,
    labels: Vec<u32>,
}

impl LabelImage {
    pub fn new(grid: Grid, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Shape(format!(
                "label image has {} values for a {}x{} grid",
                labels.len(),
                grid.height,
                grid.width
            )));
        }
        Ok(Self { grid, labels })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize) -> u32) -> Self {
        let mut labels = Vec::with_capacity(grid.len());
        for r in 0..grid.height {
            for c in 0..grid.width {
                labels.push(f(r, c));
            }
        }
        Self { grid, labels }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[self.grid.index(row, col)]
    }

    /// Distinct labels present, ascending.
    pub fn distinct(&self) -> Vec<u32> {
        let mut v = self.labels.clone();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Dense displacement field `u`, representing `phi(x) = x + u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    data: Vec<[f64; 2]>,
}

impl DisplacementField {
    pub fn new(grid: Grid, data: Vec<[f64; 2]>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} vectors for a {}x{} grid",
                data.len(),
                grid.height,
                grid.width
            )));
        }
        if let Some(i) = data.iter().position(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_raw(grid: Grid, data: Vec<[f64; 2]>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self { grid, data }
    }

    pub fn identity(grid: Grid) -> Self {
        Self::constant(grid, [0.0, 0.0])
    }

    pub fn constant(grid: Grid, u: [f64; 2]) -> Self {
        Self {
            grid,
            data: vec![u; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, usize) -> [f64; 2]) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for r in 0..grid.height {
            for c in 0..grid.width {
                data.push(f(r, c));
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<[f64; 2]> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 2] {
        self.data[self.grid.index(row, col)]
    }

    /// Bilinear sample with clamp-to-edge. Callers must pass finite coordinates;
    /// use [`sample_field`] for a checked version.
    pub fn sample(&self, row: f64, col: f64) -> [f64; 2] {
        bilerp_vector(&self.data, &locate(&self.grid, row, col))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| [v[0] * factor, v[1] * factor]).collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Largest per-pixel displacement norm.
    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }

    /// Mean over pixels of `|u(x)|^2`.
    pub fn mean_square_norm(&self) -> f64 {
        self.data.iter().map(|v| v[0] * v[0] + v[1] * v[1]).sum::<f64>() / self.grid.len() as f64
    }

    pub(crate) fn check_grid(&self, other: &Grid, what: &str) -> Result<()> {
        self.grid.check(other, what)
    }
}

pub fn identity_field(grid: Grid) -> DisplacementField {
    DisplacementField::identity(grid)
}

/// Bilinear sample of `u` at `point = (row, col)` with clamp-to-edge.
pub fn sample_field(field: &DisplacementField, point: [f64; 2]) -> Result<[f64; 2]> {
    if !point[0].is_finite() || !point[1].is_finite() {
        return Err(Error::Domain(format!("non-finite sample point {point:?}")));
    }
    Ok(field.sample(point[0], point[1]))
}

/// `r = outer ∘ inner`, i.e. `u_r(x) = u_inner(x) + u_outer(x + u_inner(x))`.
pub fn compose(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    outer.check_grid(&inner.grid, "compose")?;
    Ok(compose_unchecked(outer, inner))
}

pub(crate) fn compose_unchecked(outer: &DisplacementField, inner: &DisplacementField) -> DisplacementField {
    let grid = inner.grid;
    let w = grid.width;
    let mut data = vec![[0.0; 2]; grid.len()];
    data.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        for (c, out) in row.iter_mut().enumerate() {
            let ui = inner.data[grid.index(r, c)];
            let uo = outer.sample(r as f64 + ui[0], c as f64 + ui[1]);
            *out = [ui[0] + uo[0], ui[1] + uo[1]];
        }
    });
    DisplacementField { grid, data }
}

/// The field composed with itself `m` times. Powers are built by repeated
/// squaring, so for `m = 2^k` this is exactly `k` self-compositions.
pub fn self_compose_m(field: &DisplacementField, m: usize) -> Result<DisplacementField> {
    if m == 0 {
        return Err(Error::Domain("self-composition count must be at least 1".into()));
    }
    let mut result: Option<DisplacementField> = None;
    let mut power = field.clone();
    let mut rest = m;
    loop {
        if rest & 1 == 1 {
            result = Some(match result {
                None => power.clone(),
                Some(acc) => compose_unchecked(&power, &acc),
            });
        }
        rest >>= 1;
        if rest == 0 {
            break;
        }
        power = compose_unchecked(&power, &power);
    }
    Ok(result.expect("m >= 1"))
}

/// Backward warp: `out(x) = image(x + u(x))`, bilinear, clamp-to-edge.
pub fn warp_image(image: &ScalarImage, field: &DisplacementField) -> Result<ScalarImage> {
    image.grid.check(&field.grid, "warp_image")?;
    let grid = image.grid;
    let mut values = vec![0.0; grid.len()];
    values.par_chunks_mut(grid.width).enumerate().for_each(|(r, row)| {
        for (c, out) in row.iter_mut().enumerate() {
            let u = field.data[grid.index(r, c)];
            *out = image.sample(r as f64 + u[0], c as f64 + u[1]);
        }
    });
    Ok(ScalarImage { grid, values })
}

/// Nearest-neighbour backward warp of a label image, clamp-to-edge.
pub fn warp_labels(labels: &LabelImage, field: &DisplacementField) -> Result<LabelImage> {
    labels.grid.check(&field.grid, "warp_labels")?;
    let grid = labels.grid;
    let hmax = (grid.height - 1) as f64;
    let wmax = (grid.width - 1) as f64;
    let out = (0..grid.len())
        .map(|i| {
            let (r, c) = (i / grid.width, i % grid.width);
            let u = field.data[i];
            let rr = (r as f64 + u[0]).clamp(0.0, hmax).round() as usize;
            let cc = (c as f64 + u[1]).clamp(0.0, wmax).round() as usize;
            labels.labels[grid.index(rr, cc)]
        })
        .collect();
    Ok(LabelImage { grid, labels: out })
}

/// Central difference in the interior, one-sided at the two ends.
#[inline]
fn diff(n: usize, i: usize, f: impl Fn(usize) -> f64) -> f64 {
    if i == 0 {
        f(1) - f(0)
    } else if i == n - 1 {
        f(n - 1) - f(n - 2)
    } else {
        0.5 * (f(i + 1) - f(i - 1))
    }
}

/// Per-pixel `det(I + grad u)`.
pub fn jacobian_determinant(field: &DisplacementField) -> ScalarImage {
    let g = field.grid;
    let at = |r: usize, c: usize, k: usize| field.data[g.index(r, c)][k];
    let values = (0..g.len())
        .map(|i| {
            let (r, c) = (i / g.width, i % g.width);
            let drr = diff(g.height, r, |ii| at(ii, c, 0));
            let drc = diff(g.width, c, |jj| at(r, jj, 0));
            let dcr = diff(g.height, r, |ii| at(ii, c, 1));
            let dcc = diff(g.width, c, |jj| at(r, jj, 1));
            (1.0 + drr) * (1.0 + dcc) - drc * dcr
        })
        .collect();
    ScalarImage { grid: g, values }
}

/// Percentage of pixels whose Jacobian determinant is `<= 0`.
pub fn neg_jacobian_fraction(field: &DisplacementField) -> f64 {
    let det = jacobian_determinant(field);
    let count = det.values.iter().filter(|&&d| d <= 0.0).count();
    100.0 * count as f64 / field.grid.len() as f64
}

/// Root-mean-square of component-wise differences: squared differences are
/// averaged over every pixel and both components, then square-rooted.
pub fn field_rms_diff(a: &DisplacementField, b: &DisplacementField) -> Result<f64> {
    a.check_grid(&b.grid, "field_rms_diff")?;
    Ok(rms_diff_slices(&a.data, &b.data))
}

pub(crate) fn rms_diff_slices(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d0 = x[0] - y[0];
            let d1 = x[1] - y[1];
            d0 * d0 + d1 * d1
        })
        .sum();
    (sum / (2 * a.len()) as f64).sqrt()
}
