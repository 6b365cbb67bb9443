//! Trajectory codec: time-domain offset tracks <-> truncated orthonormal DCT-II
//! coefficients, and the direction/magnitude split used by the training loss.

use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Offsets below this RMS are treated as zero motion.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

/// Horizontal or vertical motion component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];

    #[inline]
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
        }
    }
}

/// Per-cell motion tracks over an `height x width` grid.
///
/// Offsets are measured relative to the cell's start position, one `(dx, dy)`
/// pair per frame. Layout is cell-major: `((row * width + col) * horizon + t) * 2 + axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryField<S> {
    height: usize,
    width: usize,
    horizon: usize,
    data: Vec<S>,
}

impl<S: Scalar> TrajectoryField<S> {
    pub fn zeros(height: usize, width: usize, horizon: usize) -> Result<Self> {
        check_grid(height, width)?;
        if horizon == 0 {
            return invalid("trajectory horizon must be at least 1");
        }
        Ok(Self {
            height,
            width,
            horizon,
            data: vec![S::zero(); height * width * horizon * 2],
        })
    }

    pub fn from_vec(height: usize, width: usize, horizon: usize, data: Vec<S>) -> Result<Self> {
        check_grid(height, width)?;
        if horizon == 0 {
            return invalid("trajectory horizon must be at least 1");
        }
        let expected = height * width * horizon * 2;
        if data.len() != expected {
            return invalid(format!(
                "trajectory data has {} values, expected {expected}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("trajectory data contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            horizon,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    fn index(&self, cell: usize, t: usize, axis: Axis) -> usize {
        (cell * self.horizon + t) * 2 + axis.index()
    }

    /// Offset of `cell` at frame index `t` (0-based; frame `t + 1` of the clip).
    #[inline]
    pub fn offset(&self, cell: usize, t: usize) -> (S, S) {
        let i = self.index(cell, t, Axis::X);
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set_offset(&mut self, cell: usize, t: usize, dx: S, dy: S) {
        let i = self.index(cell, t, Axis::X);
        self.data[i] = dx;
        self.data[i + 1] = dy;
    }

    /// One axis of one cell's track.
    pub fn axis_track(&self, cell: usize, axis: Axis) -> Vec<S> {
        (0..self.horizon)
            .map(|t| self.data[self.index(cell, t, axis)])
            .collect()
    }

    pub fn cell_is_static(&self, cell: usize) -> bool {
        let start = cell * self.horizon * 2;
        self.data[start..start + self.horizon * 2]
            .iter()
            .all(|v| v.is_zero())
    }
}

/// Truncated DCT coefficients, `k` per axis per cell.
///
/// Stored channel-major as `2k x height x width`: channels `0..k` hold the
/// x-axis coefficients, `k..2k` the y-axis ones. At 16x20 with `k = 5` the
/// flattened vector has 3200 entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField<S> {
    height: usize,
    width: usize,
    k: usize,
    coeffs: Vec<S>,
}

impl<S: Scalar> SpectralField<S> {
    pub fn zeros(height: usize, width: usize, k: usize) -> Result<Self> {
        check_grid(height, width)?;
        if k == 0 {
            return invalid("spectral field needs at least one coefficient per axis");
        }
        Ok(Self {
            height,
            width,
            k,
            coeffs: vec![S::zero(); 2 * k * height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, k: usize, coeffs: Vec<S>) -> Result<Self> {
        check_grid(height, width)?;
        if k == 0 {
            return invalid("spectral field needs at least one coefficient per axis");
        }
        let expected = 2 * k * height * width;
        if coeffs.len() != expected {
            return invalid(format!(
                "spectral data has {} values, expected {expected}",
                coeffs.len()
            ));
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return invalid("spectral data contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            k,
            coeffs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Retained coefficients per axis.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Length of the flattened coefficient vector (`2k * height * width`).
    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<S> {
        self.coeffs
    }

    #[inline]
    fn index(&self, cell: usize, axis: Axis, j: usize) -> usize {
        let channel = axis.index() * self.k + j;
        channel * self.height * self.width + cell
    }

    #[inline]
    pub fn coeff(&self, cell: usize, axis: Axis, j: usize) -> S {
        self.coeffs[self.index(cell, axis, j)]
    }

    #[inline]
    pub fn set_coeff(&mut self, cell: usize, axis: Axis, j: usize, v: S) {
        let i = self.index(cell, axis, j);
        self.coeffs[i] = v;
    }

    /// Contiguous block holding every coefficient of one axis.
    pub fn axis_slice(&self, axis: Axis) -> &[S] {
        let n = self.k * self.height * self.width;
        &self.coeffs[axis.index() * n..(axis.index() + 1) * n]
    }

    fn axis_slice_mut(&mut self, axis: Axis) -> &mut [S] {
        let n = self.k * self.height * self.width;
        &mut self.coeffs[axis.index() * n..(axis.index() + 1) * n]
    }

    /// Root-mean-square of one axis' coefficients over the whole field.
    pub fn axis_rms(&self, axis: Axis) -> S {
        let block = self.axis_slice(axis);
        let ss: S = block.iter().map(|&v| v * v).sum();
        (ss / S::lit(block.len() as f64)).sqrt()
    }
}

/// Spectral field with the global per-axis scale factored out.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSpectral<S> {
    pub direction: SpectralField<S>,
    pub mag_x: S,
    pub mag_y: S,
}

impl<S: Scalar> NormalizedSpectral<S> {
    pub fn magnitude(&self, axis: Axis) -> S {
        match axis {
            Axis::X => self.mag_x,
            Axis::Y => self.mag_y,
        }
    }
}

fn check_grid(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return invalid(format!("grid must be non-empty, got {height}x{width}"));
    }
    Ok(())
}

/// Orthonormal DCT-II basis restricted to the first `k` frequencies of a
/// length-`len` signal. Row `j` holds `c_j cos(pi (2n + 1) j / (2 len))`.
#[derive(Debug, Clone)]
pub struct DctBasis<S> {
    len: usize,
    k: usize,
    rows: Vec<S>,
}

impl<S: Scalar> DctBasis<S> {
    pub fn new(len: usize, k: usize) -> Result<Self> {
        if len == 0 {
            return invalid("DCT length must be at least 1");
        }
        if k == 0 || k > len {
            return invalid(format!("DCT truncation {k} outside 1..={len}"));
        }
        let mut rows = Vec::with_capacity(len * k);
        let n = len as f64;
        for j in 0..k {
            let c = if j == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for t in 0..len {
                let angle = PI * (2.0 * t as f64 + 1.0) * j as f64 / (2.0 * n);
                rows.push(S::lit(c * angle.cos()));
            }
        }
        Ok(Self { len, k, rows })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    fn row(&self, j: usize) -> &[S] {
        &self.rows[j * self.len..(j + 1) * self.len]
    }

    /// First `k` coefficients of the orthonormal DCT-II of `signal`.
    pub fn forward_into(&self, signal: &[S], out: &mut [S]) {
        debug_assert_eq!(signal.len(), self.len);
        debug_assert_eq!(out.len(), self.k);
        for (j, o) in out.iter_mut().enumerate() {
            *o = crate::scalar::dot(self.row(j), signal);
        }
    }

    /// Inverse transform of `k` coefficients, treating the rest as zero.
    pub fn inverse_into(&self, coeffs: &[S], out: &mut [S]) {
        debug_assert_eq!(coeffs.len(), self.k);
        debug_assert_eq!(out.len(), self.len);
        out.iter_mut().for_each(|v| *v = S::zero());
        for (j, &c) in coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(self.row(j)) {
                *o += c * b;
            }
        }
    }
}

/// Orthonormal DCT-II of a full signal.
pub fn dct_forward<S: Scalar>(signal: &[S]) -> Result<Vec<S>> {
    if signal.is_empty() {
        return invalid("cannot transform an empty signal");
    }
    let basis = DctBasis::new(signal.len(), signal.len())?;
    let mut out = vec![S::zero(); signal.len()];
    basis.forward_into(signal, &mut out);
    Ok(out)
}

/// Inverse of [`dct_forward`] (orthonormal DCT-III).
pub fn dct_inverse<S: Scalar>(coeffs: &[S]) -> Result<Vec<S>> {
    if coeffs.is_empty() {
        return invalid("cannot transform an empty signal");
    }
    let basis = DctBasis::new(coeffs.len(), coeffs.len())?;
    let mut out = vec![S::zero(); coeffs.len()];
    basis.inverse_into(coeffs, &mut out);
    Ok(out)
}

/// Transforms every cell's x and y offset tracks and keeps the first `k`
/// coefficients of each.
pub fn encode_field<S: Scalar>(traj: &TrajectoryField<S>, k: usize) -> Result<SpectralField<S>> {
    let basis = DctBasis::new(traj.horizon(), k)?;
    encode_field_with(&basis, traj)
}

pub fn encode_field_with<S: Scalar>(
    basis: &DctBasis<S>,
    traj: &TrajectoryField<S>,
) -> Result<SpectralField<S>> {
    if basis.len() != traj.horizon() {
        return invalid(format!(
            "basis length {} does not match horizon {}",
            basis.len(),
            traj.horizon()
        ));
    }
    let k = basis.k();
    let mut out = SpectralField::zeros(traj.height(), traj.width(), k)?;
    let mut track = vec![S::zero(); traj.horizon()];
    let mut coeffs = vec![S::zero(); k];
    for cell in 0..traj.cells() {
        if traj.cell_is_static(cell) {
            continue;
        }
        for axis in Axis::BOTH {
            for (t, v) in track.iter_mut().enumerate() {
                let (dx, dy) = traj.offset(cell, t);
                *v = if axis == Axis::X { dx } else { dy };
            }
            basis.forward_into(&track, &mut coeffs);
            for (j, &c) in coeffs.iter().enumerate() {
                out.set_coeff(cell, axis, j, c);
            }
        }
    }
    Ok(out)
}

/// Zero-pads each cell's coefficients to `horizon` and inverts the DCT.
pub fn decode_field<S: Scalar>(spec: &SpectralField<S>, horizon: usize) -> Result<TrajectoryField<S>> {
    if horizon < spec.k() {
        return invalid(format!(
            "horizon {horizon} shorter than retained coefficients {}",
            spec.k()
        ));
    }
    let basis = DctBasis::new(horizon, spec.k())?;
    decode_field_with(&basis, spec)
}

pub fn decode_field_with<S: Scalar>(
    basis: &DctBasis<S>,
    spec: &SpectralField<S>,
) -> Result<TrajectoryField<S>> {
    if basis.k() != spec.k() {
        return invalid(format!(
            "basis keeps {} coefficients, field has {}",
            basis.k(),
            spec.k()
        ));
    }
    let horizon = basis.len();
    let mut out = TrajectoryField::zeros(spec.height(), spec.width(), horizon)?;
    let mut coeffs = vec![S::zero(); spec.k()];
    let mut xs = vec![S::zero(); horizon];
    let mut ys = vec![S::zero(); horizon];
    for cell in 0..spec.height() * spec.width() {
        for (axis, buf) in [(Axis::X, &mut xs), (Axis::Y, &mut ys)] {
            for (j, c) in coeffs.iter_mut().enumerate() {
                *c = spec.coeff(cell, axis, j);
            }
            basis.inverse_into(&coeffs, buf);
        }
        for t in 0..horizon {
            out.set_offset(cell, t, xs[t], ys[t]);
        }
    }
    Ok(out)
}

/// Factors out the per-axis RMS of the field. Axes whose RMS is below
/// [`MAGNITUDE_FLOOR`] get a zero magnitude and zero direction.
pub fn split_normalize<S: Scalar>(spec: &SpectralField<S>) -> NormalizedSpectral<S> {
    let mut direction = spec.clone();
    let mut mags = [S::zero(); 2];
    for axis in Axis::BOTH {
        let rms = spec.axis_rms(axis);
        let block = direction.axis_slice_mut(axis);
        if rms < S::lit(MAGNITUDE_FLOOR) {
            block.iter_mut().for_each(|v| *v = S::zero());
        } else {
            mags[axis.index()] = rms;
            block.iter_mut().for_each(|v| *v /= rms);
        }
    }
    NormalizedSpectral {
        direction,
        mag_x: mags[0],
        mag_y: mags[1],
    }
}

/// Rescales the direction field by its per-axis magnitudes.
pub fn recombine<S: Scalar>(ns: &NormalizedSpectral<S>) -> SpectralField<S> {
    let mut out = ns.direction.clone();
    for axis in Axis::BOTH {
        let m = ns.magnitude(axis);
        out.axis_slice_mut(axis).iter_mut().for_each(|v| *v *= m);
    }
    out
}

/// Writes `recombine(direction, mags)` into `out` for flat channel-major vectors.
pub fn recombine_flat<S: Scalar>(direction: &[S], mag_x: S, mag_y: S, out: &mut [S]) {
    debug_assert_eq!(direction.len(), out.len());
    let half = direction.len() / 2;
    for (i, (o, &d)) in out.iter_mut().zip(direction).enumerate() {
        *o = d * if i < half { mag_x } else { mag_y };
    }
}
