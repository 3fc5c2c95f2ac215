//! Periodic box discretization, its dual frequency lattice and the unitary
//! discrete Fourier transform.
//!
//! Conventions used across the crate:
//!
//! * the box is `[-L, L)^n` sampled at `x_j = -L + j h` with `h = 2L / M`;
//! * the dual lattice is `xi_k = k * dxi` with `k in [-M/2, M/2)` and
//!   `dxi = pi / L`; frequency arrays are stored in this centered order;
//! * `F f(xi) = (2 pi)^{-n/2} \int e^{-i x.xi} f(x) dx` (unitary);
//! * `<f, g> = \int f conj(g)`, conjugate on the second argument.
//!
//! With these conventions `F(V * f) = (2 pi)^{n/2} F(V) F(f)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LATTICE_TOL: f64 = 1e-9;
const ALIAS_TOL: f64 = 1e-12;

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Uniform periodic grid on `[-L, L)^n` together with its dual lattice.
#[derive(Clone)]
pub struct Grid {
    dim: usize,
    points: usize,
    half_extent: f64,
    axis_x: Arc<Vec<f64>>,
    axis_xi: Arc<Vec<f64>>,
    fft: Arc<FftPair>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("points", &self.points)
            .field("half_extent", &self.half_extent)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.points == other.points
            && self.half_extent.to_bits() == other.half_extent.to_bits()
    }
}

/// Build a grid. `points_per_axis` must be a power of two no smaller than 16.
pub fn make_grid(dim: usize, points_per_axis: usize, half_extent: f64) -> Result<Grid> {
    Grid::new(dim, points_per_axis, half_extent)
}

impl Grid {
    pub fn new(dim: usize, points: usize, half_extent: f64) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} is outside 1..=3"
            )));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be a power of two >= 16, got {points}"
            )));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "half extent must be positive, got {half_extent}"
            )));
        }
        let h = 2.0 * half_extent / points as f64;
        let dxi = PI / half_extent;
        let half = (points / 2) as f64;
        let axis_x = (0..points).map(|j| -half_extent + j as f64 * h).collect();
        let axis_xi = (0..points).map(|i| (i as f64 - half) * dxi).collect();
        let mut planner = FftPlanner::new();
        let fft = FftPair {
            forward: planner.plan_fft_forward(points),
            inverse: planner.plan_fft_inverse(points),
        };
        Ok(Self {
            dim,
            points,
            half_extent,
            axis_x: Arc::new(axis_x),
            axis_xi: Arc::new(axis_xi),
            fft: Arc::new(fft),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    /// Total number of lattice points, `M^n`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.points as f64
    }

    pub fn dual_spacing(&self) -> f64 {
        PI / self.half_extent
    }

    pub fn nyquist(&self) -> f64 {
        PI * self.points as f64 / (2.0 * self.half_extent)
    }

    /// `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// `dxi^n`.
    pub fn dual_cell_volume(&self) -> f64 {
        self.dual_spacing().powi(self.dim as i32)
    }

    pub fn axis_positions(&self) -> &[f64] {
        &self.axis_x
    }

    pub fn axis_frequencies(&self) -> &[f64] {
        &self.axis_xi
    }

    /// Per-axis indices of a flat row-major index.
    pub fn unflatten(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.points;
            flat /= self.points;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dim)
            .fold(0, |acc, &i| acc * self.points + i)
    }

    /// Position of a flat index (unused trailing components are zero).
    pub fn position(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.axis_x[idx[a]];
        }
        x
    }

    /// Frequency of a flat index in the centered frequency ordering.
    pub fn frequency(&self, flat: usize) -> [f64; 3] {
        let idx = self.unflatten(flat);
        let mut xi = [0.0; 3];
        for a in 0..self.dim {
            xi[a] = self.axis_xi[idx[a]];
        }
        xi
    }

    /// Integer lattice label `k` (with `xi = k dxi`) of a centered frequency index.
    pub fn frequency_label(&self, flat: usize) -> [i64; 3] {
        let idx = self.unflatten(flat);
        let half = (self.points / 2) as i64;
        let mut k = [0i64; 3];
        for a in 0..self.dim {
            k[a] = idx[a] as i64 - half;
        }
        k
    }

    /// Flat centered index of lattice label `k`, if it lies in `[-M/2, M/2)^n`.
    pub fn frequency_index(&self, k: &[i64]) -> Option<usize> {
        let half = (self.points / 2) as i64;
        let mut idx = [0usize; 3];
        for a in 0..self.dim {
            let i = k[a] + half;
            if i < 0 || i >= self.points as i64 {
                return None;
            }
            idx[a] = i as usize;
        }
        Some(self.flatten(&idx[..self.dim]))
    }

    /// Flat index of the frequency origin.
    pub fn origin_index(&self) -> usize {
        self.frequency_index(&[0, 0, 0])
            .expect("origin is on the lattice")
    }

    pub fn frequency_norm_sq(&self, flat: usize) -> f64 {
        self.frequency(flat).iter().map(|v| v * v).sum()
    }

    pub fn position_norm_sq(&self, flat: usize) -> f64 {
        self.position(flat).iter().map(|v| v * v).sum()
    }

    /// Nearest lattice labels of a real vector and the largest rounding defect,
    /// both in units of `dxi`.
    pub fn lattice_labels(&self, v: &[f64]) -> ([i64; 3], f64) {
        let dxi = self.dual_spacing();
        let mut k = [0i64; 3];
        let mut defect: f64 = 0.0;
        for a in 0..self.dim {
            let q = v.get(a).copied().unwrap_or(0.0) / dxi;
            k[a] = q.round() as i64;
            defect = defect.max((q - q.round()).abs());
        }
        (k, defect)
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?} vs {:?}",
                self, other
            )))
        }
    }

    /// In-place unitary transform of a position buffer into centered frequency order.
    pub fn forward_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, true);
    }

    /// In-place inverse of [`Grid::forward_in_place`].
    pub fn inverse_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let m = self.points;
        let plan = if forward {
            &self.fft.forward
        } else {
            &self.fft.inverse
        };
        let mut line = vec![Complex64::new(0.0, 0.0); m];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let half = m / 2;
        let scale = if forward {
            self.spacing()
        } else {
            self.dual_spacing()
        } / (2.0 * PI).sqrt();
        for axis in 0..self.dim {
            let stride = m.pow((self.dim - 1 - axis) as u32);
            let outer = self.len() / (m * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * m * stride + s;
                    if forward {
                        for (j, slot) in line.iter_mut().enumerate() {
                            *slot = data[base + j * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        // centered index i carries label k = i - M/2; (-1)^k = (-1)^i
                        for i in 0..m {
                            let v = line[(i + half) % m] * scale;
                            data[base + i * stride] = if i % 2 == 0 { v } else { -v };
                        }
                    } else {
                        for (natural, slot) in line.iter_mut().enumerate() {
                            let i = (natural + half) % m;
                            let v = data[base + i * stride] * scale;
                            *slot = if i % 2 == 0 { v } else { -v };
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for j in 0..m {
                            data[base + j * stride] = line[j];
                        }
                    }
                }
            }
        }
    }
}

/// Which space a field's samples live in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Position,
    Frequency,
}

impl Representation {
    pub fn name(self) -> &'static str {
        match self {
            Representation::Position => "position",
            Representation::Frequency => "frequency",
        }
    }
}

/// Complex samples on a [`Grid`], in position or frequency representation.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    repr: Representation,
    values: Vec<Complex64>,
    label: String,
}

impl Field {
    pub fn new(
        grid: &Grid,
        repr: Representation,
        values: Vec<Complex64>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} samples, grid has {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(bad) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "non-finite sample at index {bad}"
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            repr,
            values,
            label: label.into(),
        })
    }

    pub(crate) fn from_parts(
        grid: &Grid,
        repr: Representation,
        values: Vec<Complex64>,
        label: &str,
    ) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            repr,
            values,
            label: label.to_string(),
        }
    }

    pub fn zeros(grid: &Grid, repr: Representation) -> Self {
        Self::from_parts(
            grid,
            repr,
            vec![Complex64::new(0.0, 0.0); grid.len()],
            "zero",
        )
    }

    /// Sample `f(x)` on the position lattice.
    pub fn from_position_fn(grid: &Grid, label: &str, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.position(i)[..grid.dim()]))
            .collect();
        Self::from_parts(grid, Representation::Position, values, label)
    }

    /// Sample `g(xi)` on the frequency lattice.
    pub fn from_frequency_fn(grid: &Grid, label: &str, f: impl Fn(&[f64]) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|i| f(&grid.frequency(i)[..grid.dim()]))
            .collect();
        Self::from_parts(grid, Representation::Frequency, values, label)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn representation(&self) -> Representation {
        self.repr
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    fn measure(&self) -> f64 {
        match self.repr {
            Representation::Position => self.grid.cell_volume(),
            Representation::Frequency => self.grid.dual_cell_volume(),
        }
    }

    /// L2 norm with the quadrature weight of the current representation.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.measure() * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `<self, other> = \int self conj(other)`; `other` is converted to this
    /// field's representation when needed.
    pub fn inner(&self, other: &Field) -> Result<Complex64> {
        self.grid.ensure_same(&other.grid, "inner product")?;
        let other = other.to_representation(self.repr);
        let s: Complex64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b.conj())
            .sum();
        Ok(s * self.measure())
    }

    /// Forward unitary transform; the field must be in position representation.
    pub fn fourier(&self) -> Result<Field> {
        if self.repr != Representation::Position {
            return Err(Error::RepresentationMismatch {
                expected: "position",
                found: self.repr.name(),
            });
        }
        let mut values = self.values.clone();
        self.grid.transform(&mut values, true);
        Ok(Self::from_parts(
            &self.grid,
            Representation::Frequency,
            values,
            &self.label,
        ))
    }

    /// Inverse unitary transform; the field must be in frequency representation.
    pub fn inverse_fourier(&self) -> Result<Field> {
        if self.repr != Representation::Frequency {
            return Err(Error::RepresentationMismatch {
                expected: "frequency",
                found: self.repr.name(),
            });
        }
        let mut values = self.values.clone();
        self.grid.transform(&mut values, false);
        Ok(Self::from_parts(
            &self.grid,
            Representation::Position,
            values,
            &self.label,
        ))
    }

    pub fn to_position(&self) -> Field {
        match self.repr {
            Representation::Position => self.clone(),
            Representation::Frequency => self.inverse_fourier().expect("representation checked"),
        }
    }

    pub fn to_frequency(&self) -> Field {
        match self.repr {
            Representation::Frequency => self.clone(),
            Representation::Position => self.fourier().expect("representation checked"),
        }
    }

    pub fn to_representation(&self, repr: Representation) -> Field {
        match repr {
            Representation::Position => self.to_position(),
            Representation::Frequency => self.to_frequency(),
        }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Field {
        Self::from_parts(
            &self.grid,
            self.repr,
            self.values.iter().map(|&v| f(v)).collect(),
            &self.label,
        )
    }

    pub fn scale(&self, s: Complex64) -> Field {
        self.map(|v| v * s)
    }

    /// `self - other` after converting `other` to this representation.
    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.grid.ensure_same(&other.grid, "difference")?;
        let other = other.to_representation(self.repr);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_parts(&self.grid, self.repr, values, &self.label))
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.grid.ensure_same(&other.grid, "sum")?;
        let other = other.to_representation(self.repr);
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_parts(&self.grid, self.repr, values, &self.label))
    }

    /// Fraction of spectral mass outside the closed ball `B_radius(center)`.
    pub fn spectral_mass_outside(&self, center: &[f64], radius: f64) -> f64 {
        let spec = self.to_frequency();
        let mut total = 0.0;
        let mut outside = 0.0;
        for (i, v) in spec.values.iter().enumerate() {
            let m = v.norm_sqr();
            total += m;
            let xi = self.grid.frequency(i);
            let d2: f64 = (0..self.grid.dim())
                .map(|a| {
                    let d = xi[a] - center.get(a).copied().unwrap_or(0.0);
                    d * d
                })
                .sum();
            if d2 > radius * radius {
                outside += m;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            outside / total
        }
    }

    /// Fraction of position-space mass outside the centered box `[-a, a)^n`.
    pub fn mass_outside_box(&self, a: f64) -> f64 {
        let pos = self.to_position();
        let mut total = 0.0;
        let mut outside = 0.0;
        for (i, v) in pos.values.iter().enumerate() {
            let m = v.norm_sqr();
            total += m;
            let x = self.grid.position(i);
            if (0..self.grid.dim()).any(|k| x[k] < -a || x[k] >= a) {
                outside += m;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            outside / total
        }
    }

    /// Radius of the smallest centered ball holding all but `tol` of the spectral mass.
    pub fn spectral_radius(&self, tol: f64) -> f64 {
        let spec = self.to_frequency();
        let mut shells: Vec<(f64, f64)> = spec
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| (self.grid.frequency_norm_sq(i).sqrt(), v.norm_sqr()))
            .collect();
        shells.sort_by(|a, b| b.0.total_cmp(&a.0));
        let total: f64 = shells.iter().map(|s| s.1).sum();
        if total == 0.0 {
            return 0.0;
        }
        let mut tail = 0.0;
        for (r, m) in shells {
            tail += m;
            if tail > tol * total {
                return r;
            }
        }
        0.0
    }
}

/// Probe profile: a smooth bump in frequency centered at `center` with radius
/// `band_radius`, optionally dilated and modulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub center: Vec<f64>,
    pub band_radius: f64,
    #[serde(default = "default_smoothness")]
    pub smoothness_order: u32,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub velocity: Vec<f64>,
    #[serde(default)]
    pub dilation: f64,
}

fn default_smoothness() -> u32 {
    2
}

fn default_amplitude() -> f64 {
    1.0
}

impl ProbeSpec {
    /// Centered probe of radius `band_radius` in dimension `dim`.
    pub fn centered(dim: usize, band_radius: f64) -> Self {
        Self {
            center: vec![0.0; dim],
            band_radius,
            smoothness_order: 2,
            amplitude: 1.0,
            velocity: vec![0.0; dim],
            dilation: 0.0,
        }
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Self {
        self.center = center;
        self
    }

    pub fn with_velocity(mut self, velocity: Vec<f64>) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn with_dilation(mut self, dilation: f64) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    fn component(v: &[f64], a: usize) -> f64 {
        v.get(a).copied().unwrap_or(0.0)
    }

    fn vec_norm(v: &[f64], dim: usize) -> f64 {
        (0..dim)
            .map(|a| Self::component(v, a).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Check the parameter ranges and the no-aliasing condition on `grid`.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let dim = grid.dim();
        if self.center.len() > dim || self.velocity.len() > dim {
            return Err(Error::InvalidInput(format!(
                "probe vectors exceed grid dimension {dim}"
            )));
        }
        if !(self.band_radius > 0.0) {
            return Err(Error::InvalidInput("band radius must be positive".into()));
        }
        if self.smoothness_order < 2 {
            return Err(Error::InvalidInput(
                "smoothness order must be at least 2".into(),
            ));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::InvalidInput("amplitude must be positive".into()));
        }
        if !(self.dilation >= 0.0) {
            return Err(Error::InvalidInput("dilation must be non-negative".into()));
        }
        let s = 1.0 + self.dilation;
        let reach = s * (Self::vec_norm(&self.center, dim) + self.band_radius)
            + Self::vec_norm(&self.velocity, dim);
        if reach >= grid.nyquist() {
            return Err(Error::Aliasing(format!(
                "probe band reaches |xi| = {reach:.4} >= nyquist {:.4}",
                grid.nyquist()
            )));
        }
        Ok(())
    }

    /// Bump value at frequency `xi` for the undilated profile (unnormalized).
    fn bump(&self, xi: &[f64]) -> f64 {
        let rho2: f64 = xi
            .iter()
            .enumerate()
            .map(|(a, &x)| (x - Self::component(&self.center, a)).powi(2))
            .sum::<f64>()
            / (self.band_radius * self.band_radius);
        if rho2 >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - rho2).powi(self.smoothness_order as i32 - 1)).exp()
        }
    }

    /// Realize the full probe `e^{i v.x} phi((lambda + 1) x)` on `grid`.
    pub fn realize(&self, grid: &Grid) -> Result<Field> {
        self.validate(grid)?;
        let base = make_band_limited_profile(
            grid,
            &ProbeSpec {
                velocity: Vec::new(),
                dilation: 0.0,
                ..self.clone()
            },
        )?;
        let profile = if self.dilation == 0.0 {
            base
        } else {
            // exact dilation of the analytic bump: F(phi_s)(xi) = s^{-n} F(phi)(xi / s)
            let spec = base.to_frequency();
            let idx = (0..spec.values().len())
                .max_by(|&a, &b| spec.values()[a].norm().total_cmp(&spec.values()[b].norm()))
                .filter(|&i| spec.values()[i].norm() > 0.0)
                .ok_or_else(|| Error::InvalidInput("probe has no lattice support".into()))?;
            let norm_const = spec.values()[idx].re / self.bump(&grid.frequency(idx)[..grid.dim()]);
            let s = 1.0 + self.dilation;
            let sn = s.powi(grid.dim() as i32);
            Field::from_frequency_fn(grid, "probe", |xi| {
                let scaled: Vec<f64> = xi.iter().map(|v| v / s).collect();
                Complex64::new(norm_const * self.bump(&scaled) / sn, 0.0)
            })
            .to_position()
        };
        let v: Vec<f64> = (0..grid.dim())
            .map(|a| Self::component(&self.velocity, a))
            .collect();
        modulate(&profile, &v).map(|f| f.with_label("probe"))
    }
}

/// Undilated, unmodulated band-limited profile of `probe` in position
/// representation, normalized to `probe.amplitude` in L2.
pub fn make_band_limited_profile(grid: &Grid, probe: &ProbeSpec) -> Result<Field> {
    let dim = grid.dim();
    ProbeSpec {
        velocity: Vec::new(),
        dilation: 0.0,
        ..probe.clone()
    }
    .validate(grid)?;
    let spec = Field::from_frequency_fn(grid, "profile", |xi| Complex64::new(probe.bump(xi), 0.0));
    let norm = spec.norm();
    if norm == 0.0 {
        return Err(Error::InvalidInput(format!(
            "band radius {} is too small to contain a lattice node (dxi = {}) in dimension {dim}",
            probe.band_radius,
            grid.dual_spacing()
        )));
    }
    let spec = spec.scale(Complex64::new(probe.amplitude / norm, 0.0));
    spec.inverse_fourier()
}

/// `Phi_v(x) = e^{i v.x} phi(x)` for a lattice velocity `v`; realized as an
/// exact cyclic shift of the spectrum.
pub fn modulate(field: &Field, v: &[f64]) -> Result<Field> {
    let grid = field.grid();
    let dim = grid.dim();
    if v.len() > dim {
        return Err(Error::Dimension(format!(
            "velocity has {} components, grid dimension {dim}",
            v.len()
        )));
    }
    let (shift, defect) = grid.lattice_labels(v);
    if defect > LATTICE_TOL {
        return Err(Error::OffLattice(format!(
            "velocity {v:?} is {defect:.3e} lattice spacings off the frequency lattice"
        )));
    }
    if shift[..dim].iter().all(|&s| s == 0) {
        return Ok(field.clone());
    }
    let spec = field.to_frequency();
    let m = grid.points_per_axis() as i64;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut total = 0.0;
    let mut wrapped = 0.0;
    for (i, &val) in spec.values().iter().enumerate() {
        let idx = grid.unflatten(i);
        let mut target = [0usize; 3];
        let mut wraps = false;
        for a in 0..dim {
            let j = idx[a] as i64 + shift[a];
            if j < 0 || j >= m {
                wraps = true;
            }
            target[a] = j.rem_euclid(m) as usize;
        }
        let mass = val.norm_sqr();
        total += mass;
        if wraps {
            wrapped += mass;
        }
        out[grid.flatten(&target[..dim])] = val;
    }
    if total > 0.0 && wrapped > ALIAS_TOL * total {
        return Err(Error::Aliasing(format!(
            "modulation by {v:?} pushes {:.3e} of the spectral mass past nyquist",
            wrapped / total
        )));
    }
    let shifted = Field::from_parts(grid, Representation::Frequency, out, field.label());
    Ok(shifted.to_representation(field.representation()))
}

/// `phi_lambda(x) = phi((lambda + 1) x)`, evaluated by spectral interpolation.
///
/// The transform of `phi` is evaluated off the lattice at `xi / (lambda + 1)`
/// with a separable trigonometric sum, so the field must be band-limited and
/// decayed inside the box.
pub fn dilate(field: &Field, lambda: f64) -> Result<Field> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "dilation must be non-negative, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(field.clone());
    }
    let grid = field.grid();
    let s = 1.0 + lambda;
    let reach = field.spectral_radius(1e-14);
    if s * reach >= grid.nyquist() {
        return Err(Error::Aliasing(format!(
            "dilated band radius {:.4} exceeds nyquist {:.4}",
            s * reach,
            grid.nyquist()
        )));
    }
    let m = grid.points_per_axis();
    let h = grid.spacing();
    let xs = grid.axis_positions();
    let xis = grid.axis_frequencies();
    // E[k][j] = h / (s sqrt(2 pi)) e^{-i (xi_k / s) x_j}
    let c = h / (s * (2.0 * PI).sqrt());
    let mut kernel = vec![Complex64::new(0.0, 0.0); m * m];
    for k in 0..m {
        for j in 0..m {
            kernel[k * m + j] = Complex64::from_polar(c, -(xis[k] / s) * xs[j]);
        }
    }
    let mut data = field.to_position().into_values();
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for axis in 0..grid.dim() {
        let stride = m.pow((grid.dim() - 1 - axis) as u32);
        let outer = grid.len() / (m * stride);
        for o in 0..outer {
            for st in 0..stride {
                let base = o * m * stride + st;
                for (j, slot) in line.iter_mut().enumerate() {
                    *slot = data[base + j * stride];
                }
                for k in 0..m {
                    let row = &kernel[k * m..(k + 1) * m];
                    data[base + k * stride] = row.iter().zip(&line).map(|(a, b)| a * b).sum();
                }
            }
        }
    }
    let spec = Field::from_parts(grid, Representation::Frequency, data, field.label());
    Ok(spec.to_representation(field.representation()))
}
