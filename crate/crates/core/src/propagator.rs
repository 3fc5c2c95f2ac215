//! Free Schrodinger group `U0(t) = exp(-i t H0)`, `H0 = -Delta / 2`, as an exact
//! Fourier multiplier on the dual lattice.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{modulate, Field, Grid, Representation};

/// Cached multiplier `exp(-i t |xi|^2 / 2)` for one grid and one time.
#[derive(Clone, Debug)]
pub struct PropagationPlan {
    grid: Grid,
    time: f64,
    multiplier: Vec<Complex64>,
}

impl PropagationPlan {
    pub fn new(grid: &Grid, time: f64) -> Self {
        let multiplier = (0..grid.len())
            .map(|i| Complex64::from_polar(1.0, -0.5 * time * grid.frequency_norm_sq(i)))
            .collect();
        Self {
            grid: grid.clone(),
            time,
            multiplier,
        }
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn multiplier(&self) -> &[Complex64] {
        &self.multiplier
    }

    /// Multiply a frequency-space buffer in place.
    pub fn apply_spectrum(&self, spectrum: &mut [Complex64]) {
        for (v, m) in spectrum.iter_mut().zip(&self.multiplier) {
            *v *= m;
        }
    }

    /// Apply to a field; the result keeps the input representation.
    pub fn apply(&self, field: &Field) -> Result<Field> {
        self.grid.ensure_same(field.grid(), "free propagation")?;
        let mut spec = field.to_frequency().into_values();
        self.apply_spectrum(&mut spec);
        let out = Field::new(&self.grid, Representation::Frequency, spec, field.label())?;
        Ok(out.to_representation(field.representation()))
    }
}

/// `U0(t) field`, returned in the representation of `field`.
pub fn free_propagate(field: &Field, t: f64) -> Result<Field> {
    if t == 0.0 {
        return Ok(field.clone());
    }
    PropagationPlan::new(field.grid(), t).apply(field)
}

/// Cyclic shift of a position-space field by whole cells: `out(x) = f(x - shift h)`.
pub fn translate_cells(field: &Field, shift: &[i64]) -> Field {
    let grid = field.grid();
    let pos = field.to_position();
    let m = grid.points_per_axis() as i64;
    let mut out = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (i, &v) in pos.values().iter().enumerate() {
        let idx = grid.unflatten(i);
        let mut target = [0usize; 3];
        for a in 0..grid.dim() {
            target[a] = (idx[a] as i64 + shift.get(a).copied().unwrap_or(0)).rem_euclid(m) as usize;
        }
        out[grid.flatten(&target[..grid.dim()])] = v;
    }
    Field::new(grid, Representation::Position, out, field.label()).expect("finite input")
}

/// Largest pointwise defect of the Galilean identity
/// `(U0(s) Phi_v)(x) = e^{i(v.x - |v|^2 s / 2)} (U0(s) phi)(x - v s)`.
///
/// `v` must be a lattice velocity and `v s` a whole number of cells per axis.
pub fn galilean_check(phi: &Field, v: &[f64], s: f64) -> Result<f64> {
    let grid = phi.grid();
    let h = grid.spacing();
    let mut shift = [0i64; 3];
    for a in 0..grid.dim() {
        let cells = v.get(a).copied().unwrap_or(0.0) * s / h;
        if (cells - cells.round()).abs() > 1e-9 {
            return Err(Error::OffLattice(format!(
                "displacement v s = {} on axis {a} is not a whole number of cells",
                cells * h
            )));
        }
        shift[a] = cells.round() as i64;
    }
    let lhs = free_propagate(&modulate(phi, v)?, s)?.to_position();
    let moved = translate_cells(&free_propagate(phi, s)?, &shift[..grid.dim()]);
    let v2: f64 = v.iter().map(|c| c * c).sum();
    let defect = lhs
        .values()
        .iter()
        .zip(moved.values())
        .enumerate()
        .map(|(i, (l, r))| {
            let x = grid.position(i);
            let vx: f64 = (0..grid.dim())
                .map(|a| v.get(a).copied().unwrap_or(0.0) * x[a])
                .sum();
            (l - r * Complex64::from_polar(1.0, vx - 0.5 * v2 * s)).norm()
        })
        .fold(0.0, f64::max);
    Ok(defect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, ProbeSpec};

    fn gaussian(grid: &Grid) -> Field {
        Field::from_position_fn(grid, "gauss", |x| {
            Complex64::new((-0.5 * x[0] * x[0]).exp(), 0.0)
        })
    }

    #[test]
    fn zero_time_is_identity() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let f = gaussian(&g);
        assert_eq!(free_propagate(&f, 0.0).unwrap().values(), f.values());
    }

    #[test]
    fn multiplier_is_unimodular() {
        let g = make_grid(2, 32, 8.0).unwrap();
        let plan = PropagationPlan::new(&g, 3.7);
        assert!(plan
            .multiplier()
            .iter()
            .all(|m| (m.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn gaussian_closed_form_solution() {
        // U0(t) e^{-x^2/2} = (1 + i t)^{-1/2} exp(-x^2 / (2 (1 + i t)))
        let g = make_grid(1, 256, 32.0).unwrap();
        let f = gaussian(&g);
        for &t in &[0.5, 2.0, 5.0] {
            let u = free_propagate(&f, t).unwrap();
            let z = Complex64::new(1.0, t);
            let err = u
                .values()
                .iter()
                .zip(g.axis_positions())
                .map(|(v, &x)| (v - (-(x * x) / (2.0 * z)).exp() / z.sqrt()).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "t = {t}: {err}");
        }
    }

    #[test]
    fn representation_is_preserved() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let f = gaussian(&g).fourier().unwrap();
        assert_eq!(
            free_propagate(&f, 1.0).unwrap().representation(),
            Representation::Frequency
        );
    }

    #[test]
    fn galilean_identity_trivial_cases() {
        let g = make_grid(1, 128, 16.0).unwrap();
        let phi = ProbeSpec::centered(1, 1.0).realize(&g).unwrap();
        assert!(galilean_check(&phi, &[0.0], 3.0).unwrap() == 0.0);
        let v = 8.0 * g.dual_spacing();
        assert!(galilean_check(&phi, &[v], 0.0).unwrap() < 1e-14);
    }

    #[test]
    fn galilean_identity_with_lattice_translation() {
        let g = make_grid(1, 128, 16.0).unwrap();
        let phi = ProbeSpec::centered(1, 1.0).realize(&g).unwrap();
        let v = 8.0 * g.dual_spacing();
        let s = 4.0 * g.spacing() / v;
        let defect = galilean_check(&phi, &[v], s).unwrap();
        assert!(defect <= 1e-10 * phi.max_abs(), "{defect}");
    }

    #[test]
    fn galilean_rejects_fractional_cells() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let phi = ProbeSpec::centered(1, 1.0).realize(&g).unwrap();
        let v = 2.0 * g.dual_spacing();
        assert!(matches!(
            galilean_check(&phi, &[v], 0.1),
            Err(Error::OffLattice(_))
        ));
    }
}
