//! Split-step spectral integrator for the restricted Hartree equation, the
//! Hartree system and the Hartree-Fock system.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Representation};
use crate::potential::RealizedPotential;
use crate::propagator::PropagationPlan;

type C = Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// `i u_t = H0 u + (V * |u|^2) u`, one orbital.
    #[serde(alias = "restricted_hartree")]
    Rh,
    /// `i u_j_t = H0 u_j + (V * sum_{k != j} |u_k|^2) u_j`
    Hartree,
    /// Hartree system plus the exchange term `-sum_{k != j} u_k (V * (conj(u_k) u_j))`.
    #[serde(alias = "hartree_fock")]
    Hf,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Rh => "rh",
            Model::Hartree => "hartree",
            Model::Hf => "hf",
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rh" | "restricted_hartree" => Ok(Model::Rh),
            "hartree" | "h" => Ok(Model::Hartree),
            "hf" | "hartree_fock" => Ok(Model::Hf),
            other => Err(Error::InvalidInput(format!("unknown model '{other}'"))),
        }
    }
}

/// Ordered orbitals `u_1 .. u_N` on one grid, stamped with a time.
#[derive(Clone, Debug)]
pub struct OrbitalSet {
    orbitals: Vec<Field>,
    time: f64,
}

impl OrbitalSet {
    pub fn new(orbitals: Vec<Field>, time: f64) -> Result<Self> {
        let first = orbitals
            .first()
            .ok_or_else(|| Error::InvalidInput("orbital set is empty".into()))?;
        for (k, u) in orbitals.iter().enumerate().skip(1) {
            first
                .grid()
                .ensure_same(u.grid(), &format!("orbital {k}"))?;
        }
        if !time.is_finite() {
            return Err(Error::InvalidInput("orbital set time is not finite".into()));
        }
        Ok(Self { orbitals, time })
    }

    pub fn single(orbital: Field, time: f64) -> Self {
        Self {
            orbitals: vec![orbital],
            time,
        }
    }

    pub fn len(&self) -> usize {
        self.orbitals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbitals.is_empty()
    }

    pub fn grid(&self) -> &Grid {
        self.orbitals[0].grid()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn orbitals(&self) -> &[Field] {
        &self.orbitals
    }

    pub fn orbital(&self, j: usize) -> &Field {
        &self.orbitals[j]
    }

    pub fn into_orbitals(self) -> Vec<Field> {
        self.orbitals
    }

    pub fn norms(&self) -> Vec<f64> {
        self.orbitals.iter().map(Field::norm).collect()
    }

    /// Apply `f` to every orbital.
    pub fn try_map(&self, f: impl Fn(&Field) -> Result<Field>) -> Result<Self> {
        let orbitals = self.orbitals.iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            orbitals,
            time: self.time,
        })
    }

    fn position_buffers(&self) -> Vec<Vec<C>> {
        self.orbitals
            .iter()
            .map(|u| u.to_position().into_values())
            .collect()
    }

    fn from_buffers(&self, bufs: Vec<Vec<C>>, time: f64) -> Result<Self> {
        let orbitals = bufs
            .into_iter()
            .zip(&self.orbitals)
            .map(|(b, u)| Field::new(u.grid(), Representation::Position, b, u.label()))
            .collect::<Result<Vec<_>>>()
            .map_err(|_| Error::NonFinite(time))?;
        Ok(Self { orbitals, time })
    }
}

fn check_model(model: Model, n: usize) -> Result<()> {
    if model == Model::Rh && n != 1 {
        return Err(Error::InvalidInput(format!(
            "the restricted Hartree model takes one orbital, got {n}"
        )));
    }
    Ok(())
}

/// `V * |u_k|^2` for every orbital.
fn self_potentials(v: &RealizedPotential, orbs: &[Vec<C>]) -> Vec<Vec<f64>> {
    orbs.par_iter()
        .map(|u| {
            let rho: Vec<f64> = u.iter().map(|z| z.norm_sqr()).collect();
            v.convolve_real(&rho).0
        })
        .collect()
}

/// Real Hartree multiplier for each orbital, summed over `k != j` in index order.
fn hartree_potentials(model: Model, v: &RealizedPotential, orbs: &[Vec<C>]) -> Vec<Vec<f64>> {
    let len = orbs[0].len();
    if v.is_zero() {
        return vec![vec![0.0; len]; orbs.len()];
    }
    let p = self_potentials(v, orbs);
    if model == Model::Rh {
        return p;
    }
    (0..orbs.len())
        .map(|j| {
            let mut w = vec![0.0; len];
            for (k, pk) in p.iter().enumerate() {
                if k != j {
                    for (a, b) in w.iter_mut().zip(pk) {
                        *a += b;
                    }
                }
            }
            w
        })
        .collect()
}

/// `-sum_{k != j} u_k (V * (conj(u_k) g))`
fn exchange_apply(v: &RealizedPotential, orbs: &[Vec<C>], j: usize, g: &[C]) -> Vec<C> {
    let mut out = vec![C::new(0.0, 0.0); g.len()];
    if v.is_zero() {
        return out;
    }
    for (k, uk) in orbs.iter().enumerate() {
        if k == j {
            continue;
        }
        let pair: Vec<C> = uk.iter().zip(g).map(|(a, b)| a.conj() * b).collect();
        let conv = v.convolve(&pair);
        for ((o, a), c) in out.iter_mut().zip(uk).zip(&conv) {
            *o -= a * c;
        }
    }
    out
}

/// `A_j g = W_j g - sum_{k != j} u_k (V * (conj(u_k) g))`, Hermitian in `g`.
fn fock_operator_apply(
    v: &RealizedPotential,
    orbs: &[Vec<C>],
    w: &[f64],
    j: usize,
    g: &[C],
) -> Vec<C> {
    let mut out = exchange_apply(v, orbs, j, g);
    for ((o, gi), wi) in out.iter_mut().zip(g).zip(w) {
        *o += gi * wi;
    }
    out
}

/// The interaction term `N_j(u) u_j` of every orbital, in position space.
pub(crate) fn nonlinearity_buffers(
    model: Model,
    v: &RealizedPotential,
    orbs: &[Vec<C>],
) -> Vec<Vec<C>> {
    let w = hartree_potentials(model, v, orbs);
    (0..orbs.len())
        .into_par_iter()
        .map(|j| {
            if model == Model::Hf {
                fock_operator_apply(v, orbs, &w[j], j, &orbs[j])
            } else {
                orbs[j].iter().zip(&w[j]).map(|(u, wi)| u * wi).collect()
            }
        })
        .collect()
}

fn check_state(state: &OrbitalSet, v: &RealizedPotential, j: usize) -> Result<()> {
    state
        .grid()
        .ensure_same(v.grid(), "potential and orbitals")?;
    if j >= state.len() {
        return Err(Error::InvalidInput(format!(
            "orbital index {j} out of range for {} orbitals",
            state.len()
        )));
    }
    Ok(())
}

/// Real Hartree potential acting on orbital `j`, with the relative size of the
/// discarded imaginary part of the convolution.
pub fn hartree_potential(
    state: &OrbitalSet,
    v: &RealizedPotential,
    model: Model,
    j: usize,
) -> Result<(Vec<f64>, f64)> {
    check_state(state, v, j)?;
    check_model(model, state.len())?;
    let len = state.grid().len();
    let mut rho = vec![0.0; len];
    for (k, u) in state.orbitals().iter().enumerate() {
        if model != Model::Rh && k == j {
            continue;
        }
        for (r, z) in rho.iter_mut().zip(u.to_position().values()) {
            *r += z.norm_sqr();
        }
    }
    if v.is_zero() {
        return Ok((vec![0.0; len], 0.0));
    }
    Ok(v.convolve_real(&rho))
}

/// `V_H u_j` in position space.
pub fn hartree_term(
    state: &OrbitalSet,
    v: &RealizedPotential,
    model: Model,
    j: usize,
) -> Result<Field> {
    let (w, _) = hartree_potential(state, v, model, j)?;
    let u = state.orbital(j).to_position();
    let values = u.values().iter().zip(&w).map(|(a, b)| a * b).collect();
    Field::new(state.grid(), Representation::Position, values, u.label())
}

/// `int V_F(x, y) u_j(y) dy = -sum_{k != j} u_k(x) (V * (conj(u_k) u_j))(x)`.
pub fn fock_term(state: &OrbitalSet, v: &RealizedPotential, j: usize) -> Result<Field> {
    check_state(state, v, j)?;
    let orbs = state.position_buffers();
    let values = exchange_apply(v, &orbs, j, &orbs[j]);
    Field::new(
        state.grid(),
        Representation::Position,
        values,
        state.orbital(j).label(),
    )
}

/// Full interaction term of every orbital for `model`.
pub fn nonlinearity(state: &OrbitalSet, v: &RealizedPotential, model: Model) -> Result<Vec<Field>> {
    state
        .grid()
        .ensure_same(v.grid(), "potential and orbitals")?;
    check_model(model, state.len())?;
    let orbs = state.position_buffers();
    nonlinearity_buffers(model, v, &orbs)
        .into_iter()
        .map(|b| Field::new(state.grid(), Representation::Position, b, "nonlinearity"))
        .collect()
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `exp(-i tau T) e_1` for a real symmetric tridiagonal `T`.
fn tridiagonal_expm_e1(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<C> {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (0..m)
        .map(|r| {
            (0..m)
                .map(|c| {
                    let q = eig.eigenvectors[(r, c)] * eig.eigenvectors[(0, c)];
                    C::from_polar(q, -tau * eig.eigenvalues[c])
                })
                .sum()
        })
        .collect()
}

const KRYLOV_MAX: usize = 40;
const KRYLOV_TOL: f64 = 1e-14;

/// `exp(-i tau A) g` for Hermitian `A` by Lanczos with full reorthogonalization.
pub(crate) fn krylov_expm(apply: &dyn Fn(&[C]) -> Vec<C>, g: &[C], tau: f64) -> Vec<C> {
    let beta0 = norm(g);
    if beta0 == 0.0 || tau == 0.0 {
        return g.to_vec();
    }
    let mut basis: Vec<Vec<C>> = vec![g.iter().map(|z| z / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut coeffs;
    loop {
        let k = basis.len() - 1;
        let mut w = apply(&basis[k]);
        let a = dot(&basis[k], &w).re;
        alpha.push(a);
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let b = norm(&w);
        coeffs = tridiagonal_expm_e1(&alpha, &beta, tau);
        let scale = alpha.iter().map(|x| x.abs()).fold(b, f64::max).max(1e-300);
        let estimate = b * coeffs[k].norm();
        if b <= 1e-14 * scale || estimate < KRYLOV_TOL {
            break;
        }
        if basis.len() >= KRYLOV_MAX {
            // split the step; each half restarts with a fresh space
            let half = krylov_expm(apply, g, tau / 2.0);
            return krylov_expm(apply, &half, tau / 2.0);
        }
        beta.push(b);
        basis.push(w.iter().map(|z| z / b).collect());
    }
    let mut out = vec![C::new(0.0, 0.0); g.len()];
    for (c, q) in coeffs.iter().zip(&basis) {
        for (o, qi) in out.iter_mut().zip(q) {
            *o += beta0 * c * qi;
        }
    }
    out
}

/// Tolerances and controls for [`evolve_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveOptions {
    /// Largest allowed relative change of any orbital norm.
    pub norm_tol: f64,
    /// Largest allowed mass fraction outside the safe box.
    pub wrap_tol: f64,
    /// Half-width of the safe box; `None` means `3L / 4`.
    pub safe_half_width: Option<f64>,
    /// Steps between wrap and finiteness checks.
    pub check_every: usize,
    /// Midpoint fixed-point iterations of the exchange sub-step.
    pub fock_iterations: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            norm_tol: 1e-8,
            wrap_tol: 1e-6,
            safe_half_width: None,
            check_every: 25,
            fock_iterations: 2,
        }
    }
}

/// Midpoint sample handed to an observer once per step.
pub struct StepSample<'a> {
    pub step: usize,
    /// `t_n + dt / 2`
    pub time: f64,
    pub dt: f64,
    /// Orbitals after the first kinetic half step and half of the interaction step.
    pub orbitals: &'a [Vec<C>],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolveReport {
    pub steps: usize,
    pub dt: f64,
    pub norm_drift: Vec<f64>,
    pub max_wrap: f64,
}

pub type Observer<'o> = dyn FnMut(&StepSample<'_>) -> Result<()> + 'o;

/// Evolve `state` from `t_start` to `t_end` with step `dt`.
pub fn evolve(
    state: &OrbitalSet,
    v: &RealizedPotential,
    model: Model,
    t_start: f64,
    t_end: f64,
    dt: f64,
) -> Result<OrbitalSet> {
    evolve_with(
        state,
        v,
        model,
        t_start,
        t_end,
        dt,
        &EvolveOptions::default(),
        None,
    )
    .map(|r| r.0)
}

fn wrap_fraction(orbs: &[Vec<C>], grid: &Grid, a: f64) -> f64 {
    let mut total = 0.0;
    let mut outside = 0.0;
    for u in orbs {
        for (i, z) in u.iter().enumerate() {
            let m = z.norm_sqr();
            total += m;
            let x = grid.position(i);
            if (0..grid.dim()).any(|k| x[k] < -a || x[k] >= a) {
                outside += m;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        outside / total
    }
}

#[allow(clippy::too_many_arguments)]
pub fn evolve_with(
    state: &OrbitalSet,
    v: &RealizedPotential,
    model: Model,
    t_start: f64,
    t_end: f64,
    dt: f64,
    opts: &EvolveOptions,
    mut observer: Option<&mut Observer<'_>>,
) -> Result<(OrbitalSet, EvolveReport)> {
    let grid = state.grid().clone();
    grid.ensure_same(v.grid(), "potential and orbitals")?;
    check_model(model, state.len())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let span = t_end - t_start;
    let steps = (span.abs() / dt).round() as usize;
    if ((steps as f64) * dt - span.abs()).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "dt = {dt} does not divide the interval length {}",
            span.abs()
        )));
    }
    let h = if steps == 0 { 0.0 } else { span / steps as f64 };
    let safe = opts.safe_half_width.unwrap_or(0.75 * grid.half_extent());
    let half_kinetic = PropagationPlan::new(&grid, h / 2.0);
    let kinetic = |u: &mut Vec<C>| {
        grid.forward_in_place(u);
        half_kinetic.apply_spectrum(u);
        grid.inverse_in_place(u);
    };
    let interacting = !v.is_zero() && (model == Model::Rh || state.len() > 1);

    let mut orbs = state.position_buffers();
    let initial: Vec<f64> = orbs.iter().map(|u| norm(u)).collect();
    let mut max_wrap = wrap_fraction(&orbs, &grid, safe);

    for step in 0..steps {
        let t_n = t_start + step as f64 * h;
        orbs.par_iter_mut().for_each(|u| kinetic(u));
        if interacting {
            let w = hartree_potentials(model, v, &orbs);
            if model == Model::Hf {
                let sub = |m: &[Vec<C>], tau: f64, src: &[Vec<C>]| -> Vec<Vec<C>> {
                    let wm = hartree_potentials(model, v, m);
                    (0..src.len())
                        .into_par_iter()
                        .map(|j| {
                            let op = |g: &[C]| fock_operator_apply(v, m, &wm[j], j, g);
                            krylov_expm(&op, &src[j], tau)
                        })
                        .collect()
                };
                let mut mid = orbs.clone();
                for _ in 0..opts.fock_iterations {
                    mid = sub(&mid, h / 2.0, &orbs);
                }
                if let Some(obs) = observer.as_deref_mut() {
                    let sample = sub(&mid, h / 2.0, &orbs);
                    obs(&StepSample {
                        step,
                        time: t_n + h / 2.0,
                        dt: h,
                        orbitals: &sample,
                    })?;
                }
                orbs = sub(&mid, h, &orbs);
            } else {
                if let Some(obs) = observer.as_deref_mut() {
                    let sample: Vec<Vec<C>> = orbs
                        .iter()
                        .zip(&w)
                        .map(|(u, wj)| {
                            u.iter()
                                .zip(wj)
                                .map(|(a, b)| a * C::from_polar(1.0, -0.5 * h * b))
                                .collect()
                        })
                        .collect();
                    obs(&StepSample {
                        step,
                        time: t_n + h / 2.0,
                        dt: h,
                        orbitals: &sample,
                    })?;
                }
                orbs.par_iter_mut().zip(w.par_iter()).for_each(|(u, wj)| {
                    for (a, b) in u.iter_mut().zip(wj) {
                        *a *= C::from_polar(1.0, -h * b);
                    }
                });
            }
        } else if let Some(obs) = observer.as_deref_mut() {
            obs(&StepSample {
                step,
                time: t_n + h / 2.0,
                dt: h,
                orbitals: &orbs,
            })?;
        }
        orbs.par_iter_mut().for_each(|u| kinetic(u));

        if (step + 1) % opts.check_every.max(1) == 0 || step + 1 == steps {
            let t = t_n + h;
            if orbs
                .iter()
                .flatten()
                .any(|z| !(z.re.is_finite() && z.im.is_finite()))
            {
                return Err(Error::NonFinite(t));
            }
            let outside = wrap_fraction(&orbs, &grid, safe);
            max_wrap = max_wrap.max(outside);
            if outside > opts.wrap_tol {
                return Err(Error::Wrap { time: t, outside });
            }
        }
    }

    let norm_drift: Vec<f64> = orbs
        .iter()
        .zip(&initial)
        .map(|(u, n0)| {
            if *n0 == 0.0 {
                0.0
            } else {
                (norm(u) - n0).abs() / n0
            }
        })
        .collect();
    for (orbital, &drift) in norm_drift.iter().enumerate() {
        if drift > opts.norm_tol {
            return Err(Error::NormDrift {
                orbital,
                drift,
                tol: opts.norm_tol,
            });
        }
    }
    let out = state.from_buffers(orbs, t_end)?;
    Ok((
        out,
        EvolveReport {
            steps,
            dt: h.abs(),
            norm_drift,
            max_wrap,
        },
    ))
}

/// Conserved energy `sum_j 1/2 |grad u_j|^2 + E_int`.
///
/// `E_int = 1/2 <V * |u|^2, |u|^2>` for one restricted orbital and
/// `1/2 sum_{j != k} <V * |u_k|^2, |u_j|^2>` for the Hartree system.
pub fn energy(state: &OrbitalSet, v: &RealizedPotential, model: Model) -> Result<f64> {
    state
        .grid()
        .ensure_same(v.grid(), "potential and orbitals")?;
    check_model(model, state.len())?;
    if model == Model::Hf {
        return Err(Error::InvalidInput(
            "energy is provided for the rh and hartree models".into(),
        ));
    }
    let grid = state.grid();
    let kinetic: f64 = state
        .orbitals()
        .iter()
        .map(|u| {
            let s = u.to_frequency();
            0.5 * s
                .values()
                .iter()
                .enumerate()
                .map(|(i, z)| grid.frequency_norm_sq(i) * z.norm_sqr())
                .sum::<f64>()
                * grid.dual_cell_volume()
        })
        .sum();
    let orbs = state.position_buffers();
    let w = hartree_potentials(model, v, &orbs);
    let interaction: f64 = orbs
        .iter()
        .zip(&w)
        .map(|(u, wj)| u.iter().zip(wj).map(|(z, b)| z.norm_sqr() * b).sum::<f64>())
        .sum::<f64>()
        * grid.cell_volume()
        * 0.5;
    Ok(kinetic + interaction)
}

/// Discrete `L^4_t L^4_x` norm of `U0(t) phi` over `|t| <= t_max` (trapezoid in `t`).
pub fn strichartz_l4(phi: &Field, t_max: f64, dt: f64) -> Result<f64> {
    if !(t_max > 0.0 && dt > 0.0) {
        return Err(Error::InvalidInput("t_max and dt must be positive".into()));
    }
    let grid = phi.grid();
    let n = (2.0 * t_max / dt).round().max(1.0) as usize;
    let step = 2.0 * t_max / n as f64;
    let spec = phi.to_frequency().into_values();
    let vals: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|i| {
            let t = -t_max + i as f64 * step;
            let mut s = spec.clone();
            PropagationPlan::new(grid, t).apply_spectrum(&mut s);
            grid.inverse_in_place(&mut s);
            let q: f64 = s.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() * grid.cell_volume();
            if i == 0 || i == n {
                0.5 * q
            } else {
                q
            }
        })
        .collect();
    Ok((vals.iter().sum::<f64>() * step).powf(0.25))
}

/// Fourth powers of the `L^4` norm on `[-T, T]` and `[-2T, 2T]`; bounded growth
/// means the second is well below twice the first.
pub fn strichartz_saturation(phi: &Field, t_max: f64, dt: f64) -> Result<(f64, f64)> {
    let a = strichartz_l4(phi, t_max, dt)?.powi(4);
    let b = strichartz_l4(phi, 2.0 * t_max, dt)?.powi(4);
    Ok((a, b))
}
