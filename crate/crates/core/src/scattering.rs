//! Numerical scattering operator, the pairing `<i(S - I) Phi, Phi>`, probe sweeps
//! and the remainder decomposition of the pairing.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    evolve_with, nonlinearity_buffers, EvolveOptions, EvolveReport, Model, OrbitalSet, StepSample,
};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, ProbeSpec, Representation};
use crate::kernels::{forward_map, kernel_g, kernel_h, kernel_hf, TimeQuadrature, XiGrid};
use crate::potential::{PotentialSpec, RealizedPotential};
use crate::propagator::{free_propagate, PropagationPlan};

type C = Complex64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScatterOptions {
    /// Matching time `T`: the interacting solution runs on `[-T, T]`.
    pub horizon: f64,
    pub dt: f64,
    pub evolve: EvolveOptions,
    /// Horizon doublings allowed while `f_plus` still moves by more than `horizon_tol`.
    pub max_doublings: usize,
    pub horizon_tol: f64,
    /// Accumulate the remainder decomposition (restricted model only).
    pub decomposition: bool,
    /// Mass fraction defining the packet width in the transit check.
    pub width_tol: f64,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            horizon: 8.0,
            dt: 0.005,
            evolve: EvolveOptions::default(),
            max_doublings: 0,
            horizon_tol: 1e-6,
            decomposition: false,
            width_tol: 1e-4,
        }
    }
}

/// `L + R1 + R2 + R3` of one run, accumulated on the integrator's midpoint samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub l: C,
    pub r1: C,
    pub r2: C,
    pub r3: C,
}

impl Decomposition {
    pub fn total(&self) -> C {
        self.l + self.r1 + self.r2 + self.r3
    }
}

#[derive(Clone, Debug)]
pub struct ScatterOutcome {
    pub f_minus: OrbitalSet,
    pub f_plus: OrbitalSet,
    pub horizon: f64,
    pub doublings: usize,
    /// `||f_plus(T) - f_plus(2T)||` of the last doubling, if any was run.
    pub horizon_change: Option<f64>,
    /// Largest `||N(u)||` at `t = -T` and `t = T`.
    pub matching_residual: f64,
    /// `int <N_j(u), U0(t) f_minus_j> dt` per orbital.
    pub duhamel: Vec<C>,
    pub decomposition: Option<Decomposition>,
    pub report: EvolveReport,
}

impl ScatterOutcome {
    /// Direct pairing per orbital with the incoming state as probe.
    pub fn pairings(&self) -> Result<Vec<C>> {
        self.f_minus
            .orbitals()
            .iter()
            .zip(self.f_plus.orbitals())
            .map(|(m, p)| pairing(m, p, m))
            .collect()
    }

    /// Largest relative gap between the direct pairing and the Duhamel sum.
    pub fn duhamel_defect(&self) -> Result<f64> {
        let p = self.pairings()?;
        Ok(p.iter()
            .zip(&self.duhamel)
            .map(|(a, b)| (a - b).norm() / a.norm().max(b.norm()).max(1e-300))
            .fold(0.0, f64::max))
    }
}

/// `<i (f_plus - f_minus), probe> = h^n sum i (f_plus - f_minus) conj(probe)`.
pub fn pairing(f_minus: &Field, f_plus: &Field, probe: &Field) -> Result<C> {
    let d = f_plus.sub(f_minus)?;
    Ok(C::i() * d.inner(probe)?)
}

/// Largest `|Im pairing + ||f_plus - f_minus||^2 / 2|` over orbitals; zero for a unitary `S`.
pub fn imaginary_identity_defect(outcome: &ScatterOutcome) -> Result<f64> {
    let p = outcome.pairings()?;
    let mut worst: f64 = 0.0;
    for ((m, f), z) in outcome
        .f_minus
        .orbitals()
        .iter()
        .zip(outcome.f_plus.orbitals())
        .zip(p)
    {
        let d = f.sub(m)?.norm_sq();
        worst = worst.max((z.im + 0.5 * d).abs());
    }
    Ok(worst)
}

/// Smallest half-width `a` of a centered box holding all but `tol` of the mass.
fn packet_half_width(field: &Field, tol: f64) -> f64 {
    let grid = field.grid();
    let pos = field.to_position();
    let total = pos.norm_sq() / grid.cell_volume();
    if total == 0.0 {
        return 0.0;
    }
    let mut by_extent: Vec<(f64, f64)> = pos
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let x = grid.position(i);
            let ext = (0..grid.dim()).map(|a| x[a].abs()).fold(0.0, f64::max);
            (ext, z.norm_sqr())
        })
        .collect();
    by_extent.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tail = 0.0;
    for (ext, m) in by_extent {
        tail += m;
        if tail > tol * total {
            return ext;
        }
    }
    0.0
}

/// Mean group velocity `|<xi>|` of a packet.
fn mean_speed(field: &Field) -> f64 {
    let grid = field.grid();
    let spec = field.to_frequency();
    let mut total = 0.0;
    let mut mean = [0.0; 3];
    for (i, z) in spec.values().iter().enumerate() {
        let m = z.norm_sqr();
        total += m;
        let xi = grid.frequency(i);
        for a in 0..grid.dim() {
            mean[a] += m * xi[a];
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    (0..grid.dim())
        .map(|a| (mean[a] / total).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Check `width + |v| 2T + R_V < L` for every orbital.
pub fn check_transit(
    state: &OrbitalSet,
    potential: &PotentialSpec,
    horizon: f64,
    width_tol: f64,
) -> Result<()> {
    let l = state.grid().half_extent();
    let rv = potential.cutoff_radius + potential.taper_width;
    for (j, u) in state.orbitals().iter().enumerate() {
        let width = 2.0 * packet_half_width(u, width_tol);
        let travel = mean_speed(u) * 2.0 * horizon;
        if width + travel + rv >= l {
            return Err(Error::Transit(format!(
                "orbital {j}: width {width:.3} + travel {travel:.3} + potential radius {rv:.3} >= L = {l}"
            )));
        }
    }
    Ok(())
}

struct Accumulator<'a> {
    grid: &'a Grid,
    v: &'a RealizedPotential,
    model: Model,
    probes: Vec<Vec<C>>,
    duhamel: Vec<C>,
    decomposition: Option<Decomposition>,
}

impl Accumulator<'_> {
    fn observe(&mut self, s: &StepSample<'_>) -> Result<()> {
        let grid = self.grid;
        let hn = grid.cell_volume();
        let plan = PropagationPlan::new(grid, s.time);
        let free: Vec<Vec<C>> = self
            .probes
            .iter()
            .map(|p| {
                let mut b = p.clone();
                plan.apply_spectrum(&mut b);
                grid.inverse_in_place(&mut b);
                b
            })
            .collect();
        let f = nonlinearity_buffers(self.model, self.v, s.orbitals);
        for ((acc, fj), wj) in self.duhamel.iter_mut().zip(&f).zip(&free) {
            let ip: C = fj.iter().zip(wj).map(|(a, b)| a * b.conj()).sum();
            *acc += s.dt * hn * ip;
        }
        if let Some(dec) = self.decomposition.as_mut() {
            let u = &s.orbitals[0];
            let w = &free[0];
            let d: Vec<C> = u.iter().zip(w).map(|(a, b)| a - b).collect();
            let w2: Vec<f64> = w.iter().map(|z| z.norm_sqr()).collect();
            let (vw, _) = self.v.convolve_real(&w2);
            let (vu, _) = self
                .v
                .convolve_real(&u.iter().map(|z| z.norm_sqr()).collect::<Vec<_>>());
            let c1 = self.v.convolve(
                &d.iter()
                    .zip(w)
                    .map(|(a, b)| a * b.conj())
                    .collect::<Vec<_>>(),
            );
            let c2 = self.v.convolve(
                &u.iter()
                    .zip(&d)
                    .map(|(a, b)| a * b.conj())
                    .collect::<Vec<_>>(),
            );
            let scale = s.dt * hn;
            dec.l += scale * vw.iter().zip(&w2).map(|(a, b)| a * b).sum::<f64>();
            dec.r1 += scale * c1.iter().zip(&w2).map(|(a, b)| a * b).sum::<C>();
            dec.r2 += scale * c2.iter().zip(&w2).map(|(a, b)| a * b).sum::<C>();
            dec.r3 += scale
                * vu.iter()
                    .zip(&d)
                    .zip(w)
                    .map(|((a, b), c)| a * b * c.conj())
                    .sum::<C>();
        }
        Ok(())
    }
}

fn scatter_once(
    f_minus: &OrbitalSet,
    v: &RealizedPotential,
    model: Model,
    horizon: f64,
    opts: &ScatterOptions,
) -> Result<ScatterOutcome> {
    let grid = f_minus.grid().clone();
    let start = f_minus
        .try_map(|u| free_propagate(&u.to_position(), -horizon))?
        .with_time(-horizon);
    let residual = |s: &OrbitalSet| -> f64 {
        let bufs: Vec<Vec<C>> = s
            .orbitals()
            .iter()
            .map(|u| u.to_position().into_values())
            .collect();
        nonlinearity_buffers(model, v, &bufs)
            .iter()
            .map(|b| (b.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.cell_volume()).sqrt())
            .fold(0.0, f64::max)
    };
    let mut acc = Accumulator {
        grid: &grid,
        v,
        model,
        probes: f_minus
            .orbitals()
            .iter()
            .map(|u| u.to_frequency().into_values())
            .collect(),
        duhamel: vec![C::new(0.0, 0.0); f_minus.len()],
        decomposition: if opts.decomposition && model == Model::Rh {
            Some(Decomposition::default())
        } else {
            None
        },
    };
    let mut observer = |s: &StepSample<'_>| acc.observe(s);
    let (end, report) = evolve_with(
        &start,
        v,
        model,
        -horizon,
        horizon,
        opts.dt,
        &opts.evolve,
        Some(&mut observer),
    )?;
    let matching_residual = residual(&start).max(residual(&end));
    let f_plus = end
        .try_map(|u| free_propagate(u, -horizon))?
        .with_time(horizon);
    Ok(ScatterOutcome {
        f_minus: f_minus.clone(),
        f_plus,
        horizon,
        doublings: 0,
        horizon_change: None,
        matching_residual,
        duhamel: acc.duhamel,
        decomposition: acc.decomposition,
        report,
    })
}

fn state_distance(a: &OrbitalSet, b: &OrbitalSet) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in a.orbitals().iter().zip(b.orbitals()) {
        s += x.sub(y)?.norm_sq();
    }
    Ok(s.sqrt())
}

/// `f_plus = U0(-T) u(T)` with `u(-T) = U0(-T) f_minus`.
pub fn forward_scatter(
    f_minus: &OrbitalSet,
    v: &RealizedPotential,
    model: Model,
    opts: &ScatterOptions,
) -> Result<ScatterOutcome> {
    if !(opts.horizon > 0.0) {
        return Err(Error::InvalidInput("horizon must be positive".into()));
    }
    f_minus
        .grid()
        .ensure_same(v.grid(), "potential and orbitals")?;
    let mut horizon = opts.horizon;
    check_transit(f_minus, v.spec(), horizon, opts.width_tol)?;
    let mut out = scatter_once(f_minus, v, model, horizon, opts)?;
    let mut doublings = 0;
    while doublings < opts.max_doublings {
        horizon *= 2.0;
        check_transit(f_minus, v.spec(), horizon, opts.width_tol)?;
        let next = scatter_once(f_minus, v, model, horizon, opts)?;
        let change = state_distance(&out.f_plus, &next.f_plus)?;
        doublings += 1;
        out = ScatterOutcome {
            doublings,
            horizon_change: Some(change),
            ..next
        };
        if change <= opts.horizon_tol {
            return Ok(out);
        }
    }
    if let Some(change) = out.horizon_change {
        if change > opts.horizon_tol {
            return Err(Error::TailNotConverged { doublings, change });
        }
    }
    Ok(out)
}

/// Probe orbitals `e^{i v.x} phi_k`, with every amplitude multiplied by `scale`.
pub fn probe_state(
    grid: &Grid,
    probes: &[ProbeSpec],
    velocity: &[f64],
    scale: f64,
) -> Result<OrbitalSet> {
    let fields = probes
        .iter()
        .map(|p| {
            let p = p
                .clone()
                .with_velocity(velocity.to_vec())
                .with_amplitude(p.amplitude * scale);
            p.realize(grid)
        })
        .collect::<Result<Vec<_>>>()?;
    OrbitalSet::new(fields, 0.0)
}

/// Everything a sweep needs besides the swept parameter.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    pub grid: Grid,
    pub potential: PotentialSpec,
    pub model: Model,
    pub probes: Vec<ProbeSpec>,
    pub options: ScatterOptions,
    /// Orbital whose pairing is tabulated.
    pub orbital: usize,
}

impl SweepSetup {
    fn check(&self) -> Result<RealizedPotential> {
        if self.orbital >= self.probes.len() {
            return Err(Error::InvalidInput(format!(
                "orbital {} out of range for {} probes",
                self.orbital,
                self.probes.len()
            )));
        }
        self.potential.realize(&self.grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityRow {
    pub speed: f64,
    pub velocity: Vec<f64>,
    pub pairing: C,
    pub remainder: f64,
    /// `|remainder| |v|^2`
    pub scaled_remainder: f64,
    /// Log-log slope of `|remainder|` against `|v|` over the rows so far.
    pub slope_so_far: Option<f64>,
    pub duhamel_defect: f64,
    pub imaginary_defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocitySweep {
    pub reference: f64,
    pub rows: Vec<VelocityRow>,
    pub slope: Option<f64>,
    /// Set when a run failed; `rows` then holds the runs before it.
    pub failure: Option<String>,
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Pairing of orbital `setup.orbital` for each lattice velocity; the remainder is
/// measured against `reference` (the limit from the kernels module).
pub fn high_velocity_sweep(
    setup: &SweepSetup,
    velocities: &[Vec<f64>],
    reference: f64,
) -> Result<VelocitySweep> {
    let v = setup.check()?;
    let speeds: Vec<f64> = velocities
        .iter()
        .map(|u| u.iter().map(|c| c * c).sum::<f64>().sqrt())
        .collect();
    if speeds.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput(
            "velocity list must have non-decreasing |v|".into(),
        ));
    }
    let results: Vec<Result<VelocityRow>> = velocities
        .par_iter()
        .zip(&speeds)
        .map(|(vel, &speed)| {
            let state = probe_state(&setup.grid, &setup.probes, vel, 1.0)?;
            let out = forward_scatter(&state, &v, setup.model, &setup.options)?;
            let p = out.pairings()?[setup.orbital];
            let remainder = p.re - reference;
            Ok(VelocityRow {
                speed,
                velocity: vel.clone(),
                pairing: p,
                remainder,
                scaled_remainder: remainder.abs() * speed * speed,
                slope_so_far: None,
                duhamel_defect: out.duhamel_defect()?,
                imaginary_defect: imaginary_identity_defect(&out)?,
            })
        })
        .collect();
    let mut rows = Vec::new();
    let mut failure = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                failure = Some(format!("run {i} (|v| = {}): {e}", speeds[i]));
                break;
            }
        }
    }
    for k in 0..rows.len() {
        let xs: Vec<f64> = rows[..=k].iter().map(|r| r.speed).collect();
        let ys: Vec<f64> = rows[..=k].iter().map(|r| r.remainder.abs()).collect();
        rows[k].slope_so_far = loglog_slope(&xs, &ys);
    }
    let slope = rows.last().and_then(|r| r.slope_so_far);
    Ok(VelocitySweep {
        reference,
        rows,
        slope,
        failure,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeRow {
    pub epsilon: f64,
    /// `eps^-3 <i(S - I)(eps phi), phi>`
    pub scaled: C,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSweep {
    pub rows: Vec<AmplitudeRow>,
    /// `(e1^2 a2 - e2^2 a1) / (e1^2 - e2^2)` over the last two rows.
    pub extrapolated: Option<f64>,
    pub converged: bool,
}

/// Small-amplitude sequence for the probes at zero velocity.
pub fn small_amplitude_sweep(setup: &SweepSetup, epsilons: &[f64]) -> Result<AmplitudeSweep> {
    let v = setup.check()?;
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidInput(
            "epsilon list must be decreasing".into(),
        ));
    }
    if epsilons.iter().any(|&e| e < 1e-3) {
        return Err(Error::InvalidInput(
            "epsilon below 1e-3 falls under the solver noise floor".into(),
        ));
    }
    let zero = vec![0.0; setup.grid.dim()];
    let base = probe_state(&setup.grid, &setup.probes, &zero, 1.0)?;
    let rows = epsilons
        .par_iter()
        .map(|&eps| {
            let state = probe_state(&setup.grid, &setup.probes, &zero, eps)?;
            let out = forward_scatter(&state, &v, setup.model, &setup.options)?;
            let j = setup.orbital;
            let p = pairing(
                out.f_minus.orbital(j),
                out.f_plus.orbital(j),
                base.orbital(j),
            )?;
            Ok(AmplitudeRow {
                epsilon: eps,
                scaled: p / eps.powi(3),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let extrapolated = if rows.len() >= 2 {
        let a = &rows[rows.len() - 2];
        let b = &rows[rows.len() - 1];
        let (e1, e2) = (a.epsilon * a.epsilon, b.epsilon * b.epsilon);
        Some((e1 * b.scaled.re - e2 * a.scaled.re) / (e1 - e2))
    } else {
        None
    };
    let diffs: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[1].scaled - w[0].scaled).norm())
        .collect();
    let converged = diffs.windows(2).all(|w| w[1] < w[0]);
    Ok(AmplitudeSweep {
        rows,
        extrapolated,
        converged,
    })
}

/// Decomposition of the pairing of `e^{i v.x} phi` under the restricted model.
pub fn remainder_decomposition(
    grid: &Grid,
    probe: &ProbeSpec,
    potential: &PotentialSpec,
    velocity: &[f64],
    opts: &ScatterOptions,
) -> Result<(Decomposition, C)> {
    let v = potential.realize(grid)?;
    let state = probe_state(grid, std::slice::from_ref(probe), velocity, 1.0)?;
    let opts = ScatterOptions {
        decomposition: true,
        ..opts.clone()
    };
    let out = forward_scatter(&state, &v, Model::Rh, &opts)?;
    let dec = out
        .decomposition
        .ok_or_else(|| Error::InvalidInput("decomposition unavailable".into()))?;
    Ok((dec, out.pairings()?[0]))
}

/// `L = int int (2 pi)^{n/2} V^(xi) |F(|U0(t) phi|^2)(xi)|^2 dxi dt` over the
/// lattice without the origin, midpoint rule in `t` on the integrator's nodes.
pub fn leading_term_frequency(
    phi: &Field,
    v: &RealizedPotential,
    horizon: f64,
    dt: f64,
) -> Result<f64> {
    let grid = phi.grid();
    grid.ensure_same(v.grid(), "potential and probe")?;
    let steps = (2.0 * horizon / dt).round() as usize;
    let h = 2.0 * horizon / steps as f64;
    let c = (2.0 * std::f64::consts::PI).powf(grid.dim() as f64 / 2.0);
    let origin = grid.origin_index();
    let vals: Vec<f64> = (0..steps)
        .into_par_iter()
        .map(|n| {
            let t = -horizon + (n as f64 + 0.5) * h;
            let d = crate::kernels::density_spectrum(phi, t);
            d.values()
                .iter()
                .zip(v.hat())
                .enumerate()
                .filter(|(i, _)| *i != origin)
                .map(|(_, (z, vh))| vh * z.norm_sqr())
                .sum::<f64>()
        })
        .collect();
    Ok(c * grid.dual_cell_volume() * h * vals.iter().sum::<f64>())
}

/// Limit of the pairing of orbital `j` from the kernels module: `(2 pi)^{n/2}
/// int V^ K dxi` with `K` the kernel of `model`, time window `[-T, T]`.
pub fn reference_limit(
    grid: &Grid,
    probes: &[ProbeSpec],
    j: usize,
    model: Model,
    potential: &RealizedPotential,
    horizon: f64,
    lambda: f64,
) -> Result<f64> {
    let reach = probes
        .iter()
        .map(|p| {
            (1.0 + lambda) * (p.center.iter().map(|c| c * c).sum::<f64>().sqrt() + p.band_radius)
        })
        .fold(0.0, f64::max);
    let xi = XiGrid::radial_shells(grid, (2.0 * reach).min(grid.nyquist()))?;
    let quad = TimeQuadrature::window(horizon);
    let lam = [lambda];
    let k = match model {
        Model::Rh => kernel_g(grid, &probes[j], &lam, &xi, &quad)?,
        Model::Hartree => kernel_h(grid, probes, j, &lam, &xi, &quad)?,
        Model::Hf => kernel_hf(grid, probes, j, &lam, &xi, &quad)?,
    };
    let vh = k.xi_grid.sample(potential.hat());
    let c = (2.0 * std::f64::consts::PI).powf(grid.dim() as f64 / 2.0);
    Ok(c * forward_map(&vh, &k)?[0])
}

/// Serializable record of one scattering run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRun {
    pub model: Model,
    pub potential: PotentialSpec,
    pub probes: Vec<ProbeSpec>,
    pub horizon: f64,
    pub dt: f64,
    pub pairing: Vec<C>,
    pub duhamel: Vec<C>,
    pub norm_minus: Vec<f64>,
    pub norm_plus: Vec<f64>,
    pub matching_residual: f64,
    pub decomposition: Option<Decomposition>,
}

impl ScatterRun {
    pub fn from_outcome(
        outcome: &ScatterOutcome,
        model: Model,
        potential: &PotentialSpec,
        probes: &[ProbeSpec],
        dt: f64,
    ) -> Result<Self> {
        Ok(Self {
            model,
            potential: potential.clone(),
            probes: probes.to_vec(),
            horizon: outcome.horizon,
            dt,
            pairing: outcome.pairings()?,
            duhamel: outcome.duhamel.clone(),
            norm_minus: outcome.f_minus.norms(),
            norm_plus: outcome.f_plus.norms(),
            matching_residual: outcome.matching_residual,
            decomposition: outcome.decomposition,
        })
    }
}

/// Position-space copy of `field` (convenience for callers building probes by hand).
pub fn as_position(field: &Field) -> Field {
    if field.representation() == Representation::Position {
        field.clone()
    } else {
        field.to_position()
    }
}
