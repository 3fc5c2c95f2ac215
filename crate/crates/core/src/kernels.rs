//! Inverse-problem kernels `G`, `H^(j)`, `H_HF^(j)` by time quadrature of the
//! density and pair spectra, and the forward map `V^ -> P(lambda)`.

use num_complex::Complex64;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, ProbeSpec, Representation};
use crate::propagator::PropagationPlan;

type C = Complex64;

/// `F(|U0(t) phi|^2)` in frequency representation.
pub fn density_spectrum(phi: &Field, t: f64) -> Field {
    let grid = phi.grid();
    let u = evolve_position(phi, t);
    let mut rho: Vec<C> = u.iter().map(|z| C::new(z.norm_sqr(), 0.0)).collect();
    grid.forward_in_place(&mut rho);
    Field::new(grid, Representation::Frequency, rho, "density_spectrum").expect("finite")
}

/// `F((U0(t) phi_a) conj(U0(t) phi_b))` in frequency representation.
pub fn pair_spectrum(phi_a: &Field, phi_b: &Field, t: f64) -> Result<Field> {
    let grid = phi_a.grid();
    grid.ensure_same(phi_b.grid(), "pair spectrum")?;
    let a = evolve_position(phi_a, t);
    let b = evolve_position(phi_b, t);
    let mut p: Vec<C> = a.iter().zip(&b).map(|(x, y)| x * y.conj()).collect();
    grid.forward_in_place(&mut p);
    Field::new(grid, Representation::Frequency, p, "pair_spectrum")
}

fn evolve_position(phi: &Field, t: f64) -> Vec<C> {
    let grid = phi.grid();
    let mut s = phi.to_frequency().into_values();
    if t != 0.0 {
        PropagationPlan::new(grid, t).apply_spectrum(&mut s);
    }
    grid.inverse_in_place(&mut s);
    s
}

/// One radial quadrature node: a shell of lattice frequencies with equal `|xi|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiShell {
    pub radius: f64,
    /// Total dual-cell volume of the members.
    pub weight: f64,
    /// Flat indices into the centered frequency lattice.
    pub members: Vec<usize>,
}

/// Frequency quadrature nodes, origin excluded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XiGrid {
    pub shells: Vec<XiShell>,
}

impl XiGrid {
    /// Every lattice shell with `0 < |xi| <= r_max`, ordered by radius.
    pub fn radial_shells(grid: &Grid, r_max: f64) -> Result<Self> {
        if !(r_max > 0.0) {
            return Err(Error::InvalidInput(
                "xi grid radius must be positive".into(),
            ));
        }
        let mut by_label: std::collections::BTreeMap<i64, Vec<usize>> = Default::default();
        let dxi = grid.dual_spacing();
        for i in 0..grid.len() {
            let k = grid.frequency_label(i);
            let k2: i64 = k[..grid.dim()].iter().map(|c| c * c).sum();
            if k2 == 0 || (k2 as f64).sqrt() * dxi > r_max * (1.0 + 1e-12) {
                continue;
            }
            by_label.entry(k2).or_default().push(i);
        }
        if by_label.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no lattice frequency with |xi| <= {r_max}"
            )));
        }
        let cell = grid.dual_cell_volume();
        let shells = by_label
            .into_iter()
            .map(|(k2, members)| XiShell {
                radius: (k2 as f64).sqrt() * dxi,
                weight: members.len() as f64 * cell,
                members,
            })
            .collect();
        Ok(Self { shells })
    }

    /// Explicit nodes, each a list of lattice labels sharing a weight.
    pub fn from_labels(grid: &Grid, nodes: &[Vec<Vec<i64>>]) -> Result<Self> {
        let cell = grid.dual_cell_volume();
        let mut shells = Vec::with_capacity(nodes.len());
        for node in nodes {
            let mut members = Vec::with_capacity(node.len());
            let mut radius = None;
            for label in node {
                let idx = grid.frequency_index(label).ok_or_else(|| {
                    Error::InvalidInput(format!("label {label:?} is not on the lattice"))
                })?;
                if idx == grid.origin_index() {
                    return Err(Error::InvalidInput(
                        "xi grid must exclude the origin".into(),
                    ));
                }
                let r = grid.frequency_norm_sq(idx).sqrt();
                match radius {
                    None => radius = Some(r),
                    Some(r0) if (r0 - r).abs() > 1e-12 * r0 => {
                        return Err(Error::InvalidInput(
                            "members of a node must share |xi|".into(),
                        ))
                    }
                    _ => {}
                }
                members.push(idx);
            }
            let radius = radius.ok_or_else(|| Error::InvalidInput("empty xi node".into()))?;
            shells.push(XiShell {
                radius,
                weight: members.len() as f64 * cell,
                members,
            });
        }
        Ok(Self { shells })
    }

    pub fn len(&self) -> usize {
        self.shells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shells.is_empty()
    }

    pub fn radii(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.radius).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.weight).collect()
    }

    pub fn max_radius(&self) -> f64 {
        self.shells.iter().map(|s| s.radius).fold(0.0, f64::max)
    }

    /// Shell means of a centered frequency-lattice array.
    pub fn sample(&self, values: &[f64]) -> Vec<f64> {
        self.shells
            .iter()
            .map(|s| s.members.iter().map(|&i| values[i]).sum::<f64>() / s.members.len() as f64)
            .collect()
    }

    /// Evaluate a radial function at the shell radii.
    pub fn sample_radial(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.shells.iter().map(|s| f(s.radius)).collect()
    }

    fn all_members(&self) -> Vec<usize> {
        self.shells
            .iter()
            .flat_map(|s| s.members.iter().copied())
            .collect()
    }
}

/// Symmetric time truncation.
///
/// A window without `dt` is integrated in closed form when that is cheaper
/// than sampling; an explicit `dt` always selects composite Simpson.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeQuadrature {
    /// Fixed window `[-t_max, t_max]`.
    Window {
        t_max: f64,
        #[serde(default)]
        dt: Option<f64>,
    },
    /// Start at `[-t0, t0]` and double until the per-shell change is below `tail_tol`.
    Adaptive {
        t0: f64,
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default = "default_tail_tol")]
        tail_tol: f64,
        #[serde(default = "default_doublings")]
        max_doublings: usize,
    },
}

fn default_tail_tol() -> f64 {
    1e-8
}

fn default_doublings() -> usize {
    6
}

impl TimeQuadrature {
    pub fn window(t_max: f64) -> Self {
        TimeQuadrature::Window { t_max, dt: None }
    }

    pub fn adaptive(t0: f64) -> Self {
        TimeQuadrature::Adaptive {
            t0,
            dt: None,
            tail_tol: default_tail_tol(),
            max_doublings: default_doublings(),
        }
    }

    fn explicit_dt(&self) -> Option<f64> {
        match self {
            TimeQuadrature::Window { dt, .. } | TimeQuadrature::Adaptive { dt, .. } => *dt,
        }
    }

    fn validate(&self) -> Result<()> {
        let (t, dt) = match self {
            TimeQuadrature::Window { t_max, dt } => (*t_max, *dt),
            TimeQuadrature::Adaptive {
                t0, dt, tail_tol, ..
            } => {
                if !(*tail_tol > 0.0) {
                    return Err(Error::InvalidInput(
                        "tail tolerance must be positive".into(),
                    ));
                }
                (*t0, *dt)
            }
        };
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "time window must be positive, got {t}"
            )));
        }
        if let Some(dt) = dt {
            if !(dt > 0.0 && dt <= t) {
                return Err(Error::InvalidInput(format!(
                    "time step {dt} must lie in (0, {t}]"
                )));
            }
        }
        Ok(())
    }
}

/// What the quadrature actually did for one row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRecord {
    pub dt: f64,
    pub t_max: f64,
    pub doublings: usize,
    pub evaluations: usize,
    /// The window integral was evaluated in closed form.
    #[serde(default)]
    pub closed_form: bool,
}

/// Composite Simpson weights on `[a, b]` with an even number of intervals of length at most `dt`.
fn simpson_nodes(a: f64, b: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut n = ((b - a) / dt).ceil().max(2.0) as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// Integrate a per-shell integrand over `t`; returns the integrals, the
/// per-shell convergence flags and the record.
fn integrate_shells(
    nshell: usize,
    quad: &TimeQuadrature,
    dt: f64,
    integrand: &(dyn Fn(f64) -> Vec<C> + Sync),
) -> (Vec<C>, Vec<bool>, QuadratureRecord) {
    let segment = |a: f64, b: f64| -> (Vec<C>, usize) {
        let nodes = simpson_nodes(a, b, dt);
        let vals: Vec<Vec<C>> = nodes.par_iter().map(|&(t, _)| integrand(t)).collect();
        let mut acc = vec![C::new(0.0, 0.0); nshell];
        for ((_, w), v) in nodes.iter().zip(&vals) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += w * x;
            }
        }
        (acc, nodes.len())
    };
    let add = |a: &mut Vec<C>, b: &[C]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    match *quad {
        TimeQuadrature::Window { t_max, .. } => {
            let (mut total, n1) = segment(-t_max, 0.0);
            let (right, n2) = segment(0.0, t_max);
            add(&mut total, &right);
            let record = QuadratureRecord {
                dt,
                t_max,
                doublings: 0,
                evaluations: n1 + n2,
                closed_form: false,
            };
            (total, vec![true; nshell], record)
        }
        TimeQuadrature::Adaptive {
            t0,
            tail_tol,
            max_doublings,
            ..
        } => {
            let (mut total, n1) = segment(-t0, 0.0);
            let (right, n2) = segment(0.0, t0);
            add(&mut total, &right);
            let mut evaluations = n1 + n2;
            let mut converged = vec![false; nshell];
            let mut t = t0;
            let mut doublings = 0;
            while doublings < max_doublings && converged.iter().any(|c| !c) {
                let (mut tail, n1) = segment(-2.0 * t, -t);
                let (right, n2) = segment(t, 2.0 * t);
                add(&mut tail, &right);
                evaluations += n1 + n2;
                add(&mut total, &tail);
                for ((c, x), d) in converged.iter_mut().zip(&total).zip(&tail) {
                    *c = d.norm() <= tail_tol * x.norm();
                }
                t *= 2.0;
                doublings += 1;
            }
            let record = QuadratureRecord {
                dt,
                t_max: t,
                doublings,
                evaluations,
                closed_form: false,
            };
            (total, converged, record)
        }
    }
}

/// Which code path produced a kernel row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowPath {
    Recomputed,
    Scaled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum KernelKind {
    G,
    H { j: usize },
    HF { j: usize },
}

impl KernelKind {
    pub fn convention(self) -> &'static str {
        match self {
            KernelKind::G => "G = int |F(|U0 phi|^2)|^2 dt",
            KernelKind::H { .. } => "H(j) sums k != j",
            KernelKind::HF { .. } => "HF(j) sums all k in both the direct and the exchange part",
        }
    }
}

/// Kernel samples `K[i][j] = kernel(xi_j, lambda_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub kind: KernelKind,
    pub convention: String,
    pub lambda_grid: Vec<f64>,
    pub xi_grid: XiGrid,
    /// Rows over `lambda`, columns over `xi_grid` shells.
    pub entries: Vec<Vec<f64>>,
    pub row_paths: Vec<RowPath>,
    pub quadrature: TimeQuadrature,
    pub records: Vec<QuadratureRecord>,
    /// Radii of shells dropped for tail non-convergence.
    pub dropped_radii: Vec<f64>,
    pub probes: Vec<ProbeSpec>,
    pub probe_hash: String,
    /// Largest imaginary part discarded when realifying, relative to the largest entry.
    pub imag_residue: f64,
    /// Largest `k = j` direct-minus-exchange residue (HF only).
    pub diagonal_residue: f64,
}

impl KernelMatrix {
    pub fn rows(&self) -> usize {
        self.entries.len()
    }

    pub fn cols(&self) -> usize {
        self.xi_grid.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .map(|x| x.abs())
            .fold(0.0, f64::max)
    }

    /// `C = max_i max_j |K[i+1][j] - K[i][j]| / (lambda_{i+1} - lambda_i)`.
    pub fn entry_lipschitz(&self) -> f64 {
        self.consecutive(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        })
    }

    /// `C` with `|(K f)(lambda) - (K f)(lambda')| <= C |f|_inf |lambda - lambda'|`
    /// for weighted sums over the xi grid.
    pub fn operator_lipschitz(&self) -> f64 {
        let w = self.xi_grid.weights();
        self.consecutive(|a, b| {
            a.iter()
                .zip(b)
                .zip(&w)
                .map(|((x, y), w)| w * (x - y).abs())
                .sum()
        })
    }

    fn consecutive(&self, diff: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        let mut c: f64 = 0.0;
        for i in 1..self.rows() {
            let dl = self.lambda_grid[i] - self.lambda_grid[i - 1];
            if dl > 0.0 {
                c = c.max(diff(&self.entries[i], &self.entries[i - 1]) / dl);
            }
        }
        c
    }

    /// Weighted matrix `A[i][j] = K[i][j] w_j` (the discretized integral operator).
    pub fn weighted(&self) -> Vec<Vec<f64>> {
        let w = self.xi_grid.weights();
        self.entries
            .iter()
            .map(|row| row.iter().zip(&w).map(|(k, w)| k * w).collect())
            .collect()
    }
}

/// `P(lambda_i) = sum_j w_j V^(xi_j) K[i][j]`.
pub fn forward_map(v_hat: &[f64], kernel: &KernelMatrix) -> Result<Vec<f64>> {
    if v_hat.len() != kernel.cols() {
        return Err(Error::Dimension(format!(
            "V^ has {} samples, kernel has {} xi nodes",
            v_hat.len(),
            kernel.cols()
        )));
    }
    Ok(kernel
        .weighted()
        .iter()
        .map(|row| row.iter().zip(v_hat).map(|(a, b)| a * b).sum())
        .collect())
}

/// Uniform lambda nodes on `[lo, hi]`.
pub fn lambda_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(hi >= lo && lo > -1.0) || count == 0 || (count == 1 && hi != lo) {
        return Err(Error::InvalidInput(format!(
            "lambda grid [{lo}, {hi}] with {count} nodes is invalid"
        )));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect())
}

fn probe_hash(probes: &[ProbeSpec]) -> String {
    let json = serde_json::to_vec(probes).expect("probe specs serialize");
    hex::encode(Sha256::digest(json))
}

/// Time step resolving `exp(-i t xi . (eta - eta'))` for all member pairs.
fn auto_dt(fields: &[Field], xi: &XiGrid, t_max: f64) -> f64 {
    let eta = fields
        .iter()
        .map(|f| f.spectral_radius(1e-15))
        .fold(0.0, f64::max);
    let r = xi.max_radius();
    // the |xi|^2 / 2 phase cancels in every integrand
    let omega = 2.0 * r * eta;
    (0.05 / omega.max(1e-12)).min(0.05).min(t_max)
}

/// Per-lambda realized probes.
fn realize_row(grid: &Grid, probes: &[ProbeSpec], lambda: f64) -> Result<Vec<Field>> {
    probes
        .iter()
        .map(|p| {
            let s = (1.0 + p.dilation) * (1.0 + lambda) - 1.0;
            p.clone().with_dilation(s).realize(grid)
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Integrand {
    G,
    H(usize),
    Hf(usize),
}

struct RowOutcome {
    values: Vec<C>,
    converged: Vec<bool>,
    record: QuadratureRecord,
    diagonal: f64,
}

fn compute_row(
    grid: &Grid,
    fields: &[Field],
    xi: &XiGrid,
    quad: &TimeQuadrature,
    which: Integrand,
) -> Result<RowOutcome> {
    if let TimeQuadrature::Window { t_max, dt: None } = *quad {
        let sampled = exact_row_cost(fields, xi) > sampled_row_cost(grid, fields, xi, t_max);
        if !sampled {
            return Ok(exact_row(grid, fields, xi, t_max, which));
        }
    }
    sampled_row(grid, fields, xi, quad, which)
}

/// Spectral samples at or below this fraction of the peak are roundoff of an exactly band-limited profile.
const SUPPORT_FLOOR: f64 = 1e-14;

/// Sparse centered spectrum: flat index, lattice label and value.
struct Support {
    points: Vec<(usize, [i64; 3], C)>,
    dense: Vec<C>,
}

fn support(field: &Field) -> Support {
    let grid = field.grid();
    let mut dense = field.to_frequency().into_values();
    let floor = SUPPORT_FLOOR * dense.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    for z in dense.iter_mut() {
        if z.norm() <= floor {
            *z = C::new(0.0, 0.0);
        }
    }
    let points = dense
        .iter()
        .enumerate()
        .filter(|(_, z)| **z != C::new(0.0, 0.0))
        .map(|(i, &z)| (i, grid.frequency_label(i), z))
        .collect();
    Support { points, dense }
}

fn exact_row_cost(fields: &[Field], xi: &XiGrid) -> f64 {
    let s = fields
        .iter()
        .map(|f| support(f).points.len())
        .max()
        .unwrap_or(0) as f64;
    let members: usize = xi.shells.iter().map(|s| s.members.len()).sum();
    // one sine per term pair
    20.0 * members as f64 * s * s * fields.len() as f64
}

fn sampled_row_cost(grid: &Grid, fields: &[Field], xi: &XiGrid, t_max: f64) -> f64 {
    let nodes = 2.0 * t_max / auto_dt(fields, xi, t_max);
    let n = grid.len() as f64;
    nodes * 3.0 * fields.len() as f64 * n * n.log2().max(1.0) * 5.0
}

/// Products `a_m conj(b_{m-k})` binned by the integer phase key `|m|^2 - |m-k|^2`.
fn binned_products(grid: &Grid, a: &Support, b: &Support, k: &[i64; 3]) -> Vec<(i64, C)> {
    let m = grid.points_per_axis() as i64;
    let d = grid.dim();
    let wrap = |x: i64| (x + m / 2).rem_euclid(m) - m / 2;
    let mut terms: Vec<(i64, C)> = Vec::with_capacity(a.points.len());
    for (_, la, za) in &a.points {
        let mut lb = [0i64; 3];
        for c in 0..d {
            lb[c] = wrap(la[c] - k[c]);
        }
        let Some(ib) = grid.frequency_index(&lb[..d]) else {
            continue;
        };
        let zb = b.dense[ib];
        if zb == C::new(0.0, 0.0) {
            continue;
        }
        let key: i64 = (0..d).map(|c| la[c] * la[c] - lb[c] * lb[c]).sum();
        terms.push((key, za * zb.conj()));
    }
    terms.sort_by_key(|t| t.0);
    let mut out: Vec<(i64, C)> = Vec::with_capacity(terms.len());
    for (key, z) in terms {
        match out.last_mut() {
            Some(last) if last.0 == key => last.1 += z,
            _ => out.push((key, z)),
        }
    }
    out
}

/// `int_{-T}^{T} (sum_q A_q e^{-i t a q}) conj(sum_q B_q e^{-i t a q}) dt`.
fn window_pairing(x: &[(i64, C)], y: &[(i64, C)], a: f64, t_max: f64) -> C {
    let mut acc = C::new(0.0, 0.0);
    for &(p, u) in x {
        for &(q, v) in y {
            let delta = a * (p - q) as f64;
            let w = if p == q {
                2.0 * t_max
            } else {
                2.0 * (t_max * delta).sin() / delta
            };
            acc += u * v.conj() * w;
        }
    }
    acc
}

fn exact_row(
    grid: &Grid,
    fields: &[Field],
    xi: &XiGrid,
    t_max: f64,
    which: Integrand,
) -> RowOutcome {
    let sup: Vec<Support> = fields.iter().map(support).collect();
    let dxi = grid.dual_spacing();
    let norm = (dxi * dxi / (2.0 * PI)).powi(grid.dim() as i32);
    let a = 0.5 * dxi * dxi;
    let diag = std::sync::Mutex::new(0.0f64);
    let member_value = |idx: usize| -> C {
        let k = grid.frequency_label(idx);
        match which {
            Integrand::G => {
                let c = binned_products(grid, &sup[0], &sup[0], &k);
                window_pairing(&c, &c, a, t_max) * norm
            }
            Integrand::H(j) | Integrand::Hf(j) => {
                let hf = matches!(which, Integrand::Hf(_));
                let cj = binned_products(grid, &sup[j], &sup[j], &k);
                let mut acc = C::new(0.0, 0.0);
                for kk in 0..sup.len() {
                    if kk == j && !hf {
                        continue;
                    }
                    let direct = if kk == j {
                        window_pairing(&cj, &cj, a, t_max)
                    } else {
                        window_pairing(
                            &binned_products(grid, &sup[kk], &sup[kk], &k),
                            &cj,
                            a,
                            t_max,
                        )
                    };
                    if hf {
                        let p = binned_products(grid, &sup[j], &sup[kk], &k);
                        let ex = window_pairing(&p, &p, a, t_max);
                        if kk == j {
                            let mut g = diag.lock().expect("diagonal residue lock");
                            *g = g.max((direct - ex).norm() * norm);
                        }
                        acc += direct - ex;
                    } else {
                        acc += direct;
                    }
                }
                acc * norm
            }
        }
    };
    let values: Vec<C> = xi
        .shells
        .par_iter()
        .map(|s| s.members.iter().map(|&i| member_value(i)).sum::<C>() / s.members.len() as f64)
        .collect();
    let members: usize = xi.shells.iter().map(|s| s.members.len()).sum();
    RowOutcome {
        values,
        converged: vec![true; xi.len()],
        record: QuadratureRecord {
            dt: 0.0,
            t_max,
            doublings: 0,
            evaluations: members,
            closed_form: true,
        },
        diagonal: diag.into_inner().expect("diagonal residue lock"),
    }
}

fn sampled_row(
    grid: &Grid,
    fields: &[Field],
    xi: &XiGrid,
    quad: &TimeQuadrature,
    which: Integrand,
) -> Result<RowOutcome> {
    let members = xi.all_members();
    let offsets: Vec<usize> = xi
        .shells
        .iter()
        .scan(0usize, |acc, s| {
            let o = *acc;
            *acc += s.members.len();
            Some(o)
        })
        .collect();
    let t_ref = match *quad {
        TimeQuadrature::Window { t_max, .. } => t_max,
        TimeQuadrature::Adaptive { t0, .. } => t0,
    };
    let dt = quad
        .explicit_dt()
        .unwrap_or_else(|| auto_dt(fields, xi, t_ref));
    let spectra: Vec<Vec<(usize, f64, C)>> = fields
        .iter()
        .map(|f| {
            f.to_frequency()
                .values()
                .iter()
                .enumerate()
                .filter(|(_, z)| **z != C::new(0.0, 0.0))
                .map(|(i, &z)| (i, 0.5 * grid.frequency_norm_sq(i), z))
                .collect()
        })
        .collect();
    let diag = std::sync::Mutex::new(0.0f64);

    let integrand = |t: f64| -> Vec<C> {
        let pos: Vec<Vec<C>> = spectra
            .iter()
            .map(|s| {
                let mut b = vec![C::new(0.0, 0.0); grid.len()];
                for &(i, e, z) in s {
                    b[i] = z * C::from_polar(1.0, -t * e);
                }
                grid.inverse_in_place(&mut b);
                b
            })
            .collect();
        let at_members = |mut b: Vec<C>| -> Vec<C> {
            grid.forward_in_place(&mut b);
            members.iter().map(|&i| b[i]).collect()
        };
        let density =
            |k: usize| at_members(pos[k].iter().map(|z| C::new(z.norm_sqr(), 0.0)).collect());
        let pair = |a: usize, b: usize| {
            at_members(
                pos[a]
                    .iter()
                    .zip(&pos[b])
                    .map(|(x, y)| x * y.conj())
                    .collect(),
            )
        };
        // per-member integrand
        let node: Vec<C> = match which {
            Integrand::G => density(0)
                .into_iter()
                .map(|d| C::new(d.norm_sqr(), 0.0))
                .collect(),
            Integrand::H(j) | Integrand::Hf(j) => {
                let dj = density(j);
                let mut acc = vec![C::new(0.0, 0.0); members.len()];
                for k in 0..pos.len() {
                    let hf = matches!(which, Integrand::Hf(_));
                    if k == j && !hf {
                        continue;
                    }
                    let dk = if k == j { dj.clone() } else { density(k) };
                    let direct: Vec<C> = dk.iter().zip(&dj).map(|(a, b)| a * b.conj()).collect();
                    if hf {
                        let ex = pair(j, k);
                        if k == j {
                            let r = direct
                                .iter()
                                .zip(&ex)
                                .map(|(d, e)| (d.re - e.norm_sqr()).abs())
                                .fold(0.0, f64::max);
                            let mut g = diag.lock().expect("diagonal residue lock");
                            *g = g.max(r);
                        }
                        for ((a, d), e) in acc.iter_mut().zip(&direct).zip(&ex) {
                            *a += d - e.norm_sqr();
                        }
                    } else {
                        for (a, d) in acc.iter_mut().zip(&direct) {
                            *a += d;
                        }
                    }
                }
                acc
            }
        };
        xi.shells
            .iter()
            .zip(&offsets)
            .map(|(s, &o)| node[o..o + s.members.len()].iter().sum::<C>() / s.members.len() as f64)
            .collect()
    };
    let (values, converged, record) = integrate_shells(xi.len(), quad, dt, &integrand);
    let diagonal = diag.into_inner().expect("diagonal residue lock");
    Ok(RowOutcome {
        values,
        converged,
        record,
        diagonal,
    })
}

fn assemble(
    grid: &Grid,
    probes: &[ProbeSpec],
    lambdas: &[f64],
    xi: &XiGrid,
    quad: &TimeQuadrature,
    kind: KernelKind,
    which: Integrand,
) -> Result<KernelMatrix> {
    quad.validate()?;
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "lambda grid must be non-empty and increasing".into(),
        ));
    }
    if lambdas[0] <= -1.0 {
        return Err(Error::InvalidInput("lambda must exceed -1".into()));
    }
    if xi.is_empty() {
        return Err(Error::InvalidInput("xi grid is empty".into()));
    }
    for s in &xi.shells {
        if s.members
            .iter()
            .any(|&i| i >= grid.len() || i == grid.origin_index())
        {
            return Err(Error::InvalidInput(
                "xi grid must lie on the lattice and exclude the origin".into(),
            ));
        }
    }
    let rows: Vec<RowOutcome> = lambdas
        .iter()
        .map(|&l| {
            let fields = realize_row(grid, probes, l)?;
            compute_row(grid, &fields, xi, quad, which)
        })
        .collect::<Result<Vec<_>>>()?;

    let keep: Vec<bool> = (0..xi.len())
        .map(|c| rows.iter().all(|r| r.converged[c]))
        .collect();
    if !keep.iter().any(|&k| k) {
        let last = rows.last().map(|r| r.record.doublings).unwrap_or(0);
        return Err(Error::TailNotConverged {
            doublings: last,
            change: f64::NAN,
        });
    }
    let dropped_radii = xi
        .shells
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| !k)
        .map(|(s, _)| s.radius)
        .collect();
    let xi_grid = XiGrid {
        shells: xi
            .shells
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect(),
    };
    let complex: Vec<Vec<C>> = rows
        .iter()
        .map(|r| {
            r.values
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .collect()
        })
        .collect();
    let max_re = complex
        .iter()
        .flatten()
        .map(|z| z.re.abs())
        .fold(0.0, f64::max);
    let max_im = complex
        .iter()
        .flatten()
        .map(|z| z.im.abs())
        .fold(0.0, f64::max);
    let imag_residue = if max_re > 0.0 {
        max_im / max_re
    } else {
        max_im
    };
    if imag_residue > 1e-10 && max_im > 1e-300 {
        return Err(Error::Quadrature(format!(
            "kernel entries are not real: imaginary residue {imag_residue:.3e}"
        )));
    }
    let entries = complex
        .iter()
        .map(|r| r.iter().map(|z| z.re).collect())
        .collect();
    Ok(KernelMatrix {
        kind,
        convention: kind.convention().to_string(),
        lambda_grid: lambdas.to_vec(),
        xi_grid,
        entries,
        row_paths: vec![RowPath::Recomputed; lambdas.len()],
        quadrature: quad.clone(),
        records: rows.iter().map(|r| r.record.clone()).collect(),
        dropped_radii,
        probes: probes.to_vec(),
        probe_hash: probe_hash(probes),
        imag_residue,
        diagonal_residue: rows.iter().map(|r| r.diagonal).fold(0.0, f64::max),
    })
}

/// `G(xi, lambda) = int |F(|U0(t) phi_lambda|^2)(xi)|^2 dt`.
pub fn kernel_g(
    grid: &Grid,
    probe: &ProbeSpec,
    lambdas: &[f64],
    xi: &XiGrid,
    quad: &TimeQuadrature,
) -> Result<KernelMatrix> {
    assemble(
        grid,
        std::slice::from_ref(probe),
        lambdas,
        xi,
        quad,
        KernelKind::G,
        Integrand::G,
    )
}

/// `G(xi)` for an arbitrary profile `phi`, stored as a single row at `lambda = 0`.
pub fn kernel_g_for_field(phi: &Field, xi: &XiGrid, quad: &TimeQuadrature) -> Result<KernelMatrix> {
    quad.validate()?;
    let grid = phi.grid();
    let row = compute_row(grid, std::slice::from_ref(phi), xi, quad, Integrand::G)?;
    let keep = row.converged.clone();
    if !keep.iter().any(|&k| k) {
        return Err(Error::TailNotConverged {
            doublings: row.record.doublings,
            change: f64::NAN,
        });
    }
    let mut hasher = Sha256::new();
    for z in phi.to_position().values() {
        hasher.update(z.re.to_le_bytes());
        hasher.update(z.im.to_le_bytes());
    }
    let xi_grid = XiGrid {
        shells: xi
            .shells
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect(),
    };
    let values: Vec<C> = row
        .values
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(v, _)| *v)
        .collect();
    let max_re = values.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let max_im = values.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    Ok(KernelMatrix {
        kind: KernelKind::G,
        convention: KernelKind::G.convention().to_string(),
        lambda_grid: vec![0.0],
        xi_grid,
        entries: vec![values.iter().map(|z| z.re).collect()],
        row_paths: vec![RowPath::Recomputed],
        quadrature: quad.clone(),
        records: vec![row.record],
        dropped_radii: xi
            .shells
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| !k)
            .map(|(s, _)| s.radius)
            .collect(),
        probes: Vec::new(),
        probe_hash: hex::encode(hasher.finalize()),
        imag_residue: if max_re > 0.0 {
            max_im / max_re
        } else {
            max_im
        },
        diagonal_residue: 0.0,
    })
}

/// `H^(j)(xi, lambda) = sum_{k != j} int F(|U0 phi_k|^2) conj F(|U0 phi_j|^2) dt`.
pub fn kernel_h(
    grid: &Grid,
    probes: &[ProbeSpec],
    j: usize,
    lambdas: &[f64],
    xi: &XiGrid,
    quad: &TimeQuadrature,
) -> Result<KernelMatrix> {
    check_index(probes, j)?;
    assemble(
        grid,
        probes,
        lambdas,
        xi,
        quad,
        KernelKind::H { j },
        Integrand::H(j),
    )
}

/// `H_HF^(j) = sum_k int F(|U0 phi_k|^2) conj F(|U0 phi_j|^2) dt - sum_k int |F(U0 phi_j conj(U0 phi_k))|^2 dt`.
pub fn kernel_hf(
    grid: &Grid,
    probes: &[ProbeSpec],
    j: usize,
    lambdas: &[f64],
    xi: &XiGrid,
    quad: &TimeQuadrature,
) -> Result<KernelMatrix> {
    check_index(probes, j)?;
    assemble(
        grid,
        probes,
        lambdas,
        xi,
        quad,
        KernelKind::HF { j },
        Integrand::Hf(j),
    )
}

fn check_index(probes: &[ProbeSpec], j: usize) -> Result<()> {
    if j >= probes.len() {
        return Err(Error::InvalidInput(format!(
            "orbital index {j} out of range for {} probes",
            probes.len()
        )));
    }
    Ok(())
}

/// `int int |F(|U0(t) phi|^2)(xi)|^2 dxi dt` over `[-t_max, t_max]`, with the
/// discrete `H^1` norm of `phi`.
pub fn density_spectrum_energy(phi: &Field, t_max: f64, dt: f64) -> Result<(f64, f64)> {
    let grid = phi.grid();
    if !(t_max > 0.0 && dt > 0.0) {
        return Err(Error::InvalidInput("t_max and dt must be positive".into()));
    }
    let nodes = simpson_nodes(-t_max, t_max, dt);
    let vals: Vec<f64> = nodes
        .par_iter()
        .map(|&(t, _)| density_spectrum(phi, t).norm_sq())
        .collect();
    let total = nodes.iter().zip(&vals).map(|((_, w), v)| w * v).sum();
    let spec = phi.to_frequency();
    let h1 = (spec
        .values()
        .iter()
        .enumerate()
        .map(|(i, z)| (1.0 + grid.frequency_norm_sq(i)) * z.norm_sqr())
        .sum::<f64>()
        * grid.dual_cell_volume())
    .sqrt();
    Ok((total, h1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn gaussian(grid: &Grid) -> Field {
        Field::from_position_fn(grid, "g", |x| C::new((-0.5 * x[0] * x[0]).exp(), 0.0))
    }

    #[test]
    fn density_spectrum_origin_is_mass() {
        let g = make_grid(1, 256, 32.0).unwrap();
        let phi = ProbeSpec::centered(1, 1.0)
            .with_center(vec![0.3])
            .realize(&g)
            .unwrap();
        let o = g.origin_index();
        let m = phi.norm_sq() / (2.0 * PI).sqrt();
        for &t in &[0.0, 1.0, -3.0, 7.5] {
            let d = density_spectrum(&phi, t);
            assert!((d.values()[o] - m).norm() < 1e-10);
        }
    }

    #[test]
    fn density_spectrum_gaussian_closed_form() {
        let g = make_grid(1, 1024, 128.0).unwrap();
        let phi = gaussian(&g);
        for &t in &[0.0, 1.5, 4.0] {
            let d = density_spectrum(&phi, t);
            let err = d
                .values()
                .iter()
                .enumerate()
                .map(|(i, z)| {
                    let xi = g.frequency(i)[0];
                    (z - 2f64.powf(-0.5) * (-(1.0 + t * t) * xi * xi / 4.0).exp()).norm()
                })
                .fold(0.0, f64::max);
            assert!(err < 1e-6, "t = {t}: {err}");
        }
    }

    #[test]
    fn density_spectrum_is_hermitian() {
        let g = make_grid(2, 32, 8.0).unwrap();
        let phi = ProbeSpec::centered(2, 1.5)
            .with_center(vec![0.5, -0.2])
            .realize(&g)
            .unwrap();
        let d = density_spectrum(&phi, 1.3);
        for i in 0..g.len() {
            let k = g.frequency_label(i);
            if let Some(j) = g.frequency_index(&[-k[0], -k[1]]) {
                assert!((d.values()[j] - d.values()[i].conj()).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn pair_spectrum_reduces_and_peaks() {
        let g = make_grid(1, 256, 32.0).unwrap();
        let a = ProbeSpec::centered(1, 0.5)
            .with_center(vec![3.0])
            .realize(&g)
            .unwrap();
        let b = ProbeSpec::centered(1, 0.5)
            .with_center(vec![-2.0])
            .realize(&g)
            .unwrap();
        let same = pair_spectrum(&a, &a, 0.7).unwrap();
        let d = density_spectrum(&a, 0.7);
        assert!(same.sub(&d).unwrap().max_abs() < 1e-15);
        let p = pair_spectrum(&a, &b, 0.7).unwrap();
        let arg = (0..g.len())
            .max_by(|&i, &j| p.values()[i].norm().total_cmp(&p.values()[j].norm()))
            .unwrap();
        assert!((g.frequency(arg)[0] - 5.0).abs() <= g.dual_spacing());
        assert!(p.spectral_mass_outside(&[5.0], 1.0 + 1e-9) <= 1e-10);
        // Plancherel
        let ua = free_pos(&a, 0.7);
        let ub = free_pos(&b, 0.7);
        let direct: f64 = ua
            .iter()
            .zip(&ub)
            .map(|(x, y)| (x * y.conj()).norm_sqr())
            .sum::<f64>()
            * g.spacing();
        assert!((p.norm_sq() - direct).abs() < 1e-12 * direct);
    }

    fn free_pos(f: &Field, t: f64) -> Vec<C> {
        crate::propagator::free_propagate(f, t)
            .unwrap()
            .to_position()
            .into_values()
    }

    #[test]
    fn shells_exclude_origin_and_pair_signs() {
        let g = make_grid(1, 64, 8.0).unwrap();
        let xi = XiGrid::radial_shells(&g, 2.0).unwrap();
        assert!(xi
            .shells
            .iter()
            .all(|s| s.members.len() == 2 && s.radius > 0.0));
        assert!((xi.shells[0].weight - 2.0 * g.dual_spacing()).abs() < 1e-15);
        let g2 = make_grid(2, 16, 8.0).unwrap();
        let xi2 = XiGrid::radial_shells(&g2, 1.0).unwrap();
        assert_eq!(xi2.shells[0].members.len(), 4);
    }

    #[test]
    fn gaussian_g_closed_form_at_lambda_zero() {
        // G(xi, 0) = sqrt(2 pi) e^{-xi^2 / 2} / (2 |xi|)
        let g = make_grid(1, 2048, 256.0).unwrap();
        let phi = gaussian(&g);
        let xi = XiGrid::radial_shells(&g, 3.0).unwrap();
        let quad = TimeQuadrature::Adaptive {
            t0: 4.0,
            dt: Some(0.02),
            tail_tol: 1e-8,
            max_doublings: 3,
        };
        let lam = [0.0];
        let rows = compute_row(&g, std::slice::from_ref(&phi), &xi, &quad, Integrand::G).unwrap();
        let mut checked = 0;
        for (s, (v, ok)) in xi
            .shells
            .iter()
            .zip(rows.values.iter().zip(&rows.converged))
        {
            if s.radius < 0.5 {
                continue;
            }
            assert!(ok);
            let exact = (2.0 * PI).sqrt() * (-s.radius * s.radius / 2.0).exp() / (2.0 * s.radius);
            assert!(
                (v.re - exact).abs() <= 1e-6 * exact,
                "{} {} {}",
                s.radius,
                v.re,
                exact
            );
            checked += 1;
        }
        assert!(checked > 50);
        let _ = lam;
    }

    #[test]
    fn adaptive_quadrature_drops_slow_shells() {
        let g = make_grid(1, 256, 64.0).unwrap();
        let probe = ProbeSpec::centered(1, 1.0);
        let xi = XiGrid::radial_shells(&g, 1.5).unwrap();
        let quad = TimeQuadrature::Adaptive {
            t0: 2.0,
            dt: None,
            tail_tol: 1e-2,
            max_doublings: 4,
        };
        let k = kernel_g(&g, &probe, &[0.0], &xi, &quad).unwrap();
        assert!(!k.dropped_radii.is_empty());
        assert!(k.dropped_radii.iter().all(|&r| r < 1.5));
        assert_eq!(k.cols() + k.dropped_radii.len(), xi.len());
    }

    #[test]
    fn g_scaling_identity_with_matched_windows() {
        // G_T(xi, lambda) = s^{-2n-2} G_{s^2 T}(xi / s, 0), s = lambda + 1
        let g = make_grid(1, 512, 64.0).unwrap();
        let probe = ProbeSpec::centered(1, 1.0);
        let s = 2.0;
        let xi_all = XiGrid::radial_shells(&g, 1.6).unwrap();
        let even: Vec<Vec<Vec<i64>>> = xi_all
            .shells
            .iter()
            .map(|sh| g.frequency_label(sh.members[0])[0].abs())
            .filter(|k| k % 2 == 0)
            .map(|k| vec![vec![k], vec![-k]])
            .collect();
        let half: Vec<Vec<Vec<i64>>> = even
            .iter()
            .map(|n| vec![vec![n[0][0] / 2], vec![-n[0][0] / 2]])
            .collect();
        let xi_l = XiGrid::from_labels(&g, &even).unwrap();
        let xi_0 = XiGrid::from_labels(&g, &half).unwrap();
        let t = 4.0;
        let dt = 0.01;
        let a = kernel_g(
            &g,
            &probe,
            &[s - 1.0],
            &xi_l,
            &TimeQuadrature::Window {
                t_max: t,
                dt: Some(dt),
            },
        )
        .unwrap();
        let b = kernel_g(
            &g,
            &probe,
            &[0.0],
            &xi_0,
            &TimeQuadrature::Window {
                t_max: s * s * t,
                dt: Some(dt * s * s),
            },
        )
        .unwrap();
        for (x, y) in a.entries[0].iter().zip(&b.entries[0]) {
            let scaled = s.powi(-4) * y;
            assert!(
                (x - scaled).abs() <= 1e-6 * scaled.abs().max(1e-12),
                "{x} {scaled}"
            );
        }
    }

    #[test]
    fn closed_form_window_matches_fine_simpson() {
        let g = make_grid(1, 128, 16.0).unwrap();
        let probes = vec![
            ProbeSpec::centered(1, 1.0).with_center(vec![-0.7]),
            ProbeSpec::centered(1, 0.8)
                .with_center(vec![0.9])
                .with_amplitude(0.6),
        ];
        let xi = XiGrid::radial_shells(&g, 3.0).unwrap();
        let lam = [0.0, 0.3];
        let exact = TimeQuadrature::window(3.0);
        let fine = TimeQuadrature::Window {
            t_max: 3.0,
            dt: Some(0.002),
        };
        let pairs = [
            (
                kernel_g(&g, &probes[0], &lam, &xi, &exact).unwrap(),
                kernel_g(&g, &probes[0], &lam, &xi, &fine).unwrap(),
            ),
            (
                kernel_h(&g, &probes, 1, &lam, &xi, &exact).unwrap(),
                kernel_h(&g, &probes, 1, &lam, &xi, &fine).unwrap(),
            ),
            (
                kernel_hf(&g, &probes, 0, &lam, &xi, &exact).unwrap(),
                kernel_hf(&g, &probes, 0, &lam, &xi, &fine).unwrap(),
            ),
        ];
        for (a, b) in &pairs {
            assert!(a.records.iter().all(|r| r.closed_form));
            assert!(b.records.iter().all(|r| !r.closed_form));
            let scale = b.max_abs();
            for (x, y) in a.entries.iter().flatten().zip(b.entries.iter().flatten()) {
                assert!((x - y).abs() <= 1e-9 * scale, "{x} {y}");
            }
        }
        assert!(pairs[2].0.diagonal_residue <= 1e-12);
    }

    #[test]
    fn kernels_with_degenerate_orbitals() {
        let g = make_grid(1, 256, 32.0).unwrap();
        let p = ProbeSpec::centered(1, 1.0);
        let xi = XiGrid::radial_shells(&g, 1.5).unwrap();
        let quad = TimeQuadrature::window(4.0);
        let lam = [0.0, 0.5];
        let kg = kernel_g(&g, &p, &lam, &xi, &quad).unwrap();
        let kh = kernel_h(&g, &[p.clone(), p.clone()], 0, &lam, &xi, &quad).unwrap();
        for (a, b) in kg.entries.iter().flatten().zip(kh.entries.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
        assert!(kg.entries.iter().flatten().all(|&x| x >= 0.0));
        let k1 = kernel_h(&g, &[p.clone()], 0, &lam, &xi, &quad).unwrap();
        assert!(k1.entries.iter().flatten().all(|&x| x == 0.0));
        let hf1 = kernel_hf(&g, &[p], 0, &lam, &xi, &quad).unwrap();
        assert!(hf1.max_abs() <= 1e-12 * kg.max_abs());
        assert!(hf1.diagonal_residue <= 1e-12);
    }

    #[test]
    fn lipschitz_constants_are_finite() {
        let g = make_grid(1, 256, 32.0).unwrap();
        let p = ProbeSpec::centered(1, 1.0);
        let xi = XiGrid::radial_shells(&g, 1.5).unwrap();
        let lam = lambda_grid(0.0, 1.0, 5).unwrap();
        let k = kernel_g(&g, &p, &lam, &xi, &TimeQuadrature::window(4.0)).unwrap();
        let c = k.entry_lipschitz();
        assert!(c.is_finite() && c > 0.0);
        for i in 0..k.rows() {
            for i2 in 0..k.rows() {
                let bound = c * (k.lambda_grid[i] - k.lambda_grid[i2]).abs();
                for (a, b) in k.entries[i].iter().zip(&k.entries[i2]) {
                    assert!((a - b).abs() <= bound * (1.0 + 1e-12) + 1e-15);
                }
            }
        }
    }

    #[test]
    fn forward_map_dimension_and_zero() {
        let g = make_grid(1, 128, 16.0).unwrap();
        let p = ProbeSpec::centered(1, 1.0);
        let xi = XiGrid::radial_shells(&g, 1.0).unwrap();
        let k = kernel_g(&g, &p, &[0.0], &xi, &TimeQuadrature::window(2.0)).unwrap();
        assert_eq!(forward_map(&vec![0.0; k.cols()], &k).unwrap(), vec![0.0]);
        assert!(matches!(forward_map(&[1.0], &k), Err(Error::Dimension(_))));
    }
}
