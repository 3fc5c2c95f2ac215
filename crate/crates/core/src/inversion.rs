//! Singular systems of discretized kernels and regularized reconstruction of `V^`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::kernels::{KernelMatrix, XiGrid};

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
pub const DEFAULT_TAU: f64 = 1.1;

/// Trapezoid weights on a sorted lambda grid; a single node gets weight one.
pub fn lambda_weights(lambdas: &[f64]) -> Vec<f64> {
    let n = lambdas.len();
    if n <= 1 {
        return vec![1.0; n];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 {
                lambdas[i] - lambdas[i - 1]
            } else {
                0.0
            };
            let right = if i + 1 < n {
                lambdas[i + 1] - lambdas[i]
            } else {
                0.0
            };
            0.5 * (left + right)
        })
        .collect()
}

fn wdot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| w * x * y).sum()
}

fn wnorm(a: &[f64], w: &[f64]) -> f64 {
    wdot(a, a, w).sqrt()
}

/// `{mu_n, phi_n, g_n}` of the operator `V^ -> sum_j K[i][j] w_j V^_j` between
/// the weighted spaces `l2(xi, w)` and `l2(lambda, omega)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularSystem {
    pub singular_values: Vec<f64>,
    /// `phi_n` sampled on the xi grid.
    pub right_vectors: Vec<Vec<f64>>,
    /// `g_n` sampled on the lambda grid.
    pub left_vectors: Vec<Vec<f64>>,
    pub numerical_rank: usize,
    pub rank_tol: f64,
    pub xi_weights: Vec<f64>,
    /// Node radii when built from a kernel matrix, empty otherwise.
    #[serde(default)]
    pub xi_radii: Vec<f64>,
    pub lambda_weights: Vec<f64>,
    /// Unweighted kernel rows, kept for residuals.
    pub kernel: Vec<Vec<f64>>,
}

/// Weighted SVD of a kernel matrix.
pub fn singular_system(kernel: &KernelMatrix, rank_tol: f64) -> Result<SingularSystem> {
    let omega = lambda_weights(&kernel.lambda_grid);
    let mut sys = singular_system_raw(&kernel.entries, &kernel.xi_grid.weights(), &omega, rank_tol)?;
    sys.xi_radii = kernel.xi_grid.radii();
    Ok(sys)
}

/// Weighted SVD of explicit rows `K[i][j]` with xi weights `w` and lambda weights `omega`.
pub fn singular_system_raw(
    entries: &[Vec<f64>],
    xi_weights: &[f64],
    lambda_weights: &[f64],
    rank_tol: f64,
) -> Result<SingularSystem> {
    let rows = entries.len();
    let cols = xi_weights.len();
    if rows == 0 || cols == 0 {
        return Err(Error::Dimension("kernel has no rows or columns".into()));
    }
    if lambda_weights.len() != rows || entries.iter().any(|r| r.len() != cols) {
        return Err(Error::Dimension(format!(
            "kernel rows do not match {rows} lambda weights and {cols} xi weights"
        )));
    }
    if xi_weights
        .iter()
        .chain(lambda_weights)
        .any(|w| !(*w > 0.0 && w.is_finite()))
    {
        return Err(Error::InvalidInput(
            "quadrature weights must be positive".into(),
        ));
    }
    if entries.iter().flatten().any(|k| !k.is_finite()) {
        return Err(Error::NonFinite(0.0));
    }
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidInput(format!(
            "rank tolerance {rank_tol} must lie in (0, 1)"
        )));
    }
    let sw: Vec<f64> = xi_weights.iter().map(|w| w.sqrt()).collect();
    let so: Vec<f64> = lambda_weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(rows, cols, |i, j| so[i] * entries[i][j] * sw[j]);
    let (u, s, vt) = svd(&a)?;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&x, &y| s[y].total_cmp(&s[x]).then(x.cmp(&y)));
    let mut singular_values = Vec::with_capacity(order.len());
    let mut right_vectors = Vec::with_capacity(order.len());
    let mut left_vectors = Vec::with_capacity(order.len());
    for &k in &order {
        let mut phi: Vec<f64> = (0..cols).map(|j| vt[(k, j)] / sw[j]).collect();
        let mut g: Vec<f64> = (0..rows).map(|i| u[(i, k)] / so[i]).collect();
        let peak = phi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = phi.iter().find(|x| x.abs() > 1e-8 * peak) {
            if *first < 0.0 {
                phi.iter_mut().for_each(|x| *x = -*x);
                g.iter_mut().for_each(|x| *x = -*x);
            }
        }
        singular_values.push(s[k].max(0.0));
        right_vectors.push(phi);
        left_vectors.push(g);
    }
    let mu1 = singular_values[0];
    let numerical_rank = if mu1 > 0.0 {
        singular_values
            .iter()
            .take_while(|&&m| m / mu1 >= rank_tol)
            .count()
    } else {
        0
    };
    Ok(SingularSystem {
        singular_values,
        right_vectors,
        left_vectors,
        numerical_rank,
        rank_tol,
        xi_weights: xi_weights.to_vec(),
        xi_radii: Vec::new(),
        lambda_weights: lambda_weights.to_vec(),
        kernel: entries.to_vec(),
    })
}

type Factors = (DMatrix<f64>, Vec<f64>, DMatrix<f64>);

fn svd(a: &DMatrix<f64>) -> Result<Factors> {
    let iters = 200 * (a.nrows() + a.ncols());
    if let Some(s) = a.clone().try_svd(true, true, f64::EPSILON, iters) {
        if let (Some(u), Some(vt)) = (s.u, s.v_t) {
            return Ok((u, s.singular_values.iter().copied().collect(), vt));
        }
    }
    // retry on the transpose with an unbounded iteration budget
    let s = a
        .transpose()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Svd("no convergence after retry on the transpose".into()))?;
    match (s.u, s.v_t) {
        (Some(u), Some(vt)) => Ok((
            vt.transpose(),
            s.singular_values.iter().copied().collect(),
            u.transpose(),
        )),
        _ => Err(Error::Svd("singular vectors were not produced".into())),
    }
}

impl SingularSystem {
    pub fn len(&self) -> usize {
        self.singular_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.singular_values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.lambda_weights.len()
    }

    pub fn cols(&self) -> usize {
        self.xi_weights.len()
    }

    /// `(A v)_i = sum_j K[i][j] w_j v_j`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols() {
            return Err(Error::Dimension(format!(
                "{} xi samples, expected {}",
                v.len(),
                self.cols()
            )));
        }
        Ok(self
            .kernel
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&self.xi_weights)
                    .zip(v)
                    .map(|((k, w), x)| k * w * x)
                    .sum()
            })
            .collect())
    }

    /// Weighted adjoint `(A* g)_j = sum_i omega_i K[i][j] g_i`.
    pub fn apply_adjoint(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "{} lambda samples, expected {}",
                g.len(),
                self.rows()
            )));
        }
        let mut out = vec![0.0; self.cols()];
        for ((row, om), gi) in self.kernel.iter().zip(&self.lambda_weights).zip(g) {
            for (o, k) in out.iter_mut().zip(row) {
                *o += om * k * gi;
            }
        }
        Ok(out)
    }

    pub fn xi_norm(&self, v: &[f64]) -> f64 {
        wnorm(v, &self.xi_weights)
    }

    pub fn lambda_norm(&self, p: &[f64]) -> f64 {
        wnorm(p, &self.lambda_weights)
    }

    /// Largest of `|A phi_n - mu_n g_n|` and `|A* g_n - mu_n phi_n|` over all n, weighted norms.
    pub fn pair_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for ((mu, phi), g) in self
            .singular_values
            .iter()
            .zip(&self.right_vectors)
            .zip(&self.left_vectors)
        {
            let ap = self.apply(phi).expect("shapes agree");
            let d: Vec<f64> = ap.iter().zip(g).map(|(a, b)| a - mu * b).collect();
            worst = worst.max(self.lambda_norm(&d));
            let ag = self.apply_adjoint(g).expect("shapes agree");
            let d: Vec<f64> = ag.iter().zip(phi).map(|(a, b)| a - mu * b).collect();
            worst = worst.max(self.xi_norm(&d));
        }
        worst
    }

    /// Largest deviation of the weighted Gram matrices from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = |vs: &[Vec<f64>], w: &[f64]| {
            let mut d: f64 = 0.0;
            for (a, x) in vs.iter().enumerate() {
                for (b, y) in vs.iter().enumerate().skip(a) {
                    let target = if a == b { 1.0 } else { 0.0 };
                    d = d.max((wdot(x, y, w) - target).abs());
                }
            }
            d
        };
        gram(&self.right_vectors, &self.xi_weights)
            .max(gram(&self.left_vectors, &self.lambda_weights))
    }

    /// `sum_n mu_n g_n phi_n^T` in unweighted form, comparable to the kernel rows.
    pub fn synthesize(&self) -> Vec<Vec<f64>> {
        let mut k = vec![vec![0.0; self.cols()]; self.rows()];
        for ((mu, phi), g) in self
            .singular_values
            .iter()
            .zip(&self.right_vectors)
            .zip(&self.left_vectors)
        {
            for (row, gi) in k.iter_mut().zip(g) {
                for (e, pj) in row.iter_mut().zip(phi) {
                    *e += mu * gi * pj;
                }
            }
        }
        k
    }

    /// Orthogonal projection of `v` onto `span{phi_1, ..., phi_k}`.
    pub fn project(&self, v: &[f64], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        for phi in self.right_vectors.iter().take(k) {
            let c = wdot(v, phi, &self.xi_weights);
            out.iter_mut().zip(phi).for_each(|(o, p)| *o += c * p);
        }
        out
    }

    /// Relative weighted error of `estimate` against `truth` after projecting both onto the first `k` modes.
    pub fn range_error(&self, estimate: &[f64], truth: &[f64], k: usize) -> f64 {
        let d: Vec<f64> = estimate.iter().zip(truth).map(|(a, b)| a - b).collect();
        let num = self.xi_norm(&self.project(&d, k));
        let den = self.xi_norm(&self.project(truth, k));
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }
}

/// Picard coefficients of a data vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PicardDiagnostic {
    /// `c_n = <P, g_n>` for every singular triple.
    pub coefficients: Vec<f64>,
    /// `c_n / mu_n` up to the numerical rank.
    pub ratios: Vec<f64>,
    /// Partial sums of `|c_n / mu_n|^2`.
    pub partial_sums: Vec<f64>,
    pub divergence_flag: bool,
    /// `|P - sum_{n <= rank} c_n g_n|`.
    pub null_component: f64,
    pub data_norm: f64,
}

pub fn picard_diagnostic(p: &[f64], sys: &SingularSystem) -> Result<PicardDiagnostic> {
    if p.len() != sys.rows() {
        return Err(Error::Dimension(format!(
            "data has {} samples, expected {}",
            p.len(),
            sys.rows()
        )));
    }
    let coefficients: Vec<f64> = sys
        .left_vectors
        .iter()
        .map(|g| wdot(p, g, &sys.lambda_weights))
        .collect();
    let rank = sys.numerical_rank;
    let ratios: Vec<f64> = (0..rank)
        .map(|n| coefficients[n] / sys.singular_values[n])
        .collect();
    let mut partial_sums = Vec::with_capacity(rank);
    let mut acc = 0.0;
    for r in &ratios {
        acc += r * r;
        partial_sums.push(acc);
    }
    let mut rest = p.to_vec();
    for (c, g) in coefficients.iter().zip(&sys.left_vectors).take(rank) {
        rest.iter_mut().zip(g).for_each(|(r, gi)| *r -= c * gi);
    }
    Ok(PicardDiagnostic {
        divergence_flag: diverges(&partial_sums),
        null_component: sys.lambda_norm(&rest),
        data_norm: sys.lambda_norm(p),
        coefficients,
        ratios,
        partial_sums,
    })
}

/// Growth over the last quartile of partial sums exceeds ten times the growth over the third.
fn diverges(s: &[f64]) -> bool {
    let r = s.len();
    if r < 4 {
        return false;
    }
    let at = |k: usize| if k == 0 { 0.0 } else { s[k - 1] };
    let (q2, q3) = (r / 2, (3 * r) / 4);
    let mid = at(q3) - at(q2);
    let last = at(r) - at(q3);
    last > 10.0 * mid && last > 1e-10 * at(r)
}

/// Regularization rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Regularization {
    /// Truncate after `k` terms; `None` keeps the numerical rank.
    Tsvd {
        k: Option<usize>,
    },
    /// Smallest `k` with residual at most `tau * noise`.
    Discrepancy {
        tau: f64,
        noise: f64,
    },
    Tikhonov {
        alpha: f64,
    },
}

impl std::str::FromStr for Regularization {
    type Err = Error;

    /// `tsvd:k`, `tsvd`, `discrepancy:tau` or `tikhonov:alpha`. The discrepancy noise level is filled in later.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = s.split_once(':').map_or((s, None), |(a, b)| (a, Some(b)));
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::InvalidInput(format!("{name} needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidInput(format!("bad parameter in {s:?}: {e}")))
        };
        match name {
            "tsvd" => Ok(Self::Tsvd {
                k: match arg {
                    None => None,
                    Some(a) => Some(
                        a.parse()
                            .map_err(|e| Error::InvalidInput(format!("bad k in {s:?}: {e}")))?,
                    ),
                },
            }),
            "discrepancy" => Ok(Self::Discrepancy {
                tau: arg.map_or(Ok(DEFAULT_TAU), |a| num(Some(a)))?,
                noise: 0.0,
            }),
            "tikhonov" => Ok(Self::Tikhonov { alpha: num(arg)? }),
            _ => Err(Error::InvalidInput(format!("unknown regularization {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tsvd,
    Tikhonov,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub v_hat: Vec<f64>,
    pub xi_radii: Vec<f64>,
    pub truncation_index: usize,
    pub picard_coefficients: Vec<f64>,
    pub residual: f64,
    pub method: Method,
    pub regularization: Regularization,
    pub rank_tol: f64,
    pub numerical_rank: usize,
    pub picard_divergence_flag: bool,
    pub null_component: f64,
    /// False when the discrepancy rule could not reach its target within the numerical rank.
    pub discrepancy_met: bool,
    /// `|A V^_k - P|` for `k = 0..=rank`.
    pub residual_curve: Vec<f64>,
}

pub fn reconstruct(
    p: &[f64],
    sys: &SingularSystem,
    reg: Regularization,
) -> Result<ReconstructionResult> {
    let diag = picard_diagnostic(p, sys)?;
    let rank = sys.numerical_rank;
    if rank == 0 {
        return Err(Error::EmptySpectrum);
    }
    let mut residual_curve = Vec::with_capacity(rank + 1);
    let mut r2 = diag.data_norm * diag.data_norm;
    residual_curve.push(r2.max(0.0).sqrt());
    for c in diag.coefficients.iter().take(rank) {
        r2 -= c * c;
        residual_curve.push(r2.max(0.0).sqrt());
    }
    // enforce the exact monotonicity lost to roundoff in the running subtraction
    for k in 1..residual_curve.len() {
        residual_curve[k] = residual_curve[k].min(residual_curve[k - 1]);
    }

    let mut discrepancy_met = true;
    let (method, filter): (Method, Vec<f64>) = match reg {
        Regularization::Tsvd { k } => {
            let k = k.unwrap_or(rank);
            if k > rank {
                return Err(Error::InvalidInput(format!(
                    "truncation {k} exceeds numerical rank {rank}"
                )));
            }
            (
                Method::Tsvd,
                (0..rank).map(|n| if n < k { 1.0 } else { 0.0 }).collect(),
            )
        }
        Regularization::Discrepancy { tau, noise } => {
            if !(tau >= 1.0 && noise >= 0.0 && noise.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "discrepancy needs tau >= 1 and noise >= 0, got {tau}, {noise}"
                )));
            }
            let target = tau * noise;
            let k = residual_curve
                .iter()
                .position(|&r| r <= target)
                .unwrap_or_else(|| {
                    discrepancy_met = false;
                    rank
                });
            (
                Method::Tsvd,
                (0..rank).map(|n| if n < k { 1.0 } else { 0.0 }).collect(),
            )
        }
        Regularization::Tikhonov { alpha } => {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "tikhonov alpha {alpha} must be non-negative"
                )));
            }
            let f = sys.singular_values[..rank]
                .iter()
                .map(|m| m * m / (m * m + alpha))
                .collect();
            (Method::Tikhonov, f)
        }
    };
    let truncation_index = match method {
        Method::Tsvd => filter.iter().filter(|&&f| f > 0.0).count(),
        Method::Tikhonov => rank,
    };
    let mut v_hat = vec![0.0; sys.cols()];
    for n in 0..rank {
        if filter[n] == 0.0 {
            continue;
        }
        let a = filter[n] * diag.ratios[n];
        v_hat
            .iter_mut()
            .zip(&sys.right_vectors[n])
            .for_each(|(v, phi)| *v += a * phi);
    }
    let fit = sys.apply(&v_hat)?;
    let res: Vec<f64> = fit.iter().zip(p).map(|(a, b)| a - b).collect();
    let residual = sys.lambda_norm(&res);
    if !residual.is_finite() {
        return Err(Error::NonFinite(0.0));
    }
    Ok(ReconstructionResult {
        v_hat,
        xi_radii: sys.xi_radii.clone(),
        truncation_index,
        picard_coefficients: diag.ratios,
        residual,
        method,
        regularization: reg,
        rank_tol: sys.rank_tol,
        numerical_rank: rank,
        picard_divergence_flag: diag.divergence_flag,
        null_component: diag.null_component,
        discrepancy_met,
        residual_curve,
    })
}

/// Additive Gaussian noise with standard deviation `level * max|P|`, reproducible from `seed`.
pub fn seeded_noise(p: &[f64], level: f64, seed: u64) -> Vec<f64> {
    let scale = level * p.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    p.iter().map(|_| scale * normal.sample(&mut rng)).collect()
}

/// Leading modes before the first Picard ratio that exceeds every earlier one, capped at `k_max`.
pub fn decaying_band(diag: &PicardDiagnostic, k_max: usize) -> usize {
    let mut peak: f64 = 0.0;
    for (n, r) in diag.ratios.iter().enumerate().take(k_max) {
        if n > 0 && r.abs() > peak {
            return n;
        }
        peak = peak.max(r.abs());
    }
    k_max.min(diag.ratios.len())
}

/// Weighted norm of a noise vector on the lambda grid, the discrepancy target.
pub fn noise_level(noise: &[f64], lambdas: &[f64]) -> f64 {
    wnorm(noise, &lambda_weights(lambdas))
}

/// Potential recovered from radial `V^` samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialEstimate {
    /// Real potential on the position lattice.
    pub values: Vec<f64>,
    /// Non-negative positions along the first axis.
    pub radii: Vec<f64>,
    pub profile: Vec<f64>,
    /// Extrapolated `V^(0)`.
    pub origin_value: f64,
}

/// Spread radial `V^` over the frequency lattice and inverse transform.
///
/// Lattice points on a node take its value, other points inside the outermost
/// node interpolate linearly in `|xi|`, points outside are zero and the origin
/// is an even polynomial extrapolation from the innermost nodes.
pub fn fourier_to_potential(grid: &Grid, xi: &XiGrid, v_hat: &[f64]) -> Result<PotentialEstimate> {
    if v_hat.len() != xi.len() || xi.is_empty() {
        return Err(Error::Dimension(format!(
            "{} samples for {} xi nodes",
            v_hat.len(),
            xi.len()
        )));
    }
    if v_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(0.0));
    }
    let mut nodes: Vec<(f64, f64)> = xi.radii().into_iter().zip(v_hat.iter().copied()).collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let origin_value = even_extrapolate(&nodes);
    let r_max = nodes.last().map(|n| n.0).unwrap_or(0.0);
    let interp = |r: f64| -> f64 {
        if r > r_max * (1.0 + 1e-12) {
            return 0.0;
        }
        let i = nodes.partition_point(|n| n.0 < r);
        if i < nodes.len() && (nodes[i].0 - r).abs() <= 1e-12 * r.max(1.0) {
            return nodes[i].1;
        }
        let (r0, v0) = if i == 0 {
            (0.0, origin_value)
        } else {
            nodes[i - 1]
        };
        let (r1, v1) = nodes[i.min(nodes.len() - 1)];
        if r1 <= r0 {
            return v1;
        }
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    };
    let mut data = vec![C::new(0.0, 0.0); grid.len()];
    for (i, d) in data.iter_mut().enumerate() {
        *d = C::new(interp(grid.frequency_norm_sq(i).sqrt()), 0.0);
    }
    for (s, &v) in xi.shells.iter().zip(v_hat) {
        for &m in &s.members {
            data[m] = C::new(v, 0.0);
        }
    }
    data[grid.origin_index()] = C::new(origin_value, 0.0);
    grid.inverse_in_place(&mut data);
    let peak = data.iter().fold(0.0f64, |m, z| m.max(z.re.abs()));
    let imag = data.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    if imag > 1e-10 * peak.max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!(
            "V^ is not real and even: imaginary residue {imag:.3e}"
        )));
    }
    let values: Vec<f64> = data.iter().map(|z| z.re).collect();
    let m = grid.points_per_axis();
    let center = [m / 2; 3];
    let mut radii = Vec::new();
    let mut profile = Vec::new();
    for k in m / 2..m {
        let mut idx = center;
        idx[0] = k;
        radii.push(grid.axis_positions()[k]);
        profile.push(values[grid.flatten(&idx[..grid.dim()])]);
    }
    Ok(PotentialEstimate {
        values,
        radii,
        profile,
        origin_value,
    })
}

/// Polynomial in `r^2` through up to four innermost nodes, evaluated at zero.
fn even_extrapolate(nodes: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = nodes.iter().take(4).map(|&(r, v)| (r * r, v)).collect();
    let mut total = 0.0;
    for (i, &(xi, vi)) in pts.iter().enumerate() {
        let mut l = 1.0;
        for (j, &(xj, _)) in pts.iter().enumerate() {
            if i != j {
                l *= (0.0 - xj) / (xi - xj);
            }
        }
        total += vi * l;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::potential::PotentialSpec;
    use rand::Rng;

    fn diag_system(d: &[f64]) -> SingularSystem {
        let k: Vec<Vec<f64>> = (0..d.len())
            .map(|i| {
                (0..d.len())
                    .map(|j| if i == j { d[i] } else { 0.0 })
                    .collect()
            })
            .collect();
        singular_system_raw(
            &k,
            &vec![1.0; d.len()],
            &vec![1.0; d.len()],
            DEFAULT_RANK_TOL,
        )
        .unwrap()
    }

    #[test]
    fn diagonal_kernel() {
        let s = diag_system(&[2.0, 3.0, 1.0]);
        assert_eq!(s.singular_values, vec![3.0, 2.0, 1.0]);
        assert_eq!(s.right_vectors[0], vec![0.0, 1.0, 0.0]);
        assert_eq!(s.right_vectors[1], vec![1.0, 0.0, 0.0]);
        assert_eq!(s.numerical_rank, 3);
    }

    #[test]
    fn rank_one_kernel() {
        let u = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4, 2.0];
        let w = [0.5, 1.0, 2.0, 0.25];
        let om = [1.0, 0.5, 2.0];
        let k: Vec<Vec<f64>> = u
            .iter()
            .map(|a| v.iter().map(|b| a * b).collect())
            .collect();
        let s = singular_system_raw(&k, &w, &om, DEFAULT_RANK_TOL).unwrap();
        // A v' = u <v, v'>_w, so mu = |u|_omega |v|_w
        let want = wnorm(&u, &om) * wnorm(&v, &w);
        assert!((s.singular_values[0] - want).abs() < 1e-12 * want);
        assert_eq!(s.numerical_rank, 1);
    }

    #[test]
    fn random_kernel_is_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k: Vec<Vec<f64>> = (0..33)
            .map(|_| (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<f64> = (0..64).map(|_| rng.gen_range(0.1..2.0)).collect();
        let om = lambda_weights(&(0..33).map(|i| i as f64 / 32.0).collect::<Vec<_>>());
        let s = singular_system_raw(&k, &w, &om, DEFAULT_RANK_TOL).unwrap();
        let back = s.synthesize();
        let (mut num, mut den) = (0.0, 0.0);
        for (a, b) in back.iter().flatten().zip(k.iter().flatten()) {
            num += (a - b) * (a - b);
            den += b * b;
        }
        assert!((num / den).sqrt() < 1e-10);
        assert!(s.orthonormality_defect() < 1e-10);
        assert!(s.pair_residual() < 1e-10 * s.singular_values[0]);
        assert!(s.singular_values.windows(2).all(|p| p[0] >= p[1]));
    }

    #[test]
    fn picard_of_leading_mode() {
        let s = diag_system(&[3.0, 2.0, 1.0, 0.5, 0.25]);
        let p: Vec<f64> = s.left_vectors[0].iter().map(|g| 3.0 * g).collect();
        let d = picard_diagnostic(&p, &s).unwrap();
        assert!((d.coefficients[0] - 3.0).abs() < 1e-15);
        assert!(d.coefficients[1..].iter().all(|c| c.abs() < 1e-15));
        assert!(!d.divergence_flag);
        assert!(d.null_component < 1e-15);
    }

    #[test]
    fn component_beyond_rank_is_reported() {
        let mut d: Vec<f64> = (0..12).map(|i| 0.5f64.powi(i)).collect();
        d.extend([1e-13, 1e-14]);
        let s = diag_system(&d);
        assert_eq!(s.numerical_rank, 12);
        let p = s.left_vectors[13].clone();
        let diag = picard_diagnostic(&p, &s).unwrap();
        assert!((diag.null_component - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_stops_at_first_new_peak() {
        let d = PicardDiagnostic {
            coefficients: vec![],
            ratios: vec![0.5, -0.1, 0.2, 0.4, 0.6, 0.1],
            partial_sums: vec![],
            divergence_flag: false,
            null_component: 0.0,
            data_norm: 0.0,
        };
        assert_eq!(decaying_band(&d, 6), 4);
        assert_eq!(decaying_band(&d, 2), 2);
    }

    #[test]
    fn noise_is_seeded_and_scaled() {
        let p = vec![1.0, -4.0, 2.0];
        let a = seeded_noise(&p, 0.01, 7);
        assert_eq!(a, seeded_noise(&p, 0.01, 7));
        assert_ne!(a, seeded_noise(&p, 0.01, 8));
        assert!(a.iter().all(|x| x.abs() < 0.04 * 6.0));
    }

    #[test]
    fn zero_data_gives_zero() {
        let s = diag_system(&[3.0, 2.0, 1.0]);
        let r = reconstruct(&[0.0; 3], &s, Regularization::Tsvd { k: None }).unwrap();
        assert!(r.v_hat.iter().all(|&v| v == 0.0));
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn empty_spectrum_is_an_error() {
        let s = diag_system(&[0.0, 0.0]);
        assert!(matches!(
            reconstruct(&[1.0, 1.0], &s, Regularization::Tsvd { k: None }),
            Err(Error::EmptySpectrum)
        ));
    }

    #[test]
    fn parses_regularization() {
        assert_eq!(
            "tsvd:4".parse::<Regularization>().unwrap(),
            Regularization::Tsvd { k: Some(4) }
        );
        assert_eq!(
            "discrepancy:1.2".parse::<Regularization>().unwrap(),
            Regularization::Discrepancy {
                tau: 1.2,
                noise: 0.0
            }
        );
        assert_eq!(
            "tikhonov:1e-6".parse::<Regularization>().unwrap(),
            Regularization::Tikhonov { alpha: 1e-6 }
        );
        assert!("landweber:3".parse::<Regularization>().is_err());
    }

    #[test]
    fn gaussian_hat_inverts_to_gaussian() {
        let g = make_grid(1, 1024, 64.0).unwrap();
        let xi = XiGrid::radial_shells(&g, 16.0).unwrap();
        let v_hat = xi.sample_radial(|r| (-0.5 * r * r).exp());
        let est = fourier_to_potential(&g, &xi, &v_hat).unwrap();
        for (i, &v) in est.values.iter().enumerate() {
            let x = g.position(i)[0];
            assert!((v - (-0.5 * x * x).exp()).abs() < 1e-6, "{x}");
        }
        assert!((est.origin_value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_hat_gives_zero_potential() {
        let g = make_grid(2, 32, 8.0).unwrap();
        let xi = XiGrid::radial_shells(&g, 3.0).unwrap();
        let est = fourier_to_potential(&g, &xi, &vec![0.0; xi.len()]).unwrap();
        assert!(est.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn potential_round_trip() {
        let g = make_grid(1, 1024, 64.0).unwrap();
        let spec = PotentialSpec::gaussian(1.0, 1.0, 8.0, 4.0);
        let pot = spec.realize(&g).unwrap();
        let xi = XiGrid::radial_shells(&g, f64::INFINITY.min(g.nyquist() * 2.0)).unwrap();
        let est = fourier_to_potential(&g, &xi, &xi.sample(pot.hat())).unwrap();
        let err = est
            .values
            .iter()
            .zip(pot.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        // even by construction
        let m = g.points_per_axis();
        for k in 1..m / 2 {
            assert!((est.values[m / 2 + k] - est.values[m / 2 - k]).abs() < 1e-14);
        }
    }
}
