//! Disjoint-band probe families, the density and pair spectrum support
//! checks, and localization windows that detect `V^_1 != V^_2`.

use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, ProbeSpec};
use crate::kernels::{density_spectrum, pair_spectrum};

/// Default number of time samples.
pub const DEFAULT_T_SAMPLES: usize = 65;

/// Relative size below which a spectral product counts as zero.
const ZERO_PRODUCT: f64 = 1e-14;

/// Relative slack on the `2 eps` separations of a window layout.
const LAYOUT_MARGIN: f64 = 1.1;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn padded(v: &[f64], dim: usize) -> Vec<f64> {
    (0..dim).map(|a| v.get(a).copied().unwrap_or(0.0)).collect()
}

/// Probes of band radius `eps` centered at `centers`, with pairwise disjoint spectral supports.
pub fn build_disjoint_probes(grid: &Grid, eps: f64, centers: &[Vec<f64>]) -> Result<Vec<ProbeSpec>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("band radius {eps} must be positive")));
    }
    if centers.is_empty() {
        return Err(Error::InvalidInput("at least one probe center is required".into()));
    }
    let dim = grid.dim();
    let centers: Vec<Vec<f64>> = centers
        .iter()
        .map(|c| {
            if c.len() > dim {
                Err(Error::Dimension(format!("center {c:?} exceeds dimension {dim}")))
            } else {
                Ok(padded(c, dim))
            }
        })
        .collect::<Result<_>>()?;
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            let d = dist(&centers[a], &centers[b]);
            if d <= 2.0 * eps {
                return Err(Error::Geometry(format!(
                    "bands around {:?} and {:?} overlap: separation {d:.4} <= 2 eps = {:.4}",
                    centers[a],
                    centers[b],
                    2.0 * eps
                )));
            }
        }
    }
    let probes: Vec<ProbeSpec> =
        centers.into_iter().map(|c| ProbeSpec::centered(dim, eps).with_center(c)).collect();
    let spectra: Vec<Field> =
        probes.iter().map(|p| p.realize(grid).map(|f| f.to_frequency())).collect::<Result<_>>()?;
    let peak = spectra.iter().map(|s| s.max_abs()).fold(0.0, f64::max);
    for a in 0..spectra.len() {
        for b in a + 1..spectra.len() {
            let overlap = spectra[a]
                .values()
                .iter()
                .zip(spectra[b].values())
                .map(|(x, y)| (x * y.conj()).norm())
                .fold(0.0, f64::max);
            if overlap > ZERO_PRODUCT * peak * peak {
                return Err(Error::Geometry(format!(
                    "lattice spectra of probes {a} and {b} overlap ({overlap:.3e})"
                )));
            }
        }
    }
    Ok(probes)
}

/// `n` equispaced samples of `[-t_max, t_max]`.
pub fn time_samples(t_max: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    (0..n).map(|i| -t_max + 2.0 * t_max * i as f64 / (n - 1) as f64).collect()
}

/// Composite Simpson nodes and weights on `[-t_max, t_max]` with `n` (odd) nodes.
fn simpson(t_max: f64, n: usize) -> Vec<(f64, f64)> {
    let n = if n % 2 == 0 { n + 1 } else { n.max(3) };
    let h = 2.0 * t_max / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (-t_max + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

/// Largest product of density spectra of distinct probes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct G1Report {
    /// `max |F(|U0 phi_k|^2) conj F(|U0 phi_j|^2)| / (|phi_k| |phi_j|)^2` over `k != j`.
    pub max_defect: f64,
    pub worst_pair: (usize, usize),
    pub worst_time: f64,
    pub worst_frequency: Vec<f64>,
    /// The same quantity for `F((U0 phi)^2)`, whose supports are the balls `B_{2 eps}(2 p_k)`.
    pub unconjugated_defect: f64,
}

pub fn verify_g1_orthogonality(probes: &[Field], t_samples: &[f64]) -> Result<G1Report> {
    if probes.len() < 2 {
        return Err(Error::InvalidInput("orthogonality needs at least two probes".into()));
    }
    let grid = probes[0].grid().clone();
    for p in probes {
        grid.ensure_same(p.grid(), "density orthogonality")?;
    }
    let norms: Vec<f64> = probes.iter().map(|p| p.norm_sq()).collect();
    let per_time: Vec<(f64, (usize, usize), usize, f64)> = t_samples
        .par_iter()
        .map(|&t| {
            let dens: Vec<Field> = probes.iter().map(|p| density_spectrum(p, t)).collect();
            let squares: Vec<Vec<C>> = probes.iter().map(|p| square_spectrum(p, t)).collect();
            let mut best = (0.0, (0, 1), 0usize, 0.0);
            for k in 0..probes.len() {
                for j in 0..probes.len() {
                    if k == j {
                        continue;
                    }
                    let scale = norms[k] * norms[j];
                    for (i, (a, b)) in dens[k].values().iter().zip(dens[j].values()).enumerate() {
                        let d = (a * b.conj()).norm() / scale;
                        if d > best.0 {
                            best = (d, (k, j), i, best.3);
                        }
                    }
                    let u = squares[k]
                        .iter()
                        .zip(&squares[j])
                        .map(|(a, b)| (a * b.conj()).norm() / scale)
                        .fold(0.0, f64::max);
                    best.3 = f64::max(best.3, u);
                }
            }
            best
        })
        .collect();
    let mut report = G1Report {
        max_defect: 0.0,
        worst_pair: (0, 1),
        worst_time: t_samples.first().copied().unwrap_or(0.0),
        worst_frequency: vec![0.0; grid.dim()],
        unconjugated_defect: 0.0,
    };
    for (&t, (d, pair, i, u)) in t_samples.iter().zip(per_time) {
        report.unconjugated_defect = report.unconjugated_defect.max(u);
        if d > report.max_defect {
            report.max_defect = d;
            report.worst_pair = pair;
            report.worst_time = t;
            report.worst_frequency = grid.frequency(i)[..grid.dim()].to_vec();
        }
    }
    Ok(report)
}

/// `F((U0(t) phi)^2)`.
fn square_spectrum(phi: &Field, t: f64) -> Vec<C> {
    let grid = phi.grid();
    let mut s = phi.to_frequency().into_values();
    if t != 0.0 {
        crate::propagator::PropagationPlan::new(grid, t).apply_spectrum(&mut s);
    }
    grid.inverse_in_place(&mut s);
    let mut sq: Vec<C> = s.iter().map(|z| z * z).collect();
    grid.forward_in_place(&mut sq);
    sq
}

/// Spectral mass of `F(U0 phi_j conj(U0 phi_k))` outside candidate balls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct G2Report {
    /// `p_j - p_k`, the center the conjugated factor produces.
    pub center: Vec<f64>,
    pub radius: f64,
    /// Worst outside-mass fraction over the time samples for `B_radius(center)`.
    pub outside_fraction: f64,
    /// The same for the ball around `p_j + p_k`.
    pub outside_fraction_sum_center: f64,
}

pub fn verify_g2_support(
    grid: &Grid,
    probe_j: &ProbeSpec,
    probe_k: &ProbeSpec,
    t_samples: &[f64],
) -> Result<G2Report> {
    if (probe_j.band_radius - probe_k.band_radius).abs() > 1e-12 * probe_j.band_radius {
        return Err(Error::InvalidInput("both probes must share the band radius".into()));
    }
    let dim = grid.dim();
    let pj = padded(&probe_j.center, dim);
    let pk = padded(&probe_k.center, dim);
    let fj = probe_j.realize(grid)?;
    let fk = probe_k.realize(grid)?;
    let radius = 2.0 * probe_j.band_radius;
    let diff: Vec<f64> = pj.iter().zip(&pk).map(|(a, b)| a - b).collect();
    let sum: Vec<f64> = pj.iter().zip(&pk).map(|(a, b)| a + b).collect();
    let rows: Vec<(f64, f64)> = t_samples
        .par_iter()
        .map(|&t| {
            let p = pair_spectrum(&fj, &fk, t)?;
            Ok((p.spectral_mass_outside(&diff, radius), p.spectral_mass_outside(&sum, radius)))
        })
        .collect::<Result<_>>()?;
    Ok(G2Report {
        center: diff,
        radius,
        outside_fraction: rows.iter().map(|r| r.0).fold(0.0, f64::max),
        outside_fraction_sum_center: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// Geometry of a localization window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    /// Number of orbitals.
    pub orbitals: usize,
    /// Index of the fixed orbital.
    pub j: usize,
    pub eps: f64,
    pub delta: f64,
    /// Center of the fixed orbital's band.
    #[serde(default)]
    pub anchor: Vec<f64>,
    pub t_max: f64,
    #[serde(default = "default_t_samples")]
    pub t_samples: usize,
}

fn default_t_samples() -> usize {
    DEFAULT_T_SAMPLES
}

/// `W(xi) = sum_{k != j} int |F(U0 phi_k conj(U0 phi_j))(xi)|^2 dt` over the frequency lattice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationWindow {
    pub target: Vec<f64>,
    pub delta: f64,
    pub probes: Vec<ProbeSpec>,
    /// Window values on the centered frequency lattice.
    pub values: Vec<f64>,
    /// Fraction of `sum W` inside `B_delta(target)`.
    pub inside_fraction: f64,
    /// `sum W dxi^n`.
    pub l1: f64,
}

/// Band centers placing every `B_{2 eps}(p_k - p_j)` inside `B_delta(target)`.
fn layout(grid: &Grid, spec: &WindowSpec, target: &[f64]) -> Result<Vec<Vec<f64>>> {
    let dim = grid.dim();
    let eps = spec.eps;
    if spec.orbitals < 2 || spec.j >= spec.orbitals {
        return Err(Error::InvalidInput(format!(
            "need at least two orbitals and j < N, got N = {}, j = {}",
            spec.orbitals, spec.j
        )));
    }
    if !(spec.delta > 4.0 * eps) {
        return Err(Error::Geometry(format!(
            "delta {} must exceed 4 eps = {}",
            spec.delta,
            4.0 * eps
        )));
    }
    let anchor = padded(&spec.anchor, dim);
    let target = padded(target, dim);
    // offsets d = p_k - p_j along the first axis through the target
    let gap = 2.0 * eps * LAYOUT_MARGIN;
    let reach = spec.delta - gap;
    let fine = eps / 16.0;
    let span = (reach / fine).floor() as i64;
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in -span..=span {
        let mut d = target.clone();
        d[0] += i as f64 * fine;
        if dist(&d, &target) < reach && d.iter().map(|x| x * x).sum::<f64>().sqrt() >= gap {
            candidates.push(d);
        }
    }
    // offsets touching the excluded ball around the anchor
    for edge in [-gap, gap] {
        let mut d = vec![0.0; dim];
        d[0] = edge;
        if dist(&d, &target) < reach {
            candidates.push(d);
        }
    }
    candidates.sort_by(|a, b| dist(a, &target).total_cmp(&dist(b, &target)));
    let need = spec.orbitals - 1;
    let mut chosen: Vec<Vec<f64>> = Vec::new();
    for c in candidates {
        if chosen.iter().all(|o| dist(o, &c) >= gap) {
            chosen.push(c);
        }
        if chosen.len() == need {
            break;
        }
    }
    if chosen.len() < need {
        return Err(Error::Geometry(format!(
            "cannot place {need} bands with 2 eps = {} separation inside B_{}({target:?})",
            2.0 * eps,
            spec.delta
        )));
    }
    chosen.sort_by(|a, b| a[0].total_cmp(&b[0]));
    let mut centers = Vec::with_capacity(spec.orbitals);
    let mut others = chosen.into_iter().map(|d| d.iter().zip(&anchor).map(|(a, b)| a + b).collect());
    for k in 0..spec.orbitals {
        centers.push(if k == spec.j { anchor.clone() } else { others.next().expect("placed") });
    }
    for c in &centers {
        let r = c.iter().map(|x| x * x).sum::<f64>().sqrt() + eps;
        if r >= grid.nyquist() {
            return Err(Error::Geometry(format!(
                "band around {c:?} reaches {r:.4}, beyond nyquist {:.4}",
                grid.nyquist()
            )));
        }
    }
    Ok(centers)
}

pub fn localization_window(grid: &Grid, spec: &WindowSpec, target: &[f64]) -> Result<LocalizationWindow> {
    if !(spec.t_max > 0.0) {
        return Err(Error::InvalidInput("window time must be positive".into()));
    }
    let centers = layout(grid, spec, target)?;
    let probes = build_disjoint_probes(grid, spec.eps, &centers)?;
    let fields: Vec<Field> = probes.iter().map(|p| p.realize(grid)).collect::<Result<_>>()?;
    let nodes = simpson(spec.t_max, spec.t_samples);
    let j = spec.j;
    let parts: Vec<Vec<f64>> = nodes
        .par_iter()
        .map(|&(t, w)| {
            let mut acc = vec![0.0; grid.len()];
            for (k, f) in fields.iter().enumerate() {
                if k == j {
                    continue;
                }
                let p = pair_spectrum(f, &fields[j], t)?;
                for (a, z) in acc.iter_mut().zip(p.values()) {
                    *a += w * z.norm_sqr();
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; grid.len()];
    for p in parts {
        values.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let target = padded(target, grid.dim());
    let mut inside = 0.0;
    let mut total = 0.0;
    for (i, &v) in values.iter().enumerate() {
        total += v;
        if dist(&grid.frequency(i)[..grid.dim()], &target) < spec.delta {
            inside += v;
        }
    }
    Ok(LocalizationWindow {
        target,
        delta: spec.delta,
        probes,
        inside_fraction: if total > 0.0 { inside / total } else { 0.0 },
        l1: total * grid.dual_cell_volume(),
        values,
    })
}

/// One target ball of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallRecord {
    pub center: Vec<f64>,
    /// `int (V^_1 - V^_2) W dxi`.
    pub integral: f64,
    pub window_l1: f64,
}

impl BallRecord {
    /// Window-weighted mean of `V^_1 - V^_2`.
    pub fn normalized(&self) -> f64 {
        if self.window_l1 > 0.0 {
            self.integral / self.window_l1
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    IdenticalWithinTol,
    DistinguishedAt { center: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistinguishReport {
    pub verdict: Verdict,
    pub tol: f64,
    pub balls: Vec<BallRecord>,
}

/// Target ball centers on a cubic lattice of spacing `step` covering `|p|_inf <= radius`.
pub fn ball_sweep(dim: usize, radius: f64, step: f64) -> Vec<Vec<f64>> {
    let n = (radius / step).floor() as i64;
    let axis: Vec<f64> = (-n..=n).map(|i| i as f64 * step).collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    out
}

/// Compare two transforms on the centered lattice through localization windows.
///
/// The verdict names the ball with the largest window-weighted mean of
/// `|V^_1 - V^_2|`, provided it exceeds `tol`.
pub fn distinguish(
    grid: &Grid,
    v1_hat: &[f64],
    v2_hat: &[f64],
    spec: &WindowSpec,
    targets: &[Vec<f64>],
    tol: f64,
) -> Result<DistinguishReport> {
    if v1_hat.len() != grid.len() || v2_hat.len() != grid.len() {
        return Err(Error::Dimension("transforms must cover the frequency lattice".into()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidInput("no target balls".into()));
    }
    let w: Vec<f64> = v1_hat.iter().zip(v2_hat).map(|(a, b)| a - b).collect();
    let cell = grid.dual_cell_volume();
    let balls: Vec<BallRecord> = targets
        .par_iter()
        .map(|p| {
            let win = localization_window(grid, spec, p)?;
            let integral = win.values.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() * cell;
            Ok(BallRecord {
                center: win.target,
                integral,
                window_l1: win.l1,
            })
        })
        .collect::<Result<_>>()?;
    let best = balls
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.normalized().abs().total_cmp(&b.1.normalized().abs()).then(b.0.cmp(&a.0)))
        .map(|(_, b)| b)
        .expect("non-empty");
    let verdict = if best.normalized().abs() > tol {
        Verdict::DistinguishedAt {
            center: best.center.clone(),
        }
    } else {
        Verdict::IdenticalWithinTol
    };
    Ok(DistinguishReport { verdict, tol, balls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::potential::PotentialSpec;

    fn grid() -> Grid {
        make_grid(1, 256, 32.0).unwrap()
    }

    #[test]
    fn disjoint_pair_has_zero_spectral_product() {
        let g = grid();
        let p = build_disjoint_probes(&g, 1.0, &[vec![3.0], vec![-3.0]]).unwrap();
        let a = p[0].realize(&g).unwrap().to_frequency();
        let b = p[1].realize(&g).unwrap().to_frequency();
        let m = a.values().iter().zip(b.values()).map(|(x, y)| (x * y).norm()).fold(0.0, f64::max);
        assert!(m < 1e-14 * a.max_abs() * b.max_abs());
    }

    #[test]
    fn collinear_triple_is_valid_and_tight_spacing_rejected() {
        let g = grid();
        assert_eq!(build_disjoint_probes(&g, 0.5, &[vec![-2.0], vec![0.0], vec![2.0]]).unwrap().len(), 3);
        assert!(matches!(
            build_disjoint_probes(&g, 1.0, &[vec![0.0], vec![1.5]]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn identical_probes_have_positive_product_at_origin() {
        let g = grid();
        let f = ProbeSpec::centered(1, 1.0).realize(&g).unwrap();
        let r = verify_g1_orthogonality(&[f.clone(), f], &[0.0, 1.0]).unwrap();
        assert!(r.max_defect > 0.1 / (2.0 * std::f64::consts::PI));
        assert_eq!(r.worst_frequency, vec![0.0]);
    }

    #[test]
    fn unconjugated_squares_of_disjoint_probes_are_orthogonal() {
        let g = grid();
        let p = build_disjoint_probes(&g, 0.5, &[vec![2.0], vec![-2.0]]).unwrap();
        let f: Vec<Field> = p.iter().map(|q| q.realize(&g).unwrap()).collect();
        let r = verify_g1_orthogonality(&f, &time_samples(4.0, 9)).unwrap();
        assert!(r.unconjugated_defect < 1e-14);
        // densities of both probes share the ball B_{2 eps}(0)
        assert!(r.max_defect > 1e-3);
    }

    #[test]
    fn pair_spectrum_support_is_centered_at_difference() {
        let g = grid();
        let a = ProbeSpec::centered(1, 1.0).with_center(vec![3.0]);
        let b = ProbeSpec::centered(1, 1.0).with_center(vec![-3.0]);
        let r = verify_g2_support(&g, &a, &b, &time_samples(4.0, 9)).unwrap();
        assert_eq!(r.center, vec![6.0]);
        assert!(r.outside_fraction <= 1e-10);
        assert!(r.outside_fraction_sum_center > 0.99);
        let same = verify_g2_support(&g, &ProbeSpec::centered(1, 1.0), &ProbeSpec::centered(1, 1.0), &[0.0, 2.0]).unwrap();
        assert!(same.outside_fraction <= 1e-10);
    }

    #[test]
    fn window_is_localized_and_symmetric_at_origin() {
        let g = grid();
        let spec = WindowSpec {
            orbitals: 3,
            j: 1,
            eps: 0.25,
            delta: 1.25,
            anchor: vec![0.0],
            t_max: 4.0,
            t_samples: DEFAULT_T_SAMPLES,
        };
        let w = localization_window(&g, &spec, &[0.0]).unwrap();
        let c: Vec<f64> = w.probes.iter().map(|p| p.center[0]).collect();
        assert_eq!(c[1], 0.0);
        assert!((c[0] + c[2]).abs() < 1e-12 && c[2] > 0.0);
        assert!(w.values.iter().all(|&v| v >= 0.0));
        assert!(w.inside_fraction >= 1.0 - 1e-8);
    }

    #[test]
    fn infeasible_window_is_a_geometry_error() {
        let g = grid();
        let spec = WindowSpec {
            orbitals: 6,
            j: 0,
            eps: 0.5,
            delta: 2.5,
            anchor: vec![0.0],
            t_max: 2.0,
            t_samples: 9,
        };
        assert!(matches!(localization_window(&g, &spec, &[0.0]), Err(Error::Geometry(_))));
    }

    #[test]
    fn distinguish_is_antisymmetric() {
        let g = grid();
        let v1 = PotentialSpec::gaussian(1.0, 1.0, 4.0, 2.0).realize(&g).unwrap();
        let v2 = PotentialSpec::gaussian(1.01, 1.0, 4.0, 2.0).realize(&g).unwrap();
        let spec = WindowSpec {
            orbitals: 2,
            j: 0,
            eps: 0.25,
            delta: 1.25,
            anchor: vec![0.0],
            t_max: 2.0,
            t_samples: 17,
        };
        let targets = ball_sweep(1, 2.0, 1.0);
        let a = distinguish(&g, v1.hat(), v2.hat(), &spec, &targets, 1e-8).unwrap();
        let b = distinguish(&g, v2.hat(), v1.hat(), &spec, &targets, 1e-8).unwrap();
        for (x, y) in a.balls.iter().zip(&b.balls) {
            assert_eq!(x.integral, -y.integral);
        }
        assert!(matches!(a.verdict, Verdict::DistinguishedAt { .. }));
        let same = distinguish(&g, v1.hat(), v1.hat(), &spec, &targets, 1e-8).unwrap();
        assert_eq!(same.verdict, Verdict::IdenticalWithinTol);
    }
}
