//! Validation suites behind `hfscat validate`.

use std::f64::consts::PI;

use hfscat_core::inversion::{decaying_band, noise_level, seeded_noise};
use hfscat_core::kernels::kernel_g_for_field;
use hfscat_core::scattering::loglog_slope;
use hfscat_core::uniqueness::time_samples;
use hfscat_core::{
    build_disjoint_probes, distinguish, evolve, evolve_with, forward_map, free_propagate,
    galilean_check, high_velocity_sweep, kernel_g, kernel_hf, lambda_grid, localization_window,
    make_grid, nonlinearity, picard_diagnostic, reconstruct, reference_limit,
    remainder_decomposition, singular_system, small_amplitude_sweep, verify_g1_orthogonality,
    verify_g2_support, EvolveOptions, Field, Grid, Model, OrbitalSet, PotentialSpec, ProbeSpec,
    Regularization, SweepSetup, TimeQuadrature, Verdict, XiGrid,
};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};

use crate::config::{Comparison, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline;

pub const SUITES: [&str; 7] = [
    "propagator",
    "dynamics",
    "scattering",
    "kernels",
    "inversion",
    "end_to_end",
    "uniqueness",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub relation: Relation,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn at_most(criterion: u8, name: &str, value: f64, bound: f64) -> Self {
        Self {
            criterion,
            name: name.into(),
            value,
            bound,
            relation: Relation::AtMost,
            pass: value <= bound,
            detail: String::new(),
        }
    }

    pub fn at_least(criterion: u8, name: &str, value: f64, bound: f64) -> Self {
        Self {
            criterion,
            name: name.into(),
            value,
            bound,
            relation: Relation::AtLeast,
            pass: value >= bound,
            detail: String::new(),
        }
    }

    pub fn within(criterion: u8, name: &str, value: f64, target: f64, tol: f64) -> Self {
        let mut c = Self::at_most(criterion, name, (value - target).abs(), tol);
        c.detail = format!("value {value:.6e}, target {target}");
        c
    }

    fn failed(criterion: u8, name: &str, err: impl std::fmt::Display) -> Self {
        Self {
            criterion,
            name: name.into(),
            value: f64::NAN,
            bound: f64::NAN,
            relation: Relation::AtMost,
            pass: false,
            detail: err.to_string(),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn failed(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn passed(&self) -> bool {
        self.failed() == 0
    }

    /// All checks of one criterion pass; `None` when the suite has none.
    pub fn criterion(&self, k: u8) -> Option<bool> {
        let mut seen = false;
        let mut ok = true;
        for c in self.checks.iter().filter(|c| c.criterion == k) {
            seen = true;
            ok &= c.pass;
        }
        seen.then_some(ok)
    }

    pub fn into_result(self) -> CliResult<Self> {
        let failed = self.failed();
        if failed > 0 {
            Err(CliError::ChecksFailed {
                suite: self.suite,
                failed,
                total: self.checks.len(),
            })
        } else {
            Ok(self)
        }
    }
}

pub fn run(name: &str, cfg: &RunConfig) -> CliResult<SuiteReport> {
    let checks = match name {
        "propagator" => propagator()?,
        "dynamics" => dynamics(cfg)?,
        "scattering" => scattering(cfg)?,
        "kernels" => kernels()?,
        "inversion" => inversion(cfg)?,
        "end_to_end" => end_to_end(cfg)?,
        "uniqueness" => uniqueness(cfg)?,
        other => {
            return Err(CliError::Schema {
                path: "--suite".into(),
                message: format!("unknown suite {other:?}; expected one of {SUITES:?} or all"),
            })
        }
    };
    Ok(SuiteReport {
        suite: name.into(),
        checks,
    })
}

fn gaussian(grid: &Grid) -> Field {
    Field::from_position_fn(grid, "gauss", |x| {
        C::new((-0.5 * x.iter().map(|c| c * c).sum::<f64>()).exp(), 0.0)
    })
}

fn rel_diff(a: &Field, b: &Field) -> hfscat_core::Result<f64> {
    Ok(a.sub(b)?.norm() / b.norm())
}

pub fn propagator() -> CliResult<Vec<Check>> {
    let g = make_grid(1, 256, 32.0)?;
    let phi = ProbeSpec::centered(1, 1.0).realize(&g)?;
    let times = [0.5, 2.0, 5.0, -3.0];
    let mut unitarity: f64 = 0.0;
    let mut group: f64 = 0.0;
    for &t in &times {
        let u = free_propagate(&phi, t)?;
        unitarity = unitarity.max((u.norm() - phi.norm()).abs() / phi.norm());
        for &s in &times {
            let two = free_propagate(&u, s)?;
            let one = free_propagate(&phi, s + t)?;
            group = group.max(rel_diff(&two, &one)?);
        }
    }

    // e^{-x^2/2} evolves to (1 + it)^{-1/2} e^{-x^2 / (2 (1 + it))}
    let wide = make_grid(1, 512, 64.0)?;
    let g0 = gaussian(&wide);
    let mut closed: f64 = 0.0;
    for t in [0.5, 2.0, 5.0] {
        let u = free_propagate(&g0, t)?.to_position();
        let a = C::new(1.0, t);
        for (x, z) in wide.axis_positions().iter().zip(u.values()) {
            let want = (-x * x / (2.0 * a)).exp() / a.sqrt();
            closed = closed.max((z - want).norm());
        }
    }

    let v = 8.0 * g.dual_spacing();
    let s = 4.0 * g.spacing() / v;
    let galilean = galilean_check(&phi, &[v], s)? / phi.max_abs();

    Ok(vec![
        Check::at_most(1, "unitarity", unitarity, 1e-12),
        Check::at_most(1, "group_law", group, 1e-12),
        Check::at_most(1, "gaussian_closed_form", closed, 1e-8)
            .with_detail("t = 0.5, 2, 5 on 512 points, L = 64"),
        Check::at_most(1, "galilean_lattice", galilean, 1e-10),
    ])
}

/// Orbital sets for the three models built from the configured probes.
fn model_states(cfg: &RunConfig, grid: &Grid) -> hfscat_core::Result<Vec<(Model, OrbitalSet)>> {
    let first = cfg.probes[0].realize(grid)?;
    let multi: Vec<ProbeSpec> = if cfg.probes.len() >= 2 {
        cfg.probes.clone()
    } else {
        let p = &cfg.probes[0];
        let shift = |d: f64| {
            let mut c = p.center.clone();
            c[0] += d * p.band_radius / 2.0;
            p.clone().with_center(c)
        };
        vec![shift(-1.0), shift(1.0)]
    };
    let fields = multi
        .iter()
        .map(|p| p.realize(grid))
        .collect::<hfscat_core::Result<Vec<_>>>()?;
    let set = OrbitalSet::new(fields, 0.0)?;
    Ok(vec![
        (Model::Rh, OrbitalSet::single(first, 0.0)),
        (Model::Hartree, set.clone()),
        (Model::Hf, set),
    ])
}

fn set_diff(a: &OrbitalSet, b: &OrbitalSet) -> f64 {
    a.orbitals()
        .iter()
        .zip(b.orbitals())
        .map(|(p, q)| p.sub(q).map(|d| d.norm_sq()).unwrap_or(f64::NAN))
        .sum::<f64>()
        .sqrt()
}

pub fn dynamics(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    let grid = cfg.make_grid()?;
    let v = cfg.potential.realize(&grid)?;
    let horizon = cfg.scatter.horizon;
    let opts = EvolveOptions {
        norm_tol: f64::INFINITY,
        ..cfg.scatter.evolve.clone()
    };
    let mut checks = Vec::new();
    for (model, state) in model_states(cfg, &grid)? {
        let mut drift: f64 = 0.0;
        for end in [horizon, -horizon] {
            let (_, report) =
                evolve_with(&state, &v, model, 0.0, end, cfg.scatter.dt, &opts, None)?;
            drift = report.norm_drift.iter().fold(drift, |m, &d| m.max(d));
        }
        checks.push(
            Check::at_most(2, &format!("norm_drift_{model}"), drift, 1e-8)
                .with_detail(format!("t in [-{horizon}, {horizon}], dt {}", cfg.scatter.dt)),
        );
    }

    let g = make_grid(1, 256, 32.0)?;
    let strong = PotentialSpec::gaussian(3.0, 1.0, 4.0, 2.0).realize(&g)?;
    let packet = |x0: f64, a: f64, p: f64| {
        Field::from_position_fn(&g, "packet", move |x| {
            C::from_polar(a * (-0.5 * (x[0] - x0).powi(2)).exp(), p * x[0])
        })
    };
    for model in [Model::Rh, Model::Hartree, Model::Hf] {
        let s = if model == Model::Rh {
            OrbitalSet::single(packet(0.0, 1.2, 0.3), 0.0)
        } else {
            OrbitalSet::new(vec![packet(-0.7, 1.2, 0.5), packet(0.8, 1.0, -0.4)], 0.0)?
        };
        let run = |dt: f64| evolve(&s, &strong, model, 0.0, 1.0, dt);
        let (a, b, c) = (run(0.04)?, run(0.02)?, run(0.01)?);
        let order = (set_diff(&a, &b) / set_diff(&b, &c)).log2();
        checks.push(Check::within(2, &format!("strang_order_{model}"), order, 2.0, 0.2));
    }

    let u = packet(0.3, 1.0, 0.2);
    let same = OrbitalSet::new(vec![u.clone(), u.clone(), u.clone()], 0.0)?;
    let n = nonlinearity(&same, &strong, Model::Hf)?;
    let cancel = n.iter().map(|f| f.max_abs()).fold(0.0, f64::max);
    checks.push(Check::at_most(2, "hf_identical_orbitals_cancel", cancel, 1e-14));
    Ok(checks)
}

pub fn sweep_setup(cfg: &RunConfig, grid: &Grid) -> SweepSetup {
    SweepSetup {
        grid: grid.clone(),
        potential: cfg.potential.clone(),
        model: cfg.model,
        probes: cfg
            .probes
            .iter()
            .map(|p| p.clone().with_dilation(cfg.sweeps.lambda))
            .collect(),
        options: cfg.scatter.clone(),
        orbital: cfg.orbital,
    }
}

pub fn reference(cfg: &RunConfig, grid: &Grid) -> hfscat_core::Result<f64> {
    let v = cfg.potential.realize(grid)?;
    reference_limit(
        grid,
        &cfg.probes,
        cfg.orbital,
        cfg.model,
        &v,
        cfg.scatter.horizon,
        cfg.sweeps.lambda,
    )
}

/// Slope of `|remainder|` against `|v|` over speeds at least a tenth of the largest.
pub fn tail_slope(speeds: &[f64], remainders: &[f64]) -> Option<f64> {
    let top = speeds.iter().copied().fold(0.0, f64::max);
    let (x, y): (Vec<f64>, Vec<f64>) = speeds
        .iter()
        .zip(remainders)
        .filter(|(s, _)| **s >= top / 10.0)
        .map(|(s, r)| (*s, r.abs()))
        .unzip();
    loglog_slope(&x, &y)
}

pub fn scattering(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    let grid = cfg.make_grid()?;
    let mut checks = Vec::new();
    let probe = cfg.probes[cfg.orbital].clone().with_dilation(cfg.sweeps.lambda);
    let speeds = &cfg.sweeps.speeds;
    let v_lo = cfg.velocity(&grid, speeds[0]);
    let v_hi = cfg.velocity(&grid, speeds[speeds.len() / 2]);
    let (d_lo, p_lo) = remainder_decomposition(&grid, &probe, &cfg.potential, &v_lo, &cfg.scatter)?;
    let (d_hi, _) = remainder_decomposition(&grid, &probe, &cfg.potential, &v_hi, &cfg.scatter)?;
    checks.push(
        Check::at_most(
            3,
            "decomposition_closes",
            (d_lo.total() - p_lo).norm() / p_lo.norm(),
            1e-6,
        )
        .with_detail(format!("|v| = {:.6}", v_lo[0].abs())),
    );
    checks.push(
        Check::at_most(3, "leading_term_velocity_independent", (d_lo.l - d_hi.l).norm() / d_lo.l.norm(), 1e-6)
            .with_detail(format!("|v| = {:.6} and {:.6}", v_lo[0].abs(), v_hi[0].abs())),
    );

    let reference = reference(cfg, &grid)?;
    let setup = sweep_setup(cfg, &grid);
    let sweep = high_velocity_sweep(&setup, &cfg.velocities(&grid), reference)?;
    let speeds: Vec<f64> = sweep.rows.iter().map(|r| r.speed).collect();
    let rems: Vec<f64> = sweep.rows.iter().map(|r| r.remainder).collect();
    let mut slope = Check::at_most(
        4,
        "remainder_slope",
        tail_slope(&speeds, &rems).unwrap_or(f64::NAN),
        -1.8,
    )
    .with_detail(format!("{} runs, reference {reference:.10e}", sweep.rows.len()));
    if let Some(f) = &sweep.failure {
        slope.pass = false;
        slope.detail = format!("{}; {f}", slope.detail);
    }
    checks.push(slope);

    let amp = small_amplitude_sweep(&setup, &cfg.sweeps.epsilons)?;
    match amp.extrapolated {
        Some(x) => checks.push(
            Check::at_most(5, "small_amplitude_limit", (x - reference).abs() / reference.abs(), 0.05)
                .with_detail(format!("extrapolated {x:.10e}, reference {reference:.10e}")),
        ),
        None => checks.push(Check::failed(5, "small_amplitude_limit", "fewer than two amplitudes")),
    }
    Ok(checks)
}

pub fn kernels() -> CliResult<Vec<Check>> {
    let mut checks = Vec::new();

    // G(xi, 0) for phi = e^{-x^2/2} is sqrt(2 pi) e^{-xi^2/2} / (2 |xi|)
    let g = make_grid(1, 2048, 256.0)?;
    let phi = gaussian(&g);
    let xi = XiGrid::radial_shells(&g, 5.0)?;
    let k = kernel_g_for_field(
        &phi,
        &xi,
        &TimeQuadrature::Adaptive {
            t0: 4.0,
            dt: Some(0.02),
            tail_tol: 1e-8,
            max_doublings: 3,
        },
    )?;
    let mut worst: f64 = 0.0;
    for (r, got) in k.xi_grid.radii().iter().zip(&k.entries[0]) {
        if *r >= 0.5 {
            let want = (2.0 * PI).sqrt() * (-0.5 * r * r).exp() / (2.0 * r);
            worst = worst.max((got - want).abs() / want);
        }
    }
    checks.push(
        Check::at_most(6, "gaussian_closed_form", worst, 1e-6)
            .with_detail("relative, shells with |xi| >= 0.5"),
    );

    // G_T(xi, lambda) = s^{-2n-2} G_{s^2 T}(xi / s, 0), s = lambda + 1
    let g = make_grid(1, 512, 64.0)?;
    let probe = ProbeSpec::centered(1, 1.0);
    let s = 2.0;
    let all = XiGrid::radial_shells(&g, 1.6)?;
    let even: Vec<Vec<Vec<i64>>> = all
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
    let (t, dt) = (4.0, 0.01);
    let a = kernel_g(
        &g,
        &probe,
        &[s - 1.0],
        &XiGrid::from_labels(&g, &even)?,
        &TimeQuadrature::Window { t_max: t, dt: Some(dt) },
    )?;
    let b = kernel_g(
        &g,
        &probe,
        &[0.0],
        &XiGrid::from_labels(&g, &half)?,
        &TimeQuadrature::Window {
            t_max: s * s * t,
            dt: Some(dt * s * s),
        },
    )?;
    let scaling = a.entries[0]
        .iter()
        .zip(&b.entries[0])
        .map(|(x, y)| {
            let want = s.powi(-4) * y;
            (x - want).abs() / want.abs().max(1e-12)
        })
        .fold(0.0, f64::max);
    checks.push(Check::at_most(6, "dilation_scaling", scaling, 1e-6));

    let g = make_grid(1, 256, 32.0)?;
    let probes = vec![
        ProbeSpec::centered(1, 1.0).with_center(vec![-0.6]),
        ProbeSpec::centered(1, 1.0).with_center(vec![0.6]),
    ];
    let xi = XiGrid::radial_shells(&g, 2.0)?;
    let hf = kernel_hf(&g, &probes, 0, &[0.0, 0.5], &xi, &TimeQuadrature::window(4.0))?;
    checks.push(Check::at_most(6, "hf_diagonal_residue", hf.diagonal_residue, 1e-12));

    let xi = XiGrid::radial_shells(&g, 1.5)?;
    let lip = |n: usize| -> hfscat_core::Result<f64> {
        let lam = lambda_grid(0.0, 1.0, n)?;
        Ok(kernel_g(&g, &probe, &lam, &xi, &TimeQuadrature::window(4.0))?.entry_lipschitz())
    };
    let (c1, c2) = (lip(5)?, lip(9)?);
    checks.push(
        Check::within(6, "lipschitz_refinement", c2 / c1, 1.0, 0.2)
            .with_detail(format!("C = {c1:.6e} on 5 nodes, {c2:.6e} on 9")),
    );
    Ok(checks)
}

pub fn inversion(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    let grid = cfg.make_grid()?;
    let kernel = pipeline::build_kernel(cfg, &grid)?;
    let sys = singular_system(&kernel, cfg.inversion.rank_tol)?;
    let truth = kernel.xi_grid.sample(cfg.potential.realize(&grid)?.hat());
    let p = forward_map(&truth, &kernel)?;
    let lam = &kernel.lambda_grid;
    let mut checks = Vec::new();

    let exact = reconstruct(&p, &sys, Regularization::Tsvd { k: None })?;
    checks.push(
        Check::at_most(
            7,
            "noise_free_range_error",
            sys.range_error(&exact.v_hat, &truth, sys.numerical_rank),
            1e-6,
        )
        .with_detail(format!("numerical rank {}", sys.numerical_rank)),
    );

    let noise = seeded_noise(&p, 0.01, cfg.seed);
    let noisy: Vec<f64> = p.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let level = noise_level(&noise, lam);
    let r = reconstruct(
        &noisy,
        &sys,
        Regularization::Discrepancy { tau: 1.1, noise: level },
    )?;
    let band = decaying_band(&picard_diagnostic(&noisy, &sys)?, r.truncation_index);
    checks.push(
        Check::at_most(7, "one_percent_noise_band_error", sys.range_error(&r.v_hat, &truth, band), 0.05)
            .with_detail(format!("seed {}, k* {}, band {band}", cfg.seed, r.truncation_index)),
    );

    let rough: Vec<f64> = (0..lam.len())
        .map(|i| sys.left_vectors[..sys.numerical_rank].iter().map(|g| g[i]).sum())
        .collect();
    let flag = picard_diagnostic(&rough, &sys)?.divergence_flag;
    checks.push(
        Check::at_least(7, "picard_flags_unit_coefficients", f64::from(u8::from(flag)), 1.0)
            .with_detail("P = sum of left singular vectors"),
    );
    Ok(checks)
}

pub fn end_to_end(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    let grid = cfg.make_grid()?;
    let kernel = pipeline::build_kernel(cfg, &grid)?;
    let fd = pipeline::forward_data(cfg, &grid)?;
    let (inv, _) = pipeline::invert(
        cfg,
        &grid,
        &kernel,
        &fd.data,
        fd.noise_estimate,
        cfg.regularization()?,
    )?;
    Ok(vec![Check::at_most(9, "scattering_data_band_error", inv.band_error, 0.10)
        .with_detail(format!(
            "k* {}, band {}, probe scale {}, remainder estimate {:.3e}",
            inv.result.truncation_index, inv.band, fd.probe_scale, fd.noise_estimate
        ))])
}

/// Second transform for the comparison in `cfg.uniqueness`.
pub fn comparison_hat(cfg: &RunConfig, grid: &Grid, v1: &[f64]) -> hfscat_core::Result<Vec<f64>> {
    Ok(match &cfg.uniqueness.compare {
        Comparison::Scale { factor } => v1.iter().map(|x| factor * x).collect(),
        Comparison::Bump { center, height, width } => (0..grid.len())
            .map(|i| {
                let xi = grid.frequency(i);
                let rest: f64 = xi[1..grid.dim()].iter().map(|c| c * c).sum();
                let bump = |c: f64| (-(((xi[0] - c).powi(2) + rest) / (width * width))).exp();
                v1[i] + height * (bump(*center) + bump(-center))
            })
            .collect(),
        Comparison::Potential { potential } => potential.realize(grid)?.hat().to_vec(),
    })
}

pub fn uniqueness(cfg: &RunConfig) -> CliResult<Vec<Check>> {
    let grid = cfg.make_grid()?;
    let u = &cfg.uniqueness;
    let ts = time_samples(u.t_max, u.t_samples);
    let probes = build_disjoint_probes(&grid, u.eps, &u.centers)?;
    let fields = probes
        .iter()
        .map(|p| p.realize(&grid))
        .collect::<hfscat_core::Result<Vec<_>>>()?;
    let g1 = verify_g1_orthogonality(&fields, &ts)?;
    let g2 = verify_g2_support(&grid, &probes[0], &probes[1], &ts)?;
    let spec = u.window();
    let mut target = vec![0.0; grid.dim()];
    target[0] = u.delta;
    let window = localization_window(&grid, &spec, &target)?;

    let mut checks = vec![
        Check::at_most(8, "density_spectra_orthogonal", g1.max_defect, 1e-10).with_detail(format!(
            "pair {:?}, t {:.3}, xi {:?}",
            g1.worst_pair, g1.worst_time, g1.worst_frequency
        )),
        Check::at_most(8, "square_spectra_orthogonal", g1.unconjugated_defect, 1e-10),
        Check::at_most(8, "pair_spectrum_support", g2.outside_fraction, 1e-10)
            .with_detail(format!("ball of radius {} at {:?}", g2.radius, g2.center)),
        Check::at_least(8, "window_mass_inside", window.inside_fraction, 1.0 - 1e-8)
            .with_detail(format!("target {target:?}, delta {}", u.delta)),
    ];

    let v1 = cfg.potential.realize(&grid)?.hat().to_vec();
    let targets = hfscat_core::uniqueness::ball_sweep(grid.dim(), u.sweep_radius, u.sweep_step);
    let same = distinguish(&grid, &v1, &v1, &spec, &targets, u.tol)?;
    checks.push(Check::at_least(
        8,
        "equal_potentials_identical",
        f64::from(u8::from(same.verdict == Verdict::IdenticalWithinTol)),
        1.0,
    ));
    let v2 = comparison_hat(cfg, &grid, &v1)?;
    let diff = distinguish(&grid, &v1, &v2, &spec, &targets, u.tol)?;
    let found = matches!(diff.verdict, Verdict::DistinguishedAt { .. });
    checks.push(
        Check::at_least(8, "different_potentials_distinguished", f64::from(u8::from(found)), 1.0)
            .with_detail(format!("{:?}", diff.verdict)),
    );
    Ok(checks)
}
