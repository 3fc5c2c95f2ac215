//! Subcommand bodies.

use std::path::{Path, PathBuf};

use hfscat_core::io::{
    read_json, read_kernel, reconstruction_csv, write_checkpoint, write_kernel,
    write_reconstruction,
};
use hfscat_core::scattering::{AmplitudeSweep, VelocitySweep};
use hfscat_core::uniqueness::{ball_sweep, time_samples, DistinguishReport, G1Report, G2Report};
use hfscat_core::{
    build_disjoint_probes, distinguish, forward_scatter, fourier_to_potential,
    high_velocity_sweep, picard_diagnostic, probe_state, small_amplitude_sweep,
    verify_g1_orthogonality, verify_g2_support, Model, Regularization, ScatterRun,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{Cell, Ctx, Plot, Series};
use crate::pipeline::{self, ForwardData, Inversion};
use crate::suites::{self, SuiteReport, SUITES};

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingInput(path.display().to_string()))
    }
}

pub fn gen_config(model: Model, out: Option<&Path>) -> CliResult<Option<PathBuf>> {
    let cfg = RunConfig::template(model);
    let text = cfg.to_json();
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let path = dir.join("config.json");
            std::fs::write(&path, text).map_err(|source| CliError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(Some(path))
        }
        None => {
            print!("{text}");
            Ok(None)
        }
    }
}

pub fn forward(ctx: &mut Ctx) -> CliResult<ForwardData> {
    let cfg = ctx.config.clone();
    let grid = cfg.make_grid()?;
    let fd = pipeline::forward_data(&cfg, &grid)?;
    ctx.json("forward.json", &fd)?;
    let rows: Vec<Vec<Cell>> = (0..fd.lambda.len())
        .map(|i| {
            vec![
                fd.lambda[i].into(),
                fd.data[i].into(),
                fd.data_second[i].into(),
                fd.remainder[i].into(),
                fd.pairing[i][0].into(),
                fd.pairing[i][1].into(),
            ]
        })
        .collect();
    ctx.csv(
        "forward.csv",
        &["lambda", "data", "data_second", "remainder", "pairing_re", "pairing_im"],
        &rows,
    )?;

    // full record of the first run
    let probes: Vec<_> = cfg
        .probes
        .iter()
        .map(|p| p.clone().with_dilation(fd.lambda[0]))
        .collect();
    let v = cfg.potential.realize(&grid)?;
    let state = probe_state(&grid, &probes, &fd.velocity, fd.probe_scale)?;
    let out = forward_scatter(&state, &v, cfg.model, &cfg.scatter)?;
    let run = ScatterRun::from_outcome(&out, cfg.model, &cfg.potential, &probes, cfg.scatter.dt)?;
    ctx.json("scatter_run.json", &run)?;
    let (model, dt) = (cfg.model, cfg.scatter.dt);
    ctx.blob("f_plus.bin", |p| {
        write_checkpoint(&out.f_plus, model, &cfg.potential, dt, p).map(|_| ())
    })?;
    Ok(fd)
}

pub fn pairing_sweep(ctx: &mut Ctx) -> CliResult<(VelocitySweep, AmplitudeSweep)> {
    let cfg = ctx.config.clone();
    let grid = cfg.make_grid()?;
    let reference = suites::reference(&cfg, &grid)?;
    let setup = suites::sweep_setup(&cfg, &grid);
    let vs = high_velocity_sweep(&setup, &cfg.velocities(&grid), reference)?;
    let amp = small_amplitude_sweep(&setup, &cfg.sweeps.epsilons)?;
    ctx.json("velocity_sweep.json", &vs)?;
    let rows: Vec<Vec<Cell>> = vs
        .rows
        .iter()
        .map(|r| {
            vec![
                r.speed.into(),
                r.pairing.re.into(),
                r.pairing.im.into(),
                r.remainder.into(),
                r.scaled_remainder.into(),
                r.slope_so_far.into(),
            ]
        })
        .collect();
    ctx.csv(
        "velocity_sweep.csv",
        &["speed", "pairing_re", "pairing_im", "remainder", "scaled_remainder", "slope_so_far"],
        &rows,
    )?;
    ctx.json("amplitude_sweep.json", &amp)?;
    let rows: Vec<Vec<Cell>> = amp
        .rows
        .iter()
        .map(|r| vec![r.epsilon.into(), r.scaled.re.into(), r.scaled.im.into()])
        .collect();
    ctx.csv("amplitude_sweep.csv", &["epsilon", "scaled_re", "scaled_im"], &rows)?;
    Ok((vs, amp))
}

pub fn kernel(ctx: &mut Ctx) -> CliResult<String> {
    let grid = ctx.config.make_grid()?;
    let k = pipeline::build_kernel(&ctx.config, &grid)?;
    let mut sha = String::new();
    ctx.blob("kernel.bin", |p| {
        sha = write_kernel(&k, p)?;
        Ok(())
    })?;
    Ok(sha)
}

pub fn invert(ctx: &mut Ctx, reg: Option<&str>) -> CliResult<Inversion> {
    let cfg = ctx.config.clone();
    let grid = cfg.make_grid()?;
    let kpath = ctx.path("kernel.bin");
    let fpath = ctx.path("forward.json");
    require(&kpath)?;
    require(&fpath)?;
    let kernel = read_kernel(&kpath)?;
    let fd: ForwardData = read_json(&fpath)?;
    if fd.lambda != kernel.lambda_grid {
        return Err(hfscat_core::Error::Dimension(
            "forward data and kernel use different lambda grids".into(),
        )
        .into());
    }
    let reg: Regularization = match reg {
        Some(s) => s.parse().map_err(|e: hfscat_core::Error| CliError::Schema {
            path: "--reg".into(),
            message: e.to_string(),
        })?,
        None => cfg.regularization()?,
    };
    let noise = cfg.inversion.noise.unwrap_or(fd.noise_estimate);
    let (inv, sys) = pipeline::invert(&cfg, &grid, &kernel, &fd.data, noise, reg)?;
    ctx.blob("reconstruction.bin", |p| write_reconstruction(&inv.result, p).map(|_| ()))?;
    ctx.csv_text("reconstruction.csv", &reconstruction_csv(&inv.result, Some(&inv.truth)))?;

    let diag = picard_diagnostic(&fd.data, &sys)?;
    let rows: Vec<Vec<Cell>> = (0..sys.singular_values.len())
        .map(|n| {
            vec![
                (n + 1).into(),
                sys.singular_values[n].into(),
                diag.coefficients[n].into(),
                diag.ratios.get(n).copied().into(),
                diag.partial_sums.get(n).copied().into(),
            ]
        })
        .collect();
    ctx.csv("picard.csv", &["n", "mu", "coefficient", "ratio", "partial_sum"], &rows)?;

    let est = fourier_to_potential(&grid, &kernel.xi_grid, &inv.result.v_hat)?;
    let rows: Vec<Vec<Cell>> = est
        .radii
        .iter()
        .zip(&est.profile)
        .map(|(r, v)| vec![(*r).into(), cfg.potential.value(*r).into(), (*v).into()])
        .collect();
    ctx.csv("potential_estimate.csv", &["r", "v_true", "v_est"], &rows)?;
    ctx.json("invert_summary.json", &inv)?;
    Ok(inv)
}

#[derive(Serialize)]
pub struct UniquenessOutput {
    pub g1: G1Report,
    pub g2: G2Report,
    pub identical: DistinguishReport,
    pub compared: DistinguishReport,
}

pub fn uniqueness(ctx: &mut Ctx) -> CliResult<UniquenessOutput> {
    let cfg = ctx.config.clone();
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
    let targets = ball_sweep(grid.dim(), u.sweep_radius, u.sweep_step);
    let v1 = cfg.potential.realize(&grid)?.hat().to_vec();
    let v2 = suites::comparison_hat(&cfg, &grid, &v1)?;
    let identical = distinguish(&grid, &v1, &v1, &spec, &targets, u.tol)?;
    let compared = distinguish(&grid, &v1, &v2, &spec, &targets, u.tol)?;
    let out = UniquenessOutput {
        g1,
        g2,
        identical,
        compared,
    };
    ctx.json("uniqueness.json", &out)?;
    let rows: Vec<Vec<Cell>> = out
        .compared
        .balls
        .iter()
        .map(|b| {
            let c: Vec<String> = b.center.iter().map(|x| format!("{x}")).collect();
            vec![
                Cell::S(c.join(" ")),
                b.integral.into(),
                b.window_l1.into(),
                b.normalized().into(),
            ]
        })
        .collect();
    ctx.csv("uniqueness.csv", &["center", "integral", "window_l1", "normalized"], &rows)?;
    Ok(out)
}

pub fn validate(ctx: &mut Ctx, suite: &str) -> CliResult<Vec<SuiteReport>> {
    let names: Vec<&str> = if suite == "all" {
        SUITES.to_vec()
    } else {
        vec![suite]
    };
    let mut reports = Vec::new();
    for name in names {
        let report = suites::run(name, &ctx.config)?;
        for c in &report.checks {
            println!(
                "{} [{}] {}: {:.6e} ({} {:.1e}) {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.criterion,
                c.name,
                c.value,
                match c.relation {
                    suites::Relation::AtMost => "<=",
                    suites::Relation::AtLeast => ">=",
                },
                c.bound,
                c.detail
            );
        }
        ctx.json(&format!("validate_{name}.json"), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

pub fn report(ctx: &mut Ctx) -> CliResult<usize> {
    let mut made = 0;
    let vpath = ctx.path("velocity_sweep.json");
    if vpath.exists() {
        let vs: VelocitySweep = read_json(&vpath)?;
        let pts = vs
            .rows
            .iter()
            .filter(|r| r.remainder != 0.0)
            .map(|r| (r.speed, r.remainder.abs()))
            .collect();
        let plot = Plot {
            title: "Pairing remainder against speed".into(),
            x_label: "|v|".into(),
            y_label: "|pairing - limit|".into(),
            log_x: true,
            log_y: true,
            series: vec![Series {
                name: "remainder".into(),
                points: pts,
            }],
        };
        ctx.svg("pairing_vs_speed.svg", &plot)?;
        made += 1;
    }
    let spath = ctx.path("invert_summary.json");
    if spath.exists() {
        let inv: Inversion = read_json(&spath)?;
        let idx = |v: &[f64]| -> Vec<(f64, f64)> {
            v.iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, x)| ((i + 1) as f64, x.abs()))
                .collect()
        };
        let coefficients: Vec<f64> = inv
            .result
            .picard_coefficients
            .iter()
            .zip(&inv.singular_values)
            .map(|(r, m)| r * m)
            .collect();
        let plot = Plot {
            title: "Picard plot".into(),
            x_label: "n".into(),
            y_label: "magnitude".into(),
            log_x: false,
            log_y: true,
            series: vec![
                Series {
                    name: "mu_n".into(),
                    points: idx(&inv.singular_values),
                },
                Series {
                    name: "|c_n|".into(),
                    points: idx(&coefficients),
                },
                Series {
                    name: "|c_n / mu_n|".into(),
                    points: idx(&inv.result.picard_coefficients),
                },
            ],
        };
        ctx.svg("picard.svg", &plot)?;
        let xs = &inv.result.xi_radii;
        let plot = Plot {
            title: "Reconstructed transform".into(),
            x_label: "|xi|".into(),
            y_label: "V^".into(),
            log_x: false,
            log_y: false,
            series: vec![
                Series {
                    name: "true".into(),
                    points: xs.iter().copied().zip(inv.truth.iter().copied()).collect(),
                },
                Series {
                    name: "estimate".into(),
                    points: xs.iter().copied().zip(inv.result.v_hat.iter().copied()).collect(),
                },
            ],
        };
        ctx.svg("vhat.svg", &plot)?;
        made += 2;
    }
    if made == 0 {
        return Err(CliError::MissingInput(format!(
            "{} or {}",
            vpath.display(),
            spath.display()
        )));
    }
    Ok(made)
}
