//! Steps shared by the subcommands and the validation suites.

use std::f64::consts::PI;

use hfscat_core::inversion::{decaying_band, noise_level, seeded_noise};
use hfscat_core::{
    forward_scatter, kernel_g, kernel_h, kernel_hf, picard_diagnostic, probe_state, reconstruct,
    singular_system, Grid, KernelMatrix, Model, ProbeSpec, ReconstructionResult, Regularization,
    SingularSystem, XiGrid,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliResult;

pub fn build_kernel(cfg: &RunConfig, grid: &Grid) -> hfscat_core::Result<KernelMatrix> {
    let lam = cfg.lambdas()?;
    let xi = XiGrid::radial_shells(grid, cfg.xi_radius(grid))?;
    let quad = cfg.kernel_quadrature();
    match cfg.model {
        Model::Rh => kernel_g(grid, &cfg.probes[cfg.orbital], &lam, &xi, &quad),
        Model::Hartree => kernel_h(grid, &cfg.probes, cfg.orbital, &lam, &xi, &quad),
        Model::Hf => kernel_hf(grid, &cfg.probes, cfg.orbital, &lam, &xi, &quad),
    }
}

/// Pairings over the dilation interval, normalized to `int V^ K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardData {
    pub lambda: Vec<f64>,
    pub velocity: Vec<f64>,
    pub probe_scale: f64,
    pub scale_ratio: f64,
    pub pairing: Vec<[f64; 2]>,
    /// `Re pairing / ((2 pi)^{n/2} s^4)` at probe scale `s`.
    pub data: Vec<f64>,
    /// The same at probe scale `r s`.
    pub data_second: Vec<f64>,
    /// `(data - data_second) / (1 - r^2)`, the leading nonlinear remainder.
    pub remainder: Vec<f64>,
    /// Weighted norm of `remainder`.
    pub noise_estimate: f64,
}

fn dilated(probes: &[ProbeSpec], lambda: f64) -> Vec<ProbeSpec> {
    probes.iter().map(|p| p.clone().with_dilation(lambda)).collect()
}

pub fn forward_speed(cfg: &RunConfig) -> f64 {
    cfg.forward
        .speed
        .unwrap_or_else(|| cfg.sweeps.speeds.last().copied().unwrap_or(0.0))
}

pub fn forward_data(cfg: &RunConfig, grid: &Grid) -> hfscat_core::Result<ForwardData> {
    let lam = cfg.lambdas()?;
    let v = cfg.potential.realize(grid)?;
    let velocity = cfg.velocity(grid, forward_speed(cfg));
    let s = cfg.forward.probe_scale;
    let r = cfg.forward.scale_ratio;
    let norm = (2.0 * PI).powf(grid.dim() as f64 / 2.0);
    let j = cfg.orbital;
    let run = |lambda: f64, scale: f64| -> hfscat_core::Result<num_complex::Complex64> {
        let state = probe_state(grid, &dilated(&cfg.probes, lambda), &velocity, scale)?;
        let out = forward_scatter(&state, &v, cfg.model, &cfg.scatter)?;
        Ok(out.pairings()?[j])
    };
    let rows: Vec<(num_complex::Complex64, num_complex::Complex64)> = lam
        .par_iter()
        .map(|&l| Ok((run(l, s)?, run(l, r * s)?)))
        .collect::<hfscat_core::Result<_>>()?;
    let data: Vec<f64> = rows.iter().map(|(a, _)| a.re / (norm * s.powi(4))).collect();
    let data_second: Vec<f64> = rows
        .iter()
        .map(|(_, b)| b.re / (norm * (r * s).powi(4)))
        .collect();
    let remainder: Vec<f64> = data
        .iter()
        .zip(&data_second)
        .map(|(a, b)| (a - b) / (1.0 - r * r))
        .collect();
    Ok(ForwardData {
        noise_estimate: noise_level(&remainder, &lam),
        pairing: rows.iter().map(|(a, _)| [a.re, a.im]).collect(),
        lambda: lam,
        velocity,
        probe_scale: s,
        scale_ratio: r,
        data,
        data_second,
        remainder,
    })
}

/// Reconstruction plus the quantities reported next to it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Inversion {
    pub result: ReconstructionResult,
    /// Leading modes with decaying Picard ratios, capped at the truncation index.
    pub band: usize,
    pub noise: f64,
    pub synthetic_noise: f64,
    pub singular_values: Vec<f64>,
    /// `true_xi` on the kernel nodes.
    pub truth: Vec<f64>,
    /// Weighted relative error on the band's range component.
    pub band_error: f64,
}

pub fn invert(
    cfg: &RunConfig,
    grid: &Grid,
    kernel: &KernelMatrix,
    data: &[f64],
    noise: f64,
    reg: Regularization,
) -> CliResult<(Inversion, SingularSystem)> {
    let sys = singular_system(kernel, cfg.inversion.rank_tol)?;
    let mut p = data.to_vec();
    let mut noise = noise;
    if cfg.inversion.synthetic_noise > 0.0 {
        let n = seeded_noise(&p, cfg.inversion.synthetic_noise, cfg.seed);
        noise += noise_level(&n, &kernel.lambda_grid);
        p.iter_mut().zip(&n).for_each(|(a, b)| *a += b);
    }
    let reg = match reg {
        Regularization::Discrepancy { tau, .. } => Regularization::Discrepancy { tau, noise },
        other => other,
    };
    let result = reconstruct(&p, &sys, reg)?;
    let diag = picard_diagnostic(&p, &sys)?;
    let band = decaying_band(&diag, result.truncation_index);
    let truth = kernel.xi_grid.sample(cfg.potential.realize(grid)?.hat());
    let band_error = sys.range_error(&result.v_hat, &truth, band);
    Ok((
        Inversion {
            band,
            noise,
            synthetic_noise: cfg.inversion.synthetic_noise,
            singular_values: sys.singular_values.clone(),
            truth,
            band_error,
            result,
        },
        sys,
    ))
}
