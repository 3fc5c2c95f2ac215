//! Versioned JSON run configuration.

use std::path::{Path, PathBuf};

use hfscat_core::io::{sha256_hex, to_json_string};
use hfscat_core::{
    make_grid, Grid, Model, PotentialSpec, ProbeSpec, Regularization, ScatterOptions,
    TimeQuadrature, WindowSpec,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub model: Model,
    pub grid: GridConfig,
    pub potential: PotentialSpec,
    pub probes: Vec<ProbeSpec>,
    /// Orbital whose pairing is recorded.
    #[serde(default)]
    pub orbital: usize,
    pub sweeps: Sweeps,
    #[serde(default)]
    pub scatter: ScatterOptions,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub uniqueness: UniquenessConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_seed() -> u64 {
    42
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(rename = "M")]
    pub points: usize,
    #[serde(rename = "L")]
    pub half_extent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweeps {
    /// Speeds `|v|`, snapped to the lattice along `direction`.
    pub speeds: Vec<f64>,
    /// Unit direction of the velocities; defaults to the first axis.
    #[serde(default)]
    pub direction: Vec<f64>,
    /// Decreasing probe amplitudes of the small-amplitude sweep.
    pub epsilons: Vec<f64>,
    /// Dilation of the probes in the pairing sweeps.
    #[serde(default)]
    pub lambda: f64,
    /// Dilation interval of the inverse problem.
    pub gamma: Interval,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Largest `|xi|`; defaults to the support radius `2 (1 + max gamma) (|p| + eps)`.
    #[serde(default)]
    pub xi_radius: Option<f64>,
    /// Time quadrature; defaults to the closed-form window `[-T, T]` with `T` the scattering horizon.
    #[serde(default)]
    pub quadrature: Option<TimeQuadrature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    /// Probe amplitude factor of the data runs.
    pub probe_scale: f64,
    /// Second-pass amplitude factor, relative to `probe_scale`, for the remainder estimate.
    pub scale_ratio: f64,
    /// Speed of the data runs; defaults to the largest sweep speed.
    pub speed: Option<f64>,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            probe_scale: 1.0,
            scale_ratio: std::f64::consts::FRAC_1_SQRT_2,
            speed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    /// `tsvd[:k]`, `discrepancy[:tau]` or `tikhonov:alpha`.
    pub regularization: String,
    pub rank_tol: f64,
    /// Data error level; defaults to the estimate recorded by `forward`.
    pub noise: Option<f64>,
    /// Relative level of seeded synthetic noise added to the data.
    pub synthetic_noise: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            regularization: "discrepancy:1.1".into(),
            rank_tol: hfscat_core::inversion::DEFAULT_RANK_TOL,
            noise: None,
            synthetic_noise: 0.0,
        }
    }
}

/// Second transform for `distinguish`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Comparison {
    /// `V^_2 = factor V^_1`.
    Scale { factor: f64 },
    /// `V^_2 = V^_1 + h (e^{-((xi - c)/w)^2} + e^{-((xi + c)/w)^2})`, `c` along the first axis.
    Bump { center: f64, height: f64, width: f64 },
    Potential { potential: PotentialSpec },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniquenessConfig {
    pub eps: f64,
    /// Band centers of the disjoint family.
    pub centers: Vec<Vec<f64>>,
    pub orbitals: usize,
    pub j: usize,
    pub delta: f64,
    pub t_max: f64,
    pub t_samples: usize,
    pub sweep_radius: f64,
    pub sweep_step: f64,
    pub tol: f64,
    pub compare: Comparison,
}

impl Default for UniquenessConfig {
    fn default() -> Self {
        Self {
            eps: 0.25,
            centers: vec![vec![-0.75], vec![0.75]],
            orbitals: 2,
            j: 0,
            delta: 1.25,
            t_max: 4.0,
            t_samples: hfscat_core::uniqueness::DEFAULT_T_SAMPLES,
            sweep_radius: 3.0,
            sweep_step: 0.5,
            tol: 1e-8,
            compare: Comparison::Bump {
                center: 2.0,
                height: 1e-3,
                width: 0.2,
            },
        }
    }
}

impl UniquenessConfig {
    pub fn window(&self) -> WindowSpec {
        WindowSpec {
            orbitals: self.orbitals,
            j: self.j,
            eps: self.eps,
            delta: self.delta,
            anchor: Vec::new(),
            t_max: self.t_max,
            t_samples: self.t_samples,
        }
    }
}

fn log_speeds(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn schema(path: &str, message: impl Into<String>) -> CliError {
    CliError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Starting configuration for `model`.
    pub fn template(model: Model) -> Self {
        let (probes, speeds) = match model {
            Model::Rh => (vec![ProbeSpec::centered(1, 2.0)], log_speeds(0.2, 2.0, 10)),
            Model::Hartree | Model::Hf => (
                vec![
                    ProbeSpec::centered(1, 1.0).with_center(vec![-0.5]),
                    ProbeSpec::centered(1, 1.0).with_center(vec![0.5]),
                ],
                log_speeds(0.2, 2.0, 10),
            ),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            model,
            grid: GridConfig {
                dim: 1,
                points: 1024,
                half_extent: 64.0,
            },
            potential: PotentialSpec::gaussian(0.05, 1.0, 4.0, 2.0),
            probes,
            orbital: 0,
            sweeps: Sweeps {
                speeds,
                direction: Vec::new(),
                epsilons: vec![0.4, 0.2, 0.1],
                lambda: 0.0,
                gamma: Interval {
                    lo: 0.0,
                    hi: 1.0,
                    nodes: 33,
                },
            },
            scatter: ScatterOptions::default(),
            kernel: KernelConfig::default(),
            forward: ForwardConfig {
                probe_scale: 0.25,
                speed: Some(1.0),
                ..ForwardConfig::default()
            },
            inversion: InversionConfig::default(),
            uniqueness: UniquenessConfig::default(),
            seed: default_seed(),
            output_dir: default_output_dir(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            schema(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self).expect("config serializes")
    }

    /// Hash of the configuration without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        sha256_hex(c.to_json().as_bytes())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(schema(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        make_grid(self.grid.dim, self.grid.points, self.grid.half_extent)
            .map_err(|e| schema("grid", e.to_string()))?;
        if self.probes.is_empty() {
            return Err(schema("probes", "at least one probe is required"));
        }
        if self.model == Model::Rh && self.probes.len() != 1 {
            return Err(schema("probes", "the restricted model takes exactly one probe"));
        }
        if self.orbital >= self.probes.len() {
            return Err(schema("orbital", format!("{} is out of range", self.orbital)));
        }
        for (i, p) in self.probes.iter().enumerate() {
            if !(p.band_radius > 0.0) {
                return Err(schema(&format!("probes[{i}].band_radius"), "must be positive"));
            }
        }
        let s = &self.sweeps;
        if s.speeds.iter().any(|v| !(*v >= 0.0)) || s.speeds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(schema("sweeps.speeds", "must be non-negative and increasing"));
        }
        if !s.direction.is_empty() && s.direction.len() != self.grid.dim {
            return Err(schema("sweeps.direction", "length must equal grid.dim"));
        }
        if s.epsilons.iter().any(|e| !(*e > 0.0)) || s.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(schema("sweeps.epsilons", "must be positive and decreasing"));
        }
        if !(s.gamma.lo >= 0.0 && s.gamma.hi > s.gamma.lo && s.gamma.nodes >= 2) {
            return Err(schema("sweeps.gamma", "need 0 <= lo < hi and at least two nodes"));
        }
        if !(self.forward.probe_scale > 0.0)
            || !(self.forward.scale_ratio > 0.0 && self.forward.scale_ratio < 1.0)
        {
            return Err(schema("forward", "probe_scale > 0 and 0 < scale_ratio < 1 required"));
        }
        self.regularization()?;
        if !(self.inversion.rank_tol > 0.0) {
            return Err(schema("inversion.rank_tol", "must be positive"));
        }
        if !(self.inversion.synthetic_noise >= 0.0) {
            return Err(schema("inversion.synthetic_noise", "must be non-negative"));
        }
        Ok(())
    }

    pub fn regularization(&self) -> Result<Regularization, CliError> {
        self.inversion
            .regularization
            .parse()
            .map_err(|e: hfscat_core::Error| schema("inversion.regularization", e.to_string()))
    }

    pub fn make_grid(&self) -> hfscat_core::Result<Grid> {
        make_grid(self.grid.dim, self.grid.points, self.grid.half_extent)
    }

    fn direction(&self) -> Vec<f64> {
        if self.sweeps.direction.is_empty() {
            let mut d = vec![0.0; self.grid.dim];
            d[0] = 1.0;
            d
        } else {
            let n = self.sweeps.direction.iter().map(|x| x * x).sum::<f64>().sqrt();
            self.sweeps.direction.iter().map(|x| x / n).collect()
        }
    }

    /// Lattice velocity nearest to `speed` along the sweep direction.
    pub fn velocity(&self, grid: &Grid, speed: f64) -> Vec<f64> {
        let dxi = grid.dual_spacing();
        self.direction()
            .iter()
            .map(|d| (d * speed / dxi).round() * dxi)
            .collect()
    }

    pub fn velocities(&self, grid: &Grid) -> Vec<Vec<f64>> {
        self.sweeps.speeds.iter().map(|&s| self.velocity(grid, s)).collect()
    }

    pub fn lambdas(&self) -> hfscat_core::Result<Vec<f64>> {
        let g = &self.sweeps.gamma;
        hfscat_core::lambda_grid(g.lo, g.hi, g.nodes)
    }

    /// Radius of the kernel support at the top of the dilation interval.
    pub fn xi_radius(&self, grid: &Grid) -> f64 {
        self.kernel.xi_radius.unwrap_or_else(|| {
            let reach = self
                .probes
                .iter()
                .map(|p| p.center.iter().map(|c| c * c).sum::<f64>().sqrt() + p.band_radius)
                .fold(0.0, f64::max);
            (2.0 * (1.0 + self.sweeps.gamma.hi) * reach).min(grid.nyquist())
        })
    }

    pub fn kernel_quadrature(&self) -> TimeQuadrature {
        self.kernel
            .quadrature
            .clone()
            .unwrap_or_else(|| TimeQuadrature::window(self.scatter.horizon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_round_trip_and_validate() {
        for m in [Model::Rh, Model::Hartree, Model::Hf] {
            let c = RunConfig::template(m);
            let back = RunConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn output_dir_does_not_change_the_hash() {
        let a = RunConfig::template(Model::Rh);
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 7, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn missing_field_reports_its_path() {
        let mut v: serde_json::Value = serde_json::from_str(&RunConfig::template(Model::Rh).to_json()).unwrap();
        v["grid"].as_object_mut().unwrap().remove("M");
        let err = RunConfig::from_json(&v.to_string()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("grid") && msg.contains("`M`"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn bad_values_are_schema_errors() {
        let mut c = RunConfig::template(Model::Rh);
        c.sweeps.epsilons = vec![0.1, 0.2];
        assert!(matches!(c.validate(), Err(CliError::Schema { .. })));
        let mut c = RunConfig::template(Model::Rh);
        c.inversion.regularization = "lasso".into();
        assert!(matches!(c.validate(), Err(CliError::Schema { .. })));
    }

    #[test]
    fn velocities_sit_on_the_lattice() {
        let c = RunConfig::template(Model::Rh);
        let g = c.make_grid().unwrap();
        for v in c.velocities(&g) {
            let k = v[0] / g.dual_spacing();
            assert!((k - k.round()).abs() < 1e-12);
        }
    }
}
