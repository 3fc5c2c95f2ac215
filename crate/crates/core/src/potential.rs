//! Radial two-body interaction `V`, its truncated grid realization and `V^`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Functional family of the untruncated radial profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PotentialFamily {
    /// `C exp(-|x|^2 / (2 w^2))`
    Gaussian { amplitude: f64, width: f64 },
    /// `C (1 + |x|^2)^{-sigma/2}`
    RegularizedPower { amplitude: f64, exponent: f64 },
    /// Radial samples, linearly interpolated and zero past the last radius.
    Table { radii: Vec<f64>, values: Vec<f64> },
}

/// Assumptions carried along with a potential; recorded, never checked.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

/// Treatment of the uniform (`xi = 0`) component of `V * rho` on the periodic box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroMode {
    /// Plain periodic convolution.
    Keep,
    /// Remove the uniform component. On the box it is a time-independent
    /// constant potential (mass is conserved) and only rotates the global phase.
    #[default]
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    #[serde(flatten)]
    pub family: PotentialFamily,
    /// Start of the cosine taper.
    pub cutoff_radius: f64,
    /// Length of the taper; `V` vanishes past `cutoff_radius + taper_width`.
    pub taper_width: f64,
    #[serde(default)]
    pub zero_mode: ZeroMode,
    #[serde(default)]
    pub metadata: PotentialMetadata,
}

impl PotentialSpec {
    pub fn gaussian(amplitude: f64, width: f64, cutoff_radius: f64, taper_width: f64) -> Self {
        Self {
            family: PotentialFamily::Gaussian { amplitude, width },
            cutoff_radius,
            taper_width,
            zero_mode: ZeroMode::Drop,
            metadata: PotentialMetadata::default(),
        }
    }

    pub fn zero() -> Self {
        Self::gaussian(0.0, 1.0, 1.0, 1.0)
    }

    pub fn with_zero_mode(mut self, zero_mode: ZeroMode) -> Self {
        self.zero_mode = zero_mode;
        self
    }

    /// Untruncated radial profile.
    pub fn profile(&self, r: f64) -> f64 {
        match &self.family {
            PotentialFamily::Gaussian { amplitude, width } => {
                amplitude * (-r * r / (2.0 * width * width)).exp()
            }
            PotentialFamily::RegularizedPower {
                amplitude,
                exponent,
            } => amplitude * (1.0 + r * r).powf(-exponent / 2.0),
            PotentialFamily::Table { radii, values } => {
                if r <= radii[0] {
                    return values[0];
                }
                match radii.iter().position(|&x| x >= r) {
                    None => 0.0,
                    Some(i) => {
                        let t = (r - radii[i - 1]) / (radii[i] - radii[i - 1]);
                        values[i - 1] + t * (values[i] - values[i - 1])
                    }
                }
            }
        }
    }

    fn taper(&self, r: f64) -> f64 {
        if r <= self.cutoff_radius {
            1.0
        } else if r >= self.cutoff_radius + self.taper_width {
            0.0
        } else {
            0.5 * (1.0 + (PI * (r - self.cutoff_radius) / self.taper_width).cos())
        }
    }

    /// Truncated profile actually placed on the grid.
    pub fn value(&self, r: f64) -> f64 {
        self.profile(r) * self.taper(r)
    }

    pub fn is_zero(&self) -> bool {
        match &self.family {
            PotentialFamily::Gaussian { amplitude, .. }
            | PotentialFamily::RegularizedPower { amplitude, .. } => *amplitude == 0.0,
            PotentialFamily::Table { values, .. } => values.iter().all(|&v| v == 0.0),
        }
    }

    /// Radial, non-negative, non-increasing; support fits in `B_{L/4}`.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.cutoff_radius > 0.0 && self.taper_width > 0.0) {
            return Err(Error::InvalidPotential(
                "cutoff radius and taper width must be positive".into(),
            ));
        }
        let support = self.cutoff_radius + self.taper_width;
        if support > grid.half_extent() / 4.0 {
            return Err(Error::InvalidPotential(format!(
                "support radius {support} exceeds L/4 = {}",
                grid.half_extent() / 4.0
            )));
        }
        match &self.family {
            PotentialFamily::Gaussian { amplitude, width } => {
                if !(*amplitude >= 0.0 && *width > 0.0) {
                    return Err(Error::InvalidPotential(
                        "gaussian needs amplitude >= 0 and width > 0".into(),
                    ));
                }
            }
            PotentialFamily::RegularizedPower {
                amplitude,
                exponent,
            } => {
                if !(*amplitude >= 0.0 && *exponent > 0.0) {
                    return Err(Error::InvalidPotential(
                        "regularized power needs amplitude >= 0 and exponent > 0".into(),
                    ));
                }
            }
            PotentialFamily::Table { radii, values } => {
                if radii.len() != values.len() || radii.len() < 2 {
                    return Err(Error::InvalidPotential(
                        "table needs at least two (radius, value) pairs".into(),
                    ));
                }
                if radii[0] < 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidPotential(
                        "table radii must be increasing and non-negative".into(),
                    ));
                }
                if values.iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidPotential(
                        "table values must be non-negative".into(),
                    ));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidPotential(
                        "table values must be non-increasing in r".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn realize(&self, grid: &Grid) -> Result<RealizedPotential> {
        RealizedPotential::new(self, grid)
    }
}

/// `V` sampled on a grid together with its transform and convolution multiplier.
#[derive(Clone, Debug)]
pub struct RealizedPotential {
    spec: PotentialSpec,
    grid: Grid,
    values: Vec<f64>,
    hat: Vec<f64>,
    multiplier: Vec<f64>,
}

impl RealizedPotential {
    pub fn new(spec: &PotentialSpec, grid: &Grid) -> Result<Self> {
        spec.validate(grid)?;
        let values: Vec<f64> = (0..grid.len())
            .map(|i| spec.value(grid.position_norm_sq(i).sqrt()))
            .collect();
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.forward_in_place(&mut buf);
        let hat: Vec<f64> = buf.iter().map(|z| z.re).collect();
        let c = (2.0 * PI).powf(grid.dim() as f64 / 2.0);
        let mut multiplier: Vec<f64> = hat.iter().map(|v| c * v).collect();
        if spec.zero_mode == ZeroMode::Drop {
            multiplier[grid.origin_index()] = 0.0;
        }
        Ok(Self {
            spec: spec.clone(),
            grid: grid.clone(),
            values,
            hat,
            multiplier,
        })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Position samples.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `V^` on the centered frequency lattice (real: `V` is even).
    pub fn hat(&self) -> &[f64] {
        &self.hat
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// `V * f` for a position-space buffer, via `F(V * f) = (2 pi)^{n/2} V^ f^`.
    pub fn convolve(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut buf = f.to_vec();
        self.grid.forward_in_place(&mut buf);
        for (v, m) in buf.iter_mut().zip(&self.multiplier) {
            *v *= m;
        }
        self.grid.inverse_in_place(&mut buf);
        buf
    }

    /// `V * rho` for a real density; returns the real part and the largest
    /// imaginary residue relative to the largest real value.
    pub fn convolve_real(&self, rho: &[f64]) -> (Vec<f64>, f64) {
        let buf: Vec<Complex64> = rho.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        let out = self.convolve(&buf);
        let max_re = out.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
        let max_im = out.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let residue = if max_re > 0.0 {
            max_im / max_re
        } else {
            max_im
        };
        (out.into_iter().map(|z| z.re).collect(), residue)
    }
}

/// Closed form of the unitary transform of the untruncated gaussian profile.
pub fn gaussian_hat(amplitude: f64, width: f64, dim: usize, xi_norm: f64) -> f64 {
    amplitude * width.powi(dim as i32) * (-0.5 * width * width * xi_norm * xi_norm).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn realized_gaussian_matches_closed_form_transform() {
        let g = make_grid(1, 512, 64.0).unwrap();
        let spec = PotentialSpec::gaussian(0.7, 1.0, 10.0, 4.0);
        let v = spec.realize(&g).unwrap();
        let err = v
            .hat()
            .iter()
            .enumerate()
            .map(|(i, h)| (h - gaussian_hat(0.7, 1.0, 1, g.frequency_norm_sq(i).sqrt())).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn support_must_fit_quarter_box() {
        let g = make_grid(1, 64, 16.0).unwrap();
        assert!(PotentialSpec::gaussian(1.0, 1.0, 3.0, 1.0)
            .realize(&g)
            .is_ok());
        assert!(matches!(
            PotentialSpec::gaussian(1.0, 1.0, 3.5, 1.0).realize(&g),
            Err(Error::InvalidPotential(_))
        ));
    }

    #[test]
    fn table_must_be_monotone_and_non_negative() {
        let g = make_grid(1, 64, 32.0).unwrap();
        let mk = |values: Vec<f64>| PotentialSpec {
            family: PotentialFamily::Table {
                radii: vec![0.0, 1.0, 2.0],
                values,
            },
            cutoff_radius: 3.0,
            taper_width: 1.0,
            zero_mode: ZeroMode::Keep,
            metadata: PotentialMetadata::default(),
        };
        assert!(mk(vec![2.0, 1.0, 0.5]).realize(&g).is_ok());
        assert!(mk(vec![1.0, 2.0, 0.5]).realize(&g).is_err());
        assert!(mk(vec![1.0, 0.5, -0.1]).realize(&g).is_err());
        assert!((mk(vec![2.0, 1.0, 0.5]).profile(1.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn realization_is_even_and_tapered() {
        let g = make_grid(2, 32, 16.0).unwrap();
        let spec = PotentialSpec {
            family: PotentialFamily::RegularizedPower {
                amplitude: 1.0,
                exponent: 3.0,
            },
            cutoff_radius: 2.0,
            taper_width: 2.0,
            zero_mode: ZeroMode::Keep,
            metadata: PotentialMetadata::default(),
        };
        let v = spec.realize(&g).unwrap();
        for i in 0..g.len() {
            let r = g.position_norm_sq(i).sqrt();
            if r >= 4.0 {
                assert_eq!(v.values()[i], 0.0);
            }
        }
        assert!(v.hat().iter().all(|h| h.is_finite()));
    }

    #[test]
    fn zero_mode_drop_removes_mean() {
        let g = make_grid(1, 128, 16.0).unwrap();
        let v = PotentialSpec::gaussian(1.0, 1.0, 3.0, 1.0)
            .realize(&g)
            .unwrap();
        let rho: Vec<f64> = g.axis_positions().iter().map(|x| (-x * x).exp()).collect();
        let (w, _) = v.convolve_real(&rho);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 1e-14);
    }
}
