use std::f64::consts::PI;

use hfscat_core::kernels::{density_spectrum_energy, kernel_g_for_field, pair_spectrum};
use hfscat_core::{
    forward_map, kernel_g, kernel_h, kernel_hf, make_grid, Field, Grid, ProbeSpec, TimeQuadrature,
    XiGrid,
};
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simpson(a: f64, b: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut n = ((b - a) / dt).ceil().max(2.0) as usize;
    n += n % 2;
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let w = match i {
                0 => 1.0,
                i if i == n => 1.0,
                i if i % 2 == 1 => 4.0,
                _ => 2.0,
            };
            (a + i as f64 * h, w * h / 3.0)
        })
        .collect()
}

fn window_nodes(t: f64, dt: f64) -> Vec<(f64, f64)> {
    let mut v = simpson(-t, 0.0, dt);
    v.extend(simpson(0.0, t, dt));
    v
}

/// Density spectrum at lattice label `k` by direct O(M^2) sums.
fn naive_density(grid: &Grid, phi_hat: &[C], t: f64, labels: &[i64]) -> Vec<C> {
    let m = grid.points_per_axis();
    let h = grid.spacing();
    let dxi = grid.dual_spacing();
    let xs = grid.axis_positions();
    let xis: Vec<f64> = (0..m).map(|i| (i as f64 - (m / 2) as f64) * dxi).collect();
    let u: Vec<C> = xs
        .iter()
        .map(|&x| {
            xis.iter()
                .zip(phi_hat)
                .map(|(&xi, &a)| a * C::from_polar(1.0, xi * x - 0.5 * t * xi * xi))
                .sum::<C>()
                * dxi
                / (2.0 * PI).sqrt()
        })
        .collect();
    labels
        .iter()
        .map(|&k| {
            let xi = k as f64 * dxi;
            xs.iter()
                .zip(&u)
                .map(|(&x, z)| z.norm_sqr() * C::from_polar(1.0, -xi * x))
                .sum::<C>()
                * h
                / (2.0 * PI).sqrt()
        })
        .collect()
}

#[test]
fn kernel_h_matches_naive_quadrature() {
    let g = make_grid(1, 32, 8.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probes: Vec<ProbeSpec> = (0..3)
        .map(|_| {
            ProbeSpec::centered(1, rng.gen_range(1.0..1.6))
                .with_center(vec![rng.gen_range(-1.0..1.0)])
                .with_amplitude(rng.gen_range(0.5..1.5))
        })
        .collect();
    let nodes: Vec<Vec<Vec<i64>>> = (1..=8).map(|k| vec![vec![k], vec![-k]]).collect();
    let xi = XiGrid::from_labels(&g, &nodes).unwrap();
    let (t_max, dt) = (2.0, 0.02);
    let quad = TimeQuadrature::Window {
        t_max,
        dt: Some(dt),
    };
    let k = kernel_h(&g, &probes, 1, &[0.0], &xi, &quad).unwrap();
    let hats: Vec<Vec<C>> = probes
        .iter()
        .map(|p| p.realize(&g).unwrap().to_frequency().into_values())
        .collect();
    let labels: Vec<i64> = (1..=8).flat_map(|k| [k, -k]).collect();
    let mut acc = vec![C::new(0.0, 0.0); labels.len()];
    for (t, w) in window_nodes(t_max, dt) {
        let d: Vec<Vec<C>> = hats
            .iter()
            .map(|h| naive_density(&g, h, t, &labels))
            .collect();
        for kk in [0usize, 2] {
            for (a, (x, y)) in acc.iter_mut().zip(d[kk].iter().zip(&d[1])) {
                *a += w * x * y.conj();
            }
        }
    }
    for (s, got) in k.entries[0].iter().enumerate() {
        let want = 0.5 * (acc[2 * s] + acc[2 * s + 1]);
        assert!(want.im.abs() < 1e-12 * want.re.abs().max(1e-12));
        assert!(
            (got - want.re).abs() <= 1e-8 * want.re.abs().max(1e-12),
            "{s}: {got} {}",
            want.re
        );
    }
}

#[test]
fn kernel_hf_splits_into_hartree_and_exchange() {
    let g = make_grid(1, 256, 32.0).unwrap();
    let probes = vec![
        ProbeSpec::centered(1, 0.5).with_center(vec![-1.5]),
        ProbeSpec::centered(1, 0.5).with_center(vec![1.5]),
    ];
    let xi = XiGrid::radial_shells(&g, 4.0).unwrap();
    let (t_max, dt) = (3.0, 0.01);
    let quad = TimeQuadrature::Window {
        t_max,
        dt: Some(dt),
    };
    let lam = [0.0, 0.25];
    let hf = kernel_hf(&g, &probes, 0, &lam, &xi, &quad).unwrap();
    let h = kernel_h(&g, &probes, 0, &lam, &xi, &quad).unwrap();
    assert!(hf.diagonal_residue <= 1e-12);
    for (row, &l) in lam.iter().enumerate() {
        let fields: Vec<Field> = probes
            .iter()
            .map(|p| p.clone().with_dilation(l).realize(&g).unwrap())
            .collect();
        let mut ex = vec![0.0; xi.len()];
        for (t, w) in window_nodes(t_max, dt) {
            let p = pair_spectrum(&fields[0], &fields[1], t).unwrap();
            for (e, s) in ex.iter_mut().zip(&xi.shells) {
                let mean = s
                    .members
                    .iter()
                    .map(|&i| p.values()[i].norm_sqr())
                    .sum::<f64>()
                    / s.members.len() as f64;
                *e += w * mean;
            }
        }
        let scale = h
            .max_abs()
            .max(ex.iter().fold(0.0, |a: f64, b| a.max(b.abs())));
        for c in 0..xi.len() {
            let want = h.entries[row][c] - ex[c];
            assert!(
                (hf.entries[row][c] - want).abs() <= 1e-8 * scale,
                "{row} {c}"
            );
        }
    }
}

#[test]
fn gaussian_forward_map_matches_closed_form_quadrature() {
    let g = make_grid(1, 2048, 256.0).unwrap();
    // G(xi, 0) for phi = e^{-x^2/2} is sqrt(2 pi) e^{-xi^2/2} / (2 |xi|)
    let phi = Field::from_position_fn(&g, "gauss", |x| C::new((-0.5 * x[0] * x[0]).exp(), 0.0));
    let xi = XiGrid::radial_shells(&g, 5.0).unwrap();
    let w = 1.0;
    let c = 0.3;
    let v_hat = xi.sample_radial(|r| c * w * (-0.5 * w * w * r * r).exp());
    let g_exact = xi.sample_radial(|r| (2.0 * PI).sqrt() * (-0.5 * r * r).exp() / (2.0 * r));
    let want: f64 = xi
        .weights()
        .iter()
        .zip(&v_hat)
        .zip(&g_exact)
        .map(|((a, b), c)| a * b * c)
        .sum();
    let kernel = kernel_g_for_field(
        &phi,
        &xi,
        &TimeQuadrature::Adaptive {
            t0: 4.0,
            dt: Some(0.02),
            tail_tol: 1e-8,
            max_doublings: 4,
        },
    )
    .unwrap();
    let kept: Vec<f64> = kernel
        .xi_grid
        .sample_radial(|r| c * w * (-0.5 * w * w * r * r).exp());
    let got = forward_map(&kept, &kernel).unwrap()[0];
    let g_kept = kernel
        .xi_grid
        .sample_radial(|r| (2.0 * PI).sqrt() * (-0.5 * r * r).exp() / (2.0 * r));
    let want_kept: f64 = kernel
        .xi_grid
        .weights()
        .iter()
        .zip(&kept)
        .zip(&g_kept)
        .map(|((a, b), c)| a * b * c)
        .sum();
    assert!(
        (got - want_kept).abs() <= 1e-6 * want_kept,
        "{got} {want_kept}"
    );
    assert!(want_kept <= want);
}

#[test]
fn density_energy_is_bounded_as_window_doubles() {
    let g = make_grid(2, 128, 64.0).unwrap();
    let phi = ProbeSpec::centered(2, 1.0).realize(&g).unwrap();
    let (a, h1) = density_spectrum_energy(&phi, 8.0, 0.05).unwrap();
    let (b, _) = density_spectrum_energy(&phi, 16.0, 0.05).unwrap();
    let ca = a / h1.powi(4);
    let cb = b / h1.powi(4);
    assert!(cb >= ca && cb < 1.5 * ca, "{ca} {cb}");
}

#[test]
fn g_is_non_negative_and_real() {
    let g = make_grid(2, 32, 16.0).unwrap();
    let p = ProbeSpec::centered(2, 1.0);
    let xi = XiGrid::radial_shells(&g, 1.5).unwrap();
    let k = kernel_g(&g, &p, &[0.0, 0.5], &xi, &TimeQuadrature::window(2.0)).unwrap();
    assert!(k.entries.iter().flatten().all(|&x| x >= 0.0));
    assert!(k.imag_residue <= 1e-10);
}
