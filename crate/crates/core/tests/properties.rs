use std::sync::OnceLock;

use hfscat_core::{
    dilate, evolve_with, free_propagate, kernel_g, lambda_grid, make_grid, modulate,
    reconstruct, singular_system, EvolveOptions, Field, Grid, KernelMatrix, Model, OrbitalSet,
    PotentialSpec, ProbeSpec, Regularization, Representation, SingularSystem, TimeQuadrature,
    XiGrid,
};
use num_complex::Complex64 as C;
use proptest::prelude::*;

fn grid64() -> &'static Grid {
    static G: OnceLock<Grid> = OnceLock::new();
    G.get_or_init(|| make_grid(1, 64, 8.0).unwrap())
}

fn random_field(vals: &[(f64, f64)]) -> Field {
    Field::new(
        grid64(),
        Representation::Position,
        vals.iter().map(|&(a, b)| C::new(a, b)).collect(),
        "random",
    )
    .unwrap()
}

fn values() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 64)
}

fn kernel() -> &'static (KernelMatrix, SingularSystem) {
    static K: OnceLock<(KernelMatrix, SingularSystem)> = OnceLock::new();
    K.get_or_init(|| {
        let g = make_grid(1, 256, 32.0).unwrap();
        let lam = lambda_grid(0.0, 1.0, 9).unwrap();
        let xi = XiGrid::radial_shells(&g, 2.0).unwrap();
        let k = kernel_g(&g, &ProbeSpec::centered(1, 1.0), &lam, &xi, &TimeQuadrature::window(4.0))
            .unwrap();
        let s = singular_system(&k, 1e-10).unwrap();
        (k, s)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plancherel(v in values()) {
        let f = random_field(&v);
        let n = f.norm();
        prop_assert!((f.fourier().unwrap().norm() - n).abs() <= 1e-12 * n);
    }

    #[test]
    fn free_flow_is_unitary_with_group_law(v in values(), t in -100.0..100.0f64, s in -100.0..100.0f64) {
        let f = random_field(&v);
        let n = f.norm();
        let u = free_propagate(&f, t).unwrap();
        prop_assert!((u.norm() - n).abs() <= 1e-12 * n);
        let two = free_propagate(&u, s).unwrap();
        let one = free_propagate(&f, t + s).unwrap();
        prop_assert!(two.sub(&one).unwrap().norm() <= 1e-12 * n);
        let halves = free_propagate(&free_propagate(&f, t / 2.0).unwrap(), t / 2.0).unwrap();
        prop_assert!(halves.sub(&u).unwrap().norm() <= 1e-12 * n);
    }

    #[test]
    fn lattice_modulation_is_invertible(v in values(), k in -6i64..6) {
        let f = random_field(&v);
        let vel = [k as f64 * grid64().dual_spacing()];
        let m = modulate(&f, &vel);
        // random fields fill the whole band, so large shifts alias
        if let Ok(m) = m {
            let back = modulate(&m, &[-vel[0]]).unwrap();
            prop_assert!((m.norm() - f.norm()).abs() <= 1e-12 * f.norm());
            prop_assert!(back.sub(&f).unwrap().norm() <= 1e-12 * f.norm());
        }
    }

    #[test]
    fn probes_stay_in_their_band(radius in 0.5..2.5f64, center in -1.5..1.5f64, order in 2u32..5) {
        let g = make_grid(1, 256, 32.0).unwrap();
        let mut p = ProbeSpec::centered(1, radius).with_center(vec![center]);
        p.smoothness_order = order;
        let f = p.realize(&g).unwrap();
        prop_assert!(f.spectral_mass_outside(&[center], radius) <= 1e-14);
        prop_assert!((f.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn dilation_of_gaussians_is_exact(lambda in 0.0..1.0f64, w in 0.8..2.0f64) {
        let g = make_grid(1, 512, 32.0).unwrap();
        let gauss = |s: f64| {
            Field::from_position_fn(&g, "g", move |x| C::new((-(s * x[0]).powi(2) / (2.0 * w * w)).exp(), 0.0))
        };
        let err = dilate(&gauss(1.0), lambda).unwrap().sub(&gauss(1.0 + lambda)).unwrap().max_abs();
        prop_assert!(err <= 1e-10, "{err:e}");
    }

    #[test]
    fn norms_are_conserved(a in 0.2..1.5f64, b in 0.2..1.5f64, x0 in -2.0..2.0f64) {
        let g = make_grid(1, 128, 16.0).unwrap();
        let v = PotentialSpec::gaussian(1.0, 1.0, 3.0, 1.0).realize(&g).unwrap();
        let packet = |amp: f64, c: f64| {
            Field::from_position_fn(&g, "p", move |x| C::new(amp * (-0.5 * (x[0] - c).powi(2)).exp(), 0.0))
        };
        let s = OrbitalSet::new(vec![packet(a, x0), packet(b, -x0)], 0.0).unwrap();
        for model in [Model::Hartree, Model::Hf] {
            let (_, r) = evolve_with(&s, &v, model, 0.0, 0.5, 0.01, &EvolveOptions::default(), None).unwrap();
            prop_assert!(r.norm_drift.iter().all(|&d| d <= 1e-8), "{model}: {:?}", r.norm_drift);
        }
    }

    #[test]
    fn kernel_is_lipschitz_in_lambda(f in prop::collection::vec(-1.0..1.0f64, 1..64)) {
        let (k, _) = kernel();
        let f: Vec<f64> = (0..k.cols()).map(|j| f[j % f.len()]).collect();
        let sup = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let kf = hfscat_core::forward_map(&f, k).unwrap();
        let c = k.operator_lipschitz();
        for i in 0..k.rows() {
            for j in 0..k.rows() {
                let bound = c * sup * (k.lambda_grid[i] - k.lambda_grid[j]).abs();
                prop_assert!((kf[i] - kf[j]).abs() <= bound * (1.0 + 1e-12) + 1e-15);
            }
        }
    }

    #[test]
    fn reconstruction_is_linear_in_the_data(p in prop::collection::vec(-1.0..1.0f64, 9), s in 0.01..100.0f64, k in 1usize..5) {
        let (_, sys) = kernel();
        let reg = Regularization::Tsvd { k: Some(k) };
        let a = reconstruct(&p, sys, reg).unwrap();
        let scaled: Vec<f64> = p.iter().map(|x| s * x).collect();
        let b = reconstruct(&scaled, sys, reg).unwrap();
        let size = a.v_hat.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (x, y) in a.v_hat.iter().zip(&b.v_hat) {
            prop_assert!((s * x - y).abs() <= 1e-10 * s * size.max(1e-300));
        }
    }

    #[test]
    fn residual_does_not_grow_with_k(p in prop::collection::vec(-1.0..1.0f64, 9)) {
        let (_, sys) = kernel();
        let r = reconstruct(&p, sys, Regularization::Tsvd { k: None }).unwrap();
        for w in r.residual_curve.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
    }
}
