use std::f64::consts::PI;

use hfscat_core::uniqueness::{ball_sweep, time_samples, DEFAULT_T_SAMPLES};
use hfscat_core::{
    build_disjoint_probes, distinguish, localization_window, make_grid, verify_g1_orthogonality,
    verify_g2_support, Error, Field, Grid, PotentialSpec, ProbeSpec, Verdict, WindowSpec,
};

fn grid() -> Grid {
    make_grid(1, 512, 32.0).unwrap()
}

fn window(orbitals: usize, eps: f64, delta: f64) -> WindowSpec {
    WindowSpec {
        orbitals,
        j: 0,
        eps,
        delta,
        anchor: vec![0.0],
        t_max: 4.0,
        t_samples: DEFAULT_T_SAMPLES,
    }
}

#[test]
fn two_probes_at_plus_minus_three() {
    let g = grid();
    let p = build_disjoint_probes(&g, 1.0, &[vec![3.0], vec![-3.0]]).unwrap();
    let a = p[0].realize(&g).unwrap().to_frequency();
    let b = p[1].realize(&g).unwrap().to_frequency();
    let scale = a.max_abs() * b.max_abs();
    assert!(a.values().iter().zip(b.values()).all(|(x, y)| (x * y).norm() <= 1e-14 * scale));
}

#[test]
fn collinear_spacing_four_eps_is_valid() {
    let g = grid();
    let p = build_disjoint_probes(&g, 0.5, &[vec![-2.0], vec![0.0], vec![2.0]]).unwrap();
    assert_eq!(p.len(), 3);
    let err = build_disjoint_probes(&g, 1.0, &[vec![0.0], vec![1.5]]).unwrap_err();
    assert!(matches!(err, Error::Geometry(_)));
}

#[test]
fn bands_beyond_nyquist_are_rejected() {
    let g = grid();
    let edge = g.nyquist() - 0.5;
    assert!(build_disjoint_probes(&g, 1.0, &[vec![0.0], vec![edge]]).is_err());
}

#[test]
fn density_spectra_share_the_origin() {
    // rho >= 0 peaks at xi = 0 with |rho^(0)| = |phi|^2 (2 pi)^(-n/2)
    let g = grid();
    let p = build_disjoint_probes(&g, 1.0, &[vec![3.0], vec![-3.0]]).unwrap();
    let f: Vec<Field> = p.iter().map(|q| q.realize(&g).unwrap()).collect();
    let r = verify_g1_orthogonality(&f, &time_samples(4.0, 17)).unwrap();
    assert!((r.max_defect - 1.0 / (2.0 * PI)).abs() <= 1e-12, "{}", r.max_defect);
    assert_eq!(r.worst_frequency, vec![0.0]);
    assert!(r.unconjugated_defect <= 1e-14);
}

#[test]
fn overlapping_doubled_bands_give_a_defect() {
    let g = grid();
    let a = ProbeSpec::centered(1, 1.0).realize(&g).unwrap();
    let b = ProbeSpec::centered(1, 1.0).with_center(vec![1.0]).realize(&g).unwrap();
    let r = verify_g1_orthogonality(&[a, b], &time_samples(2.0, 5)).unwrap();
    assert!(r.unconjugated_defect > 1e-4);
}

#[test]
fn pair_spectrum_centers() {
    let g = grid();
    let ts = time_samples(4.0, 17);
    let zero = verify_g2_support(&g, &ProbeSpec::centered(1, 1.0), &ProbeSpec::centered(1, 1.0), &ts)
        .unwrap();
    assert!(zero.outside_fraction <= 1e-10);
    let a = ProbeSpec::centered(1, 1.0).with_center(vec![3.0]);
    let b = ProbeSpec::centered(1, 1.0).with_center(vec![-3.0]);
    let r = verify_g2_support(&g, &a, &b, &ts).unwrap();
    assert_eq!(r.center, vec![6.0]);
    assert!(r.outside_fraction <= 1e-10);
    // the sum center carries essentially none of the mass
    assert!(r.outside_fraction_sum_center >= 1.0 - 1e-10);
    let half = verify_g2_support(
        &g,
        &ProbeSpec::centered(1, 0.5).with_center(vec![3.0]),
        &ProbeSpec::centered(1, 0.5).with_center(vec![-3.0]),
        &ts,
    )
    .unwrap();
    assert_eq!(half.radius, 1.0);
    assert!(half.outside_fraction <= 1e-10);
}

#[test]
fn window_mass_stays_in_the_target_ball() {
    let g = grid();
    for target in [0.0, 1.5, -2.5] {
        let w = localization_window(&g, &window(3, 0.25, 1.5), &[target]).unwrap();
        assert!(w.values.iter().all(|&v| v >= 0.0));
        assert!(1.0 - w.inside_fraction <= 1e-8, "{target}: {}", w.inside_fraction);
        assert!(w.l1 > 0.0);
    }
}

#[test]
fn window_at_origin_is_symmetric() {
    let g = grid();
    let w = localization_window(&g, &window(3, 0.25, 1.5), &[0.0]).unwrap();
    let c: Vec<f64> = w.probes.iter().map(|p| p.center[0]).collect();
    assert_eq!(c[0], 0.0);
    assert!((c[1] + c[2]).abs() <= 1e-12);
    let m = g.len();
    let o = g.origin_index();
    let peak = w.values.iter().cloned().fold(0.0, f64::max);
    for i in 1..m / 2 {
        let (a, b) = (w.values[o + i], w.values[o - i]);
        assert!((a - b).abs() <= 1e-12 * peak);
    }
}

#[test]
fn delta_must_exceed_four_eps() {
    let g = grid();
    let err = localization_window(&g, &window(2, 0.5, 1.9), &[0.0]).unwrap_err();
    assert!(matches!(err, Error::Geometry(_)));
}

fn potential(g: &Grid, a: f64) -> Vec<f64> {
    PotentialSpec::gaussian(a, 1.0, 4.0, 2.0).realize(g).unwrap().hat().to_vec()
}

#[test]
fn equal_potentials_are_identical() {
    let g = grid();
    let v = potential(&g, 1.0);
    let r = distinguish(&g, &v, &v, &window(2, 0.25, 1.25), &ball_sweep(1, 3.0, 0.5), 1e-8).unwrap();
    assert_eq!(r.verdict, Verdict::IdenticalWithinTol);
    assert!(r.balls.iter().all(|b| b.integral == 0.0));
}

#[test]
fn scaled_potential_is_distinguished_everywhere() {
    let g = grid();
    let v1 = potential(&g, 1.0);
    let v2 = potential(&g, 1.01);
    let r = distinguish(&g, &v1, &v2, &window(2, 0.25, 1.25), &ball_sweep(1, 3.0, 0.5), 1e-8).unwrap();
    assert!(matches!(r.verdict, Verdict::DistinguishedAt { .. }));
    // w = -0.01 V^_1 has one sign, so every integral does too
    assert!(r.balls.iter().all(|b| b.integral < 0.0));
}

#[test]
fn bump_is_located() {
    let g = grid();
    let v1 = potential(&g, 1.0);
    let p0 = 2.0;
    let v2: Vec<f64> = v1
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = g.frequency(i)[0];
            let bump = |c: f64| 1e-3 * (-((x - c) / 0.2).powi(2)).exp();
            v + bump(p0) + bump(-p0)
        })
        .collect();
    let spec = window(2, 0.25, 1.25);
    let r = distinguish(&g, &v1, &v2, &spec, &ball_sweep(1, 4.0, 0.5), 1e-6).unwrap();
    match r.verdict {
        Verdict::DistinguishedAt { center } => {
            assert!((center[0].abs() - p0).abs() < spec.delta, "{center:?}");
        }
        v => panic!("{v:?}"),
    }
    let swapped = distinguish(&g, &v2, &v1, &spec, &ball_sweep(1, 4.0, 0.5), 1e-6).unwrap();
    for (a, b) in r.balls.iter().zip(&swapped.balls) {
        assert_eq!(a.integral, -b.integral);
    }
}
