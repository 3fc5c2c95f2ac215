//! Fixtures shared by the benchmarks.

use hfscat_core::{
    kernel_g, lambda_grid, make_grid, Grid, KernelMatrix, OrbitalSet, PotentialSpec, ProbeSpec,
    RealizedPotential, TimeQuadrature, XiGrid,
};

pub struct Setup {
    pub grid: Grid,
    pub potential: RealizedPotential,
    pub probes: Vec<ProbeSpec>,
}

/// One-dimensional setup on `points` nodes over `[-64, 64)`.
pub fn setup(points: usize) -> Setup {
    let grid = make_grid(1, points, 64.0).expect("grid");
    let potential = PotentialSpec::gaussian(0.05, 1.0, 4.0, 2.0)
        .realize(&grid)
        .expect("potential");
    let probes = vec![
        ProbeSpec::centered(1, 1.0).with_center(vec![-0.5]),
        ProbeSpec::centered(1, 1.0).with_center(vec![0.5]),
    ];
    Setup {
        grid,
        potential,
        probes,
    }
}

impl Setup {
    pub fn state(&self, orbitals: usize) -> OrbitalSet {
        let fields = self.probes[..orbitals]
            .iter()
            .map(|p| p.realize(&self.grid).expect("probe"))
            .collect();
        OrbitalSet::new(fields, 0.0).expect("orbitals")
    }

    pub fn kernel(&self, nodes: usize) -> KernelMatrix {
        let lam = lambda_grid(0.0, 1.0, nodes).expect("lambda grid");
        let xi = XiGrid::radial_shells(&self.grid, 4.0).expect("xi grid");
        kernel_g(&self.grid, &self.probes[0], &lam, &xi, &TimeQuadrature::window(8.0))
            .expect("kernel")
    }
}
