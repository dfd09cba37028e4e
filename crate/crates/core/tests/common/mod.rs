//! Shared fixtures for the integration suites: seeded generators for random
//! stable plants and the two small benchmark problems.

#![allow(dead_code)]

use nalgebra::linalg::QR;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use robust_dp_core::mat::{DenseMatrix, SymMatrix};
use robust_dp_core::riccati::{CostWeights, LtiSystem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random Hurwitz drift via an orthogonal similarity of an upper-triangular
/// matrix: eigenvalues drawn from [−3, −0.5], mild non-normal coupling above
/// the diagonal. K = 0 stabilizes every plant from this generator, and the
/// solutions stay small because the spectrum is uniformly damped.
pub fn random_stable_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LtiSystem {
    let mut t = DenseMatrix::zeros(n, n);
    for i in 0..n {
        t[(i, i)] = rng.gen_range(-3.0..-0.5);
        for j in i + 1..n {
            t[(i, j)] = rng.gen_range(-0.3..0.3);
        }
    }
    let g = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let u = QR::new(g).q();
    let a = &u * t * u.transpose();
    let b = DenseMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
    LtiSystem::new(a, b).unwrap()
}

/// Well-conditioned random weights: Q positive definite with unit Frobenius
/// norm, R positive definite with eigenvalues at least 1/2.
pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostWeights {
    let g = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q_dense = (g.transpose() * &g) / (n as f64) + DenseMatrix::identity(n, n) * 0.1;
    let mut q = SymMatrix::from_dense(&q_dense).unwrap();
    q = q.scale(1.0 / q.norm_fro());
    let h = DenseMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    let r_dense = (h.transpose() * &h) / (2.0 * m as f64) + DenseMatrix::identity(m, m) * 0.5;
    let r = SymMatrix::from_dense(&r_dense).unwrap();
    CostWeights::new(q, r).unwrap()
}

/// Point-mass-with-actuator-lag benchmark: position/velocity/force chain,
/// unit mass, drag coefficient 5, 0.1 s actuator time constant, unit
/// weights. The returned gain is stabilizing but far from optimal.
pub fn kinematics() -> (LtiSystem, CostWeights, DenseMatrix) {
    let sys = LtiSystem::new(
        DenseMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, -5.0, 1.0, 0.0, 0.0, -10.0]),
        DenseMatrix::from_column_slice(3, 1, &[0.0, 0.0, 10.0]),
    )
    .unwrap();
    let cost = CostWeights::new(SymMatrix::identity(3), SymMatrix::identity(1)).unwrap();
    let k0 = DenseMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    (sys, cost, k0)
}

/// Four-decimal published solution for the benchmark above; carries the
/// error of the solver it was produced with (about 2.6e−3 in the top-left
/// entry).
pub fn kinematics_reference_p() -> SymMatrix {
    SymMatrix::from_upper(3, &[7.4044, 1.4311, 0.1000, 0.3801, 0.0248, 0.0431])
}

/// Companion-form benchmark for the variance-minimization example:
/// third-order output dynamics with characteristic coefficients (4, 1, 4),
/// scalar input on the last state, weights Q = 0.1·I, R = 0.01.
pub fn timeseries() -> (LtiSystem, CostWeights, DenseMatrix) {
    let sys = LtiSystem::new(
        DenseMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -4.0, -1.0, -4.0]),
        DenseMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]),
    )
    .unwrap();
    let cost = CostWeights::new(
        SymMatrix::identity(3).scale(0.1),
        SymMatrix::identity(1).scale(0.01),
    )
    .unwrap();
    // A − B·K0 is the companion matrix of s³ + 4s² + 3s + 4: Hurwitz.
    let k0 = DenseMatrix::from_row_slice(1, 3, &[0.0, 2.0, 1.0]);
    (sys, cost, k0)
}

/// Four-decimal published solution for the time-series benchmark.
pub fn timeseries_reference_p() -> SymMatrix {
    SymMatrix::from_upper(3, &[0.2859, 0.1492, 0.0110, 0.3366, 0.0539, 0.0206])
}
