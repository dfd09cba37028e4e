//! Problem generators: seeded random stabilizable plants with well-behaved
//! costs for the verification suite, and the two fixed benchmark problems
//! with their tabulated reference solutions.

use nalgebra::linalg::QR;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use robust_dp_core::mat::{DenseMatrix, SymMatrix};
use robust_dp_core::riccati::{CostWeights, LtiSystem};

/// Random Hurwitz drift by construction: an orthogonal similarity of an
/// upper-triangular matrix whose eigenvalues are drawn from [−3, −0.5], with
/// mild non-normal coupling above the diagonal. K = 0 stabilizes every plant
/// from this generator, so the policy-iteration oracle needs no gain search,
/// and the uniformly damped spectrum keeps the stationary solutions small.
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
    LtiSystem::new(a, b).expect("generated drift and input matrices are finite")
}

/// Well-conditioned random weights: Q positive definite with unit Frobenius
/// norm, R positive definite with eigenvalues at least 1/2.
pub fn random_cost(rng: &mut ChaCha8Rng, n: usize, m: usize) -> CostWeights {
    let g = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q_dense = (g.transpose() * &g) / (n as f64) + DenseMatrix::identity(n, n) * 0.1;
    let mut q = SymMatrix::from_dense(&q_dense).expect("Gram construction is symmetric");
    q = q.scale(1.0 / q.norm_fro());
    let h = DenseMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
    let r_dense = (h.transpose() * &h) / (2.0 * m as f64) + DenseMatrix::identity(m, m) * 0.5;
    let r = SymMatrix::from_dense(&r_dense).expect("Gram construction is symmetric");
    CostWeights::new(q, r).expect("generated weights are PD by construction")
}

/// Point-mass positioning plant: position, velocity, and actuator force with
/// ẋ = (v, (f − drag·v)/mass, (u − f)/time_constant). The drag default is 5,
/// the value the tabulated reference solution and gain are consistent with
/// (the published parameter table's value of 1 contradicts its own displayed
/// solution; see the benchmark reference notes).
pub fn kinematics_plant(mass: f64, drag: f64, time_constant: f64) -> LtiSystem {
    let a = DenseMatrix::from_row_slice(
        3,
        3,
        &[0.0, 1.0, 0.0, 0.0, -drag / mass, 1.0 / mass, 0.0, 0.0, -1.0 / time_constant],
    );
    let b = DenseMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0 / time_constant]);
    LtiSystem::new(a, b).expect("kinematics builder produces finite matrices")
}

/// Four-decimal tabulated stationary solution for the positioning benchmark
/// (unit weights). Carries its source solver's rounding: the exact solution
/// differs by about 2.6e−3 in the leading entry.
pub fn kinematics_reference() -> SymMatrix {
    SymMatrix::from_upper(3, &[7.4044, 1.4311, 0.1000, 0.3801, 0.0248, 0.0431])
}

/// Companion-form plant for the output-variance benchmark: third-order
/// dynamics with characteristic row `coeffs` and scalar input on the last
/// state. Defaults (−4, −1, −4) place the spectrum at {−4, ±i}, so the
/// open-loop output mode is undamped.
pub fn timeseries_plant(coeffs: [f64; 3]) -> LtiSystem {
    let a = DenseMatrix::from_row_slice(
        3,
        3,
        &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, coeffs[0], coeffs[1], coeffs[2]],
    );
    let b = DenseMatrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
    LtiSystem::new(a, b).expect("companion builder produces finite matrices")
}

/// Four-decimal tabulated stationary solution for the variance benchmark
/// (Q = 0.1·I₃, R = 0.01).
pub fn timeseries_reference() -> SymMatrix {
    SymMatrix::from_upper(3, &[0.2859, 0.1492, 0.0110, 0.3366, 0.0539, 0.0206])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream;
    use robust_dp_core::mat::{is_hurwitz, is_pd};

    #[test]
    fn generated_plants_are_hurwitz_with_pd_weights() {
        let mut rng = stream(3, "sysgen-check");
        for i in 0..25 {
            let n = 1 + i % 6;
            let m = 1 + i % 3;
            let sys = random_stable_system(&mut rng, n, m);
            assert!(is_hurwitz(sys.a()), "draw {i} produced a non-Hurwitz drift");
            let cost = random_cost(&mut rng, n, m);
            assert!(is_pd(cost.q()) && is_pd(cost.r()));
        }
    }

    #[test]
    fn benchmark_builders_reproduce_the_fixed_matrices() {
        let kin = kinematics_plant(1.0, 5.0, 0.1);
        assert_eq!(kin.a()[(1, 1)], -5.0);
        assert_eq!(kin.a()[(2, 2)], -10.0);
        assert_eq!(kin.b()[(2, 0)], 10.0);
        let ts = timeseries_plant([-4.0, -1.0, -4.0]);
        assert_eq!(ts.a()[(2, 0)], -4.0);
        assert_eq!(ts.b()[(2, 0)], 1.0);
        assert!(!is_hurwitz(ts.a()), "variance benchmark is marginal, not stable");
    }
}
