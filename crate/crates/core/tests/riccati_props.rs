//! Property suite for the continuous-time machinery: oracle fidelity over
//! random plants, flow monotonicity and decay, disturbance response, and the
//! cost-scaling laws.

mod common;

use common::{kinematics, random_cost, random_stable_system, rng};
use robust_dp_core::mat::{DenseMatrix, SymMatrix};
use robust_dp_core::riccati::{
    closed_loop_gain, integrate_dmre, riccati_residual, scale_cost, solve_are_kleinman,
    CostWeights, LtiSystem, ScaleMode,
};

fn spectral_abscissa(m: &DenseMatrix) -> f64 {
    m.complex_eigenvalues().iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn oracle_residual_small_over_random_plants() {
    let mut r = rng(0x5eed_0001);
    for case in 0..100 {
        let n = 1 + case % 6;
        let m = 1 + case % 3;
        let sys = random_stable_system(&mut r, n, m);
        let cost = random_cost(&mut r, n, m);
        let sol = solve_are_kleinman(&sys, &cost, &DenseMatrix::zeros(m, n)).unwrap();
        let bound = 1e-9 * sol.p.norm_fro().max(1.0);
        assert!(
            sol.residual_norm <= bound,
            "case {case}: residual {} above {bound}",
            sol.residual_norm
        );
    }
}

#[test]
fn flow_stays_above_solution_from_dominating_start() {
    let (sys, cost, k0) = kinematics();
    let sol = solve_are_kleinman(&sys, &cost, &k0).unwrap();
    let p0 = sol.p.add(&SymMatrix::identity(3).scale(2.0));
    let traj = integrate_dmre(&sys, &cost, &p0, 20.0, 1e-3, None, 200).unwrap();
    for (t, p) in traj.times.iter().zip(&traj.values) {
        let diff = (p.sub(&sol.p)).to_dense();
        let min_eig =
            diff.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min_eig >= -1e-8, "ordering violated at t = {t}: min eig {min_eig}");
    }
}

#[test]
fn flow_decays_exponentially_near_solution() {
    let (sys, cost, k0) = kinematics();
    let sol = solve_are_kleinman(&sys, &cost, &k0).unwrap();
    let p0 = sol.p.add(&SymMatrix::identity(3).scale(0.05));
    let traj = integrate_dmre(&sys, &cost, &p0, 40.0, 1e-3, None, 1000).unwrap();
    let logs: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.values)
        .map(|(t, p)| (*t, p.sub(&sol.p).norm_fro().ln()))
        .collect();
    // Eventually decreasing: monotone after the short initial transient.
    for w in logs[5..].windows(2) {
        assert!(w[1].1 < w[0].1 + 1e-12, "log error rose at t = {}", w[1].0);
    }
    // Least-squares slope over the tail is negative and at least the slow
    // closed-loop rate (2·0.14) up to slack.
    let tail = &logs[logs.len() / 2..];
    let n = tail.len() as f64;
    let (st, sy): (f64, f64) = tail.iter().fold((0.0, 0.0), |a, x| (a.0 + x.0, a.1 + x.1));
    let (stt, sty): (f64, f64) =
        tail.iter().fold((0.0, 0.0), |a, x| (a.0 + x.0 * x.0, a.1 + x.0 * x.1));
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    assert!(slope < -0.2, "decay slope {slope} too shallow");
}

#[test]
fn vanishing_disturbance_recovers_solution() {
    let (sys, cost, k0) = kinematics();
    let sol = solve_are_kleinman(&sys, &cost, &k0).unwrap();
    let delta = |t: f64| SymMatrix::identity(3).scale((-t).exp());
    // Start at the solution so only the injected term moves the flow. The
    // response tail decays at the slow closed-loop rate 0.28, which needs
    // T = 60 to drop below the tolerance.
    let traj = integrate_dmre(&sys, &cost, &sol.p, 60.0, 1e-3, Some(&delta), 5000).unwrap();
    assert!(traj.final_value().sub(&sol.p).norm_fro() <= 1e-6);
}

#[test]
fn bounded_disturbance_keeps_flow_bounded() {
    let (sys, cost, k0) = kinematics();
    let sol = solve_are_kleinman(&sys, &cost, &k0).unwrap();
    let delta = |t: f64| SymMatrix::identity(3).scale(0.1 * t.sin());
    let traj = integrate_dmre(&sys, &cost, &sol.p, 200.0, 1e-3, Some(&delta), 2000).unwrap();
    let ball = 2.0 * sol.p.norm_fro();
    for (t, p) in traj.times.iter().zip(&traj.values) {
        assert!(p.norm_fro() <= ball, "flow left the ball at t = {t}");
    }
}

#[test]
fn stationary_start_stays_put() {
    let (sys, cost, k0) = kinematics();
    let sol = solve_are_kleinman(&sys, &cost, &k0).unwrap();
    let traj = integrate_dmre(&sys, &cost, &sol.p, 10.0, 1e-3, None, 100).unwrap();
    for p in &traj.values {
        assert!(p.sub(&sol.p).norm_fro() <= 1e-9);
    }
}

#[test]
fn scalar_flow_reaches_analytic_limit() {
    let sys = LtiSystem::new(
        DenseMatrix::from_row_slice(1, 1, &[-1.0]),
        DenseMatrix::from_row_slice(1, 1, &[1.0]),
    )
    .unwrap();
    let cost = CostWeights::new(SymMatrix::identity(1), SymMatrix::identity(1)).unwrap();
    let traj = integrate_dmre(&sys, &cost, &SymMatrix::zeros(1), 20.0, 1e-3, None, 1000).unwrap();
    assert!((traj.final_value().get(0, 0) - (2f64.sqrt() - 1.0)).abs() <= 1e-8);
}

#[test]
fn proportional_scaling_preserves_gain_and_scales_solution() {
    let mut r = rng(0x5eed_0002);
    for _ in 0..10 {
        let sys = random_stable_system(&mut r, 4, 2);
        let cost = random_cost(&mut r, 4, 2);
        let base = solve_are_kleinman(&sys, &cost, &DenseMatrix::zeros(2, 4)).unwrap();
        for lambda in [0.3, 2.0, 17.0] {
            let scaled_cost = scale_cost(&cost, lambda, ScaleMode::Proportional).unwrap();
            let scaled = solve_are_kleinman(&sys, &scaled_cost, &DenseMatrix::zeros(2, 4)).unwrap();
            assert!((&scaled.k - &base.k).norm() <= 1e-8, "gain moved under lambda {lambda}");
            assert!(
                scaled.p.sub(&base.p.scale(lambda)).norm_fro() <= 1e-8 * lambda.max(1.0),
                "solution is not lambda-proportional at {lambda}"
            );
        }
    }
}

#[test]
fn cheap_control_scaling_pushes_poles_left() {
    // Full-rank input map so the closed-loop spectrum can be driven
    // arbitrarily far left as control gets cheap relative to state cost.
    let sys = LtiSystem::new(
        DenseMatrix::from_row_slice(2, 2, &[-1.0, 0.8, -0.2, -0.6]),
        DenseMatrix::identity(2, 2),
    )
    .unwrap();
    let cost = CostWeights::new(SymMatrix::identity(2), SymMatrix::identity(2)).unwrap();
    let mut last = 0.0;
    for (i, lambda) in [1.0, 0.1, 0.01].into_iter().enumerate() {
        let scaled = scale_cost(&cost, lambda, ScaleMode::GainAssignment).unwrap();
        let sol = solve_are_kleinman(&sys, &scaled, &DenseMatrix::zeros(2, 2)).unwrap();
        let abscissa = spectral_abscissa(&(sys.a() - sys.b() * &sol.k));
        if i > 0 {
            assert!(
                abscissa < last,
                "abscissa {abscissa} did not decrease from {last} at lambda {lambda}"
            );
        }
        last = abscissa;
    }
    assert!(last < -5.0, "cheap-control limit left the spectrum at {last}");
}

#[test]
fn scale_identity_at_unit_lambda() {
    let (_, cost, _) = kinematics();
    for mode in [ScaleMode::Proportional, ScaleMode::GainAssignment] {
        let scaled = scale_cost(&cost, 1.0, mode).unwrap();
        assert_eq!(scaled.q().packed(), cost.q().packed());
        assert_eq!(scaled.r().packed(), cost.r().packed());
    }
}

#[test]
fn disturbance_energy_ratio_is_finite_gain() {
    // Injected energy vs response energy around the solution: the ratio is
    // the empirical squared gain of the perturbed flow and must be finite
    // and modest for a calm plant.
    let (sys, cost, k0) = kinematics();
    let sol = solve_are_kleinman(&sys, &cost, &k0).unwrap();
    let delta = |t: f64| SymMatrix::identity(3).scale(0.05 * (0.7 * t).sin());
    let traj = integrate_dmre(&sys, &cost, &sol.p, 60.0, 1e-3, Some(&delta), 10).unwrap();
    let dt_sample = traj.times[1] - traj.times[0];
    let mut response = 0.0;
    let mut injected = 0.0;
    for (t, p) in traj.times.iter().zip(&traj.values) {
        response += p.sub(&sol.p).norm_fro().powi(2) * dt_sample;
        injected += delta(*t).norm_fro().powi(2) * dt_sample;
    }
    let gain_sq = response / injected;
    assert!(gain_sq.is_finite() && gain_sq > 0.0);
    assert!(gain_sq <= 100.0, "energy ratio {gain_sq} unexpectedly large");
}
