//! Continuous-time LQR plumbing: the algebraic Riccati equation, its
//! differential form, and the two cost-scaling families used to trade
//! convergence speed against gain size.
//!
//! The stationary solver is Newton-type (a Lyapunov solve per policy update)
//! and serves as the oracle everything else is measured against. The
//! differential equation dP/dt = A'P + PA - P B R^{-1} B' P + Q (+ Delta(t))
//! is integrated by fixed-step RK4; an additive, possibly time-varying
//! perturbation is accepted as a first-class term because the downstream
//! iterations are analyzed exactly as such perturbed flows.

use crate::mat::{is_hurwitz, is_pd, solve_lyapunov, DenseMatrix, MatError, SymMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RiccatiError {
    #[error("system matrices malformed: {0}")]
    BadSystem(String),
    #[error("cost weights rejected: {0}")]
    BadCost(String),
    #[error("initial gain is not stabilizing")]
    NotStabilizing,
    #[error("policy iteration did not converge within {iterations} iterations (last step {last_delta:.3e})")]
    NoConvergence { iterations: usize, last_delta: f64 },
    #[error("integration left the finite range at t = {t}")]
    NonFinite { t: f64 },
    #[error(transparent)]
    Mat(#[from] MatError),
}

/// Strictly proper LTI plant `dx/dt = A x + B u`.
#[derive(Debug, Clone)]
pub struct LtiSystem {
    a: DenseMatrix,
    b: DenseMatrix,
}

impl LtiSystem {
    pub fn new(a: DenseMatrix, b: DenseMatrix) -> Result<Self, RiccatiError> {
        if a.nrows() != a.ncols() {
            return Err(RiccatiError::BadSystem(format!(
                "A is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(RiccatiError::BadSystem(format!(
                "B has {} rows for an {}-state plant",
                b.nrows(),
                a.nrows()
            )));
        }
        if b.ncols() == 0 || a.nrows() == 0 {
            return Err(RiccatiError::BadSystem("empty state or input space".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(RiccatiError::BadSystem("non-finite entries".into()));
        }
        Ok(LtiSystem { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }
}

/// Quadratic running cost `x'Qx + u'Ru`, with Q >= 0 and R > 0.
#[derive(Debug, Clone)]
pub struct CostWeights {
    q: SymMatrix,
    r: SymMatrix,
}

impl CostWeights {
    /// Validates Q positive semidefinite (up to a 1e-8 scale-relative margin)
    /// and R positive definite. Symmetry is structural in [`SymMatrix`].
    pub fn new(q: SymMatrix, r: SymMatrix) -> Result<Self, RiccatiError> {
        if !q.is_finite() || !r.is_finite() {
            return Err(RiccatiError::BadCost("non-finite entries".into()));
        }
        let shift = 1e-8 * q.norm_fro().max(1.0);
        let shifted = q.add(&SymMatrix::identity(q.dim()).scale(shift));
        if !is_pd(&shifted) {
            return Err(RiccatiError::BadCost("Q is not positive semidefinite".into()));
        }
        if !is_pd(&r) {
            return Err(RiccatiError::BadCost("R is not positive definite".into()));
        }
        Ok(CostWeights { q, r })
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    /// `R^{-1} B'`, the factor shared by the gain and the quadratic term.
    pub fn r_inv_bt(&self, sys: &LtiSystem) -> DenseMatrix {
        let r = self.r.to_dense();
        r.lu()
            .solve(&sys.b().transpose())
            .expect("R validated positive definite at construction")
    }
}

/// How a scale parameter enters the cost pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// `(lambda Q, lambda R)`: the optimal gain is invariant, P scales linearly.
    Proportional,
    /// `(lambda Q, lambda^2 R)`: shrinking lambda buys faster closed loops at
    /// the price of larger gains. The quadratic exponent is the concrete
    /// choice of the "faster-than-linear" control-weight decay this family
    /// requires.
    GainAssignment,
}

/// Builds the scaled cost pair for `lambda > 0`.
pub fn scale_cost(cost: &CostWeights, lambda: f64, mode: ScaleMode) -> Result<CostWeights, RiccatiError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(RiccatiError::BadCost(format!("scale {lambda} must be positive")));
    }
    let (q, r) = match mode {
        ScaleMode::Proportional => (cost.q.scale(lambda), cost.r.scale(lambda)),
        ScaleMode::GainAssignment => (cost.q.scale(lambda), cost.r.scale(lambda * lambda)),
    };
    CostWeights::new(q, r)
}

/// Riccati operator `R(P) = A'P + PA - P B R^{-1} B' P + Q`, the right-hand
/// side of the differential equation and the stationarity defect of the
/// algebraic one.
pub fn riccati_residual(p: &SymMatrix, sys: &LtiSystem, cost: &CostWeights) -> SymMatrix {
    debug_assert_eq!(p.dim(), sys.n());
    let pd = p.to_dense();
    let s = sys.b() * cost.r_inv_bt(sys); // B R^{-1} B'
    let res = sys.a().transpose() * &pd + &pd * sys.a() - &pd * s * &pd + cost.q().to_dense();
    SymMatrix::from_dense(&res).expect("square by construction")
}

/// Feedback gain `K = R^{-1} B' P` associated with a value matrix.
pub fn closed_loop_gain(p: &SymMatrix, sys: &LtiSystem, cost: &CostWeights) -> DenseMatrix {
    cost.r_inv_bt(sys) * p.to_dense()
}

/// Stationary solution of the ARE together with its gain and certificate data.
#[derive(Debug, Clone)]
pub struct AreSolution {
    pub p: SymMatrix,
    pub k: DenseMatrix,
    /// Frobenius norm of the Riccati operator at `p`.
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Newton/policy iteration for the ARE from a stabilizing initial gain.
///
/// Each step solves the closed-loop Lyapunov equation for the current policy
/// cost and re-derives the gain; the iteration is quadratically convergent
/// and monotone from a stabilizing start. Terminates when successive value
/// matrices differ by at most `1e-11 * max(1, ||P||_F)`; gives up after 200
/// iterations.
pub fn solve_are_kleinman(
    sys: &LtiSystem,
    cost: &CostWeights,
    k0: &DenseMatrix,
) -> Result<AreSolution, RiccatiError> {
    if k0.nrows() != sys.m() || k0.ncols() != sys.n() {
        return Err(RiccatiError::BadSystem(format!(
            "K0 is {}x{}, expected {}x{}",
            k0.nrows(),
            k0.ncols(),
            sys.m(),
            sys.n()
        )));
    }
    if cost.q().dim() != sys.n() || cost.r().dim() != sys.m() {
        return Err(RiccatiError::BadCost("weight dimensions do not match the plant".into()));
    }
    let mut k = k0.clone();
    let mut a_cl = sys.a() - sys.b() * &k;
    if !is_hurwitz(&a_cl) {
        return Err(RiccatiError::NotStabilizing);
    }
    let mut p_prev: Option<SymMatrix> = None;
    let mut last_delta = f64::INFINITY;
    for it in 1..=200 {
        let krk = k.transpose() * cost.r().to_dense() * &k;
        let w = cost.q().add(&SymMatrix::from_dense(&krk).expect("square"));
        let p = solve_lyapunov(&a_cl, &w)?;
        if let Some(prev) = &p_prev {
            last_delta = p.sub(prev).norm_fro();
            if last_delta <= 1e-11 * prev.norm_fro().max(1.0) {
                let k_star = closed_loop_gain(&p, sys, cost);
                let residual_norm = riccati_residual(&p, sys, cost).norm_fro();
                let a_star = sys.a() - sys.b() * &k_star;
                if !is_hurwitz(&a_star) {
                    return Err(RiccatiError::NotStabilizing);
                }
                return Ok(AreSolution { p, k: k_star, residual_norm, iterations: it });
            }
        }
        k = closed_loop_gain(&p, sys, cost);
        a_cl = sys.a() - sys.b() * &k;
        p_prev = Some(p);
    }
    Err(RiccatiError::NoConvergence { iterations: 200, last_delta })
}

/// Sampled trajectory of a differential Riccati integration.
#[derive(Debug, Clone)]
pub struct DmreTrajectory {
    pub times: Vec<f64>,
    pub values: Vec<SymMatrix>,
}

impl DmreTrajectory {
    pub fn final_value(&self) -> &SymMatrix {
        self.values.last().expect("trajectory contains at least the initial sample")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory contains at least the initial sample")
    }
}

/// Synthesizes a stabilizing feedback gain for a controllable plant without
/// requiring one up front (Bass's method).
///
/// With `beta` exceeding the spectral abscissa of `A`, the Lyapunov solution
/// `W` of `(A + beta I) W + W (A + beta I)' = 2 B B'` is positive definite
/// exactly when the pair is controllable, and `K = B' W^{-1}` places
/// `A - B K` in the open left half-plane. Useful as a [`solve_are_kleinman`]
/// seed when no stabilizing gain is known, e.g. for open-loop unstable or
/// marginal plants.
pub fn stabilizing_gain(sys: &LtiSystem) -> Result<DenseMatrix, RiccatiError> {
    let beta = sys.a().norm() + 1.0;
    let shifted_t = (sys.a() + DenseMatrix::identity(sys.n(), sys.n()) * beta).transpose();
    let gram = SymMatrix::from_dense(&(-2.0 * sys.b() * sys.b().transpose()))
        .expect("square by construction");
    let w = solve_lyapunov(&shifted_t, &gram)?;
    if !is_pd(&w) {
        return Err(RiccatiError::BadSystem(
            "plant is not controllable: the shifted controllability Gram matrix is singular"
                .into(),
        ));
    }
    let w_inv = w
        .to_dense()
        .cholesky()
        .ok_or_else(|| {
            RiccatiError::BadSystem("controllability Gram matrix lost definiteness".into())
        })?
        .inverse();
    Ok(sys.b().transpose() * w_inv)
}

/// Integrates `dP/dt = R(P) + Delta(t)` by fixed-step RK4 from `p0`.
///
/// `disturbance`, when present, is evaluated at the RK4 stage times and must
/// return a symmetric matrix of matching dimension. Samples are recorded
/// every `output_stride` steps (clamped to at least 1), always including the
/// initial and final states. Divergence to non-finite values aborts with the
/// last finite time in the error.
pub fn integrate_dmre(
    sys: &LtiSystem,
    cost: &CostWeights,
    p0: &SymMatrix,
    t_final: f64,
    dt: f64,
    disturbance: Option<&dyn Fn(f64) -> SymMatrix>,
    output_stride: usize,
) -> Result<DmreTrajectory, RiccatiError> {
    if p0.dim() != sys.n() {
        return Err(RiccatiError::BadSystem("P0 dimension does not match the plant".into()));
    }
    if !(dt > 0.0) || !(t_final > 0.0) {
        return Err(RiccatiError::BadSystem("dt and T must be positive".into()));
    }
    let stride = output_stride.max(1);
    let n_steps = (t_final / dt).round().max(1.0) as usize;
    let rhs = |t: f64, p: &SymMatrix| -> SymMatrix {
        let mut f = riccati_residual(p, sys, cost);
        if let Some(d) = disturbance {
            f = f.add(&d(t));
        }
        f
    };
    let mut p = p0.clone();
    let mut times = vec![0.0];
    let mut values = vec![p.clone()];
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let k1 = rhs(t, &p);
        let k2 = rhs(t + 0.5 * dt, &p.axpy(0.5 * dt, &k1));
        let k3 = rhs(t + 0.5 * dt, &p.axpy(0.5 * dt, &k2));
        let k4 = rhs(t + dt, &p.axpy(dt, &k3));
        let mut incr = k1;
        incr = incr.add(&k2.scale(2.0));
        incr = incr.add(&k3.scale(2.0));
        incr = incr.add(&k4);
        p = p.axpy(dt / 6.0, &incr);
        if !p.is_finite() {
            return Err(RiccatiError::NonFinite { t });
        }
        let done = step + 1 == n_steps;
        if (step + 1) % stride == 0 || done {
            times.push((step + 1) as f64 * dt);
            values.push(p.clone());
        }
    }
    Ok(DmreTrajectory { times, values })
}
