//! Stochastic simulation and path-integral estimation for ergodic
//! linear-quadratic control.
//!
//! The plant is a linear diffusion with constant additive noise directions,
//! driven jointly with a Brownian exploration input. One realization of the
//! joint process is simulated up front; regressor integrals accumulated along
//! growing windows of that path estimate the quadratic-form coefficients
//! θ(P) = [vecs(PA + A'P); ves(B'P); Σᵢ σᵢ'Pσᵢ], and a value iteration driven
//! by those estimates approaches the stationary optimum without ever reading
//! A, B, or the noise directions.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::adp::{self, TrajectorySample};
use crate::mat::{bar_vec, is_pd, DenseMatrix, DenseVector, SymMatrix};
use crate::riccati::{CostWeights, LtiSystem};
use crate::vi::{Termination, TraceRow, ViConfig, ViError, ViRun};

/// Length of the path regressor ψ(x, u) = [x̄; x ⊗ u; 1]: quadratic state
/// monomials, state–input cross terms, and a constant slot that absorbs the
/// noise-variance contribution of the quadratic form's drift.
pub fn path_regressor_dim(n: usize, m: usize) -> usize {
    adp::model_term_dim(n, m) + 1
}

fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed-upper index of entry (i, j), i ≤ j, in `vecs` ordering.
fn sym_index(n: usize, i: usize, j: usize) -> usize {
    i * (2 * n - i + 1) / 2 + (j - i)
}

#[derive(Debug, Error)]
pub enum ErgodicError {
    #[error(transparent)]
    Vi(#[from] ViError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("invalid path: {0}")]
    BadPath(String),
    #[error("state became non-finite at t = {t}")]
    BlowUp { t: f64 },
    #[error(
        "regressor Gram matrix at t = {t} is numerically singular \
         (min eigenvalue {min_eig:.3e}); grow the first estimation time or \
         add exploration noise"
    )]
    SingularGram { t: f64, min_eig: f64 },
}

/// Linear diffusion dx = (Ax + Bu)dt + Σᵢ σᵢ dwᵢ with constant noise
/// directions σᵢ and independent scalar Brownian motions wᵢ.
#[derive(Debug, Clone)]
pub struct SdeSystem {
    sys: LtiSystem,
    sigma_x: Vec<DenseVector>,
}

impl SdeSystem {
    pub fn new(sys: LtiSystem, sigma_x: Vec<DenseVector>) -> Result<Self, ErgodicError> {
        for (i, s) in sigma_x.iter().enumerate() {
            if s.len() != sys.n() {
                return Err(ErgodicError::BadConfig(format!(
                    "noise direction {i} has length {}, expected {}",
                    s.len(),
                    sys.n()
                )));
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(ErgodicError::BadConfig(format!(
                    "noise direction {i} has non-finite entries"
                )));
            }
        }
        Ok(Self { sys, sigma_x })
    }

    pub fn lti(&self) -> &LtiSystem {
        &self.sys
    }

    pub fn sigma_x(&self) -> &[DenseVector] {
        &self.sigma_x
    }

    /// Σᵢ σᵢ' P σᵢ: the stationary running-cost offset the additive noise
    /// induces under the quadratic form P.
    pub fn noise_quadratic_sum(&self, p: &SymMatrix) -> f64 {
        self.sigma_x.iter().map(|s| p.quad_form(s.as_slice())).sum()
    }
}

/// Exploration input du = −K₀ dx + Σᵢ σ_{u,i} dwᵢ: a fixed stabilizing gain
/// applied to state increments plus Brownian dither on the input channels.
#[derive(Debug, Clone)]
pub struct ExplorationPolicy {
    k0: DenseMatrix,
    sigma_u: Vec<DenseVector>,
}

impl ExplorationPolicy {
    pub fn new(k0: DenseMatrix, sigma_u: Vec<DenseVector>) -> Result<Self, ErgodicError> {
        if !k0.iter().all(|v| v.is_finite()) {
            return Err(ErgodicError::BadConfig("gain has non-finite entries".into()));
        }
        for (i, s) in sigma_u.iter().enumerate() {
            if s.len() != k0.nrows() {
                return Err(ErgodicError::BadConfig(format!(
                    "exploration direction {i} has length {}, expected {}",
                    s.len(),
                    k0.nrows()
                )));
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(ErgodicError::BadConfig(format!(
                    "exploration direction {i} has non-finite entries"
                )));
            }
        }
        Ok(Self { k0, sigma_u })
    }

    pub fn k0(&self) -> &DenseMatrix {
        &self.k0
    }

    pub fn sigma_u(&self) -> &[DenseVector] {
        &self.sigma_u
    }
}

/// Evenly spaced estimation times t_k = t₀ · (k + 1).
pub fn linear_times(t0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| t0 * (k + 1) as f64).collect()
}

/// Configuration of an estimation-driven run: simulation step, the growing
/// window ends t_k at which the path estimate is refreshed, and the shared
/// iteration parameters (initial matrix, step sizes, safety radius,
/// termination threshold).
#[derive(Debug, Clone)]
pub struct ErgodicConfig {
    pub dt: f64,
    pub t_schedule: Vec<f64>,
    pub vi: ViConfig,
}

impl ErgodicConfig {
    /// Default shape: 1 ms simulation step and estimation windows growing by
    /// 5 s per iteration.
    pub fn new(vi: ViConfig, iterations: usize) -> Result<Self, ErgodicError> {
        let cfg = Self { dt: 1e-3, t_schedule: linear_times(5.0, iterations), vi };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ErgodicError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ErgodicError::BadConfig(format!(
                "simulation step must be positive and finite, got {}",
                self.dt
            )));
        }
        if self.t_schedule.is_empty() {
            return Err(ErgodicError::BadConfig("estimation schedule is empty".into()));
        }
        let mut prev = 0.0;
        for (k, &t) in self.t_schedule.iter().enumerate() {
            if !(t.is_finite() && t > prev) {
                return Err(ErgodicError::BadConfig(format!(
                    "estimation times must be finite, positive, and strictly increasing; \
                     violated at entry {k} ({t})"
                )));
            }
            prev = t;
        }
        self.vi.validate_scalars()?;
        Ok(())
    }
}

/// Simulates the joint (x, u) diffusion by the Euler–Maruyama scheme on a
/// uniform grid: Δx = (Ax + Bu)dt + Σσᵢ√dt·ξᵢ, Δu = −K₀Δx + Σσ_{u,i}√dt·ξᵢ
/// with independent standard normal ξ from the seeded stream. The initial
/// state is deterministic and u(0) = −K₀x(0).
pub fn simulate_sde(
    sys: &SdeSystem,
    pol: &ExplorationPolicy,
    x0: &DenseVector,
    t_final: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<TrajectorySample>, ErgodicError> {
    let n = sys.lti().n();
    let m = sys.lti().m();
    if pol.k0().nrows() != m || pol.k0().ncols() != n {
        return Err(ErgodicError::BadConfig(format!(
            "gain is {}x{}, expected {}x{}",
            pol.k0().nrows(),
            pol.k0().ncols(),
            m,
            n
        )));
    }
    if x0.len() != n || !x0.iter().all(|v| v.is_finite()) {
        return Err(ErgodicError::BadConfig(format!(
            "initial state must be finite with length {n}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite() && t_final >= dt && t_final.is_finite()) {
        return Err(ErgodicError::BadConfig(
            "simulation step and horizon must be positive with at least one step".into(),
        ));
    }
    let steps = (t_final / dt).round() as usize;
    let sqrt_dt = dt.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.clone();
    let mut u = -(pol.k0() * &x);
    let mut samples = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt;
        samples.push(TrajectorySample { t, x: x.clone(), u: u.clone() });
        if k == steps {
            break;
        }
        let mut dx = (sys.lti().a() * &x + sys.lti().b() * &u) * dt;
        for s in sys.sigma_x() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            dx += s * (sqrt_dt * xi);
        }
        let mut du = -(pol.k0() * &dx);
        for s in pol.sigma_u() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            du += s * (sqrt_dt * xi);
        }
        x += dx;
        u += du;
        if !(x.iter().all(|v| v.is_finite()) && u.iter().all(|v| v.is_finite())) {
            return Err(ErgodicError::BlowUp { t: t + dt });
        }
    }
    Ok(samples)
}

fn validate_path(path: &[TrajectorySample]) -> Result<(usize, usize), ErgodicError> {
    adp::validate_trajectory(path).map_err(|e| ErgodicError::BadPath(e.to_string()))
}

/// Index of the last sample at or before time t (tolerating grid roundoff).
fn window_end(path: &[TrajectorySample], t: f64) -> Result<usize, ErgodicError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(ErgodicError::BadConfig(format!(
            "estimation time must be positive and finite, got {t}"
        )));
    }
    let tol = 1e-9 * (1.0 + t.abs());
    let last = path.last().expect("validated non-empty").t;
    if t > last + tol {
        return Err(ErgodicError::BadConfig(format!(
            "estimation time {t} exceeds the simulated horizon {last}"
        )));
    }
    let idx = path.partition_point(|s| s.t <= t + tol);
    Ok(idx.saturating_sub(1))
}

fn path_regressor(s: &TrajectorySample, n: usize, m: usize) -> DenseVector {
    let dim = path_regressor_dim(n, m);
    let mut v = DVector::zeros(dim);
    v.rows_mut(0, sym_dim(n)).copy_from(&bar_vec(s.x.as_slice()));
    let mut idx = sym_dim(n);
    for r in 0..n {
        for c in 0..m {
            v[idx] = s.x[r] * s.u[c];
            idx += 1;
        }
    }
    v[dim - 1] = 1.0;
    v
}

/// Running integrals along a growing window of one path: the regressor Gram
/// ∫ψψ'dt by trapezoidal quadrature and the cross operator C = Σⱼψ(tⱼ)·
/// (x̄(tⱼ₊₁) − x̄(tⱼ))', so that ∫ψ d(x'Px) = C·vecs(P) exactly (the stored
/// increments of the quadratic form telescope; the left-endpoint regressor
/// keeps the noise term mean-zero).
struct PathAccumulator {
    n: usize,
    m: usize,
    gram: DenseMatrix,
    cross_op: DenseMatrix,
    upto: usize,
}

impl PathAccumulator {
    fn new(n: usize, m: usize) -> Self {
        let dim = path_regressor_dim(n, m);
        Self {
            n,
            m,
            gram: DenseMatrix::zeros(dim, dim),
            cross_op: DenseMatrix::zeros(dim, sym_dim(n)),
            upto: 0,
        }
    }

    /// Extends the integrals over segments [upto, to].
    fn extend(&mut self, path: &[TrajectorySample], to: usize) {
        if to <= self.upto {
            return;
        }
        let mut psi = path_regressor(&path[self.upto], self.n, self.m);
        let mut bar = bar_vec(path[self.upto].x.as_slice());
        for j in self.upto..to {
            let next_psi = path_regressor(&path[j + 1], self.n, self.m);
            let next_bar = bar_vec(path[j + 1].x.as_slice());
            let w = 0.5 * (path[j + 1].t - path[j].t);
            self.gram.ger(w, &psi, &psi, 1.0);
            self.gram.ger(w, &next_psi, &next_psi, 1.0);
            let dbar = &next_bar - &bar;
            self.cross_op.ger(1.0, &psi, &dbar, 1.0);
            psi = next_psi;
            bar = next_bar;
        }
        self.upto = to;
    }

    /// Smallest eigenvalue of the time-averaged Gram (1/t)∫ψψ'dt.
    fn min_eigenvalue(&self, t: f64) -> f64 {
        let scaled = &self.gram / t;
        let eigs = scaled.symmetric_eigenvalues();
        eigs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Solves Gram·θ = C·vecs(P). The raw regression coefficient on the
    /// state–input block is 2B'P — the chain rule doubles the cross term of
    /// the quadratic form — so that block is halved before returning, making
    /// the result directly comparable to [vecs(PA + A'P); ves(B'P); Σσᵢ'Pσᵢ].
    fn solve_theta(&self, p: &SymMatrix, t: f64) -> Result<DenseVector, ErgodicError> {
        let scaled = &self.gram / t;
        let eigs = scaled.symmetric_eigenvalues();
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_eig = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(min_eig > 1e-12 * max_eig.max(1.0)) {
            return Err(ErgodicError::SingularGram { t, min_eig });
        }
        let rhs = &self.cross_op * p.vecs();
        let theta = self
            .gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(ErgodicError::SingularGram { t, min_eig })?;
        let mut theta = theta;
        let p_dim = sym_dim(self.n);
        for i in p_dim..p_dim + self.n * self.m {
            theta[i] *= 0.5;
        }
        Ok(theta)
    }
}

/// Least-squares estimate of θ(P) = [vecs(PA + A'P); ves(B'P); Σᵢσᵢ'Pσᵢ]
/// from the window [0, t_k] of a recorded path: time-averaged regressor Gram
/// against the summed increments of the quadratic form x'Px.
pub fn estimate_theta(
    path: &[TrajectorySample],
    p: &SymMatrix,
    t_k: f64,
) -> Result<DenseVector, ErgodicError> {
    let (n, m) = validate_path(path)?;
    if p.dim() != n {
        return Err(ErgodicError::BadConfig(format!(
            "matrix dimension {} does not match the path state dimension {n}",
            p.dim()
        )));
    }
    let to = window_end(path, t_k)?;
    let mut acc = PathAccumulator::new(n, m);
    acc.extend(path, to);
    acc.solve_theta(p, path[to].t)
}

/// Smallest eigenvalue of the time-averaged regressor Gram (1/t)∫₀ᵗψψ'dt — an
/// empirical excitation margin: a positive value certifies that the windowed
/// least-squares problem is solvable.
pub fn empirical_gram_check(path: &[TrajectorySample], t: f64) -> Result<f64, ErgodicError> {
    let (n, m) = validate_path(path)?;
    let to = window_end(path, t)?;
    let mut acc = PathAccumulator::new(n, m);
    acc.extend(path, to);
    if to == 0 {
        return Ok(0.0);
    }
    Ok(acc.min_eigenvalue(path[to].t))
}

/// Repacks the block estimate [vecs(PA + A'P); ves(B'P); noise scalar] into
/// the row-interleaved model-term layout used by the trajectory-regression
/// runner, so both share one extraction of the update direction and gain.
fn interleave_model_terms(theta: &DenseVector, n: usize, m: usize) -> DenseVector {
    let p_dim = sym_dim(n);
    let mut out = DVector::zeros(adp::model_term_dim(n, m));
    let mut idx = 0usize;
    for i in 0..n {
        for j in i..n {
            out[idx] = theta[sym_index(n, i, j)];
            idx += 1;
        }
        // (PB)[i, c] = (B'P)[c, i], stored column-major in the middle block.
        for c in 0..m {
            out[idx] = theta[p_dim + i * m + c];
            idx += 1;
        }
    }
    out
}

/// Estimation-driven value iteration along one simulated realization.
///
/// The path is simulated once to the final estimation time; iteration k
/// re-estimates θ(P_k) on the growing window [0, t_k] and applies the usual
/// half-step, safety-ball, restart, and termination rules with the plain
/// scaled update norm as the metric. Exhausting the estimation schedule ends
/// the run as an iteration-budget outcome.
pub fn ergodic_adp_run(
    sys: &SdeSystem,
    pol: &ExplorationPolicy,
    cost: &CostWeights,
    cfg: &ErgodicConfig,
    seed: u64,
) -> Result<ViRun, ErgodicError> {
    cfg.validate()?;
    let n = sys.lti().n();
    let m = sys.lti().m();
    if cost.q().dim() != n || cost.r().dim() != m {
        return Err(ErgodicError::BadConfig(format!(
            "cost dimensions ({}, {}) do not match the plant ({n}, {m})",
            cost.q().dim(),
            cost.r().dim()
        )));
    }
    if !is_pd(cost.q()) {
        return Err(ErgodicError::BadConfig(
            "estimation-driven runs require a positive definite state weight".into(),
        ));
    }
    if cfg.vi.p0.dim() != n {
        return Err(ErgodicError::BadConfig(format!(
            "initial matrix dimension {} does not match the plant dimension {n}",
            cfg.vi.p0.dim()
        )));
    }

    let t_max = *cfg.t_schedule.last().expect("validated non-empty");
    let x0 = DenseVector::zeros(n);
    let path = simulate_sde(sys, pol, &x0, t_max, cfg.dt, seed)?;
    let mut acc = PathAccumulator::new(n, m);

    let budget = cfg.vi.max_iters.min(cfg.t_schedule.len());
    let mut p = cfg.vi.p0.clone();
    let mut q = 0usize;
    let mut trace = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut iterations = budget;
    let mut final_p = None;

    for k in 0..budget {
        let h = cfg.vi.steps.step(k);
        let to = window_end(&path, cfg.t_schedule[k])?;
        acc.extend(&path, to);
        let theta = acc.solve_theta(&p, path[to].t)?;
        let theta_model = interleave_model_terms(&theta, n, m);
        let (direction, _gain) = adp::update_direction(&theta_model, n, cost)
            .expect("repacked estimate has the extraction length by construction");

        let p_half = p.add(&direction.scale(h));
        let metric = p_half.sub(&p).norm_fro() / h;

        let pd = p_half.is_finite() && is_pd(&p_half);
        let converged = pd && metric < cfg.vi.eps_bar;
        let reset = !converged && (!(p_half.norm_fro() <= cfg.vi.boundary.bound(q)) || !pd);
        let blew_up = !p_half.is_finite();

        if converged || reset || blew_up || k % cfg.vi.trace_stride == 0 {
            trace.push(TraceRow { k, q, h, p: p.clone(), residual_norm: metric });
        }

        if converged {
            terminated = Termination::Converged;
            iterations = k + 1;
            final_p = Some(p.clone());
            break;
        }
        if blew_up {
            terminated = Termination::Diverged;
            iterations = k + 1;
            final_p = Some(p.clone());
            break;
        }

        if reset {
            p = cfg.vi.p0.clone();
            q += 1;
        } else {
            p = p_half;
        }
    }

    Ok(ViRun { trace, restarts: q, terminated, final_p: final_p.unwrap_or(p), iterations })
}
