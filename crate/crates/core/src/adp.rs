//! Trajectory-driven value iteration.
//!
//! Along any trajectory of ẋ = Ax + Bu the quadratic form x'Px satisfies
//! d/dt (x'Px) = z̄'θ(P), where z = [x; u], z̄ is the squared-monomial
//! expansion of z, and θ(P) packs the blocks of
//! [[PA + A'P, PB], [B'P, 0]] in upper-triangle order. Integrating that
//! identity between sample instants yields one linear equation per interval
//! in the unknown map P ↦ θ(P); recursive least squares estimates the map
//! from recorded data, and the value-iteration runner consumes the estimate
//! in place of the model. A separate runner replaces the exact model with a
//! noisy one, either using each noisy sample directly or its running mean.

use std::io;

use rand_distr::{Distribution, StandardNormal};

use crate::mat::{bar_vec, is_pd, DenseMatrix, DenseVector, SymMatrix};
use crate::riccati::{CostWeights, LtiSystem};
use crate::vi::{robust_vi_run, vi_run, DisturbanceHook, Termination, TraceRow, ViConfig, ViError, ViRun};

/// Number of free entries in an n×n symmetric matrix.
#[inline]
fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Length of the integral regressor for state dimension `n` and input
/// dimension `m`: one entry per monomial of the stacked vector z = [x; u].
#[inline]
pub fn regressor_dim(n: usize, m: usize) -> usize {
    sym_dim(n + m)
}

/// Length of the informative head of the quadratic-form vector: the entries
/// whose rows involve the state. The remaining entries pair input with input
/// and are zero for the exact map.
#[inline]
pub fn model_term_dim(n: usize, m: usize) -> usize {
    sym_dim(n) + n * m
}

#[derive(Debug, thiserror::Error)]
pub enum AdpError {
    #[error(transparent)]
    Vi(#[from] ViError),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("trajectory invalid: {0}")]
    BadTrajectory(String),
    #[error("breakpoints invalid: {0}")]
    BadBreakpoints(String),
    #[error("quadratic-form vector has length {got}, expected {expected}")]
    ThetaLength { expected: usize, got: usize },
    #[error("trajectory data exhausted after {pairs} regressor pairs before the iteration terminated")]
    DataExhausted { pairs: usize },
    #[error("CSV parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// One recorded instant of a controlled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: DenseVector,
    pub u: DenseVector,
}

/// Regressors for one inter-breakpoint interval: `phi` is the difference of
/// the squared-monomial state vectors at the endpoints, `psi` the integral of
/// the squared-monomial expansion of [x; u] over the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorPair {
    pub phi: DenseVector,
    pub psi: DenseVector,
}

pub(crate) fn validate_trajectory(traj: &[TrajectorySample]) -> Result<(usize, usize), AdpError> {
    let first = traj
        .first()
        .ok_or_else(|| AdpError::BadTrajectory("empty trajectory".into()))?;
    let n = first.x.len();
    let m = first.u.len();
    if n == 0 || m == 0 {
        return Err(AdpError::BadTrajectory(
            "state and input vectors must be non-empty".into(),
        ));
    }
    for (i, s) in traj.iter().enumerate() {
        if s.x.len() != n || s.u.len() != m {
            return Err(AdpError::BadTrajectory(format!(
                "sample {i} has dimensions ({}, {}), expected ({n}, {m})",
                s.x.len(),
                s.u.len()
            )));
        }
        if !s.t.is_finite() || !s.x.iter().all(|v| v.is_finite()) || !s.u.iter().all(|v| v.is_finite())
        {
            return Err(AdpError::BadTrajectory(format!("sample {i} has non-finite entries")));
        }
        if i > 0 && !(s.t > traj[i - 1].t) {
            return Err(AdpError::BadTrajectory(format!(
                "time must be strictly increasing, violated at sample {i}"
            )));
        }
    }
    Ok((n, m))
}

fn validate_breakpoints(breakpoints: &[usize], traj_len: usize) -> Result<(), AdpError> {
    if breakpoints.len() < 2 {
        return Err(AdpError::BadBreakpoints(
            "need at least two breakpoints to form a regressor pair".into(),
        ));
    }
    for (i, &b) in breakpoints.iter().enumerate() {
        if b >= traj_len {
            return Err(AdpError::BadBreakpoints(format!(
                "breakpoint {b} outside the trajectory span (length {traj_len})"
            )));
        }
        if i > 0 && b <= breakpoints[i - 1] {
            return Err(AdpError::BadBreakpoints(
                "breakpoints must be strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

fn stacked_monomials(s: &TrajectorySample, n: usize, m: usize) -> DenseVector {
    let mut z = Vec::with_capacity(n + m);
    z.extend_from_slice(s.x.as_slice());
    z.extend_from_slice(s.u.as_slice());
    bar_vec(&z)
}

/// Regressor pair for the samples between indices `i0 < i1`: endpoint
/// difference for `phi`, trapezoidal quadrature over the stored grid for
/// `psi`.
fn pair_from_segment(
    traj: &[TrajectorySample],
    i0: usize,
    i1: usize,
    n: usize,
    m: usize,
) -> RegressorPair {
    let mut prev = stacked_monomials(&traj[i0], n, m);
    let mut psi = DenseVector::zeros(regressor_dim(n, m));
    for i in i0 + 1..=i1 {
        let cur = stacked_monomials(&traj[i], n, m);
        let w = 0.5 * (traj[i].t - traj[i - 1].t);
        psi.axpy(w, &(&prev + &cur), 1.0);
        prev = cur;
    }
    let phi = bar_vec(traj[i1].x.as_slice()) - bar_vec(traj[i0].x.as_slice());
    RegressorPair { phi, psi }
}

/// Builds one regressor pair per consecutive breakpoint interval.
pub fn build_regressors(
    traj: &[TrajectorySample],
    breakpoints: &[usize],
) -> Result<Vec<RegressorPair>, AdpError> {
    let (n, m) = validate_trajectory(traj)?;
    validate_breakpoints(breakpoints, traj.len())?;
    Ok(breakpoints
        .windows(2)
        .map(|w| pair_from_segment(traj, w[0], w[1], n, m))
        .collect())
}

/// Default ridge weight for the least-squares initialization Σ₀ = λ⁻¹I.
pub const DEFAULT_RIDGE_WEIGHT: f64 = 1.0;

/// Recursive least-squares state for the map P ↦ θ(P).
#[derive(Debug, Clone)]
pub struct RlsState {
    /// Inverse-Gram factor Σ_k (q×q, positive definite; starts at λ⁻¹I).
    pub sigma: SymMatrix,
    /// Running estimate M_k of the linear map: θ̂(P) = M_k · vecs(P).
    ///
    /// All q rows are stored. Only the first `model_term_dim(n, m)` rows can
    /// be nonzero in the limit — the tail rows pair with input-only
    /// monomials, which the exact map sends to zero — but the update
    /// Σ_k ψ_k (φ_k' − ψ_k' M_{k−1}) drives every row while the estimate is
    /// still converging, so the state keeps them all.
    pub map: DenseMatrix,
    /// Ridge weight λ used for Σ₀ = λ⁻¹I.
    pub lambda_init: f64,
    /// Number of regressor pairs processed so far.
    pub processed: usize,
    n_states: usize,
    n_inputs: usize,
}

impl RlsState {
    pub fn new(n: usize, m: usize, lambda_init: f64) -> Result<Self, AdpError> {
        if n == 0 || m == 0 {
            return Err(AdpError::BadConfig(
                "state and input dimensions must be positive".into(),
            ));
        }
        if !(lambda_init > 0.0 && lambda_init.is_finite()) {
            return Err(AdpError::BadConfig(format!(
                "ridge weight must be positive and finite, got {lambda_init}"
            )));
        }
        let q = regressor_dim(n, m);
        Ok(Self {
            sigma: SymMatrix::identity(q).scale(1.0 / lambda_init),
            map: DenseMatrix::zeros(q, sym_dim(n)),
            lambda_init,
            processed: 0,
            n_states: n,
            n_inputs: m,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n_states
    }

    pub fn input_dim(&self) -> usize {
        self.n_inputs
    }

    /// Applies the current estimate: θ̂(P) = M_k · vecs(P).
    pub fn theta_of(&self, p: &SymMatrix) -> DenseVector {
        &self.map * p.vecs()
    }
}

/// One rank-one update of the inverse Gram and the map estimate:
///
/// Σ_k = Σ_{k−1} − Σ_{k−1} ψ ψ' Σ_{k−1} / (1 + ψ' Σ_{k−1} ψ),
/// M_k = M_{k−1} + Σ_k ψ (φ' − ψ' M_{k−1}).
///
/// The denominator is at least one, so the update never fails; a zero
/// regressor leaves the state unchanged.
pub fn rls_step(state: &RlsState, pair: &RegressorPair) -> Result<RlsState, AdpError> {
    let q = state.sigma.dim();
    let p_len = state.map.ncols();
    if pair.psi.len() != q || pair.phi.len() != p_len {
        return Err(AdpError::BadConfig(format!(
            "regressor pair has lengths ({}, {}), expected ({q}, {p_len})",
            pair.psi.len(),
            pair.phi.len()
        )));
    }
    let sd = state.sigma.to_dense();
    let s = &sd * &pair.psi;
    let denom = 1.0 + pair.psi.dot(&s);
    let sigma_next = &sd - (&s * s.transpose()) / denom;
    let gain = &sigma_next * &pair.psi;
    let innovation = pair.phi.transpose() - pair.psi.transpose() * &state.map;
    let map_next = &state.map + &gain * innovation;
    Ok(RlsState {
        sigma: SymMatrix::from_dense(&sigma_next).expect("square by construction"),
        map: map_next,
        lambda_init: state.lambda_init,
        processed: state.processed + 1,
        n_states: state.n_states,
        n_inputs: state.n_inputs,
    })
}

/// Result of the persistent-excitation check on a batch of regressors.
#[derive(Debug, Clone, Copy)]
pub struct PeReport {
    pub satisfied: bool,
    /// Smallest eigenvalue of the averaged Gram matrix (1/l) Σ ψψ'.
    pub min_eigenvalue: f64,
    pub threshold: f64,
    pub samples: usize,
}

/// Checks whether the averaged regressor Gram matrix is uniformly positive
/// definite at level `alpha`.
pub fn check_pe(pairs: &[RegressorPair], alpha: f64) -> Result<PeReport, AdpError> {
    if pairs.is_empty() {
        return Err(AdpError::BadConfig(
            "excitation check needs at least one regressor pair".into(),
        ));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(AdpError::BadConfig(format!(
            "excitation level must be positive and finite, got {alpha}"
        )));
    }
    let q = pairs[0].psi.len();
    let mut gram = DenseMatrix::zeros(q, q);
    for (i, pr) in pairs.iter().enumerate() {
        if pr.psi.len() != q {
            return Err(AdpError::BadConfig(format!(
                "pair {i} has regressor length {}, expected {q}",
                pr.psi.len()
            )));
        }
        gram += &pr.psi * pr.psi.transpose();
    }
    gram /= pairs.len() as f64;
    let min_eigenvalue = gram
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    Ok(PeReport { satisfied: min_eigenvalue > alpha, min_eigenvalue, threshold: alpha, samples: pairs.len() })
}

/// Unpacks the informative head of a quadratic-form vector into the
/// symmetric state block PA + A'P and the feedback read-out R⁻¹ (B'P).
///
/// The head interleaves, row by row of the stacked matrix, the upper
/// triangle of the state block with the corresponding rows of PB.
pub fn extract_model_terms(
    theta: &DenseVector,
    n: usize,
    cost: &CostWeights,
) -> Result<(SymMatrix, DenseMatrix), AdpError> {
    let m = cost.r().dim();
    let expected = model_term_dim(n, m);
    if theta.len() != expected {
        return Err(AdpError::ThetaLength { expected, got: theta.len() });
    }
    let mut ap = SymMatrix::zeros(n);
    let mut pb = DenseMatrix::zeros(n, m);
    let mut idx = 0usize;
    for i in 0..n {
        for j in i..n {
            ap.set(i, j, theta[idx]);
            idx += 1;
        }
        for c in 0..m {
            pb[(i, c)] = theta[idx];
            idx += 1;
        }
    }
    let btp = pb.transpose();
    let gain = cost
        .r()
        .to_dense()
        .lu()
        .solve(&btp)
        .expect("input weight is positive definite by construction");
    Ok((ap, gain))
}

/// The exact map M with θ(P) = M · vecs(P) for a known plant: column c is
/// the packed stacked matrix [[EA + A'E, EB], [B'E, 0]] for the c-th
/// symmetric basis element E.
pub fn exact_model_map(sys: &LtiSystem) -> DenseMatrix {
    let n = sys.n();
    let m = sys.m();
    let mut map = DenseMatrix::zeros(regressor_dim(n, m), sym_dim(n));
    let mut col = 0usize;
    for i in 0..n {
        for j in i..n {
            let mut e = DenseMatrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let ul = &e * sys.a() + sys.a().transpose() * &e;
            let ur = &e * sys.b();
            let mut row = 0usize;
            for r in 0..n {
                for c2 in r..n {
                    map[(row, col)] = 0.5 * (ul[(r, c2)] + ul[(c2, r)]);
                    row += 1;
                }
                for c2 in 0..m {
                    map[(row, col)] = ur[(r, c2)];
                    row += 1;
                }
            }
            col += 1;
        }
    }
    map
}

/// Update direction Q + 𝒯_A(θ) − 𝒯_B(θ)' R 𝒯_B(θ) together with the gain
/// read-out 𝒯_B(θ).
pub(crate) fn update_direction(
    theta: &DenseVector,
    n: usize,
    cost: &CostWeights,
) -> Result<(SymMatrix, DenseMatrix), AdpError> {
    let m = cost.r().dim();
    let head_len = model_term_dim(n, m);
    if theta.len() < head_len {
        return Err(AdpError::ThetaLength { expected: head_len, got: theta.len() });
    }
    let head = theta.rows(0, head_len).into_owned();
    let (ap, gain) = extract_model_terms(&head, n, cost)?;
    let quad = gain.transpose() * cost.r().to_dense() * &gain;
    let dir = ap.to_dense() - quad + cost.q().to_dense();
    Ok((SymMatrix::from_dense(&dir).expect("square by construction"), gain))
}

enum ThetaSource<'a> {
    /// Fixed linear map: every iteration evaluates M · vecs(P_k).
    FixedMap(&'a DenseMatrix),
    /// Online estimation: iteration k consumes regressor pair k, updates the
    /// least-squares state, then evaluates the current estimate.
    Rls {
        traj: &'a [TrajectorySample],
        breakpoints: &'a [usize],
        n: usize,
        m: usize,
        state: RlsState,
    },
}

impl ThetaSource<'_> {
    fn theta(&mut self, k: usize, p: &SymMatrix) -> Result<DenseVector, AdpError> {
        match self {
            ThetaSource::FixedMap(map) => Ok(*map * p.vecs()),
            ThetaSource::Rls { traj, breakpoints, n, m, state } => {
                if k + 1 >= breakpoints.len() {
                    return Err(AdpError::DataExhausted { pairs: breakpoints.len() - 1 });
                }
                let pair = pair_from_segment(traj, breakpoints[k], breakpoints[k + 1], *n, *m);
                *state = rls_step(state, &pair)?;
                Ok(state.theta_of(p))
            }
        }
    }

    fn snapshot(&self) -> Option<DenseMatrix> {
        match self {
            ThetaSource::FixedMap(_) => None,
            ThetaSource::Rls { state, .. } => Some(state.map.clone()),
        }
    }
}

struct ThetaViOutcome {
    run: ViRun,
    snapshots: Vec<DenseMatrix>,
    gain: DenseMatrix,
}

/// Value iteration driven by a quadratic-form map instead of the model.
/// Same half-step / safety-ball / restart / termination structure as the
/// model-based runner; the termination metric is the plain scaled update
/// norm, since the injected model error is not separately observable here.
fn run_theta_vi(
    cost: &CostWeights,
    cfg: &ViConfig,
    source: &mut ThetaSource,
) -> Result<ThetaViOutcome, AdpError> {
    cfg.validate_scalars().map_err(AdpError::Vi)?;
    let n = cfg.p0.dim();
    let mut p = cfg.p0.clone();
    let mut q = 0usize;
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut iterations = cfg.max_iters;
    let mut final_p = None;
    let mut gain = DenseMatrix::zeros(cost.r().dim(), n);

    for k in 0..cfg.max_iters {
        let h = cfg.steps.step(k);
        let theta = source.theta(k, &p)?;
        let (direction, gain_k) = update_direction(&theta, n, cost)?;
        gain = gain_k;

        let p_half = p.add(&direction.scale(h));
        let metric = p_half.sub(&p).norm_fro() / h;

        let pd = p_half.is_finite() && is_pd(&p_half);
        let converged = pd && metric < cfg.eps_bar;
        let reset = !converged && (!(p_half.norm_fro() <= cfg.boundary.bound(q)) || !pd);
        let blew_up = !p_half.is_finite();

        if converged || reset || blew_up || k % cfg.trace_stride == 0 {
            trace.push(TraceRow { k, q, h, p: p.clone(), residual_norm: metric });
            if let Some(m) = source.snapshot() {
                snapshots.push(m);
            }
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
            p = cfg.p0.clone();
            q += 1;
        } else {
            p = p_half;
        }
    }

    Ok(ThetaViOutcome {
        run: ViRun { trace, restarts: q, terminated, final_p: final_p.unwrap_or(p), iterations },
        snapshots,
        gain,
    })
}

/// Outcome of a data-driven run: the iteration record, the final estimator
/// state, estimator snapshots aligned with the trace rows, and the feedback
/// gain read off the last quadratic-form estimate.
#[derive(Debug)]
pub struct AdpRun {
    pub run: ViRun,
    pub rls: RlsState,
    pub map_trace: Vec<DenseMatrix>,
    pub final_gain: DenseMatrix,
}

/// Data-driven value iteration: each iteration consumes one regressor pair
/// (consecutive breakpoints), updates the least-squares estimate of the
/// quadratic-form map, and applies the estimated update direction with the
/// usual safety-ball/restart structure. Restarts reset the value iterate
/// only; estimation continues across them.
///
/// Errors with [`AdpError::DataExhausted`] if the breakpoints supply fewer
/// pairs than the run needs to terminate.
pub fn adp_vi_run(
    traj: &[TrajectorySample],
    breakpoints: &[usize],
    cost: &CostWeights,
    cfg: &ViConfig,
    lambda_init: f64,
) -> Result<AdpRun, AdpError> {
    let (n, m) = validate_trajectory(traj)?;
    validate_breakpoints(breakpoints, traj.len())?;
    if cfg.p0.dim() != n {
        return Err(AdpError::BadConfig(format!(
            "initial matrix is {}x{} but the trajectory has {n} states",
            cfg.p0.dim(),
            cfg.p0.dim()
        )));
    }
    if cost.q().dim() != n || cost.r().dim() != m {
        return Err(AdpError::BadConfig(
            "cost weight dimensions do not match the trajectory".into(),
        ));
    }
    if !is_pd(cost.q()) {
        return Err(AdpError::BadConfig(
            "data-driven runs require a positive definite state weight".into(),
        ));
    }
    let state = RlsState::new(n, m, lambda_init)?;
    let mut source = ThetaSource::Rls { traj, breakpoints, n, m, state };
    let outcome = run_theta_vi(cost, cfg, &mut source)?;
    let state = match source {
        ThetaSource::Rls { state, .. } => state,
        ThetaSource::FixedMap(_) => unreachable!(),
    };
    Ok(AdpRun {
        run: outcome.run,
        rls: state,
        map_trace: outcome.snapshots,
        final_gain: outcome.gain,
    })
}

/// Value iteration with a fixed quadratic-form map in place of the model.
/// With the exact map of a plant this reproduces the model-based runner on
/// the same configuration.
pub fn model_map_vi_run(
    map: &DenseMatrix,
    cost: &CostWeights,
    cfg: &ViConfig,
) -> Result<ViRun, AdpError> {
    let n = cfg.p0.dim();
    let m = cost.r().dim();
    if cost.q().dim() != n {
        return Err(AdpError::BadConfig(
            "state weight dimension does not match the initial matrix".into(),
        ));
    }
    if map.nrows() != regressor_dim(n, m) || map.ncols() != sym_dim(n) {
        return Err(AdpError::BadConfig(format!(
            "map is {}x{}, expected {}x{}",
            map.nrows(),
            map.ncols(),
            regressor_dim(n, m),
            sym_dim(n)
        )));
    }
    if !is_pd(cost.q()) && !is_pd(&cfg.p0) {
        return Err(AdpError::BadConfig(
            "either the state weight or the initial matrix must be positive definite".into(),
        ));
    }
    let mut source = ThetaSource::FixedMap(map);
    run_theta_vi(cost, cfg, &mut source).map(|o| o.run)
}

/// How the model-error runner uses its noisy model samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelNoiseMode {
    /// Each iteration uses its own noisy sample A + σ Σᵢ Δᵢ vᵢ(k).
    Instantaneous,
    /// Each iteration uses the running mean of the samples seen so far; the
    /// mean is taken over the k+1 draws available at iteration k.
    TimeAveraged,
}

/// Value iteration under a noisy model: the state matrix is observed as
/// A + σ Σᵢ Δᵢ vᵢ(k) with independent standard normal vᵢ(k) drawn from
/// `rng`, one per direction per iteration, and enters the update either
/// directly or through its running mean. With σ = 0 or no directions this
/// delegates to the exact-model runner and is bit-identical to it.
///
/// Termination uses the noise-compensated update norm, so persistent
/// instantaneous noise keeps the run alive until the iteration budget while
/// the averaged variant can terminate once the mean has settled.
pub fn noisy_model_vi<Rg: rand::Rng>(
    sys: &LtiSystem,
    cost: &CostWeights,
    noise_dirs: &[DenseMatrix],
    sigma: f64,
    cfg: &ViConfig,
    mode: ModelNoiseMode,
    rng: &mut Rg,
) -> Result<ViRun, ViError> {
    if !is_pd(cost.q()) {
        return Err(ViError::BadConfig(
            "noisy-model runs require a positive definite state weight".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ViError::BadConfig(format!(
            "noise scale must be non-negative and finite, got {sigma}"
        )));
    }
    let n = sys.n();
    for (i, d) in noise_dirs.iter().enumerate() {
        if d.nrows() != n || d.ncols() != n {
            return Err(ViError::BadConfig(format!(
                "noise direction {i} is {}x{}, expected {n}x{n}",
                d.nrows(),
                d.ncols()
            )));
        }
    }
    if sigma == 0.0 || noise_dirs.is_empty() {
        return vi_run(sys, cost, cfg);
    }

    let mut sums = vec![0.0; noise_dirs.len()];
    let mut hook = DisturbanceHook::stochastic(move |k, p: &SymMatrix| {
        let mut a_tilde = DenseMatrix::zeros(n, n);
        for (i, d) in noise_dirs.iter().enumerate() {
            let v: f64 = StandardNormal.sample(rng);
            let c = match mode {
                ModelNoiseMode::Instantaneous => v,
                ModelNoiseMode::TimeAveraged => {
                    sums[i] += v;
                    sums[i] / (k as f64 + 1.0)
                }
            };
            a_tilde += d * (sigma * c);
        }
        let pd = p.to_dense();
        let w = a_tilde.transpose() * &pd + &pd * &a_tilde;
        SymMatrix::from_dense(&w).expect("square by construction")
    });
    robust_vi_run(sys, cost, cfg, &mut hook)
}

/// Integrates ẋ = Ax + Bu(t, x) with classical Runge–Kutta on a uniform grid
/// and records (t, x, u) at every grid point. The input closure is evaluated
/// at each integration stage, so it must be a deterministic function of its
/// arguments (smooth excitation signals; per-call randomness would make the
/// recorded input differ from the applied one).
pub fn simulate_plant(
    sys: &LtiSystem,
    x0: &DenseVector,
    mut input: impl FnMut(f64, &DenseVector) -> DenseVector,
    t_final: f64,
    dt: f64,
) -> Result<Vec<TrajectorySample>, AdpError> {
    if x0.len() != sys.n() {
        return Err(AdpError::BadConfig(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            sys.n()
        )));
    }
    if !(dt > 0.0 && dt.is_finite() && t_final >= dt && t_final.is_finite()) {
        return Err(AdpError::BadConfig(
            "integration step and horizon must be positive with at least one step".into(),
        ));
    }
    let steps = (t_final / dt).round() as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    for k in 0..=steps {
        let t = k as f64 * dt;
        let u = input(t, &x);
        if u.len() != sys.m() {
            return Err(AdpError::BadConfig(format!(
                "input closure returned length {}, expected {}",
                u.len(),
                sys.m()
            )));
        }
        samples.push(TrajectorySample { t, x: x.clone(), u: u.clone() });
        if k == steps {
            break;
        }
        let k1 = sys.a() * &x + sys.b() * &u;
        let x2 = &x + &k1 * (dt / 2.0);
        let k2 = sys.a() * &x2 + sys.b() * &input(t + dt / 2.0, &x2);
        let x3 = &x + &k2 * (dt / 2.0);
        let k3 = sys.a() * &x3 + sys.b() * &input(t + dt / 2.0, &x3);
        let x4 = &x + &k3 * dt;
        let k4 = sys.a() * &x4 + sys.b() * &input(t + dt, &x4);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(AdpError::BadTrajectory(format!(
                "state became non-finite at t = {}",
                t + dt
            )));
        }
    }
    Ok(samples)
}

/// Corrupts the recorded states with independent Gaussian observation noise,
/// one magnitude per state component; times and inputs are untouched. Models
/// learning from measured rather than true states.
pub fn with_observation_noise<Rg: rand::Rng + ?Sized>(
    traj: &[TrajectorySample],
    sigmas: &[f64],
    rng: &mut Rg,
) -> Result<Vec<TrajectorySample>, AdpError> {
    let (n, _) = validate_trajectory(traj)?;
    if sigmas.len() != n {
        return Err(AdpError::BadConfig(format!(
            "{} noise magnitudes for {n} state components",
            sigmas.len()
        )));
    }
    if !sigmas.iter().all(|s| s.is_finite() && *s >= 0.0) {
        return Err(AdpError::BadConfig(
            "noise magnitudes must be non-negative and finite".into(),
        ));
    }
    Ok(traj
        .iter()
        .map(|s| {
            let mut x = s.x.clone();
            for (i, sig) in sigmas.iter().enumerate() {
                let v: f64 = StandardNormal.sample(rng);
                x[i] += sig * v;
            }
            TrajectorySample { t: s.t, x, u: s.u.clone() }
        })
        .collect())
}

/// Writes a trajectory as CSV: `t,x_1..x_n,u_1..u_m`. An empty trajectory
/// writes nothing.
pub fn write_trajectory_csv<W: io::Write>(
    traj: &[TrajectorySample],
    out: &mut W,
) -> io::Result<()> {
    let Some(first) = traj.first() else {
        return Ok(());
    };
    write!(out, "t")?;
    for i in 1..=first.x.len() {
        write!(out, ",x_{i}")?;
    }
    for i in 1..=first.u.len() {
        write!(out, ",u_{i}")?;
    }
    writeln!(out)?;
    for s in traj {
        write!(out, "{}", s.t)?;
        for v in s.x.iter() {
            write!(out, ",{v}")?;
        }
        for v in s.u.iter() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`]; dimensions are
/// recovered from the header and the usual trajectory invariants are
/// enforced.
pub fn read_trajectory_csv<R: io::BufRead>(input: R) -> Result<Vec<TrajectorySample>, AdpError> {
    let mut lines = input.lines().enumerate();
    let header = match lines.next() {
        None => return Err(AdpError::Csv { line: 1, message: "missing header".into() }),
        Some((_, r)) => r.map_err(|e| AdpError::Csv { line: 1, message: e.to_string() })?,
    };
    let cols: Vec<&str> = header.trim().split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("x_")).count();
    let m = cols.iter().filter(|c| c.starts_with("u_")).count();
    if cols.first() != Some(&"t") || n == 0 || m == 0 || cols.len() != 1 + n + m {
        return Err(AdpError::Csv {
            line: 1,
            message: "header must be t,x_1..x_n,u_1..u_m".into(),
        });
    }
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| AdpError::Csv { line: idx + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Result<Vec<f64>, _> = line.trim().split(',').map(|v| v.parse::<f64>()).collect();
        let vals = vals.map_err(|e| AdpError::Csv { line: idx + 1, message: e.to_string() })?;
        if vals.len() != 1 + n + m {
            return Err(AdpError::Csv {
                line: idx + 1,
                message: format!("expected {} fields, got {}", 1 + n + m, vals.len()),
            });
        }
        samples.push(TrajectorySample {
            t: vals[0],
            x: DenseVector::from_column_slice(&vals[1..1 + n]),
            u: DenseVector::from_column_slice(&vals[1 + n..]),
        });
    }
    validate_trajectory(&samples)?;
    Ok(samples)
}

/// Writes regressor pairs as CSV: `j,phi_1..,psi_1..`. An empty batch writes
/// nothing.
pub fn write_regressor_csv<W: io::Write>(
    pairs: &[RegressorPair],
    out: &mut W,
) -> io::Result<()> {
    let Some(first) = pairs.first() else {
        return Ok(());
    };
    write!(out, "j")?;
    for i in 1..=first.phi.len() {
        write!(out, ",phi_{i}")?;
    }
    for i in 1..=first.psi.len() {
        write!(out, ",psi_{i}")?;
    }
    writeln!(out)?;
    for (j, pr) in pairs.iter().enumerate() {
        write!(out, "{j}")?;
        for v in pr.phi.iter() {
            write!(out, ",{v}")?;
        }
        for v in pr.psi.iter() {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Writes the estimator snapshots of a data-driven run as CSV: the iteration
/// index of the trace row followed by the map entries in row-major order.
pub fn write_map_trace_csv<W: io::Write>(run: &AdpRun, out: &mut W) -> io::Result<()> {
    let Some(first) = run.map_trace.first() else {
        return Ok(());
    };
    write!(out, "k")?;
    for r in 0..first.nrows() {
        for c in 0..first.ncols() {
            write!(out, ",m_{r}_{c}")?;
        }
    }
    writeln!(out)?;
    for (row, m) in run.run.trace.iter().zip(&run.map_trace) {
        write!(out, "{}", row.k)?;
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                write!(out, ",{}", m[(r, c)])?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
