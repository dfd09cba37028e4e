//! Discrete value-iteration runners for the matrix Riccati recursion.
//!
//! The baseline runner iterates the Euler update
//! `P_{k+1/2} = P_k + h_k (AᵀP_k + P_k A − P_k B R⁻¹ Bᵀ P_k + Q)` with a
//! decaying step schedule, terminating when the scaled update norm drops
//! below a threshold and the iterate is positive definite. Divergence is
//! handled by resetting to `P0` whenever the iterate leaves an expanding
//! safety ball or loses definiteness; the ball doubles on every reset so a
//! finite number of resets suffices for any bounded trajectory.
//!
//! The robust runner injects a deterministic perturbation `Δ_k` and a
//! stochastic term `W_k` into the update and compensates for both inside the
//! termination test, so the test still measures the unperturbed update norm.
//! The coupled runner drives `Δ_k` from an auxiliary matrix iteration that is
//! projected onto a ball around its known equilibrium at every step.
//!
//! All runners share one inner loop; with no hooks attached the robust paths
//! add exact zeros, so a hook-free robust run is bit-identical to the
//! baseline run. Iterates are stored in packed symmetric form, so symmetry
//! of every trace entry holds by construction.

use std::io;

use thiserror::Error;

use crate::mat::{is_pd, DenseMatrix, SymMatrix};
use crate::riccati::{riccati_residual, CostWeights, LtiSystem};

#[derive(Debug, Error)]
pub enum ViError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Power-law step sizes h_k = h0 / (1+k)^alpha. Any exponent in (0, 1]
/// gives a divergent step sum with vanishing steps; exponents above 1/2
/// additionally make the steps square-summable, which is what stochastic
/// runs need to average noise out.
#[derive(Clone, Copy, Debug)]
pub struct StepSchedule {
    pub h0: f64,
    pub alpha: f64,
}

impl StepSchedule {
    pub fn new(h0: f64, alpha: f64) -> Result<Self, ViError> {
        if !(h0 > 0.0) || !h0.is_finite() {
            return Err(ViError::BadConfig(format!("step scale must be positive, got {h0}")));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ViError::BadConfig(format!(
                "step exponent must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(Self { h0, alpha })
    }

    /// Default for deterministic runs.
    pub fn deterministic() -> Self {
        Self { h0: 0.1, alpha: 0.6 }
    }

    /// Default for runs with stochastic noise: square-summable steps.
    pub fn stochastic() -> Self {
        Self { h0: 0.1, alpha: 0.9 }
    }

    pub fn step(&self, k: usize) -> f64 {
        self.h0 / (1.0 + k as f64).powf(self.alpha)
    }
}

/// Doubling safety-ball radii B_q = b0 · 2^q.
#[derive(Clone, Copy, Debug)]
pub struct BoundarySchedule {
    pub b0: f64,
}

impl BoundarySchedule {
    pub fn new(b0: f64) -> Result<Self, ViError> {
        if !(b0 > 0.0) || !b0.is_finite() {
            return Err(ViError::BadConfig(format!("initial radius must be positive, got {b0}")));
        }
        Ok(Self { b0 })
    }

    /// Radius scaled to the initial iterate: 10 (1 + ‖P0‖).
    pub fn for_initial(p0: &SymMatrix) -> Self {
        Self { b0: 10.0 * (1.0 + p0.norm_fro()) }
    }

    pub fn bound(&self, q: usize) -> f64 {
        self.b0 * 2f64.powi(q.min(i32::MAX as usize) as i32)
    }
}

#[derive(Clone, Debug)]
pub struct ViConfig {
    pub p0: SymMatrix,
    pub steps: StepSchedule,
    pub boundary: BoundarySchedule,
    /// Termination threshold on the scaled update norm.
    pub eps_bar: f64,
    pub max_iters: usize,
    /// Keep every `trace_stride`-th row; termination and reset rows are
    /// always kept.
    pub trace_stride: usize,
}

impl ViConfig {
    /// Defaults: deterministic step schedule, safety ball scaled to `p0`,
    /// threshold 1e−6, at most 10⁶ iterations, full trace.
    pub fn new(p0: SymMatrix) -> Result<Self, ViError> {
        if !p0.is_finite() {
            return Err(ViError::BadConfig("initial matrix has non-finite entries".into()));
        }
        let shift = 1e-8 * p0.norm_fro().max(1.0);
        if !is_pd(&p0.add(&SymMatrix::identity(p0.dim()).scale(shift))) {
            return Err(ViError::BadConfig(
                "initial matrix must be positive semidefinite".into(),
            ));
        }
        let boundary = BoundarySchedule::for_initial(&p0);
        Ok(Self {
            p0,
            steps: StepSchedule::deterministic(),
            boundary,
            eps_bar: 1e-6,
            max_iters: 1_000_000,
            trace_stride: 1,
        })
    }

    fn validate(&self, sys: &LtiSystem) -> Result<(), ViError> {
        if self.p0.dim() != sys.n() {
            return Err(ViError::BadConfig(format!(
                "initial matrix is {}x{} but the plant has {} states",
                self.p0.dim(),
                self.p0.dim(),
                sys.n()
            )));
        }
        self.validate_scalars()
    }

    /// Dimension-free part of the config checks, shared with runners whose
    /// plant is implicit in the data.
    pub(crate) fn validate_scalars(&self) -> Result<(), ViError> {
        if !(self.eps_bar > 0.0) {
            return Err(ViError::BadConfig(format!(
                "termination threshold must be positive, got {}",
                self.eps_bar
            )));
        }
        if self.max_iters == 0 || self.trace_stride == 0 {
            return Err(ViError::BadConfig(
                "iteration budget and trace stride must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Additive update perturbations: a deterministic term and a noise term.
/// Closures own their RNG state, so identical seeds reproduce identical
/// runs. Outputs are symmetric by type.
#[derive(Default)]
pub struct DisturbanceHook<'a> {
    delta: Option<Box<dyn FnMut(usize, &SymMatrix) -> SymMatrix + 'a>>,
    noise: Option<Box<dyn FnMut(usize, &SymMatrix) -> SymMatrix + 'a>>,
}

impl<'a> DisturbanceHook<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn deterministic(f: impl FnMut(usize, &SymMatrix) -> SymMatrix + 'a) -> Self {
        Self { delta: Some(Box::new(f)), noise: None }
    }

    pub fn stochastic(f: impl FnMut(usize, &SymMatrix) -> SymMatrix + 'a) -> Self {
        Self { delta: None, noise: Some(Box::new(f)) }
    }

    pub fn new(
        delta: impl FnMut(usize, &SymMatrix) -> SymMatrix + 'a,
        noise: impl FnMut(usize, &SymMatrix) -> SymMatrix + 'a,
    ) -> Self {
        Self { delta: Some(Box::new(delta)), noise: Some(Box::new(noise)) }
    }

    fn is_empty(&self) -> bool {
        self.delta.is_none() && self.noise.is_none()
    }

    /// Δ_k + W_k, or None when no hook is attached.
    fn injection(&mut self, k: usize, p: &SymMatrix) -> Option<SymMatrix> {
        let n = p.dim();
        let mut out: Option<SymMatrix> = None;
        for f in [self.delta.as_mut(), self.noise.as_mut()].into_iter().flatten() {
            let term = f(k, p);
            assert_eq!(term.dim(), n, "disturbance hook returned a wrong-sized matrix");
            out = Some(match out {
                Some(acc) => acc.add(&term),
                None => term,
            });
        }
        out
    }
}

/// Auxiliary matrix iteration coupled to the main recursion:
/// `M_{k+1} = Π(M_k + h_k f(M_k, P_k))`, with `Δ_k = delta_out(P_k, M_k)`
/// fed back into the update. `Π` projects radially onto the ball of radius
/// `projection_radius` around `m_star`.
pub struct DynamicUncertainty<'a> {
    pub m0: DenseMatrix,
    pub f: Box<dyn FnMut(&DenseMatrix, &SymMatrix) -> DenseMatrix + 'a>,
    pub delta_out: Box<dyn FnMut(&SymMatrix, &DenseMatrix) -> SymMatrix + 'a>,
    pub projection_radius: f64,
    /// Known equilibrium; the projection keeps the iteration inside its
    /// neighborhood, which is what the local convergence argument needs.
    pub m_star: DenseMatrix,
}

fn project_to_ball(m: &DenseMatrix, center: &DenseMatrix, radius: f64) -> DenseMatrix {
    let diff = m - center;
    let dist = diff.norm();
    if dist <= radius {
        m.clone()
    } else {
        center + diff * (radius / dist)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    /// A half-step produced non-finite entries; resets cannot recover
    /// because the hooks themselves are no longer finite.
    Diverged,
}

/// One recorded iteration: the state at the start of iteration `k`, the
/// restart count so far, the step used, and the scaled update norm with the
/// injected terms compensated away (an estimate of the Riccati residual
/// norm at `p`).
#[derive(Clone, Debug)]
pub struct TraceRow {
    pub k: usize,
    pub q: usize,
    pub h: f64,
    pub p: SymMatrix,
    pub residual_norm: f64,
}

#[derive(Debug)]
pub struct ViRun {
    pub trace: Vec<TraceRow>,
    pub restarts: usize,
    pub terminated: Termination,
    pub final_p: SymMatrix,
    /// Iterations executed before stopping.
    pub iterations: usize,
}

/// One Euler half-step with optional additive terms, in packed form.
pub fn vi_step(
    p: &SymMatrix,
    sys: &LtiSystem,
    cost: &CostWeights,
    h: f64,
    delta: Option<&SymMatrix>,
    noise: Option<&SymMatrix>,
) -> SymMatrix {
    let mut dir = riccati_residual(p, sys, cost);
    if let Some(d) = delta {
        dir = dir.add(d);
    }
    if let Some(w) = noise {
        dir = dir.add(w);
    }
    p.add(&dir.scale(h))
}

enum Coupling<'h, 'a> {
    None,
    Dynamic { unc: &'h mut DynamicUncertainty<'a>, m: DenseMatrix, m_trace: Vec<DenseMatrix> },
}

fn run_inner(
    sys: &LtiSystem,
    cost: &CostWeights,
    cfg: &ViConfig,
    hooks: &mut DisturbanceHook,
    mut coupling: Coupling,
) -> Result<(ViRun, Vec<DenseMatrix>), ViError> {
    cfg.validate(sys)?;
    let mut p = cfg.p0.clone();
    let mut q = 0usize;
    let mut trace = Vec::new();
    let mut terminated = Termination::MaxIters;
    let mut iterations = cfg.max_iters;
    let mut final_p = None;

    for k in 0..cfg.max_iters {
        let h = cfg.steps.step(k);
        let direction = riccati_residual(&p, sys, cost);

        // Assemble Δ_k + W_k, letting the coupled iteration contribute its
        // feedback term first.
        let mut inj = match &mut coupling {
            Coupling::None => None,
            Coupling::Dynamic { unc, m, .. } => Some((unc.delta_out)(&p, m)),
        };
        if let Some(extra) = hooks.injection(k, &p) {
            inj = Some(match inj {
                Some(acc) => acc.add(&extra),
                None => extra,
            });
        }

        let p_half = match &inj {
            Some(d) => p.add(&direction.add(d).scale(h)),
            None => p.add(&direction.scale(h)),
        };

        // Termination metric with the injected terms subtracted back out;
        // up to roundoff this is the residual norm at P_k.
        let metric = match &inj {
            Some(d) => p_half.sub(&p).sub(&d.scale(h)).norm_fro() / h,
            None => p_half.sub(&p).norm_fro() / h,
        };

        let pd = p_half.is_finite() && is_pd(&p_half);
        let converged = pd && metric < cfg.eps_bar;
        let reset = !converged && (!(p_half.norm_fro() <= cfg.boundary.bound(q)) || !pd);
        let blew_up = !p_half.is_finite();

        if converged || reset || blew_up || k % cfg.trace_stride == 0 {
            trace.push(TraceRow { k, q, h, p: p.clone(), residual_norm: metric });
            if let Coupling::Dynamic { m, m_trace, .. } = &mut coupling {
                m_trace.push(m.clone());
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

        // Advance the coupled iteration from the same (P_k, M_k) pair the
        // feedback term was built from.
        if let Coupling::Dynamic { unc, m, .. } = &mut coupling {
            let drift = (unc.f)(m, &p);
            assert_eq!(
                (drift.nrows(), drift.ncols()),
                (m.nrows(), m.ncols()),
                "uncertainty drift returned a wrong-sized matrix"
            );
            *m = project_to_ball(&(&*m + drift * h), &unc.m_star, unc.projection_radius);
        }

        if reset {
            p = cfg.p0.clone();
            q += 1;
        } else {
            p = p_half;
        }
    }

    let m_trace = match coupling {
        Coupling::None => Vec::new(),
        Coupling::Dynamic { m_trace, .. } => m_trace,
    };
    Ok((
        ViRun {
            trace,
            restarts: q,
            terminated,
            final_p: final_p.unwrap_or(p),
            iterations,
        },
        m_trace,
    ))
}

fn require_pd_seed(cost: &CostWeights, cfg: &ViConfig) -> Result<(), ViError> {
    if !is_pd(cost.q()) && !is_pd(&cfg.p0) {
        return Err(ViError::BadConfig(
            "either the state weight or the initial matrix must be positive definite".into(),
        ));
    }
    Ok(())
}

/// Baseline runner: no injected terms.
pub fn vi_run(sys: &LtiSystem, cost: &CostWeights, cfg: &ViConfig) -> Result<ViRun, ViError> {
    require_pd_seed(cost, cfg)?;
    let mut hooks = DisturbanceHook::none();
    run_inner(sys, cost, cfg, &mut hooks, Coupling::None).map(|(run, _)| run)
}

/// Perturbed runner. With both hooks absent this is bit-identical to
/// [`vi_run`] on the same config.
pub fn robust_vi_run(
    sys: &LtiSystem,
    cost: &CostWeights,
    cfg: &ViConfig,
    hooks: &mut DisturbanceHook,
) -> Result<ViRun, ViError> {
    if !is_pd(cost.q()) && !hooks.is_empty() {
        return Err(ViError::BadConfig(
            "perturbed runs require a positive definite state weight".into(),
        ));
    }
    require_pd_seed(cost, cfg)?;
    run_inner(sys, cost, cfg, hooks, Coupling::None).map(|(run, _)| run)
}

/// Runner with the perturbation generated by a projected auxiliary
/// iteration. Returns the auxiliary iterates recorded alongside the trace.
pub fn coupled_vi_run(
    sys: &LtiSystem,
    cost: &CostWeights,
    cfg: &ViConfig,
    unc: &mut DynamicUncertainty,
) -> Result<(ViRun, Vec<DenseMatrix>), ViError> {
    if !is_pd(cost.q()) {
        return Err(ViError::BadConfig(
            "perturbed runs require a positive definite state weight".into(),
        ));
    }
    require_pd_seed(cost, cfg)?;
    if !(unc.projection_radius > 0.0) {
        return Err(ViError::BadConfig(format!(
            "projection radius must be positive, got {}",
            unc.projection_radius
        )));
    }
    let m0 = project_to_ball(&unc.m0, &unc.m_star, unc.projection_radius);
    let mut hooks = DisturbanceHook::none();
    let coupling = Coupling::Dynamic { unc, m: m0, m_trace: Vec::new() };
    run_inner(sys, cost, cfg, &mut hooks, coupling)
}

/// Writes the trace as CSV: iteration, restart count, step, packed upper
/// triangle of the iterate, and the compensated update norm.
pub fn write_trace_csv<W: io::Write>(run: &ViRun, out: &mut W) -> io::Result<()> {
    let n = run.final_p.dim();
    write!(out, "k,q,h")?;
    for i in 0..n {
        for j in i..n {
            write!(out, ",p_{i}_{j}")?;
        }
    }
    writeln!(out, ",residual_norm")?;
    for row in &run.trace {
        write!(out, "{},{},{}", row.k, row.q, row.h)?;
        for v in row.p.packed() {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{}", row.residual_norm)?;
    }
    Ok(())
}
