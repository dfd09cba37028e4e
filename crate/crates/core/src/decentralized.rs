//! Coupled Riccati problems for two interacting nodes: the coupling-function
//! library, an alternating fixed-point oracle, an empirical gain-bound fit,
//! and a synchronous two-node value-iteration runner.
//!
//! Each node owns a plant/cost pair and sees its neighbour only through an
//! opaque value matrix fed to its coupling function; neighbour dynamics and
//! weights never cross the node boundary.

use std::io;

use nalgebra::Cholesky;
use thiserror::Error;

use crate::mat::{DenseMatrix, DenseVector, SymMatrix};
use crate::riccati::{
    closed_loop_gain, riccati_residual, solve_are_kleinman, stabilizing_gain, CostWeights,
    LtiSystem, RiccatiError,
};
use crate::vi::{StepSchedule, Termination, TraceRow, ViConfig, ViError, ViRun};

/// Coupling term for one node: maps (own value matrix, neighbour value
/// matrix) to a symmetric perturbation of the node's state weight.
pub type CouplingFn = Box<dyn Fn(&SymMatrix, &SymMatrix) -> SymMatrix>;

/// Declared polynomial bound `c1 x + c2 x^2 + c3 x^3` on a coupling
/// deviation norm (no constant term: the bound vanishes at the fixed point).
pub type GainPolynomial = [f64; 3];

#[derive(Debug, Error)]
pub enum DecentralizedError {
    #[error("coupled problem rejected: {0}")]
    BadConfig(String),
    #[error("coupling function misbehaved: {0}")]
    BadCoupling(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Vi(#[from] ViError),
    #[error(
        "fixed-point alternation stopped contracting after {alternations} rounds \
         (residuals {residuals:?})"
    )]
    NoConvergence { residuals: (f64, f64), alternations: usize },
}

/// Two plant/cost pairs tied together by a pair of coupling functions.
///
/// `coupling[i]` receives `(P_i, P_j)` — the node's own value matrix first —
/// and must return a symmetric matrix of the node's state dimension.
/// `gain_polys[i][j]`, when declared, bounds the deviation of coupling `i`
/// by a polynomial in the neighbourhood radius of node `j + 1`'s value.
pub struct CoupledProblem {
    sub: [(LtiSystem, CostWeights); 2],
    coupling: [CouplingFn; 2],
    pub gain_polys: Option<[[GainPolynomial; 2]; 2]>,
}

impl CoupledProblem {
    pub fn new(
        sub1: (LtiSystem, CostWeights),
        sub2: (LtiSystem, CostWeights),
        delta1: impl Fn(&SymMatrix, &SymMatrix) -> SymMatrix + 'static,
        delta2: impl Fn(&SymMatrix, &SymMatrix) -> SymMatrix + 'static,
    ) -> Result<Self, DecentralizedError> {
        for (label, (sys, cost)) in [("1", &sub1), ("2", &sub2)] {
            if cost.q().dim() != sys.n() || cost.r().dim() != sys.m() {
                return Err(DecentralizedError::BadConfig(format!(
                    "node {label}: cost dimensions do not match its plant"
                )));
            }
        }
        Ok(Self {
            sub: [sub1, sub2],
            coupling: [Box::new(delta1), Box::new(delta2)],
            gain_polys: None,
        })
    }

    /// Two nodes with no interaction: both couplings are identically zero.
    pub fn uncoupled(
        sub1: (LtiSystem, CostWeights),
        sub2: (LtiSystem, CostWeights),
    ) -> Result<Self, DecentralizedError> {
        let n1 = sub1.0.n();
        let n2 = sub2.0.n();
        Self::new(
            sub1,
            sub2,
            move |_, _| SymMatrix::zeros(n1),
            move |_, _| SymMatrix::zeros(n2),
        )
    }

    /// Two players on a shared state, each charged for the other's control
    /// effort: node `i`'s coupling is the non-zero-sum game perturbation
    /// built from the neighbour's input matrix and weights.
    ///
    /// `r12` prices player 2's effort inside player 1's cost (dimension
    /// `m2`), and `r21` conversely (dimension `m1`).
    pub fn nzs(
        sub1: (LtiSystem, CostWeights),
        sub2: (LtiSystem, CostWeights),
        r12: SymMatrix,
        r21: SymMatrix,
    ) -> Result<Self, DecentralizedError> {
        if sub1.0.n() != sub2.0.n() {
            return Err(DecentralizedError::BadConfig(
                "game couplings need a shared state dimension".into(),
            ));
        }
        if r12.dim() != sub2.0.m() || r21.dim() != sub1.0.m() {
            return Err(DecentralizedError::BadConfig(
                "cross-effort weights must match the neighbour input dimensions".into(),
            ));
        }
        let (b2, r2) = (sub2.0.b().clone(), sub2.1.r().clone());
        let (b1, r1) = (sub1.0.b().clone(), sub1.1.r().clone());
        Self::new(
            sub1,
            sub2,
            move |p1, p2| coupling_nzs(p1, p2, &b2, &r2, &r12),
            move |p2, p1| coupling_nzs(p2, p1, &b1, &r1, &r21),
        )
    }

    pub fn sys(&self, node: usize) -> &LtiSystem {
        &self.sub[node].0
    }

    pub fn cost(&self, node: usize) -> &CostWeights {
        &self.sub[node].1
    }

    /// Evaluates node `node`'s coupling at (own, neighbour) value matrices.
    pub fn coupling(&self, node: usize, own: &SymMatrix, other: &SymMatrix) -> SymMatrix {
        (self.coupling[node])(own, other)
    }

    fn checked_coupling(
        &self,
        node: usize,
        own: &SymMatrix,
        other: &SymMatrix,
    ) -> Result<SymMatrix, DecentralizedError> {
        let delta = self.coupling(node, own, other);
        if delta.dim() != self.sys(node).n() {
            return Err(DecentralizedError::BadCoupling(format!(
                "node {} coupling returned dimension {}, expected {}",
                node + 1,
                delta.dim(),
                self.sys(node).n()
            )));
        }
        Ok(delta)
    }
}

/// Non-zero-sum game coupling
/// `P_j B_j R_j^{-1} R_ij R_j^{-1} B_j' P_j - P_j B_j R_j^{-1} B_j' P_i - P_i B_j R_j^{-1} B_j' P_j`,
/// symmetric by construction.
///
/// Panics on inconsistent dimensions or an indefinite weight; these are
/// programming errors at the call site, not data-dependent conditions.
pub fn coupling_nzs(
    p_i: &SymMatrix,
    p_j: &SymMatrix,
    b_j: &DenseMatrix,
    r_j: &SymMatrix,
    r_ij: &SymMatrix,
) -> SymMatrix {
    let n = p_i.dim();
    assert_eq!(p_j.dim(), n, "value matrices must share the state dimension");
    assert_eq!(b_j.nrows(), n, "B rows must match the state dimension");
    assert_eq!(b_j.ncols(), r_j.dim(), "R must match the input dimension");
    assert_eq!(r_ij.dim(), r_j.dim(), "cross weight must match the input dimension");
    let chol = Cholesky::new(r_j.to_dense()).expect("effort weight must be positive definite");
    // E = R_j^{-1} B_j', so S = B_j R_j^{-1} B_j' = E' R_j E and the
    // cross-weighted kernel is T = E' R_ij E.
    let e = chol.solve(&b_j.transpose());
    let s = b_j * &e;
    let t = e.transpose() * r_ij.to_dense() * &e;
    let pj = p_j.to_dense();
    let pi = p_i.to_dense();
    let quad = &pj * t * &pj;
    let cross = &pj * s * &pi;
    let delta = quad - &cross - cross.transpose();
    SymMatrix::from_dense(&delta).expect("square by construction")
}

/// Unmatched-disturbance coupling
/// `P_2 R_1^{-1} B_1' P_1 B_1 + B_1' P_1 B_1 R_1^{-1} P_2` (symmetric because
/// `B_1' P_1 B_1` is), defined when node 2's state dimension equals node 1's
/// input dimension.
pub fn coupling_unmatched(
    p_2: &SymMatrix,
    p_1: &SymMatrix,
    b_1: &DenseMatrix,
    r_1: &SymMatrix,
) -> Result<SymMatrix, DecentralizedError> {
    if b_1.nrows() != p_1.dim() || b_1.ncols() != r_1.dim() {
        return Err(DecentralizedError::BadConfig(format!(
            "input matrix is {}x{} but the value/effort weights have dimensions {} and {}",
            b_1.nrows(),
            b_1.ncols(),
            p_1.dim(),
            r_1.dim()
        )));
    }
    if p_2.dim() != b_1.ncols() {
        return Err(DecentralizedError::BadConfig(format!(
            "node 2 value dimension {} must equal node 1 input dimension {}",
            p_2.dim(),
            b_1.ncols()
        )));
    }
    let chol = Cholesky::new(r_1.to_dense()).ok_or_else(|| {
        DecentralizedError::BadConfig("effort weight must be positive definite".into())
    })?;
    let g = b_1.transpose() * p_1.to_dense() * b_1;
    let half = p_2.to_dense() * chol.solve(&g);
    let delta = &half + half.transpose();
    Ok(SymMatrix::from_dense(&delta).expect("square by construction"))
}

/// Fixed point of the coupled stationary equations with its residuals.
#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub p1_star: SymMatrix,
    pub p2_star: SymMatrix,
    pub residual_norms: (f64, f64),
}

/// Residual of node `i`'s stationary equation including its coupling term.
fn coupled_residual(
    prob: &CoupledProblem,
    node: usize,
    own: &SymMatrix,
    other: &SymMatrix,
) -> Result<SymMatrix, DecentralizedError> {
    let delta = prob.checked_coupling(node, own, other)?;
    Ok(riccati_residual(own, prob.sys(node), prob.cost(node)).add(&delta))
}

const ORACLE_MAX_ALTERNATIONS: usize = 500;
const ORACLE_STALL_PATIENCE: usize = 8;
/// Residual level treated as a runaway alternation: stop with a
/// no-convergence report before the inner solvers degenerate.
const ORACLE_RESIDUAL_BLOWUP: f64 = 1e12;

/// Solves the coupled stationary equations by alternating single-node
/// solves with the neighbour's value frozen.
///
/// Each round folds the frozen coupling term into the node's state weight
/// and re-solves that node exactly; the alternation is a fixed-point
/// iteration that contracts for weak coupling. Rounds that stop improving
/// the worst residual for several consecutive attempts abort with a
/// no-convergence error.
pub fn solve_coupled_oracle(
    prob: &CoupledProblem,
    tol: f64,
) -> Result<CoupledSolution, DecentralizedError> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(DecentralizedError::BadConfig(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    // Start from the uncoupled solutions.
    let mut values = Vec::new();
    for node in 0..2 {
        let k0 = stabilizing_gain(prob.sys(node))?;
        values.push(solve_are_kleinman(prob.sys(node), prob.cost(node), &k0)?.p);
    }
    let (mut p1, mut p2) = (values.swap_remove(0), values.remove(0));

    let mut best = f64::INFINITY;
    let mut stalled = 0usize;
    for round in 0..ORACLE_MAX_ALTERNATIONS {
        for node in 0..2 {
            let (own, other) = if node == 0 { (&p1, &p2) } else { (&p2, &p1) };
            let delta = prob.checked_coupling(node, own, other)?;
            let effective_q = prob.cost(node).q().add(&delta);
            let cost = CostWeights::new(effective_q, prob.cost(node).r().clone()).map_err(
                |e| {
                    DecentralizedError::BadCoupling(format!(
                        "node {}: coupled state weight left the solvable cone: {e}",
                        node + 1
                    ))
                },
            )?;
            let warm = closed_loop_gain(own, prob.sys(node), prob.cost(node));
            let solved = solve_are_kleinman(prob.sys(node), &cost, &warm)?.p;
            if node == 0 {
                p1 = solved;
            } else {
                p2 = solved;
            }
        }
        let r1 = coupled_residual(prob, 0, &p1, &p2)?.norm_fro();
        let r2 = coupled_residual(prob, 1, &p2, &p1)?.norm_fro();
        let worst = r1.max(r2);
        if worst <= tol {
            return Ok(CoupledSolution { p1_star: p1, p2_star: p2, residual_norms: (r1, r2) });
        }
        if !worst.is_finite() || worst > ORACLE_RESIDUAL_BLOWUP {
            return Err(DecentralizedError::NoConvergence {
                residuals: (r1, r2),
                alternations: round + 1,
            });
        }
        if worst < best {
            best = worst;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= ORACLE_STALL_PATIENCE {
                return Err(DecentralizedError::NoConvergence {
                    residuals: (r1, r2),
                    alternations: round + 1,
                });
            }
        }
    }
    let r1 = coupled_residual(prob, 0, &p1, &p2)?.norm_fro();
    let r2 = coupled_residual(prob, 1, &p2, &p1)?.norm_fro();
    Err(DecentralizedError::NoConvergence {
        residuals: (r1, r2),
        alternations: ORACLE_MAX_ALTERNATIONS,
    })
}

/// Node configuration with the step scale tuned for coupled runs: half the
/// single-node default, since the coupling term stiffens the update field.
pub fn coupled_node_config(p0: SymMatrix) -> Result<ViConfig, DecentralizedError> {
    let mut cfg = ViConfig::new(p0)?;
    cfg.steps = StepSchedule::new(0.05, 0.6)?;
    Ok(cfg)
}

/// Safety-ball radius for a node: exceeding it flags divergence (there is no
/// restart branch in the two-node runner).
fn safety_ball(p0: &SymMatrix) -> f64 {
    100.0 * (1.0 + p0.norm_fro())
}

struct NodeState {
    p: SymMatrix,
    trace: Vec<TraceRow>,
    terminated: Option<Termination>,
    final_p: Option<SymMatrix>,
    iterations: usize,
    ball: f64,
}

impl NodeState {
    fn view(&self) -> SymMatrix {
        self.final_p.clone().unwrap_or_else(|| self.p.clone())
    }
}

/// Runs the synchronous two-node iteration: at each step both nodes update
/// their value matrix by one Euler step of their own stationary operator
/// plus the coupling evaluated at the pair of current values.
///
/// A node freezes once its scaled update norm `||P_{k+1} - P_k|| / h_k`
/// (coupling included) drops below its `eps_bar`; the neighbour keeps
/// iterating against the frozen value. Leaving the safety ball
/// `100 (1 + ||P_0||)` or producing non-finite entries marks the node
/// diverged. If either node diverges the whole run is retried once with both
/// step scales halved; the `restarts` field of the returned runs counts that
/// halving (0 or 1) — the iteration itself never resets.
///
/// The `boundary` field of the configs is unused here: there is no
/// restart-and-grow branch in this runner.
pub fn decentralized_vi_run(
    prob: &CoupledProblem,
    configs: (&ViConfig, &ViConfig),
) -> Result<(ViRun, ViRun), DecentralizedError> {
    for (node, cfg) in [configs.0, configs.1].into_iter().enumerate() {
        if cfg.p0.dim() != prob.sys(node).n() {
            return Err(DecentralizedError::BadConfig(format!(
                "node {}: initial matrix dimension {} does not match the plant ({})",
                node + 1,
                cfg.p0.dim(),
                prob.sys(node).n()
            )));
        }
        cfg.validate_scalars()?;
    }
    let first = run_attempt(prob, configs, false)?;
    let diverged = first.0.terminated == Termination::Diverged
        || first.1.terminated == Termination::Diverged;
    if !diverged {
        return Ok(first);
    }
    let halve = |cfg: &ViConfig| -> Result<ViConfig, DecentralizedError> {
        let mut smaller = cfg.clone();
        smaller.steps = StepSchedule::new(cfg.steps.h0 / 2.0, cfg.steps.alpha)?;
        Ok(smaller)
    };
    let (cfg1, cfg2) = (halve(configs.0)?, halve(configs.1)?);
    run_attempt(prob, (&cfg1, &cfg2), true)
}

fn run_attempt(
    prob: &CoupledProblem,
    configs: (&ViConfig, &ViConfig),
    halved: bool,
) -> Result<(ViRun, ViRun), DecentralizedError> {
    let cfgs = [configs.0, configs.1];
    let mut nodes: Vec<NodeState> = cfgs
        .iter()
        .map(|cfg| NodeState {
            p: cfg.p0.clone(),
            trace: Vec::new(),
            terminated: None,
            final_p: None,
            iterations: cfg.max_iters,
            ball: safety_ball(&cfg.p0),
        })
        .collect();

    let k_max = cfgs[0].max_iters.max(cfgs[1].max_iters);
    for k in 0..k_max {
        let active: Vec<bool> = (0..2)
            .map(|i| nodes[i].terminated.is_none() && k < cfgs[i].max_iters)
            .collect();
        if !active[0] && !active[1] {
            break;
        }
        // Synchronous exchange: both nodes read the same snapshot.
        let views = [nodes[0].view(), nodes[1].view()];
        for i in 0..2 {
            if !active[i] {
                continue;
            }
            let cfg = cfgs[i];
            let node = &mut nodes[i];
            let h = cfg.steps.step(k);
            let delta = prob.checked_coupling(i, &views[i], &views[1 - i])?;
            let direction = riccati_residual(&node.p, prob.sys(i), prob.cost(i));
            let p_half = node.p.add(&direction.add(&delta).scale(h));
            let metric = p_half.sub(&node.p).norm_fro() / h;
            let finite = p_half.is_finite();
            let converged = finite && metric < cfg.eps_bar;
            let diverged = !finite || p_half.norm_fro() > node.ball;
            if converged || diverged || k % cfg.trace_stride == 0 {
                node.trace.push(TraceRow {
                    k,
                    q: 0,
                    h,
                    p: node.p.clone(),
                    residual_norm: metric,
                });
            }
            if converged {
                node.terminated = Some(Termination::Converged);
                node.iterations = k + 1;
                node.final_p = Some(node.p.clone());
            } else if diverged {
                node.terminated = Some(Termination::Diverged);
                node.iterations = k + 1;
                node.final_p = Some(node.p.clone());
            } else {
                node.p = p_half;
            }
        }
    }

    let mut runs = nodes.into_iter().map(|node| ViRun {
        trace: node.trace,
        restarts: usize::from(halved),
        terminated: node.terminated.unwrap_or(Termination::MaxIters),
        final_p: node.final_p.unwrap_or(node.p),
        iterations: node.iterations,
    });
    let first = runs.next().expect("two nodes");
    let second = runs.next().expect("two nodes");
    Ok((first, second))
}

/// Writes a one-line-per-node summary of a coupled run: iteration count,
/// automatic step halvings, last scaled-update norm (the coupled residual at
/// the final iterate), and the termination status.
pub fn write_pair_summary_csv<W: io::Write>(
    runs: &(ViRun, ViRun),
    out: &mut W,
) -> io::Result<()> {
    writeln!(out, "node,iterations,restarts,residual_norm,status")?;
    for (idx, run) in [&runs.0, &runs.1].into_iter().enumerate() {
        let residual = run
            .trace
            .last()
            .expect("an executed run traces at least its first iteration")
            .residual_norm;
        writeln!(
            out,
            "{},{},{},{},{:?}",
            idx + 1,
            run.iterations,
            run.restarts,
            residual,
            run.terminated
        )?;
    }
    Ok(())
}

const GAIN_BOUND_ORACLE_TOL: f64 = 1e-9;

/// Empirical polynomial bounds on the coupling deviations around the fixed
/// point, fitted from sampled value-matrix pairs.
#[derive(Debug, Clone)]
pub struct GainBoundReport {
    /// The fixed point the deviations are measured from.
    pub reference: (SymMatrix, SymMatrix),
    /// `coefficients[i][j]` fits `||Delta_i - Delta_i^*||` against powers
    /// 1..3 of `||P_{j+1} - P_{j+1}^*||_F`.
    pub coefficients: [[GainPolynomial; 2]; 2],
    /// Root-mean-square residual of each node's fit.
    pub fit_residuals: [f64; 2],
    /// When the problem declares polynomial bounds: whether every sample
    /// satisfied them.
    pub declared_bounds_hold: Option<bool>,
}

fn eval_poly(poly: &GainPolynomial, x: f64) -> f64 {
    poly[0] * x + poly[1] * x * x + poly[2] * x * x * x
}

/// Fits degree-3 polynomial envelopes `||Delta_i(P) - Delta_i(P*)|| ~
/// sum_j gamma_ij(||P_j - P_j*||)` over the given samples. Diagnostic only:
/// the fit is least-squares, not a certified bound.
pub fn gain_bound_report(
    prob: &CoupledProblem,
    samples: &[(SymMatrix, SymMatrix)],
) -> Result<GainBoundReport, DecentralizedError> {
    let star = solve_coupled_oracle(prob, GAIN_BOUND_ORACLE_TOL)?;
    let base = [
        prob.checked_coupling(0, &star.p1_star, &star.p2_star)?,
        prob.checked_coupling(1, &star.p2_star, &star.p1_star)?,
    ];
    let rows = samples.len();
    let mut design = DenseMatrix::zeros(rows, 6);
    let mut deviations = [DenseVector::zeros(rows), DenseVector::zeros(rows)];
    for (row, (p1, p2)) in samples.iter().enumerate() {
        if p1.dim() != star.p1_star.dim() || p2.dim() != star.p2_star.dim() {
            return Err(DecentralizedError::BadConfig(format!(
                "sample {row} has dimensions ({}, {}), expected ({}, {})",
                p1.dim(),
                p2.dim(),
                star.p1_star.dim(),
                star.p2_star.dim()
            )));
        }
        if !p1.is_finite() || !p2.is_finite() {
            return Err(DecentralizedError::BadConfig(format!(
                "sample {row} has non-finite entries"
            )));
        }
        let x1 = p1.sub(&star.p1_star).norm_fro();
        let x2 = p2.sub(&star.p2_star).norm_fro();
        for (col, x) in [(0, x1), (3, x2)] {
            design[(row, col)] = x;
            design[(row, col + 1)] = x * x;
            design[(row, col + 2)] = x * x * x;
        }
        deviations[0][row] =
            prob.checked_coupling(0, p1, p2)?.sub(&base[0]).norm_fro();
        deviations[1][row] =
            prob.checked_coupling(1, p2, p1)?.sub(&base[1]).norm_fro();
    }

    let svd = design.clone().svd(true, true);
    let mut coefficients = [[[0.0; 3]; 2]; 2];
    let mut fit_residuals = [0.0; 2];
    for node in 0..2 {
        let solved = svd
            .solve(&deviations[node], 1e-12)
            .map_err(|e| DecentralizedError::BadConfig(format!("degenerate fit: {e}")))?;
        for j in 0..2 {
            for d in 0..3 {
                coefficients[node][j][d] = solved[3 * j + d];
            }
        }
        let misfit = &design * &solved - &deviations[node];
        fit_residuals[node] = if rows == 0 {
            0.0
        } else {
            (misfit.norm_squared() / rows as f64).sqrt()
        };
    }

    let declared_bounds_hold = prob.gain_polys.as_ref().map(|polys| {
        samples.iter().enumerate().all(|(row, _)| {
            (0..2).all(|node| {
                let x1 = design[(row, 0)];
                let x2 = design[(row, 3)];
                let bound =
                    eval_poly(&polys[node][0], x1) + eval_poly(&polys[node][1], x2);
                deviations[node][row] <= bound + 1e-12
            })
        })
    });

    Ok(GainBoundReport {
        reference: (star.p1_star, star.p2_star),
        coefficients,
        fit_residuals,
        declared_bounds_hold,
    })
}
