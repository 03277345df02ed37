//! Entropic optimal transport on discrete supports.
//!
//! This is the independent oracle of the workspace: an alternating-scaling
//! solver for the entropy-regularized transport problem
//!
//! ```text
//! min_π  Σᵢⱼ πᵢⱼ Cᵢⱼ + ε·KL(π | μ ⊗ ν)     s.t.  π1 = μ,  πᵀ1 = ν
//! ```
//!
//! whose optimizer is a diagonal scaling `π = diag(u) K̃ diag(v)` of the
//! weighted Gibbs kernel `K̃ᵢⱼ = μᵢνⱼ·exp(−Cᵢⱼ/ε)`. It shares no code with
//! the bridge modules, so agreement between a learned bridge's endpoint
//! coupling and this solver is evidence, not tautology.
//!
//! Numerical posture: both scaling factors are updated *simultaneously*
//! from the previous iterate with a geometric half-step of damping —
//! undamped simultaneous updates oscillate, and sequential ones would make
//! the two measures' roles asymmetric. The damped simultaneous scheme
//! converges and makes swapping the two measures transpose the plan bit
//! for bit. Small `ε` (≤ 1e-2) runs in the log-domain on potentials;
//! standard-domain overflow triggers an automatic log-domain retry.

use ndarray::Array2;
use thiserror::Error;

/// Errors from measure construction and solving.
#[derive(Debug, Error)]
pub enum SinkhornError {
    #[error("invalid measure: {0}")]
    Measure(String),
    #[error("duplicate support point at indices {a} and {b}")]
    DuplicateSupport { a: usize, b: usize },
    #[error("invalid solver parameter: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("standard-domain scaling overflowed at iteration {iter}")]
    Overflow { iter: usize },
}

/// A finitely supported probability measure on the plane: distinct support
/// points with non-negative weights summing to one. Construction validates
/// and normalizes; the fields stay private to keep the invariants honest.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: Array2<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Validate and normalize. Weights may contain zeros but must be
    /// non-negative with a positive sum; support points must be pairwise
    /// distinct (exact comparison — merging duplicates would silently
    /// change weights).
    pub fn new(support: Array2<f64>, weights: Vec<f64>) -> Result<Self, SinkhornError> {
        let n = support.nrows();
        if n == 0 {
            return Err(SinkhornError::Measure("support must be non-empty".into()));
        }
        if support.ncols() != 2 {
            return Err(SinkhornError::Measure(format!(
                "support points must be 2-dimensional, got {} columns",
                support.ncols()
            )));
        }
        if weights.len() != n {
            return Err(SinkhornError::Measure(format!(
                "{n} support points but {} weights",
                weights.len()
            )));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(SinkhornError::Measure("support must be finite".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SinkhornError::Measure(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(SinkhornError::Measure("weights must have positive sum".into()));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| {
            support[[a, 0]]
                .total_cmp(&support[[b, 0]])
                .then(support[[a, 1]].total_cmp(&support[[b, 1]]))
        });
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            if support[[a, 0]] == support[[b, 0]] && support[[a, 1]] == support[[b, 1]] {
                return Err(SinkhornError::DuplicateSupport {
                    a: a.min(b),
                    b: a.max(b),
                });
            }
        }

        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(DiscreteMeasure { support, weights })
    }

    /// Uniform weights on the given support.
    pub fn uniform(support: Array2<f64>) -> Result<Self, SinkhornError> {
        let n = support.nrows();
        DiscreteMeasure::new(support, vec![1.0; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty supports
    }

    pub fn support(&self) -> &Array2<f64> {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// A transport plan between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub plan: Array2<f64>,
    pub row_measure: DiscreteMeasure,
    pub col_measure: DiscreteMeasure,
}

impl Coupling {
    /// Max of the two L1 marginal errors: ‖π1 − μ‖₁ and ‖πᵀ1 − ν‖₁.
    pub fn marginal_violation(&self) -> f64 {
        violation(&self.plan, self.row_measure.weights(), self.col_measure.weights())
    }
}

/// Which arithmetic the solver ran in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    Standard,
    LogDomain,
}

/// Solver output: the plan plus convergence accounting.
#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub coupling: Coupling,
    /// Marginal violation of the returned plan.
    pub violation: f64,
    /// Whether `violation ≤ tol` was reached within the budget.
    pub converged: bool,
    /// Jacobi updates performed before stopping.
    pub iterations: usize,
    pub mode: SolverMode,
}

/// Squared Euclidean cost matrix `C[i][j] = ‖xᵢ − yⱼ‖²`.
pub fn cost_matrix(x: &DiscreteMeasure, y: &DiscreteMeasure) -> Array2<f64> {
    let (m, k) = (x.len(), y.len());
    let mut c = Array2::zeros((m, k));
    for i in 0..m {
        for j in 0..k {
            let dx = x.support[[i, 0]] - y.support[[j, 0]];
            let dy = x.support[[i, 1]] - y.support[[j, 1]];
            c[[i, j]] = dx * dx + dy * dy;
        }
    }
    c
}

/// Entrywise Gibbs kernel `K = exp(−C/ε)`.
pub fn gibbs_kernel(cost: &Array2<f64>, eps: f64) -> Result<Array2<f64>, SinkhornError> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(SinkhornError::Config(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    Ok(cost.mapv(|c| (-c / eps).exp()))
}

/// Threshold below which `sinkhorn_solve` goes straight to the log domain.
const LOG_DOMAIN_EPS: f64 = 1e-2;

/// Solve the entropic transport problem, choosing the arithmetic
/// automatically: log-domain for `eps ≤ 1e-2`, standard otherwise with a
/// log-domain retry if the scalings overflow. Non-convergence within
/// `max_iters` is not an error — the result carries the achieved violation
/// and `converged: false`.
pub fn sinkhorn_solve(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<SinkhornResult, SinkhornError> {
    if eps <= LOG_DOMAIN_EPS {
        return sinkhorn_solve_in_mode(mu, nu, eps, max_iters, tol, SolverMode::LogDomain);
    }
    match sinkhorn_solve_in_mode(mu, nu, eps, max_iters, tol, SolverMode::Standard) {
        Err(SinkhornError::Overflow { .. }) => {
            sinkhorn_solve_in_mode(mu, nu, eps, max_iters, tol, SolverMode::LogDomain)
        }
        other => other,
    }
}

/// [`sinkhorn_solve`] with the arithmetic fixed by the caller. In
/// `Standard` mode an overflow is returned as an error instead of retried.
pub fn sinkhorn_solve_in_mode(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    eps: f64,
    max_iters: usize,
    tol: f64,
    mode: SolverMode,
) -> Result<SinkhornResult, SinkhornError> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(SinkhornError::Config(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    if tol <= 0.0 || !tol.is_finite() {
        return Err(SinkhornError::Config(format!(
            "tol must be positive and finite, got {tol}"
        )));
    }
    if max_iters == 0 {
        return Err(SinkhornError::Config("max_iters must be ≥ 1".into()));
    }
    let cost = cost_matrix(mu, nu);
    let (plan, violation, converged, iterations) = match mode {
        SolverMode::Standard => solve_standard(mu, nu, &cost, eps, max_iters, tol)?,
        SolverMode::LogDomain => solve_log(mu, nu, &cost, eps, max_iters, tol),
    };
    Ok(SinkhornResult {
        coupling: Coupling {
            plan,
            row_measure: mu.clone(),
            col_measure: nu.clone(),
        },
        violation,
        converged,
        iterations,
        mode,
    })
}

/// Weighted kernel `K̃ᵢⱼ = (μᵢ·νⱼ)·exp(−Cᵢⱼ/ε)`. The grouping matters:
/// commuted products are bit-equal, so the kernel of the swapped problem is
/// exactly the transpose.
fn weighted_kernel(mu: &[f64], nu: &[f64], cost: &Array2<f64>, eps: f64) -> Array2<f64> {
    let mut k = Array2::zeros((mu.len(), nu.len()));
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            k[[i, j]] = (mu[i] * nu[j]) * (-cost[[i, j]] / eps).exp();
        }
    }
    k
}

/// Max L1 marginal error of a plan against target weights. Row and column
/// accumulations both run in ascending index order so the swapped problem
/// computes the same two numbers in the other roles.
fn violation(plan: &Array2<f64>, mu: &[f64], nu: &[f64]) -> f64 {
    let mut row_err = 0.0;
    for i in 0..mu.len() {
        let mut s = 0.0;
        for j in 0..nu.len() {
            s += plan[[i, j]];
        }
        row_err += (s - mu[i]).abs();
    }
    let mut col_err = 0.0;
    for j in 0..nu.len() {
        let mut s = 0.0;
        for i in 0..mu.len() {
            s += plan[[i, j]];
        }
        col_err += (s - nu[j]).abs();
    }
    row_err.max(col_err)
}

fn solve_standard(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(Array2<f64>, f64, bool, usize), SinkhornError> {
    let (mw, nw) = (mu.weights(), nu.weights());
    let (m, k) = (mw.len(), nw.len());
    let kernel = weighted_kernel(mw, nw, cost, eps);
    let mut u = vec![1.0; m];
    let mut v = vec![1.0; k];
    let mut plan = Array2::zeros((m, k));

    for iter in 0..=max_iters {
        for i in 0..m {
            for j in 0..k {
                plan[[i, j]] = (u[i] * v[j]) * kernel[[i, j]];
            }
        }
        if plan.iter().any(|p| !p.is_finite()) {
            return Err(SinkhornError::Overflow { iter });
        }
        let viol = violation(&plan, mw, nw);
        if viol <= tol {
            return Ok((plan, viol, true, iter));
        }
        if iter == max_iters {
            return Ok((plan, viol, false, iter));
        }

        // Damped simultaneous update: both factors move from the previous
        // iterate toward their exact fit by a geometric half-step.
        // Undamped simultaneous updates oscillate with period two (u and v
        // overshoot each other in lockstep); the half-step restores
        // convergence while keeping the swap symmetry exact.
        let mut u_new = vec![0.0; m];
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..k {
                s += kernel[[i, j]] * v[j];
            }
            let fit = if mw[i] == 0.0 { 0.0 } else { mw[i] / s };
            u_new[i] = (u[i] * fit).sqrt();
        }
        let mut v_new = vec![0.0; k];
        for j in 0..k {
            let mut s = 0.0;
            for i in 0..m {
                s += kernel[[i, j]] * u[i];
            }
            let fit = if nw[j] == 0.0 { 0.0 } else { nw[j] / s };
            v_new[j] = (v[j] * fit).sqrt();
        }
        if u_new.iter().chain(v_new.iter()).any(|x| !x.is_finite()) {
            return Err(SinkhornError::Overflow { iter });
        }
        u = u_new;
        v = v_new;
    }
    unreachable!("loop returns at iter == max_iters")
}

/// Log-sum-exp with the max-shift trick; an all-(−∞) input yields −∞.
fn lse(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = terms.iter().map(|&a| (a - m).exp()).sum();
    m + s.ln()
}

fn solve_log(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    cost: &Array2<f64>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> (Array2<f64>, f64, bool, usize) {
    let (mw, nw) = (mu.weights(), nu.weights());
    let (m, k) = (mw.len(), nw.len());
    let lmu: Vec<f64> = mw.iter().map(|w| w.ln()).collect();
    let lnu: Vec<f64> = nw.iter().map(|w| w.ln()).collect();
    // Potentials: the standard-domain scalings are u = exp(f/ε), v = exp(g/ε).
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; k];
    let mut plan = Array2::zeros((m, k));
    let mut row_terms = vec![0.0; k];
    let mut col_terms = vec![0.0; m];

    for iter in 0..=max_iters {
        for i in 0..m {
            for j in 0..k {
                let lp = lmu[i] + lnu[j] + (f[i] + g[j] - cost[[i, j]]) / eps;
                plan[[i, j]] = lp.exp();
            }
        }
        let viol = violation(&plan, mw, nw);
        if viol <= tol {
            return (plan, viol, true, iter);
        }
        if iter == max_iters {
            return (plan, viol, false, iter);
        }

        // Damped simultaneous update, mirroring the standard domain: the
        // geometric half-step on scalings is an arithmetic half-step on
        // potentials.
        let mut f_new = vec![0.0; m];
        for i in 0..m {
            for j in 0..k {
                row_terms[j] = (g[j] - cost[[i, j]]) / eps + lnu[j];
            }
            f_new[i] = 0.5 * f[i] + 0.5 * (-eps * lse(&row_terms));
        }
        let mut g_new = vec![0.0; k];
        for j in 0..k {
            for i in 0..m {
                col_terms[i] = (f[i] - cost[[i, j]]) / eps + lmu[i];
            }
            g_new[j] = 0.5 * g[j] + 0.5 * (-eps * lse(&col_terms));
        }
        f = f_new;
        g = g_new;
    }
    unreachable!("loop returns at iter == max_iters")
}

/// Entropic transport objective of an explicit plan:
/// `Σ πᵢⱼCᵢⱼ + ε·Σ πᵢⱼ·log(πᵢⱼ/(μᵢνⱼ))` with `0·log 0 = 0`.
pub fn coupling_objective(
    plan: &Array2<f64>,
    cost: &Array2<f64>,
    eps: f64,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
) -> Result<f64, SinkhornError> {
    let (m, k) = plan.dim();
    if cost.dim() != (m, k) || mu.len() != m || nu.len() != k {
        return Err(SinkhornError::Shape(format!(
            "plan {m}×{k} vs cost {:?}, {} row weights, {} col weights",
            cost.dim(),
            mu.len(),
            nu.len()
        )));
    }
    if eps <= 0.0 || !eps.is_finite() {
        return Err(SinkhornError::Config(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    let (mw, nw) = (mu.weights(), nu.weights());
    let mut obj = 0.0;
    for i in 0..m {
        for j in 0..k {
            let p = plan[[i, j]];
            if p > 0.0 {
                obj += p * cost[[i, j]] + eps * p * (p.ln() - (mw[i] * nw[j]).ln());
            }
        }
    }
    Ok(obj)
}

/// Compare a learned bridge's endpoint coupling against this solver.
///
/// `pairs` is `n×4`: each row is a joint draw `(x_0, x_T)` laid out as
/// `(x0_x, x0_y, xT_x, xT_y)`. Both endpoints are histogrammed onto a
/// `grid_resolution × grid_resolution` grid over their own bounding boxes;
/// the empirical joint histogram is compared — by total-variation distance,
/// half the L1 difference — to the Sinkhorn plan between the two marginal
/// histograms at the given `eps`. Empty cells simply carry zero weight.
pub fn bridge_vs_oracle(
    pairs: &Array2<f64>,
    grid_resolution: usize,
    eps: f64,
) -> Result<f64, SinkhornError> {
    let n = pairs.nrows();
    if n < 1000 {
        return Err(SinkhornError::Config(format!(
            "need at least 1000 endpoint pairs for a stable histogram, got {n}"
        )));
    }
    if pairs.ncols() != 4 {
        return Err(SinkhornError::Shape(format!(
            "pairs must be n×4 (x0, xT concatenated), got {} columns",
            pairs.ncols()
        )));
    }
    if pairs.iter().any(|v| !v.is_finite()) {
        return Err(SinkhornError::Config("endpoint pairs must be finite".into()));
    }
    let r = grid_resolution;
    if r < 2 {
        return Err(SinkhornError::Config(format!(
            "grid_resolution must be ≥ 2, got {r}"
        )));
    }

    // Per-side bounding boxes, padded when degenerate.
    let bounds = |c0: usize| -> [(f64, f64); 2] {
        let mut b = [(f64::INFINITY, f64::NEG_INFINITY); 2];
        for row in pairs.outer_iter() {
            for d in 0..2 {
                let v = row[c0 + d];
                b[d].0 = b[d].0.min(v);
                b[d].1 = b[d].1.max(v);
            }
        }
        for side in b.iter_mut() {
            if side.1 <= side.0 {
                *side = (side.0 - 0.5, side.0 + 0.5);
            }
        }
        b
    };
    let b0 = bounds(0);
    let bt = bounds(2);
    let cell = |b: &[(f64, f64); 2], x: f64, y: f64| -> usize {
        let ix = (((x - b[0].0) / (b[0].1 - b[0].0) * r as f64) as usize).min(r - 1);
        let iy = (((y - b[1].0) / (b[1].1 - b[1].0) * r as f64) as usize).min(r - 1);
        ix * r + iy
    };

    let cells = r * r;
    let mut joint = Array2::<f64>::zeros((cells, cells));
    let mut mu_w = vec![0.0; cells];
    let mut nu_w = vec![0.0; cells];
    let inc = 1.0 / n as f64;
    for row in pairs.outer_iter() {
        let c0 = cell(&b0, row[0], row[1]);
        let ct = cell(&bt, row[2], row[3]);
        joint[[c0, ct]] += inc;
        mu_w[c0] += inc;
        nu_w[ct] += inc;
    }

    let centers = |b: &[(f64, f64); 2]| -> Array2<f64> {
        Array2::from_shape_fn((cells, 2), |(c, d)| {
            let idx = if d == 0 { c / r } else { c % r };
            b[d].0 + (idx as f64 + 0.5) * (b[d].1 - b[d].0) / r as f64
        })
    };
    let mu = DiscreteMeasure::new(centers(&b0), mu_w)?;
    let nu = DiscreteMeasure::new(centers(&bt), nu_w)?;
    let result = sinkhorn_solve(&mu, &nu, eps, 50_000, 1e-9)?;

    let tv = joint
        .iter()
        .zip(result.coupling.plan.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 2.0;
    Ok(tv)
}
