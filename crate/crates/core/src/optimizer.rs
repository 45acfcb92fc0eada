//! Fletcher–Reeves conjugate gradients with a model-based exact line search.
//!
//! One iteration from `q_n` with gradient `g_n`:
//!
//! ```text
//! γ_n = ‖g_n‖² / ‖g_{n−1}‖²          (γ_0 = 0)
//! P_n = g_n + γ_n P_{n−1}
//! q_{n+1} = clamp(q_n − β_n P_n)
//! ```
//!
//! `β_n` comes from the cubic model `ψ(β) ≈ ψ(0) − Cβ + Bβ² − Aβ³` of
//! `ψ(β) = K_ρ(q_n − βP_n)`, obtained by linearizing the states along `P_n`.
//! Positive roots of `ψ'(β) = −3Aβ² + 2Bβ − C` are candidates; if none gives
//! decrease, Armijo backtracking takes over.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Field;
use crate::mesh::{boundary_l2_inner, BoundaryData, BoundaryKind, Potential, SpaceMesh};
use crate::objective::{Objective, ObjectiveEvaluation, StepProposal};
use crate::timegrid::TimeGrid;

/// Coefficients of the cubic line model `ψ(0) − Cβ + Bβ² − Aβ³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizeCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl StepSizeCoefficients {
    /// `ψ(β) − ψ(0)` under the model.
    pub fn model_change(&self, beta: f64) -> f64 {
        -self.c * beta + self.b * beta * beta - self.a * beta.powi(3)
    }

    /// `ψ'(β) = −3Aβ² + 2Bβ − C`.
    pub fn model_slope(&self, beta: f64) -> f64 {
        -3.0 * self.a * beta * beta + 2.0 * self.b * beta - self.c
    }

    /// `Δ = 4(B² − 3AC)`.
    pub fn discriminant(&self) -> f64 {
        4.0 * (self.b * self.b - 3.0 * self.a * self.c)
    }

    /// Real roots of `ψ'(β) = 0`, ascending. Empty when `Δ < 0` or the
    /// model is constant.
    pub fn roots(&self) -> Vec<f64> {
        let (a, b, c) = (self.a, self.b, self.c);
        let scale = a.abs().max(b.abs()).max(c.abs());
        if scale == 0.0 {
            return Vec::new();
        }
        if a.abs() <= 1e-14 * scale {
            return if b == 0.0 { Vec::new() } else { vec![c / (2.0 * b)] };
        }
        let d = b * b - 3.0 * a * c;
        if d < 0.0 {
            return Vec::new();
        }
        // cancellation-free pair: β₁ = s/(3A), β₂ = C/s with s = B ± √d
        let s = b + b.signum() * d.sqrt();
        let mut roots = if s == 0.0 { vec![0.0] } else { vec![s / (3.0 * a), c / s] };
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }
}

fn check_len(name: &str, len: usize, mesh: &SpaceMesh) -> Result<()> {
    if len != mesh.n_nodes() {
        return Err(Error::ShapeMismatch(format!("{name} has {len} values for {} nodes", mesh.n_nodes())));
    }
    Ok(())
}

/// Line-model coefficients for `K_ρ(q − βP)` given states `u_N, u_D` at `q`
/// and their sensitivities `U_N, U_D` along `P`. With `w = u_N − u_D`,
/// `W = U_N − U_D`, `a_q` the energy form of `K + M_q` and `p` the
/// `P`-weighted mass form, all integrated in time by the trapezoid rule:
///
/// ```text
/// A = p(W, W)
/// B = a_q(W, W) + 2 p(w, W) + ρ‖P‖²
/// C = 2 a_q(w, W) + p(w, w) + 2ρ⟨P, q⟩
/// ```
///
/// `C` equals the exact directional derivative `⟨K'_ρ(q), P⟩`.
#[allow(clippy::too_many_arguments)]
pub fn step_coefficients(
    q: &Potential,
    direction: &[f64],
    u_n: &Field,
    u_d: &Field,
    su_n: &Field,
    su_d: &Field,
    rho: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> StepSizeCoefficients {
    let w = u_n - u_d;
    let big_w = su_n - su_d;
    let mq = mesh.coefficient_mass(&q.values);
    let mp = mesh.coefficient_mass(direction);
    let a_q = |x: &Field, y: &Field| x.space_time_form(mesh.stiffness(), y, grid) + x.space_time_form(&mq, y, grid);
    let p = |x: &Field, y: &Field| x.space_time_form(&mp, y, grid);
    StepSizeCoefficients {
        a: p(&big_w, &big_w),
        b: a_q(&big_w, &big_w) + 2.0 * p(&w, &big_w) + rho * mesh.inner(direction, direction),
        c: 2.0 * a_q(&w, &big_w) + p(&w, &w) + 2.0 * rho * mesh.inner(direction, &q.values),
    }
}

/// Closed-form least-squares step minimizing the linearized
/// `‖r − βU‖²_Σ + μ‖q − βP‖²`, with boundary residual `r = u|_∂Ω − φ`:
///
/// ```text
/// β = (⟨r, U⟩_Σ + μ⟨P, q⟩) / (‖U‖²_Σ + μ‖P‖²)
/// ```
#[allow(clippy::too_many_arguments)]
pub fn ls_step_size(
    q: &Potential,
    direction: &[f64],
    u: &Field,
    observed: &BoundaryData,
    su: &Field,
    mu: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<f64> {
    check_len("direction", direction.len(), mesh)?;
    let mut r = u.trace(mesh, BoundaryKind::Dirichlet);
    r.values -= &observed.values;
    let s = su.trace(mesh, BoundaryKind::Dirichlet);
    let num = boundary_l2_inner(&r, &s, mesh, grid)? + mu * mesh.inner(direction, &q.values);
    let den = boundary_l2_inner(&s, &s, mesh, grid)? + mu * mesh.inner(direction, direction);
    if !(den > 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(num / den)
}

/// `γ = ‖g_new‖² / ‖g_old‖²` in the mass inner product; 0 when `g_old` vanishes.
pub fn fletcher_reeves_gamma(g_new: &[f64], g_old: &[f64], mesh: &SpaceMesh) -> f64 {
    let old = mesh.inner(g_old, g_old);
    if old < 1e-30 {
        return 0.0;
    }
    mesh.inner(g_new, g_new) / old
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmijoParams {
    pub sigma: f64,
    pub shrink: f64,
    pub beta_init: f64,
    pub max_halvings: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self { sigma: 1e-4, shrink: 0.5, beta_init: 1.0, max_halvings: 40 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Quadratic,
    ClosedForm,
    Armijo,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepChoice {
    pub beta: f64,
    pub kind: StepKind,
    /// `ψ(β)`.
    pub value: f64,
}

/// Picks `β` along the direction. `psi0 = ψ(0)`, `slope = ⟨g, P⟩ = −ψ'(0)`.
/// Returns `None` if Armijo backtracking is exhausted.
pub fn select_step<F>(
    proposal: &StepProposal,
    psi0: f64,
    slope: f64,
    armijo: &ArmijoParams,
    mut line_eval: F,
) -> Result<Option<StepChoice>>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (candidates, kind) = match proposal {
        StepProposal::Quadratic(coeffs) => (coeffs.roots(), StepKind::Quadratic),
        StepProposal::ClosedForm(beta) => (vec![*beta], StepKind::ClosedForm),
    };
    let mut best: Option<StepChoice> = None;
    for beta in candidates.into_iter().filter(|b| b.is_finite() && *b > 0.0) {
        let value = line_eval(beta)?;
        if value.is_finite() && best.is_none_or(|c| value < c.value) {
            best = Some(StepChoice { beta, kind, value });
        }
    }
    if let Some(choice) = best.filter(|c| c.value <= psi0) {
        return Ok(Some(choice));
    }
    let mut beta = armijo.beta_init;
    for _ in 0..=armijo.max_halvings {
        let value = line_eval(beta)?;
        if value.is_finite() && value <= psi0 - armijo.sigma * beta * slope {
            return Ok(Some(StepChoice { beta, kind: StepKind::Armijo, value }));
        }
        beta *= armijo.shrink;
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgOptions {
    /// Stop when `‖q_{n+1} − q_n‖ / ‖q_n‖ ≤ tol`.
    pub tol: f64,
    pub max_it: usize,
    /// Stop when `‖K'_ρ(q_n)‖ ≤ grad_tol`.
    pub grad_tol: f64,
    pub armijo: ArmijoParams,
    /// Record `(q_n, P_n)` for every step.
    pub keep_iterates: bool,
    /// Target `|ψ'(β)| / |ψ'(0)|` when polishing a quadratic-model step.
    pub line_tol: f64,
    /// Secant iterations allowed for the polish; 0 keeps the model root.
    pub max_polish: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_it: 200,
            grad_tol: 1e-10,
            armijo: ArmijoParams::default(),
            keep_iterates: false,
            line_tol: 1e-4,
            max_polish: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CgStatus {
    /// Relative change fell below `tol`.
    Converged,
    /// Gradient norm fell below `grad_tol`.
    Stationary,
    MaxIterations,
    LineSearchFailure,
    SolverFailure(String),
}

impl CgStatus {
    pub fn is_failure(&self) -> bool {
        matches!(self, CgStatus::LineSearchFailure | CgStatus::SolverFailure(_))
    }
}

/// State at `q_n` and the step taken from it. The last record has no step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub k_rho: f64,
    pub grad_norm: f64,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub rel_error: Option<f64>,
    pub step_kind: Option<StepKind>,
    /// Whether the clamp onto the admissible box changed the update.
    pub projected: bool,
    /// `|⟨g_{n+1}, P_n⟩| / |⟨g_n, P_n⟩|`.
    pub slope_ratio: Option<f64>,
}

/// A step `q_{n+1} = clamp(q_n − β P_n)` kept for offline checks.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub q: Potential,
    pub direction: Vec<f64>,
    pub gradient: Vec<f64>,
    pub choice: StepChoice,
    pub projected: bool,
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub records: Vec<IterationRecord>,
    pub q_final: Potential,
    pub status: CgStatus,
    pub steps: Vec<StepRecord>,
}

impl CgOutcome {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn k_rho_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.k_rho).collect()
    }
}

fn relative_change(new: &[f64], old: &[f64], mesh: &SpaceMesh) -> f64 {
    let diff: Vec<f64> = new.iter().zip(old).map(|(a, b)| a - b).collect();
    let base = mesh.norm(old);
    if base > 0.0 {
        mesh.norm(&diff) / base
    } else {
        mesh.norm(&diff)
    }
}

/// Zeroes the components of a descent vector `v` (step `q − βv`) that would
/// push a value already at a bound further outside the box.
pub fn free_components(q: &Potential, v: &[f64]) -> Vec<f64> {
    q.values
        .iter()
        .zip(v)
        .map(|(&qi, &vi)| {
            if (qi <= q.lower && vi > 0.0) || (qi >= q.upper && vi < 0.0) {
                0.0
            } else {
                vi
            }
        })
        .collect()
}

fn clamped_step(q: &Potential, direction: &[f64], beta: f64) -> (Potential, bool) {
    let mut next = q.with_values(q.values.iter().zip(direction).map(|(a, p)| a - beta * p).collect());
    let moved = next.project();
    (next, moved)
}

/// Step length at which component `i` of `clamp(q − βP)` reaches a bound.
fn breakpoint(q: &Potential, i: usize, p: f64) -> f64 {
    let a = q.values[i];
    if p > 0.0 {
        (a - q.lower) / p
    } else if p < 0.0 {
        (a - q.upper) / p
    } else {
        f64::INFINITY
    }
}

/// One-sided slopes `(ψ'(β−), ψ'(β+))` of `ψ(β) = K_ρ(clamp(q − βP))`, given
/// the gradient at the clamped point. A component contributes while it is
/// still moving; at a breakpoint it moves on the left side only.
pub fn line_slopes(mesh: &SpaceMesh, q: &Potential, direction: &[f64], beta: f64, gradient: &[f64]) -> (f64, f64) {
    let mut left = vec![0.0; direction.len()];
    let mut right = vec![0.0; direction.len()];
    for (i, &p) in direction.iter().enumerate() {
        let b = breakpoint(q, i, p);
        if b >= beta && b > 0.0 {
            left[i] = p;
        }
        if b > beta {
            right[i] = p;
        }
    }
    (-mesh.inner(gradient, &left), -mesh.inner(gradient, &right))
}

/// Distance of 0 from the generalized slope at `β`: `|ψ'(β)|` where `ψ` is
/// differentiable, 0 at a kink with `ψ'(β−) ≤ 0 ≤ ψ'(β+)`.
pub fn line_stationarity((left, right): (f64, f64)) -> f64 {
    left.max(0.0) + (-right).max(0.0)
}

/// Evaluates the accepted step and, for quadratic-model steps, polishes `β`
/// towards a stationary point of `ψ` until the generalized slope is at most
/// `line_tol · |ψ'(0)|`: secant extrapolation until a sign change of `ψ'` is
/// bracketed, then regula falsi (Illinois variant), visiting breakpoints of
/// the clamp inside the bracket first. A stationary point is accepted if it
/// lies below `ψ(0)`; otherwise the lowest value seen wins.
fn refine_step<O: Objective>(
    objective: &O,
    q: &Potential,
    direction: &[f64],
    psi0: f64,
    slope: f64,
    choice: StepChoice,
    options: &CgOptions,
) -> Result<(Potential, ObjectiveEvaluation, StepChoice)> {
    let mesh = objective.mesh();
    let q_model = clamped_step(q, direction, choice.beta).0;
    let eval_model = finite(objective.evaluate(&q_model)?)?;
    if choice.kind != StepKind::Quadratic || options.max_polish == 0 {
        return Ok((q_model, eval_model, choice));
    }
    let slopes_at =
        |beta: f64, e: &ObjectiveEvaluation| line_slopes(mesh, q, direction, beta, e.gradient.as_deref().unwrap());
    let breakpoints: Vec<f64> = direction
        .iter()
        .enumerate()
        .map(|(i, &p)| breakpoint(q, i, p))
        .filter(|b| b.is_finite() && *b > 0.0)
        .collect();
    let tol = options.line_tol * slope;

    // brackets: ψ'(lo+) < 0 and ψ'(hi−) > 0; `side` remembers which end
    // moved last so a stale end can be down-weighted (Illinois)
    let mut lo = (0.0, -slope);
    let mut hi: Option<(f64, f64)> = None;
    let mut prev = lo;
    let mut side = 0i8;
    let mut cur = (choice.beta, slopes_at(choice.beta, &eval_model));
    let mut best = (choice, q_model, eval_model);
    for _ in 0..options.max_polish {
        let (beta_c, (left, right)) = cur;
        if line_stationarity((left, right)) <= tol {
            break;
        }
        if right < 0.0 {
            // still descending to the right, also past a concave kink
            lo = (beta_c, right);
            if hi.is_some_and(|h| h.0 <= beta_c) {
                hi = None;
            }
            if side == -1 {
                if let Some(h) = hi.as_mut() {
                    h.1 *= 0.5;
                }
            }
            side = -1;
        } else if left > 0.0 {
            hi = Some((beta_c, left));
            if side == 1 {
                lo.1 *= 0.5;
            }
            side = 1;
        }
        let beta = match hi {
            Some(h) => {
                let secant = lo.0 - lo.1 * (h.0 - lo.0) / (h.1 - lo.1);
                let trial =
                    if secant.is_finite() && secant > lo.0 && secant < h.0 { secant } else { 0.5 * (lo.0 + h.0) };
                // a kink inside the bracket may be the minimizer: visit those first
                breakpoints
                    .iter()
                    .copied()
                    .filter(|b| *b > lo.0 && *b < h.0)
                    .min_by(|a, b| (a - trial).abs().total_cmp(&(b - trial).abs()))
                    .unwrap_or(trial)
            }
            None => {
                // still descending: secant through the last two slopes, at most 4× further
                let secant = beta_c - right * (beta_c - prev.0) / (right - prev.1);
                if secant.is_finite() && secant > beta_c { secant.min(4.0 * beta_c) } else { 2.0 * beta_c }
            }
        };
        prev = (beta_c, right);
        let q_try = clamped_step(q, direction, beta).0;
        let e_try = finite(objective.evaluate(&q_try)?)?;
        cur = (beta, slopes_at(beta, &e_try));
        let stationary = line_stationarity(cur.1) <= tol;
        log::trace!(
            "polish beta {beta:.6e} value {:.9e} slopes ({:.3e}, {:.3e}) / {slope:.3e}",
            e_try.k_rho_value,
            cur.1 .0,
            cur.1 .1
        );
        // near a line minimizer the values differ at roundoff level, so a
        // stationary point only has to improve on ψ(0)
        if (stationary && e_try.k_rho_value <= psi0) || e_try.k_rho_value < best.0.value {
            best = (StepChoice { beta, kind: StepKind::Quadratic, value: e_try.k_rho_value }, q_try, e_try);
        }
    }
    let (choice, q_best, eval) = best;
    Ok((q_best, eval, choice))
}

fn finite(eval: ObjectiveEvaluation) -> Result<ObjectiveEvaluation> {
    if !eval.k_rho_value.is_finite() {
        return Err(Error::NonFinite("objective value".into()));
    }
    if eval.gradient.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(eval)
}

/// Runs the conjugate gradient iteration from `q0` (clamped onto the box
/// first). `error_of` maps an iterate to its reconstruction error, if known.
///
/// Gradient and direction components that point out of the box at an active
/// bound are frozen, so recorded gradient norms are those of the free part.
pub fn run_cgm<O, E>(objective: &O, q0: Potential, options: &CgOptions, error_of: E) -> CgOutcome
where
    O: Objective,
    E: Fn(&Potential) -> Option<f64>,
{
    let mesh = objective.mesh();
    let mut q = q0;
    q.project();
    let mut records = Vec::new();
    let mut steps = Vec::new();
    let fail = |q: Potential, records, steps, err: Error| CgOutcome {
        records,
        q_final: q,
        status: CgStatus::SolverFailure(err.to_string()),
        steps,
    };

    let mut eval: ObjectiveEvaluation = match objective.evaluate(&q).and_then(finite) {
        Ok(e) => e,
        Err(err) => return fail(q, records, steps, err),
    };
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut status = CgStatus::MaxIterations;

    for iter in 0..=options.max_it {
        let g_full = eval.gradient.take().expect("evaluate returns a gradient");
        let g = free_components(&q, &g_full);
        let grad_norm = mesh.norm(&g);
        let mut record = IterationRecord {
            iter,
            k_rho: eval.k_rho_value,
            grad_norm,
            beta: None,
            gamma: None,
            rel_error: error_of(&q),
            step_kind: None,
            projected: false,
            slope_ratio: None,
        };
        if grad_norm <= options.grad_tol {
            records.push(record);
            status = CgStatus::Stationary;
            break;
        }
        if iter == options.max_it {
            records.push(record);
            break;
        }

        let (mut gamma, direction) = match &prev {
            Some((g_old, p_old)) => {
                let gamma = fletcher_reeves_gamma(&g, g_old, mesh);
                (gamma, g.iter().zip(p_old).map(|(gi, pi)| gi + gamma * pi).collect::<Vec<_>>())
            }
            None => (0.0, g.clone()),
        };
        // The slope −ψ'(0) = ⟨K'_ρ, P⟩ needs the unmasked gradient: with a
        // non-diagonal mass matrix masking does not commute with the Riesz map.
        let mut direction = free_components(&q, &direction);
        let mut slope = mesh.inner(&g_full, &direction);
        if !(slope > 0.0) {
            // not a descent direction: restart along the free gradient
            gamma = 0.0;
            direction = g.clone();
            slope = mesh.inner(&g_full, &direction);
        }
        if !(slope > 0.0) {
            // free part of the dual gradient, a descent direction by construction
            direction = free_components(&q, &mesh.mass().mul_vec(&g_full));
            slope = mesh.inner(&g_full, &direction);
        }

        let proposal = match objective.step_proposal(&q, &eval, &direction) {
            Ok(p) => p,
            Err(err) => return fail(q, records, steps, err),
        };
        let line_eval = |beta: f64| objective.value(&clamped_step(&q, &direction, beta).0);
        let choice = match select_step(&proposal, eval.k_rho_value, slope, &options.armijo, line_eval) {
            Ok(Some(c)) => c,
            Ok(None) => {
                records.push(record);
                status = CgStatus::LineSearchFailure;
                break;
            }
            Err(err) => return fail(q, records, steps, err),
        };

        let (q_next, next_eval, choice) = match refine_step(objective, &q, &direction, eval.k_rho_value, slope, choice, options) {
            Ok(r) => r,
            Err(err) => return fail(q, records, steps, err),
        };
        let projected = q_next.values.iter().zip(&q.values).zip(&direction).any(|((n, a), p)| *n != a - choice.beta * p);
        let change = relative_change(&q_next.values, &q.values, mesh);
        let g_next = next_eval.gradient.as_deref().expect("evaluate returns a gradient");
        record.beta = Some(choice.beta);
        record.gamma = Some(gamma);
        record.step_kind = Some(choice.kind);
        record.projected = projected;
        record.slope_ratio = Some(line_stationarity(line_slopes(mesh, &q, &direction, choice.beta, g_next)) / slope);
        records.push(record);
        log::debug!(
            "iter {iter}: K_rho {:.6e} |g| {grad_norm:.3e} beta {:.3e} ({:?}) change {change:.3e}",
            eval.k_rho_value,
            choice.beta,
            choice.kind
        );
        if options.keep_iterates {
            steps.push(StepRecord { q: q.clone(), direction: direction.clone(), gradient: g.clone(), choice, projected });
        }

        prev = Some((g, direction));
        q = q_next;
        eval = next_eval;
        if change <= options.tol {
            let g = eval.gradient.as_deref().unwrap();
            records.push(IterationRecord {
                iter: iter + 1,
                k_rho: eval.k_rho_value,
                grad_norm: mesh.norm(&free_components(&q, g)),
                beta: None,
                gamma: None,
                rel_error: error_of(&q),
                step_kind: None,
                projected: false,
                slope_ratio: None,
            });
            status = CgStatus::Converged;
            break;
        }
    }

    CgOutcome { records, q_final: q, status, steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_dirichlet, solve_neumann};
    use crate::objective::{eval_kv, KohnVogelius, LeastSquares};
    use crate::sensitivity::{solve_sensitivity_dirichlet, solve_sensitivity_neumann};
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_and_double_roots() {
        let linear = StepSizeCoefficients { a: 0.0, b: 1.0, c: 1.0 };
        assert_eq!(linear.roots(), vec![0.5]);
        let double = StepSizeCoefficients { a: 1.0, b: 3.0, c: 3.0 };
        assert_eq!(double.discriminant(), 0.0);
        let r = double.roots();
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r[0], 1.0, epsilon = 1e-15);
        assert!(StepSizeCoefficients { a: 1.0, b: 0.0, c: 1.0 }.roots().is_empty());
        assert!(StepSizeCoefficients { a: 0.0, b: 0.0, c: 0.0 }.roots().is_empty());
    }

    #[test]
    fn roots_solve_the_slope_equation() {
        for (a, b, c) in [(1.0, 5.0, 2.0), (-2.0, 1.0, 3.0), (1e-6, 2.0, 1.0), (3.0, -4.0, 1.0)] {
            let k = StepSizeCoefficients { a, b, c };
            let roots = k.roots();
            assert_eq!(roots.len(), 2);
            for r in roots {
                assert!(k.model_slope(r).abs() <= 1e-10 * (1.0 + r * r), "{a} {b} {c} root {r}");
            }
        }
    }

    #[test]
    fn armijo_when_discriminant_negative() {
        let coeffs = StepSizeCoefficients { a: 1.0, b: 0.0, c: 1.0 };
        assert!(coeffs.discriminant() < 0.0);
        // ψ(β) = (β − 0.1)², ψ(0) = 0.01, ψ'(0) = −0.2
        let psi = |b: f64| Ok((b - 0.1) * (b - 0.1));
        let params = ArmijoParams::default();
        let choice = select_step(&StepProposal::Quadratic(coeffs), 0.01, 0.2, &params, psi).unwrap().unwrap();
        assert_eq!(choice.kind, StepKind::Armijo);
        assert!(choice.value <= 0.01 - params.sigma * choice.beta * 0.2);
        assert!(choice.beta > 0.0);
    }

    #[test]
    fn armijo_exhaustion_reports_none() {
        let coeffs = StepSizeCoefficients { a: 1.0, b: 0.0, c: 1.0 };
        let out = select_step(&StepProposal::Quadratic(coeffs), 0.0, 1.0, &ArmijoParams::default(), |_| Ok(1.0));
        assert!(out.unwrap().is_none());
    }

    #[test]
    fn minimal_root_is_selected_and_nonpositive_roots_skipped() {
        // ψ'(β) = −3β² + 12β − 9 → roots 1 and 3
        let coeffs = StepSizeCoefficients { a: 1.0, b: 6.0, c: 9.0 };
        let psi = |b: f64| Ok(coeffs.model_change(b));
        let c = select_step(&StepProposal::Quadratic(coeffs), 0.0, 9.0, &ArmijoParams::default(), psi).unwrap().unwrap();
        assert_eq!(c.kind, StepKind::Quadratic);
        assert_relative_eq!(c.beta, 1.0, epsilon = 1e-12);
        let negative = StepSizeCoefficients { a: 0.0, b: 1.0, c: -1.0 };
        let c = select_step(&StepProposal::Quadratic(negative), 1.0, 1.0, &ArmijoParams::default(), |b| Ok(1.0 - b / 2.0))
            .unwrap()
            .unwrap();
        assert_eq!(c.kind, StepKind::Armijo);
    }

    #[test]
    fn gamma_ratios() {
        let mesh = SpaceMesh::interval(0.0, 1.0, 4).unwrap();
        let g: Vec<f64> = vec![0.3, -1.0, 2.0, 0.5, 1.1];
        let g2: Vec<f64> = g.iter().map(|v| 2.0 * v).collect();
        assert_relative_eq!(fletcher_reeves_gamma(&g, &g, &mesh), 1.0, epsilon = 1e-15);
        assert_relative_eq!(fletcher_reeves_gamma(&g2, &g, &mesh), 4.0, epsilon = 1e-14);
        assert_eq!(fletcher_reeves_gamma(&g, &[0.0; 5], &mesh), 0.0);
        // dense oracle: exact integral of squared piecewise-linear functions
        let sq = |v: &[f64]| -> f64 {
            v.windows(2).map(|w| 0.25 * (w[0] * w[0] + w[0] * w[1] + w[1] * w[1]) / 3.0).sum()
        };
        let h: Vec<f64> = vec![-0.7, 0.2, 0.9, -1.3, 0.4];
        assert_relative_eq!(fletcher_reeves_gamma(&h, &g, &mesh), sq(&h) / sq(&g), max_relative = 1e-13);
    }

    struct Setup {
        mesh: SpaceMesh,
        grid: TimeGrid,
        flux: BoundaryData,
        observed: BoundaryData,
        q_true: Potential,
    }

    fn setup(n_cells: usize, n_steps: usize) -> Setup {
        let mesh = SpaceMesh::interval(0.0, 2.0, n_cells).unwrap();
        let grid = TimeGrid::new(1.0, n_steps, 0.45).unwrap();
        let mut q_true = Potential::new(mesh.evaluate(|x, _| x), 1e-3, 10.0).unwrap();
        q_true.project();
        let flux = BoundaryData::from_fn(BoundaryKind::Neumann, &mesh, &grid, |_, _, t| t * t);
        let observed = solve_neumann(&q_true, &flux, None, &mesh, &grid).unwrap().trace(&mesh, BoundaryKind::Dirichlet);
        Setup { mesh, grid, flux, observed, q_true }
    }

    fn coefficients_at(s: &Setup, q: &Potential, p: &[f64], rho: f64) -> StepSizeCoefficients {
        let u_n = solve_neumann(q, &s.flux, None, &s.mesh, &s.grid).unwrap();
        let u_d = solve_dirichlet(q, &s.observed, None, &s.mesh, &s.grid).unwrap();
        let su_n = solve_sensitivity_neumann(q, p, &u_n, &s.mesh, &s.grid).unwrap();
        let su_d = solve_sensitivity_dirichlet(q, p, &u_d, &s.mesh, &s.grid).unwrap();
        step_coefficients(q, p, &u_n, &u_d, &su_n, &su_d, rho, &s.mesh, &s.grid)
    }

    #[test]
    fn zero_direction_gives_zero_coefficients() {
        let s = setup(20, 10);
        let q = Potential::constant(s.mesh.n_nodes(), 1.0, 1e-3, 10.0).unwrap();
        let k = coefficients_at(&s, &q, &vec![0.0; s.mesh.n_nodes()], 1e-3);
        assert_eq!((k.a, k.b, k.c), (0.0, 0.0, 0.0));
        let k = coefficients_at(&s, &s.q_true, &s.mesh.evaluate(|x, _| x.sin()), 0.0);
        assert!(k.c.abs() <= 1e-10, "C = {}", k.c);
    }

    /// The model must reproduce the linearized objective
    /// `a_{q−βP}(w − βW) + ρ‖q − βP‖²` exactly (it is a cubic in β), and its
    /// slope at 0 must match the true directional derivative.
    #[test]
    fn coefficients_match_linearized_objective() {
        let s = setup(30, 20);
        let rho = 1e-2;
        let q = Potential::new(s.mesh.evaluate(|x, _| 1.0 + 0.3 * (2.0 * x).cos()), 1e-3, 10.0).unwrap();
        let p: Vec<f64> = s.mesh.evaluate(|x, _| 0.5 - 0.4 * x + 0.2 * (3.0 * x).sin());
        let u_n = solve_neumann(&q, &s.flux, None, &s.mesh, &s.grid).unwrap();
        let u_d = solve_dirichlet(&q, &s.observed, None, &s.mesh, &s.grid).unwrap();
        let su_n = solve_sensitivity_neumann(&q, &p, &u_n, &s.mesh, &s.grid).unwrap();
        let su_d = solve_sensitivity_dirichlet(&q, &p, &u_d, &s.mesh, &s.grid).unwrap();
        let k = step_coefficients(&q, &p, &u_n, &u_d, &su_n, &su_d, rho, &s.mesh, &s.grid);

        let w = &u_n - &u_d;
        let big_w = &su_n - &su_d;
        let linearized = |beta: f64| {
            let qb = q.with_values(q.values.iter().zip(&p).map(|(a, b)| a - beta * b).collect());
            let v = &w - &big_w.scaled(beta);
            crate::objective::kv_energy(&qb, &v, &s.mesh, &s.grid) + rho * s.mesh.inner(&qb.values, &qb.values)
        };
        let psi0 = linearized(0.0);
        for beta in [0.05, 0.3, 1.0] {
            let h = 1e-4;
            let fd = (linearized(beta + h) - linearized(beta - h)) / (2.0 * h);
            assert_relative_eq!(k.model_slope(beta), fd, max_relative = 1e-2);
            assert_relative_eq!(psi0 + k.model_change(beta), linearized(beta), max_relative = 1e-10);
        }

        // signs exactly as written in the reference expansion fail this check
        let verbatim_b = k.b - 2.0 * rho * s.mesh.inner(&p, &p);
        let verbatim_c = k.c - 4.0 * rho * s.mesh.inner(&p, &q.values);
        let verbatim = StepSizeCoefficients { a: k.a, b: verbatim_b, c: verbatim_c };
        let h = 1e-4;
        let fd = (linearized(0.3 + h) - linearized(0.3 - h)) / (2.0 * h);
        assert!((verbatim.model_slope(0.3) - fd).abs() > 1e-2 * fd.abs());

        // C is the true directional derivative −ψ'(0)
        let eps = 1e-5;
        let full = |beta: f64| {
            let qb = q.with_values(q.values.iter().zip(&p).map(|(a, b)| a - beta * b).collect());
            eval_kv(&qb, &s.flux, &s.observed, rho, &s.mesh, &s.grid).unwrap().k_rho_value
        };
        let fd0 = (full(eps) - full(-eps)) / (2.0 * eps);
        assert_relative_eq!(-k.c, fd0, max_relative = 1e-6);
    }

    #[test]
    fn stationary_start_stops_immediately() {
        let s = setup(30, 20);
        let obj = KohnVogelius { mesh: &s.mesh, grid: &s.grid, flux: &s.flux, observed: &s.observed, rho: 0.0 };
        let out = run_cgm(&obj, s.q_true.clone(), &CgOptions::default(), |_| None);
        assert!(out.iterations() <= 1, "{:?}", out.status);
        assert!(!out.status.is_failure());
        let diff: Vec<f64> = out.q_final.values.iter().zip(&s.q_true.values).map(|(a, b)| a - b).collect();
        assert!(s.mesh.norm(&diff) <= 1e-8 * s.mesh.norm(&s.q_true.values));
    }

    #[test]
    fn kv_iteration_decreases_monotonically() {
        let s = setup(30, 20);
        let obj = KohnVogelius { mesh: &s.mesh, grid: &s.grid, flux: &s.flux, observed: &s.observed, rho: 1e-5 };
        let q0 = Potential::constant(s.mesh.n_nodes(), 1.0, 1e-3, 10.0).unwrap();
        let opts = CgOptions { max_it: 30, ..CgOptions::default() };
        let out = run_cgm(&obj, q0, &opts, |_| None);
        assert!(!out.status.is_failure(), "{:?}", out.status);
        let hist = out.k_rho_history();
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(hist.last().unwrap() < &(0.1 * hist[0]));
        assert_eq!(out.records[0].gamma, Some(0.0));
    }

    #[test]
    fn ls_iteration_decreases_monotonically() {
        let s = setup(30, 20);
        let obj = LeastSquares { mesh: &s.mesh, grid: &s.grid, flux: &s.flux, observed: &s.observed, mu: 1e-5 };
        let q0 = Potential::constant(s.mesh.n_nodes(), 1.0, 1e-3, 10.0).unwrap();
        let opts = CgOptions { max_it: 30, ..CgOptions::default() };
        let out = run_cgm(&obj, q0, &opts, |_| None);
        assert!(!out.status.is_failure(), "{:?}", out.status);
        let hist = out.k_rho_history();
        assert!(hist.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(hist.last().unwrap() < &hist[0]);
    }

    #[test]
    fn heavy_regularization_shrinks_the_potential() {
        let s = setup(20, 10);
        let obj = KohnVogelius { mesh: &s.mesh, grid: &s.grid, flux: &s.flux, observed: &s.observed, rho: 10.0 };
        let q0 = Potential::constant(s.mesh.n_nodes(), 2.0, 1e-3, 10.0).unwrap();
        let opts = CgOptions { max_it: 15, keep_iterates: true, ..CgOptions::default() };
        let out = run_cgm(&obj, q0, &opts, |_| None);
        assert!(!out.status.is_failure(), "{:?}", out.status);
        let mut norms: Vec<f64> = out.steps.iter().map(|st| s.mesh.norm(&st.q.values)).collect();
        norms.push(s.mesh.norm(&out.q_final.values));
        // the penalty dominates: q collapses onto the lower bound and stays near it
        let floor = s.mesh.norm(&vec![1e-3; s.mesh.n_nodes()]);
        assert!(norms[1] < norms[0], "{norms:?}");
        assert!(norms[1..].iter().all(|n| *n <= 1.05 * floor), "{norms:?}");
    }
}
