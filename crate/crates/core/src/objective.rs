//! Kohn–Vogelius functional `K_ρ`, the boundary least-squares functional `J`,
//! and their adjoint gradients.
//!
//! All space-time integrals use the trapezoid rule in time and the mesh
//! matrices in space:
//!
//! ```text
//! K(q) = Σ_n τ_n wⁿᵀ (K + M_q) wⁿ,   w = u_N[q] − u_D[q]
//! K_ρ(q) = K(q) + ρ qᵀ M q
//! ```
//!
//! Gradients are returned as nodal `L²(Ω)` Riesz representatives: the
//! assembled dual vector is mapped through `M⁻¹`, so `⟨g, δq⟩_M` is the
//! directional derivative.

use crate::adjoint::{solve_xi_d, solve_xi_n, solve_zeta_ls};
use crate::error::{Error, Result};
use crate::forward::{solve_dirichlet, solve_neumann, Field};
use crate::linalg::CsrMatrix;
use crate::mesh::{boundary_l2_inner, BoundaryData, BoundaryKind, Potential, SpaceMesh};
use crate::optimizer::{ls_step_size, step_coefficients, StepSizeCoefficients};
use crate::sensitivity::{solve_sensitivity_dirichlet, solve_sensitivity_neumann};
use crate::timegrid::TimeGrid;

#[derive(Clone, Debug)]
pub struct ObjectiveEvaluation {
    /// `K(q)` (or the boundary misfit for least squares).
    pub k_value: f64,
    /// `K_ρ(q)` (or `J(q)`).
    pub k_rho_value: f64,
    pub gradient: Option<Vec<f64>>,
    /// Neumann state `u_N[q]` (the only state for least squares).
    pub u_n: Field,
    pub u_d: Option<Field>,
}

/// How the optimizer should pick the step along a search direction.
#[derive(Clone, Debug)]
pub enum StepProposal {
    /// Roots of the step-size quadratic.
    Quadratic(StepSizeCoefficients),
    /// A single closed-form step.
    ClosedForm(f64),
}

pub trait Objective: Sync {
    fn mesh(&self) -> &SpaceMesh;
    fn grid(&self) -> &TimeGrid;
    fn regularization(&self) -> f64;
    /// Objective value only.
    fn value(&self, q: &Potential) -> Result<f64>;
    /// Value and gradient.
    fn evaluate(&self, q: &Potential) -> Result<ObjectiveEvaluation>;
    fn step_proposal(&self, q: &Potential, eval: &ObjectiveEvaluation, direction: &[f64]) -> Result<StepProposal>;
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("regularization must be non-negative, got {rho}")));
    }
    Ok(())
}

/// `K(q)` for the residual `w` by space-time quadrature.
pub fn kv_energy(q: &Potential, w: &Field, mesh: &SpaceMesh, grid: &TimeGrid) -> f64 {
    let mq = mesh.coefficient_mass(&q.values);
    w.space_time_form(mesh.stiffness(), w, grid) + w.space_time_form(&mq, w, grid)
}

fn kv_states(
    q: &Potential,
    flux: &BoundaryData,
    observed: &BoundaryData,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<(Field, Field)> {
    let (u_n, u_d) = rayon::join(
        || solve_neumann(q, flux, None, mesh, grid),
        || solve_dirichlet(q, observed, None, mesh, grid),
    );
    Ok((u_n?, u_d?))
}

pub fn eval_kv(
    q: &Potential,
    flux: &BoundaryData,
    observed: &BoundaryData,
    rho: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<ObjectiveEvaluation> {
    check_rho(rho)?;
    let (u_n, u_d) = kv_states(q, flux, observed, mesh, grid)?;
    let k_value = kv_energy(q, &(&u_n - &u_d), mesh, grid);
    let k_rho_value = k_value + rho * mesh.inner(&q.values, &q.values);
    Ok(ObjectiveEvaluation { k_value, k_rho_value, gradient: None, u_n, u_d: Some(u_d) })
}

/// Value and gradient of `K_ρ`:
///
/// ```text
/// K'_ρ(q) = ∫|u_N − u_D|² dt + ∫ u_N ξ_N dt + ∫ u_D ξ_D dt + 2ρq
/// ```
///
/// Each adjoint pairs with the state of its own boundary kind, since `ξ_N`
/// carries the sensitivity of `u_N` and `ξ_D` that of `u_D`.
pub fn grad_kv(
    q: &Potential,
    flux: &BoundaryData,
    observed: &BoundaryData,
    rho: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<ObjectiveEvaluation> {
    let mut eval = eval_kv(q, flux, observed, rho, mesh, grid)?;
    let u_d = eval.u_d.as_ref().expect("Kohn-Vogelius evaluation has a Dirichlet state");
    let (xi_n, xi_d) = rayon::join(
        || solve_xi_n(q, &eval.u_n, u_d, mesh, grid),
        || solve_xi_d(q, &eval.u_n, u_d, mesh, grid),
    );
    let (xi_n, xi_d) = (xi_n?, xi_d?);
    let w = &eval.u_n - u_d;
    let mut dual = mesh.mass().mul_vec(&q.values);
    dual.iter_mut().for_each(|v| *v *= 2.0 * rho);
    for (n, tau) in grid.trapezoid_weights().into_iter().enumerate() {
        mesh.coefficient_dual_add(tau, w.at(n), w.at(n), &mut dual);
        mesh.coefficient_dual_add(tau, eval.u_n.at(n), xi_n.at(n), &mut dual);
        mesh.coefficient_dual_add(tau, u_d.at(n), xi_d.at(n), &mut dual);
    }
    eval.gradient = Some(mesh.riesz(&dual));
    Ok(eval)
}

fn boundary_residual(u: &Field, observed: &BoundaryData, mesh: &SpaceMesh) -> BoundaryData {
    let mut r = u.trace(mesh, BoundaryKind::Dirichlet);
    r.values -= &observed.values;
    r
}

/// `J(q) = ∫∫_∂Ω |u[q] − φ|² ds dt + μ‖q‖²`.
pub fn eval_ls(
    q: &Potential,
    flux: &BoundaryData,
    observed: &BoundaryData,
    mu: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<ObjectiveEvaluation> {
    check_rho(mu)?;
    observed.check_shape(mesh, grid)?;
    let u = solve_neumann(q, flux, None, mesh, grid)?;
    let r = boundary_residual(&u, observed, mesh);
    let misfit = boundary_l2_inner(&r, &r, mesh, grid)?;
    Ok(ObjectiveEvaluation {
        k_value: misfit,
        k_rho_value: misfit + mu * mesh.inner(&q.values, &q.values),
        gradient: None,
        u_n: u,
        u_d: None,
    })
}

/// `J'(q) = ∫ u ζ dt + 2μq`.
pub fn grad_ls(
    q: &Potential,
    flux: &BoundaryData,
    observed: &BoundaryData,
    mu: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<ObjectiveEvaluation> {
    let mut eval = eval_ls(q, flux, observed, mu, mesh, grid)?;
    let zeta = solve_zeta_ls(q, &eval.u_n, observed, mesh, grid)?;
    let mut dual = mesh.mass().mul_vec(&q.values);
    dual.iter_mut().for_each(|v| *v *= 2.0 * mu);
    for (n, tau) in grid.trapezoid_weights().into_iter().enumerate() {
        mesh.coefficient_dual_add(tau, eval.u_n.at(n), zeta.at(n), &mut dual);
    }
    eval.gradient = Some(mesh.riesz(&dual));
    Ok(eval)
}

/// Regularized Kohn–Vogelius objective for fixed data.
#[derive(Clone, Copy)]
pub struct KohnVogelius<'a> {
    pub mesh: &'a SpaceMesh,
    pub grid: &'a TimeGrid,
    /// Neumann excitation.
    pub flux: &'a BoundaryData,
    /// Observed Dirichlet trace.
    pub observed: &'a BoundaryData,
    pub rho: f64,
}

impl Objective for KohnVogelius<'_> {
    fn mesh(&self) -> &SpaceMesh {
        self.mesh
    }

    fn grid(&self) -> &TimeGrid {
        self.grid
    }

    fn regularization(&self) -> f64 {
        self.rho
    }

    fn value(&self, q: &Potential) -> Result<f64> {
        Ok(eval_kv(q, self.flux, self.observed, self.rho, self.mesh, self.grid)?.k_rho_value)
    }

    fn evaluate(&self, q: &Potential) -> Result<ObjectiveEvaluation> {
        grad_kv(q, self.flux, self.observed, self.rho, self.mesh, self.grid)
    }

    fn step_proposal(&self, q: &Potential, eval: &ObjectiveEvaluation, direction: &[f64]) -> Result<StepProposal> {
        let u_d = eval.u_d.as_ref().ok_or_else(|| Error::InvalidParameter("missing Dirichlet state".into()))?;
        let (s_n, s_d) = rayon::join(
            || solve_sensitivity_neumann(q, direction, &eval.u_n, self.mesh, self.grid),
            || solve_sensitivity_dirichlet(q, direction, u_d, self.mesh, self.grid),
        );
        let coeffs = step_coefficients(q, direction, &eval.u_n, u_d, &s_n?, &s_d?, self.rho, self.mesh, self.grid);
        Ok(StepProposal::Quadratic(coeffs))
    }
}

/// Regularized boundary least-squares objective for fixed data.
#[derive(Clone, Copy)]
pub struct LeastSquares<'a> {
    pub mesh: &'a SpaceMesh,
    pub grid: &'a TimeGrid,
    pub flux: &'a BoundaryData,
    pub observed: &'a BoundaryData,
    pub mu: f64,
}

impl Objective for LeastSquares<'_> {
    fn mesh(&self) -> &SpaceMesh {
        self.mesh
    }

    fn grid(&self) -> &TimeGrid {
        self.grid
    }

    fn regularization(&self) -> f64 {
        self.mu
    }

    fn value(&self, q: &Potential) -> Result<f64> {
        Ok(eval_ls(q, self.flux, self.observed, self.mu, self.mesh, self.grid)?.k_rho_value)
    }

    fn evaluate(&self, q: &Potential) -> Result<ObjectiveEvaluation> {
        grad_ls(q, self.flux, self.observed, self.mu, self.mesh, self.grid)
    }

    fn step_proposal(&self, q: &Potential, eval: &ObjectiveEvaluation, direction: &[f64]) -> Result<StepProposal> {
        let s = solve_sensitivity_neumann(q, direction, &eval.u_n, self.mesh, self.grid)?;
        let beta = ls_step_size(q, direction, &eval.u_n, self.observed, &s, self.mu, self.mesh, self.grid)?;
        Ok(StepProposal::ClosedForm(beta))
    }
}

/// Second evaluation path for `K`: one combined matrix per step.
pub fn kv_energy_stepwise(q: &Potential, w: &Field, mesh: &SpaceMesh, grid: &TimeGrid) -> f64 {
    let mq = mesh.coefficient_mass(&q.values);
    let a = CsrMatrix::linear_combination(&[(1.0, mesh.stiffness()), (1.0, &mq)]);
    grid.trapezoid_weights()
        .iter()
        .enumerate()
        .map(|(n, tau)| tau * a.form(w.at(n), w.at(n)))
        .sum()
}
