//! Directional derivatives `U_N[q](δq)`, `U_D[q](δq)` of the forward maps.
//!
//! Both solve the state operator with homogeneous boundary data and source
//! `−δq · u`, where `u` is the state frozen at the current `q`. Since the
//! source enters through the same coefficient mass used by the stepper, the
//! result is the exact derivative of the discrete solution map.

use crate::error::{Error, Result};
use crate::forward::{solve_forward_loads, Field};
use crate::mesh::{BoundaryKind, Potential, SpaceMesh};
use crate::timegrid::TimeGrid;

fn sensitivity(
    q: &Potential,
    delta_q: &[f64],
    state: &Field,
    kind: BoundaryKind,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    if delta_q.len() != mesh.n_nodes() {
        return Err(Error::ShapeMismatch(format!(
            "direction has {} values for {} nodes",
            delta_q.len(),
            mesh.n_nodes()
        )));
    }
    let m_dq = mesh.coefficient_mass(delta_q);
    let mut loads = Field::zeros(mesh, grid);
    for n in 1..grid.n_nodes() {
        let row = loads.at_mut(n);
        m_dq.mul_vec_into(state.at(n), row);
        row.iter_mut().for_each(|v| *v = -*v);
    }
    solve_forward_loads(q, &loads, kind, mesh, grid)
}

pub fn solve_sensitivity_neumann(
    q: &Potential,
    delta_q: &[f64],
    u_n: &Field,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    sensitivity(q, delta_q, u_n, BoundaryKind::Neumann, mesh, grid)
}

pub fn solve_sensitivity_dirichlet(
    q: &Potential,
    delta_q: &[f64],
    u_d: &Field,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    sensitivity(q, delta_q, u_d, BoundaryKind::Dirichlet, mesh, grid)
}
