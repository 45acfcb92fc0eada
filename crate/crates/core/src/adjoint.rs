//! Adjoint states for the Kohn–Vogelius and least-squares gradients.
//!
//! The Kohn–Vogelius loads are the discrete weak-form image `(K + M_q) w` of
//! the residual `w = u_N − u_D`, so the adjoints are exact transposes of the
//! discrete forward maps.

use crate::error::{Error, Result};
use crate::forward::{solve_backward, Field};
use crate::linalg::CsrMatrix;
use crate::mesh::{BoundaryData, BoundaryKind, Potential, SpaceMesh};
use crate::timegrid::TimeGrid;

/// Per-step loads `scale · (K + M_q)(u_N − u_D)`.
fn energy_loads(
    q: &Potential,
    u_n: &Field,
    u_d: &Field,
    scale: f64,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Field {
    let mq = mesh.coefficient_mass(&q.values);
    let energy = CsrMatrix::linear_combination(&[(scale, mesh.stiffness()), (scale, &mq)]);
    let w = u_n - u_d;
    let mut loads = Field::zeros(mesh, grid);
    for n in 1..grid.n_nodes() {
        energy.mul_vec_into(w.at(n), loads.at_mut(n));
    }
    loads
}

/// `ξ_D`: homogeneous Dirichlet adjoint with load `+2 (K + M_q)(u_N − u_D)`.
pub fn solve_xi_d(q: &Potential, u_n: &Field, u_d: &Field, mesh: &SpaceMesh, grid: &TimeGrid) -> Result<Field> {
    let loads = energy_loads(q, u_n, u_d, 2.0, mesh, grid);
    solve_backward(q, &loads, BoundaryKind::Dirichlet, mesh, grid)
}

/// `ξ_N`: homogeneous Neumann adjoint with load `−2 (K + M_q)(u_N − u_D)`.
pub fn solve_xi_n(q: &Potential, u_n: &Field, u_d: &Field, mesh: &SpaceMesh, grid: &TimeGrid) -> Result<Field> {
    let loads = energy_loads(q, u_n, u_d, -2.0, mesh, grid);
    solve_backward(q, &loads, BoundaryKind::Neumann, mesh, grid)
}

/// `ζ`: least-squares adjoint with boundary flux `−2 (u|_∂Ω − observed)`.
pub fn solve_zeta_ls(
    q: &Potential,
    u: &Field,
    observed: &BoundaryData,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    observed.check_shape(mesh, grid)?;
    if u.n_time_nodes() != grid.n_nodes() || u.n_nodes() != mesh.n_nodes() {
        return Err(Error::ShapeMismatch("state field does not match mesh/grid".into()));
    }
    let mut loads = Field::zeros(mesh, grid);
    for n in 1..grid.n_nodes() {
        let flux: Vec<f64> = mesh
            .trace(u.at(n))
            .iter()
            .zip(observed.at(n))
            .map(|(a, b)| -2.0 * (a - b))
            .collect();
        loads.at_mut(n).copy_from_slice(&mesh.boundary_load(&flux));
    }
    solve_backward(q, &loads, BoundaryKind::Neumann, mesh, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_dirichlet, solve_neumann};

    fn setup() -> (SpaceMesh, TimeGrid, Potential) {
        let mesh = SpaceMesh::interval(0.0, 2.0, 20).unwrap();
        let grid = TimeGrid::new(1.0, 15, 0.45).unwrap();
        let q = Potential::new(mesh.evaluate(|x, _| 1.0 + x), 1e-3, 10.0).unwrap();
        (mesh, grid, q)
    }

    #[test]
    fn equal_states_give_zero_adjoints() {
        let (mesh, grid, q) = setup();
        let flux = BoundaryData::from_fn(BoundaryKind::Neumann, &mesh, &grid, |_, _, t| t * t);
        let u = solve_neumann(&q, &flux, None, &mesh, &grid).unwrap();
        assert_eq!(solve_xi_d(&q, &u, &u, &mesh, &grid).unwrap().max_abs(), 0.0);
        assert_eq!(solve_xi_n(&q, &u, &u, &mesh, &grid).unwrap().max_abs(), 0.0);
        let observed = u.trace(&mesh, BoundaryKind::Dirichlet);
        assert_eq!(solve_zeta_ls(&q, &u, &observed, &mesh, &grid).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn compatible_data_gives_negligible_xi() {
        let (mesh, grid, q) = setup();
        let flux = BoundaryData::from_fn(BoundaryKind::Neumann, &mesh, &grid, |_, _, t| t * t);
        let u_n = solve_neumann(&q, &flux, None, &mesh, &grid).unwrap();
        let u_d = solve_dirichlet(&q, &u_n.trace(&mesh, BoundaryKind::Dirichlet), None, &mesh, &grid).unwrap();
        assert!(solve_xi_d(&q, &u_n, &u_d, &mesh, &grid).unwrap().max_abs() <= 1e-8);
        assert!(solve_xi_n(&q, &u_n, &u_d, &mesh, &grid).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn xi_loads_flip_sign() {
        let (mesh, grid, q) = setup();
        let u_n = Field::from_fn(&mesh, &grid, |x, _, t| t * (x - 1.0).powi(2));
        let u_d = Field::zeros(&mesh, &grid);
        let plus = energy_loads(&q, &u_n, &u_d, 2.0, &mesh, &grid);
        let minus = energy_loads(&q, &u_n, &u_d, -2.0, &mesh, &grid);
        assert_eq!((&plus + &minus).max_abs(), 0.0);
        // Neumann adjoint with the negated load is exactly the negated solve
        let a = crate::forward::solve_backward(&q, &plus, BoundaryKind::Neumann, &mesh, &grid).unwrap();
        let b = solve_xi_n(&q, &u_n, &u_d, &mesh, &grid).unwrap();
        assert!((&a + &b).max_abs() < 1e-14 * a.max_abs());
        // Dirichlet adjoint vanishes on the boundary
        let d = solve_xi_d(&q, &u_n, &u_d, &mesh, &grid).unwrap();
        for n in 0..grid.n_nodes() {
            for &b in mesh.boundary_nodes() {
                assert_eq!(d.at(n)[b], 0.0);
            }
        }
        assert!(d.max_abs() > 0.0);
    }

    #[test]
    fn zeta_symmetric_for_symmetric_mismatch() {
        let (mesh, grid, _) = setup();
        let q = Potential::constant(mesh.n_nodes(), 1.0, 1e-3, 10.0).unwrap();
        let flux = BoundaryData::from_fn(BoundaryKind::Neumann, &mesh, &grid, |_, _, t| t);
        let u = solve_neumann(&q, &flux, None, &mesh, &grid).unwrap();
        let mut observed = u.trace(&mesh, BoundaryKind::Dirichlet);
        observed.values.mapv_inplace(|v| v + 1.0);
        let zeta = solve_zeta_ls(&q, &u, &observed, &mesh, &grid).unwrap();
        assert!(zeta.max_abs() > 0.0);
        let n = mesh.n_nodes();
        for k in 0..grid.n_nodes() {
            for i in 0..n {
                assert!((zeta.at(k)[i] - zeta.at(k)[n - 1 - i]).abs() < 1e-12);
            }
        }
        // linear in the mismatch
        let mut doubled = u.trace(&mesh, BoundaryKind::Dirichlet);
        doubled.values.mapv_inplace(|v| v + 2.0);
        let zeta2 = solve_zeta_ls(&q, &u, &doubled, &mesh, &grid).unwrap();
        assert!((&zeta2 - &zeta.scaled(2.0)).max_abs() < 1e-12 * zeta2.max_abs());
    }
}
