//! Implicit L1 time stepping for `∂_t^α u − Δu + q u = f` with zero initial
//! state and either Neumann flux or Dirichlet trace data, plus the backward
//! (adjoint) solve obtained from the same stepper by reversing time.
//!
//! At step `n ≥ 1` the stepper solves
//!
//! ```text
//! (c_0 M + K + M_q) u^n = F^n − M Σ_{j=1}^{n-1} c_{n-j} u^j
//! ```
//!
//! where `c_m` are the L1 memory coefficients of [`TimeGrid`]. Stacked over
//! `n = 1..N` this is a block lower-triangular Toeplitz system `L u = F`
//! with symmetric blocks, so `Lᵀ` is `L` with the unknown indices reversed.

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::{BandedCholesky, CsrMatrix, TridiagonalFactor};
use crate::mesh::{BoundaryData, BoundaryKind, Potential, SpaceMesh};
use crate::timegrid::TimeGrid;

/// Nodal values over space and time, stored time-major:
/// `values[[n, i]]` is node `i` at time node `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    values: Array2<f64>,
}

impl Field {
    pub fn zeros(mesh: &SpaceMesh, grid: &TimeGrid) -> Self {
        Self { values: Array2::zeros((grid.n_nodes(), mesh.n_nodes())) }
    }

    pub fn from_array(values: Array2<f64>) -> Self {
        Self { values: values.as_standard_layout().to_owned() }
    }

    /// Samples `f(x, y, t)` on every node.
    pub fn from_fn<F: Fn(f64, f64, f64) -> f64>(mesh: &SpaceMesh, grid: &TimeGrid, f: F) -> Self {
        let values = Array2::from_shape_fn((grid.n_nodes(), mesh.n_nodes()), |(n, i)| {
            let c = mesh.coords()[i];
            f(c[0], c[1], grid.time(n))
        });
        Self { values }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn n_time_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn at(&self, n: usize) -> &[f64] {
        self.values.row(n).to_slice().expect("standard layout")
    }

    pub fn at_mut(&mut self, n: usize) -> &mut [f64] {
        self.values.row_mut(n).into_slice().expect("standard layout")
    }

    pub fn node_history(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.column(i)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Field {
        Field { values: &self.values * c }
    }

    pub fn trace(&self, mesh: &SpaceMesh, kind: BoundaryKind) -> BoundaryData {
        let values = Array2::from_shape_fn((self.n_time_nodes(), mesh.n_boundary()), |(n, b)| {
            self.values[[n, mesh.boundary_nodes()[b]]]
        });
        BoundaryData { kind, values }
    }

    /// `Σ_n τ_n (u^n)ᵀ A v^n` with trapezoid weights `τ_n`.
    pub fn space_time_form(&self, matrix: &CsrMatrix, other: &Field, grid: &TimeGrid) -> f64 {
        grid.trapezoid_weights()
            .iter()
            .enumerate()
            .map(|(n, tau)| tau * matrix.form(self.at(n), other.at(n)))
            .sum()
    }

    /// Inner product of `L²(Q_T)`: trapezoid in time, mass matrix in space.
    pub fn space_time_inner(&self, other: &Field, mesh: &SpaceMesh, grid: &TimeGrid) -> f64 {
        self.space_time_form(mesh.mass(), other, grid)
    }

    fn check_shape(&self, mesh: &SpaceMesh, grid: &TimeGrid, what: &str) -> Result<()> {
        if self.values.dim() != (grid.n_nodes(), mesh.n_nodes()) {
            return Err(Error::ShapeMismatch(format!(
                "{what} has shape {:?}, expected {:?}",
                self.values.dim(),
                (grid.n_nodes(), mesh.n_nodes())
            )));
        }
        Ok(())
    }
}

impl std::ops::Sub for &Field {
    type Output = Field;

    fn sub(self, rhs: &Field) -> Field {
        Field { values: &self.values - &rhs.values }
    }
}

impl std::ops::Add for &Field {
    type Output = Field;

    fn add(self, rhs: &Field) -> Field {
        Field { values: &self.values + &rhs.values }
    }
}

enum StepSolver {
    Tridiagonal(TridiagonalFactor),
    Banded(BandedCholesky),
}

/// Factorization (tridiagonal in 1D, banded in 2D) of the per-step matrix
/// `c_0 M + K + M_q`, restricted to the unknown nodes of the boundary kind.
pub struct LinearSystemWorkspace {
    kind: BoundaryKind,
    unknowns: Vec<usize>,
    /// Columns of the full per-step matrix coupling unknowns to boundary nodes.
    coupling: Option<CsrMatrix>,
    solver: StepSolver,
}

impl LinearSystemWorkspace {
    pub fn new(mesh: &SpaceMesh, grid: &TimeGrid, q: &Potential, kind: BoundaryKind) -> Result<Self> {
        if q.len() != mesh.n_nodes() {
            return Err(Error::ShapeMismatch(format!(
                "potential has {} values for {} nodes",
                q.len(),
                mesh.n_nodes()
            )));
        }
        let mq = mesh.coefficient_mass(&q.values);
        let full = CsrMatrix::linear_combination(&[
            (grid.memory_coefficient(0), mesh.mass()),
            (1.0, mesh.stiffness()),
            (1.0, &mq),
        ]);
        let (unknowns, matrix, coupling) = match kind {
            BoundaryKind::Neumann => ((0..mesh.n_nodes()).collect::<Vec<_>>(), full, None),
            BoundaryKind::Dirichlet => {
                let interior = mesh.interior_nodes().to_vec();
                let block = full.submatrix(&interior, &interior);
                let coupling = full.submatrix(&interior, mesh.boundary_nodes());
                (interior, block, Some(coupling))
            }
        };
        let solver = if mesh.dim() == 1 {
            StepSolver::Tridiagonal(TridiagonalFactor::new(&matrix)?)
        } else {
            StepSolver::Banded(BandedCholesky::new(&matrix)?)
        };
        Ok(Self { kind, unknowns, coupling, solver })
    }

    pub fn kind(&self) -> BoundaryKind {
        self.kind
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match &self.solver {
            StepSolver::Tridiagonal(f) => f.solve(rhs),
            StepSolver::Banded(f) => f.solve(rhs),
        }
    }

    /// Runs the stepper for nodal loads `loads` (all nodes, one row per time
    /// node; row 0 unused). `boundary` supplies Dirichlet values; `None`
    /// means homogeneous.
    pub fn march(
        &self,
        mesh: &SpaceMesh,
        grid: &TimeGrid,
        loads: &Field,
        boundary: Option<&BoundaryData>,
    ) -> Result<Field> {
        loads.check_shape(mesh, grid, "load field")?;
        if let Some(b) = boundary {
            b.check_shape(mesh, grid)?;
        }
        let n_nodes = mesh.n_nodes();
        let coeffs: Vec<f64> = (0..grid.n_steps()).map(|m| grid.memory_coefficient(m)).collect();
        let mut u = Field::zeros(mesh, grid);
        let mut history = vec![0.0; n_nodes];
        let mut rhs = vec![0.0; n_nodes];
        let mut reduced = vec![0.0; self.unknowns.len()];
        for n in 1..=grid.n_steps() {
            history.iter_mut().for_each(|h| *h = 0.0);
            for j in 1..n {
                let c = coeffs[n - j];
                for (h, v) in history.iter_mut().zip(u.at(j)) {
                    *h += c * v;
                }
            }
            mesh.mass().mul_vec_into(&history, &mut rhs);
            for (r, f) in rhs.iter_mut().zip(loads.at(n)) {
                *r = f - *r;
            }
            match self.kind {
                BoundaryKind::Neumann => {
                    let sol = self.solve(&rhs);
                    u.at_mut(n).copy_from_slice(&sol);
                }
                BoundaryKind::Dirichlet => {
                    let row = u.at_mut(n);
                    if let Some(b) = boundary {
                        for (&node, v) in mesh.boundary_nodes().iter().zip(b.at(n)) {
                            row[node] = *v;
                        }
                    }
                    for (r, &node) in reduced.iter_mut().zip(&self.unknowns) {
                        *r = rhs[node];
                    }
                    if let (Some(b), Some(coupling)) = (boundary, &self.coupling) {
                        let lift = coupling.mul_vec(b.at(n));
                        for (r, l) in reduced.iter_mut().zip(&lift) {
                            *r -= l;
                        }
                    }
                    let sol = self.solve(&reduced);
                    let row = u.at_mut(n);
                    for (&node, v) in self.unknowns.iter().zip(&sol) {
                        row[node] = *v;
                    }
                }
            }
        }
        Ok(u)
    }
}

fn source_loads(mesh: &SpaceMesh, grid: &TimeGrid, source: Option<&Field>) -> Result<Field> {
    let mut loads = Field::zeros(mesh, grid);
    if let Some(f) = source {
        f.check_shape(mesh, grid, "source")?;
        for n in 1..grid.n_nodes() {
            mesh.mass().mul_vec_into(f.at(n), loads.at_mut(n));
        }
    }
    Ok(loads)
}

/// Neumann problem: `∂_ν u = flux` on the lateral boundary, optional volumetric source.
pub fn solve_neumann(
    q: &Potential,
    flux: &BoundaryData,
    source: Option<&Field>,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    flux.check_shape(mesh, grid)?;
    let mut loads = source_loads(mesh, grid, source)?;
    for n in 1..grid.n_nodes() {
        let b = mesh.boundary_load(flux.at(n));
        for (l, v) in loads.at_mut(n).iter_mut().zip(&b) {
            *l += v;
        }
    }
    LinearSystemWorkspace::new(mesh, grid, q, BoundaryKind::Neumann)?.march(mesh, grid, &loads, None)
}

/// Dirichlet problem: `u = trace` on the lateral boundary, imposed strongly.
pub fn solve_dirichlet(
    q: &Potential,
    trace: &BoundaryData,
    source: Option<&Field>,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    let loads = source_loads(mesh, grid, source)?;
    LinearSystemWorkspace::new(mesh, grid, q, BoundaryKind::Dirichlet)?.march(mesh, grid, &loads, Some(trace))
}

/// Forward solve with homogeneous boundary data and pre-assembled nodal loads.
pub fn solve_forward_loads(
    q: &Potential,
    loads: &Field,
    kind: BoundaryKind,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    LinearSystemWorkspace::new(mesh, grid, q, kind)?.march(mesh, grid, loads, None)
}

/// Backward solve, the discrete counterpart of a right Riemann–Liouville
/// problem with vanishing terminal data and homogeneous boundary data.
///
/// `loads` are nodal load densities `G^n`. The result `ξ` satisfies
/// `Σ_n τ_n (ξ^n)ᵀ F^n = Σ_n τ_n (G^n)ᵀ u^n` for every forward solution
/// `u = L⁻¹F` (trapezoid weights `τ_n`), which makes it the exact
/// discrete adjoint of [`solve_forward_loads`]. Internally the weighted loads
/// are reversed over the unknown time indices `1..N`, marched forward, and
/// reversed back. `ξ^0` carries no information and is set to zero.
pub fn solve_backward(
    q: &Potential,
    loads: &Field,
    kind: BoundaryKind,
    mesh: &SpaceMesh,
    grid: &TimeGrid,
) -> Result<Field> {
    loads.check_shape(mesh, grid, "load field")?;
    let n_steps = grid.n_steps();
    let dt = grid.dt();
    let tau = grid.trapezoid_weights();
    let mut reversed = Field::zeros(mesh, grid);
    for m in 1..=n_steps {
        let n = n_steps + 1 - m;
        let w = tau[n] / dt;
        for (r, g) in reversed.at_mut(m).iter_mut().zip(loads.at(n)) {
            *r = w * g;
        }
    }
    let eta = solve_forward_loads(q, &reversed, kind, mesh, grid)?;
    let mut xi = Field::zeros(mesh, grid);
    for n in 1..=n_steps {
        let w = dt / tau[n];
        for (x, e) in xi.at_mut(n).iter_mut().zip(eta.at(n_steps + 1 - n)) {
            *x = w * e;
        }
    }
    Ok(xi)
}
