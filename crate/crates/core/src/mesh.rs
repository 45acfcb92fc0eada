//! Spatial discretization: P1 elements on an interval (consistent mass) and
//! on a structured triangulation of the unit square (lumped mass), together
//! with boundary bookkeeping and boundary/time quadrature.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CsrMatrix, TridiagonalFactor};
use crate::timegrid::TimeGrid;

#[derive(Clone, Debug)]
pub struct SpaceMesh {
    dim: usize,
    /// Nodes per axis; `[n, 1]` in 1D.
    shape: [usize; 2],
    coords: Vec<[f64; 2]>,
    spacing: [f64; 2],
    boundary: Vec<usize>,
    interior: Vec<usize>,
    boundary_slot: Vec<Option<usize>>,
    boundary_weights: Vec<f64>,
    stiffness: CsrMatrix,
    mass: CsrMatrix,
    mass_factor: Option<TridiagonalFactor>,
}

impl SpaceMesh {
    /// P1 mesh of `[a, b]` with `n_cells` uniform cells.
    pub fn interval(a: f64, b: f64, n_cells: usize) -> Result<Self> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidParameter(format!("empty interval [{a}, {b}]")));
        }
        if n_cells < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 cells, got {n_cells}")));
        }
        let n = n_cells + 1;
        let h = (b - a) / n_cells as f64;
        let coords = (0..n).map(|i| [a + i as f64 * h, 0.0]).collect();

        let mut k = Vec::with_capacity(4 * n_cells);
        let mut m = Vec::with_capacity(4 * n_cells);
        for e in 0..n_cells {
            let (i, j) = (e, e + 1);
            k.extend([(i, i, 1.0 / h), (j, j, 1.0 / h), (i, j, -1.0 / h), (j, i, -1.0 / h)]);
            m.extend([(i, i, h / 3.0), (j, j, h / 3.0), (i, j, h / 6.0), (j, i, h / 6.0)]);
        }
        let stiffness = CsrMatrix::from_triplets(n, n, k);
        let mass = CsrMatrix::from_triplets(n, n, m);
        let mass_factor = Some(TridiagonalFactor::new(&mass)?);

        let mut boundary_slot = vec![None; n];
        boundary_slot[0] = Some(0);
        boundary_slot[n - 1] = Some(1);
        Ok(Self {
            dim: 1,
            shape: [n, 1],
            coords,
            spacing: [h, h],
            boundary: vec![0, n - 1],
            interior: (1..n - 1).collect(),
            boundary_slot,
            boundary_weights: vec![1.0, 1.0],
            stiffness,
            mass,
            mass_factor,
        })
    }

    /// Structured mesh of the unit square with `n_x × n_y` cells, each cell
    /// split along its `(i, j)–(i+1, j+1)` diagonal; lumped mass.
    pub fn unit_square(n_x: usize, n_y: usize) -> Result<Self> {
        if n_x < 2 || n_y < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2×2 cells, got {n_x}×{n_y}")));
        }
        let (nx, ny) = (n_x + 1, n_y + 1);
        let (hx, hy) = (1.0 / n_x as f64, 1.0 / n_y as f64);
        let idx = |i: usize, j: usize| j * nx + i;
        let n = nx * ny;
        let mut coords = Vec::with_capacity(n);
        for j in 0..ny {
            for i in 0..nx {
                coords.push([i as f64 * hx, j as f64 * hy]);
            }
        }

        let mut k = Vec::with_capacity(18 * n_x * n_y);
        for j in 0..n_y {
            for i in 0..n_x {
                let tris = [
                    [idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)],
                    [idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)],
                ];
                for tri in tris {
                    p1_stiffness(&coords, tri, &mut k);
                }
            }
        }
        let stiffness = CsrMatrix::from_triplets(n, n, k);

        let mut lumped = vec![0.0; n];
        let mut boundary = Vec::new();
        let mut interior = Vec::new();
        let mut boundary_slot = vec![None; n];
        let mut boundary_weights = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let p = idx(i, j);
                let on_x = i == 0 || i == n_x;
                let on_y = j == 0 || j == n_y;
                let wx = if on_x { 0.5 } else { 1.0 };
                let wy = if on_y { 0.5 } else { 1.0 };
                lumped[p] = hx * hy * wx * wy;
                if on_x || on_y {
                    boundary_slot[p] = Some(boundary.len());
                    boundary.push(p);
                    // half of each adjacent boundary edge
                    let w = match (on_x, on_y) {
                        (true, true) => 0.5 * (hx + hy),
                        (true, false) => hy,
                        _ => hx,
                    };
                    boundary_weights.push(w);
                } else {
                    interior.push(p);
                }
            }
        }

        Ok(Self {
            dim: 2,
            shape: [nx, ny],
            coords,
            spacing: [hx, hy],
            boundary,
            interior,
            boundary_slot,
            boundary_weights,
            stiffness,
            mass: CsrMatrix::from_diagonal(&lumped),
            mass_factor: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        self.boundary_slot[node]
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// Boundary quadrature weights (1 at each endpoint in 1D).
    pub fn boundary_weights(&self) -> &[f64] {
        &self.boundary_weights
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    pub fn is_lumped(&self) -> bool {
        self.dim == 2
    }

    /// |Ω|
    pub fn measure(&self) -> f64 {
        (0..self.n_nodes()).flat_map(|i| self.mass.row(i).map(|(_, v)| v)).sum()
    }

    pub fn evaluate<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        self.coords.iter().map(|c| f(c[0], c[1])).collect()
    }

    /// Matrix of `∫ q u v` for the nodal coefficient `q`.
    pub fn coefficient_mass(&self, q: &[f64]) -> CsrMatrix {
        assert_eq!(q.len(), self.n_nodes());
        if self.is_lumped() {
            let d: Vec<f64> = self.mass.diagonal().iter().zip(q).map(|(m, q)| m * q).collect();
            return CsrMatrix::from_diagonal(&d);
        }
        let h = self.spacing[0];
        let n = self.n_nodes();
        let mut t = Vec::with_capacity(4 * n);
        for i in 0..n - 1 {
            let j = i + 1;
            let (qi, qj) = (q[i], q[j]);
            let off = (qi + qj) * h / 12.0;
            t.extend([
                (i, i, (3.0 * qi + qj) * h / 12.0),
                (j, j, (qi + 3.0 * qj) * h / 12.0),
                (i, j, off),
                (j, i, off),
            ]);
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    /// `d_k = ∫ φ_k v w`, i.e. the derivative of `vᵀ M_q w` with respect to `q_k`.
    pub fn coefficient_dual(&self, v: &[f64], w: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes()];
        self.coefficient_dual_add(1.0, v, w, &mut d);
        d
    }

    /// `d += scale · coefficient_dual(v, w)`
    pub fn coefficient_dual_add(&self, scale: f64, v: &[f64], w: &[f64], d: &mut [f64]) {
        if self.is_lumped() {
            for (i, m) in self.mass.diagonal().iter().enumerate() {
                d[i] += scale * m * v[i] * w[i];
            }
            return;
        }
        let c = scale * self.spacing[0] / 12.0;
        for i in 0..self.n_nodes() - 1 {
            let j = i + 1;
            let cross = v[i] * w[j] + v[j] * w[i];
            d[i] += c * (3.0 * v[i] * w[i] + cross + v[j] * w[j]);
            d[j] += c * (v[i] * w[i] + cross + 3.0 * v[j] * w[j]);
        }
    }

    /// Riesz map: solves `M g = d` for the nodal representative of a dual vector.
    pub fn riesz(&self, dual: &[f64]) -> Vec<f64> {
        match &self.mass_factor {
            Some(f) => f.solve(dual),
            None => dual.iter().zip(self.mass.diagonal()).map(|(d, m)| d / m).collect(),
        }
    }

    /// Mass-weighted `L²(Ω)` inner product of nodal vectors.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.form(u, v)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }

    /// Nodal load `∫_∂Ω g v ds` for boundary values `g`.
    pub fn boundary_load(&self, values: &[f64]) -> Vec<f64> {
        assert_eq!(values.len(), self.n_boundary());
        let mut load = vec![0.0; self.n_nodes()];
        for ((&node, w), g) in self.boundary.iter().zip(&self.boundary_weights).zip(values) {
            load[node] = w * g;
        }
        load
    }

    pub fn trace(&self, u: &[f64]) -> Vec<f64> {
        self.boundary.iter().map(|&i| u[i]).collect()
    }
}

/// Element stiffness for a P1 triangle, appended as triplets.
fn p1_stiffness(coords: &[[f64; 2]], tri: [usize; 3], out: &mut Vec<(usize, usize, f64)>) {
    let p = tri.map(|i| coords[i]);
    let area2 = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    for a in 0..3 {
        for e in 0..3 {
            out.push((tri[a], tri[e], (b[a] * b[e] + c[a] * c[e]) / (2.0 * area2.abs())));
        }
    }
}

/// Nodal potential constrained to the box `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub values: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl Potential {
    pub const DEFAULT_LOWER: f64 = 1e-3;
    pub const DEFAULT_UPPER: f64 = 10.0;

    pub fn new(values: Vec<f64>, lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0) || !(upper >= lower) || !upper.is_finite() {
            return Err(Error::InvalidParameter(format!("invalid potential bounds [{lower}, {upper}]")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("potential has non-finite values".into()));
        }
        Ok(Self { values, lower, upper })
    }

    pub fn constant(n: usize, value: f64, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![value; n], lower, upper)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, lower: self.lower, upper: self.upper }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_admissible(&self) -> bool {
        self.values.iter().all(|v| *v >= self.lower && *v <= self.upper)
    }

    /// Clamps nodewise onto the box; returns true if any value moved.
    pub fn project(&mut self) -> bool {
        let mut moved = false;
        for v in &mut self.values {
            let c = v.clamp(self.lower, self.upper);
            if c != *v {
                moved = true;
                *v = c;
            }
        }
        moved
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Neumann,
    Dirichlet,
}

/// Values on `∂Ω × {t_0..t_N}`, stored time-major: `values[[n, b]]` is boundary
/// node `b` (in `SpaceMesh::boundary_nodes` order) at time node `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub kind: BoundaryKind,
    pub values: Array2<f64>,
}

impl BoundaryData {
    pub fn zeros(kind: BoundaryKind, mesh: &SpaceMesh, grid: &TimeGrid) -> Self {
        Self { kind, values: Array2::zeros((grid.n_nodes(), mesh.n_boundary())) }
    }

    /// Samples `f(x, y, t)` at every boundary node and time node.
    pub fn from_fn<F: Fn(f64, f64, f64) -> f64>(kind: BoundaryKind, mesh: &SpaceMesh, grid: &TimeGrid, f: F) -> Self {
        let values = Array2::from_shape_fn((grid.n_nodes(), mesh.n_boundary()), |(n, b)| {
            let c = mesh.coords()[mesh.boundary_nodes()[b]];
            f(c[0], c[1], grid.time(n))
        });
        Self { kind, values }
    }

    pub fn check_shape(&self, mesh: &SpaceMesh, grid: &TimeGrid) -> Result<()> {
        let expected = (grid.n_nodes(), mesh.n_boundary());
        if self.values.dim() != expected {
            return Err(Error::ShapeMismatch(format!(
                "boundary data has shape {:?}, expected {:?}",
                self.values.dim(),
                expected
            )));
        }
        Ok(())
    }

    pub fn at(&self, n: usize) -> &[f64] {
        self.values.row(n).to_slice().expect("standard layout")
    }
}

/// Trapezoid-in-time, boundary-quadrature-in-space approximation of
/// `∫_0^T ∫_∂Ω f g ds dt`.
pub fn boundary_l2_inner(f: &BoundaryData, g: &BoundaryData, mesh: &SpaceMesh, grid: &TimeGrid) -> Result<f64> {
    f.check_shape(mesh, grid)?;
    g.check_shape(mesh, grid)?;
    let weights = grid.trapezoid_weights();
    let mut total = 0.0;
    for (n, tau) in weights.iter().enumerate() {
        let s: f64 = mesh
            .boundary_weights()
            .iter()
            .zip(f.at(n))
            .zip(g.at(n))
            .map(|((w, a), b)| w * a * b)
            .sum();
        total += tau * s;
    }
    Ok(total)
}
