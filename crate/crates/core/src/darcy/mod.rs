//! Finite differences for `-div(exp(a) grad p) = z` on the unit square with
//! `p = 0` on the boundary, and pointwise observation of the solution.
//!
//! Unknowns live on the `n x n` interior nodes `(i h, j h)`, `i, j = 1..n`,
//! `h = 1/(n+1)`, ordered with `i` fastest: node `(i, j)` has index
//! `(j - 1) n + (i - 1)`.

pub mod band;

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, DekiError, Result};
use band::{BandCholesky, BandMatrix};

/// Largest admissible `|a|` before `exp(a)` is considered unsafe.
pub const MAX_LOG_COEFFICIENT: f64 = 50.0;

/// Dense inverses are cached for grids up to this many unknowns.
const DENSE_CACHE_LIMIT: usize = 2500;

/// Points closer than this (in units of `h`) to a grid line snap onto it.
const SNAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(DekiError::InvalidArgument(format!(
                "grid needs n >= 2 interior points per axis, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    /// Index of interior node `(i, j)`, both in `1..=n`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!((1..=self.n).contains(&i) && (1..=self.n).contains(&j));
        (j - 1) * self.n + (i - 1)
    }

    pub fn coords(&self, k: usize) -> (f64, f64) {
        let h = self.spacing();
        let i = k % self.n + 1;
        let j = k / self.n + 1;
        (i as f64 * h, j as f64 * h)
    }

    pub fn node_coords(&self) -> Vec<(f64, f64)> {
        (0..self.dim()).map(|k| self.coords(k)).collect()
    }
}

/// Values on the interior nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    grid: GridSpec,
    values: DVector<f64>,
}

impl GridField {
    pub fn new(grid: GridSpec, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.dim() {
            return Err(DekiError::Dimension(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.dim()
            )));
        }
        ensure_finite(values.iter(), "grid field")?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self {
            grid,
            values: DVector::from_element(grid.dim(), value),
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(
            grid.dim(),
            (0..grid.dim()).map(|k| {
                let (x, y) = grid.coords(k);
                f(x, y)
            }),
        );
        Self::new(grid, values)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.amax()
    }

    /// One value per line in index order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for v in self.values.iter() {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(grid: GridSpec, input: R) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.dim());
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let s = line.trim();
            if s.is_empty() {
                continue;
            }
            values.push(s.parse::<f64>().map_err(|e| DekiError::Format {
                what: "grid field CSV",
                detail: format!("line {}: {e}", i + 1),
            })?);
        }
        Self::new(grid, DVector::from_vec(values))
    }
}

/// Observation locations strictly inside the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationPoints {
    points: Vec<(f64, f64)>,
}

impl ObservationPoints {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(DekiError::InvalidArgument(
                "need at least one observation point".into(),
            ));
        }
        if let Some(&(x, y)) = points
            .iter()
            .find(|&&(x, y)| !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0))
        {
            return Err(DekiError::InvalidArgument(format!(
                "observation point ({x}, {y}) is not inside (0,1)^2"
            )));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Cell coordinate along one axis: lower grid line in `0..=n` and offset in `[0,1)`.
fn locate(coord: f64, h: f64, n: usize) -> (usize, f64) {
    let s = coord / h;
    let nearest = s.round();
    if (s - nearest).abs() < SNAP_TOL {
        return (nearest as usize, 0.0);
    }
    let lower = (s.floor() as usize).min(n);
    (lower, s - lower as f64)
}

/// Bilinear interpolation weights `(node, weight)` for one point, with zero
/// boundary values dropped.
pub fn interpolation_weights(grid: GridSpec, x: f64, y: f64) -> Vec<(usize, f64)> {
    let n = grid.n();
    let h = grid.spacing();
    let (i0, tx) = locate(x, h, n);
    let (j0, ty) = locate(y, h, n);
    let mut out = Vec::with_capacity(4);
    for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
        for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
            let (i, j) = (i0 + di, j0 + dj);
            let w = wx * wy;
            if w != 0.0 && (1..=n).contains(&i) && (1..=n).contains(&j) {
                out.push((grid.index(i, j), w));
            }
        }
    }
    out
}

/// `K x d` bilinear point-evaluation matrix.
pub fn observation_matrix(pts: &ObservationPoints, grid: GridSpec) -> DMatrix<f64> {
    let mut o = DMatrix::zeros(pts.len(), grid.dim());
    for (r, &(x, y)) in pts.points().iter().enumerate() {
        for (k, w) in interpolation_weights(grid, x, y) {
            o[(r, k)] += w;
        }
    }
    o
}

pub fn observe(pts: &ObservationPoints, field: &GridField) -> DVector<f64> {
    DVector::from_iterator(
        pts.len(),
        pts.points().iter().map(|&(x, y)| {
            interpolation_weights(field.grid(), x, y)
                .into_iter()
                .map(|(k, w)| w * field.values()[k])
                .sum::<f64>()
        }),
    )
}

/// Assembled 5-point operator, stored as a symmetric band of half width `n`.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    grid: GridSpec,
    matrix: BandMatrix,
}

impl DiffusionOperator {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn band(&self) -> &BandMatrix {
        &self.matrix
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        self.matrix.to_dense()
    }

    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        self.matrix.mul_vec(p)
    }
}

/// Flux-form stencil with face conductivities `(exp a_P + exp a_Q) / 2`.
/// Faces on the boundary take the adjacent interior node's `exp a`.
pub fn assemble_darcy(a: &GridField) -> Result<DiffusionOperator> {
    if a.max_abs() > MAX_LOG_COEFFICIENT {
        return Err(DekiError::InvalidArgument(format!(
            "log-coefficient magnitude {} exceeds {MAX_LOG_COEFFICIENT}",
            a.max_abs()
        )));
    }
    let grid = a.grid();
    let n = grid.n();
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let kappa: Vec<f64> = a.values().iter().map(|v| v.exp()).collect();
    let mut m = BandMatrix::zeros(grid.dim(), n);
    for j in 1..=n {
        for i in 1..=n {
            let k = grid.index(i, j);
            let mut diag = 0.0;
            for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (ni, nj) = (i as i64 + di, j as i64 + dj);
                let interior = (1..=n as i64).contains(&ni) && (1..=n as i64).contains(&nj);
                let face = if interior {
                    let q = grid.index(ni as usize, nj as usize);
                    let c = 0.5 * (kappa[k] + kappa[q]) * inv_h2;
                    if q < k {
                        m.set(k, q, -c);
                    }
                    c
                } else {
                    kappa[k] * inv_h2
                };
                diag += face;
            }
            m.set(k, k, diag);
        }
    }
    Ok(DiffusionOperator { grid, matrix: m })
}

/// Factored operator for one coefficient field.
#[derive(Debug, Clone)]
pub struct DarcySolver {
    operator: DiffusionOperator,
    factor: BandCholesky,
    inverse: Option<DMatrix<f64>>,
}

impl DarcySolver {
    pub fn new(a: &GridField) -> Result<Self> {
        let operator = assemble_darcy(a)?;
        let factor = operator.band().cholesky().map_err(|e| {
            DekiError::Solver(format!("factorization of the Darcy operator failed: {e}"))
        })?;
        Ok(Self {
            operator,
            factor,
            inverse: None,
        })
    }

    /// Also keeps the dense inverse so that forward matrices for new point
    /// sets cost only row combinations. Falls back silently on large grids.
    pub fn with_dense_cache(a: &GridField) -> Result<Self> {
        let mut s = Self::new(a)?;
        if s.grid().dim() <= DENSE_CACHE_LIMIT {
            s.inverse = Some(s.factor.inverse());
        }
        Ok(s)
    }

    pub fn grid(&self) -> GridSpec {
        self.operator.grid()
    }

    pub fn operator(&self) -> &DiffusionOperator {
        &self.operator
    }

    pub fn solve(&self, rhs: &GridField) -> Result<GridField> {
        if rhs.grid() != self.grid() {
            return Err(DekiError::Dimension(
                "source field lives on a different grid".into(),
            ));
        }
        let p = self.factor.solve(rhs.values());
        let residual = (self.operator.apply(&p) - rhs.values()).norm();
        let scale = rhs.values().norm();
        if residual > 1e-10 * scale.max(f64::MIN_POSITIVE) && residual > 0.0 {
            return Err(DekiError::Solver(format!(
                "Darcy residual {residual:e} exceeds tolerance"
            )));
        }
        GridField::new(self.grid(), p)
    }

    /// `S = O M^{-1}`, one adjoint solve per observation point.
    pub fn forward_matrix(&self, pts: &ObservationPoints) -> DMatrix<f64> {
        let grid = self.grid();
        let d = grid.dim();
        let mut s = DMatrix::zeros(pts.len(), d);
        let mut row = vec![0.0; d];
        for (r, &(x, y)) in pts.points().iter().enumerate() {
            let weights = interpolation_weights(grid, x, y);
            match &self.inverse {
                Some(inv) => {
                    for (k, w) in weights {
                        for c in 0..d {
                            s[(r, c)] += w * inv[(k, c)];
                        }
                    }
                }
                None => {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    for (k, w) in weights {
                        row[k] += w;
                    }
                    self.factor.solve_in_place(&mut row);
                    for c in 0..d {
                        s[(r, c)] = row[c];
                    }
                }
            }
        }
        s
    }
}

pub fn solve_darcy(a: &GridField, z: &GridField) -> Result<GridField> {
    if a.grid() != z.grid() {
        return Err(DekiError::Dimension(
            "coefficient and source fields use different grids".into(),
        ));
    }
    DarcySolver::new(a)?.solve(z)
}

pub fn forward_matrix(a: &GridField, pts: &ObservationPoints) -> Result<DMatrix<f64>> {
    Ok(DarcySolver::new(a)?.forward_matrix(pts))
}
