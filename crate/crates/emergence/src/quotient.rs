//! Quotient geometry for agent ensembles.
//!
//! An ensemble state is a k x d array, one row per agent. Collective
//! observables are read off modulo the diagonal subspace of common shifts:
//! two arrays are equivalent when they differ by adding the same row vector
//! to every agent. The canonical representative of a class is the
//! mean-centered array, and every norm and inner product below is evaluated
//! on representatives.
//!
//! Two inner products are supported on the quotient. The pairwise-difference
//! form
//!
//! ```text
//! <u, v> = 1/2 * sum_{i,j} <u_i - u_j, v_i - v_j>
//!        = k * sum_i <u_i - u_bar, v_i - v_bar>
//! ```
//!
//! is the default; the plain Euclidean form on centered representatives is
//! the alternative. They differ by the constant factor k, so spectral
//! quantities measured in either agree.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{EmergenceError, Result};

/// Raw ensemble state: a k x d array with one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfiguration {
    values: DMatrix<f64>,
}

impl AgentConfiguration {
    /// Wraps a k x d array. Requires k >= 1, d >= 1 and finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(EmergenceError::ShapeMismatch(format!(
                "agent configuration must be at least 1 x 1, got {} x {}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmergenceError::NonFinite("agent configuration".into()));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(EmergenceError::ShapeMismatch(
                "agent configuration needs at least one row".into(),
            ));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(EmergenceError::ShapeMismatch(
                "agent rows have unequal lengths".into(),
            ));
        }
        let k = rows.len();
        let values = DMatrix::from_fn(k, d, |i, j| rows[i][j]);
        Self::new(values)
    }

    pub fn agents(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Euclidean distance between the rows of agents i and j.
    pub fn row_distance(&self, i: usize, j: usize) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.values.ncols() {
            let diff = self.values[(i, c)] - self.values[(j, c)];
            acc += diff * diff;
        }
        acc.sqrt()
    }
}

/// Inner product used on the quotient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerProduct {
    /// `1/2 sum_{i,j} <u_i - u_j, v_i - v_j>`, the default.
    #[default]
    PairwiseDifference,
    /// Plain Euclidean inner product on centered representatives.
    Euclidean,
}

/// Canonical representative of a quotient class: a mean-centered k x d array.
#[derive(Debug, Clone, PartialEq)]
pub struct QuotientVector {
    values: DMatrix<f64>,
}

/// Centering tolerance, relative to k and the largest entry magnitude.
fn centering_tolerance(values: &DMatrix<f64>) -> f64 {
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-12 * values.nrows() as f64 * max_abs.max(1.0)
}

impl QuotientVector {
    /// Wraps an already centered array; the column sums must vanish within
    /// a tolerance proportional to k and the entry magnitudes.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(EmergenceError::ShapeMismatch(
                "quotient representative must be at least 1 x 1".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmergenceError::NonFinite("quotient representative".into()));
        }
        let tol = centering_tolerance(&values);
        for c in 0..values.ncols() {
            let col_sum: f64 = (0..values.nrows()).map(|r| values[(r, c)]).sum();
            if col_sum.abs() > tol {
                return Err(EmergenceError::InvalidParameter(format!(
                    "representative not centered: column {c} sums to {col_sum:.3e}"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn zero(k: usize, d: usize) -> Self {
        Self {
            values: DMatrix::zeros(k, d),
        }
    }

    pub fn agents(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Centers every column of the array. The result is the canonical
/// representative and is idempotent: projecting a projection is a no-op.
pub fn center_columns(values: &DMatrix<f64>) -> DMatrix<f64> {
    let k = values.nrows();
    let mut out = values.clone();
    for c in 0..values.ncols() {
        let mean: f64 = (0..k).map(|r| values[(r, c)]).sum::<f64>() / k as f64;
        for r in 0..k {
            out[(r, c)] -= mean;
        }
    }
    out
}

/// Projects a raw configuration onto the quotient by subtracting the mean row.
pub fn project_to_quotient(config: &AgentConfiguration) -> QuotientVector {
    QuotientVector {
        values: center_columns(config.values()),
    }
}

/// Inner product of two quotient classes under the chosen form.
///
/// The pairwise-difference form is evaluated through the identity
/// `1/2 sum_{i,j} <u_i - u_j, v_i - v_j> = k sum_i <u_i, v_i>` on centered
/// representatives, so the cost is O(k d) rather than O(k^2 d).
pub fn quotient_inner(u: &QuotientVector, v: &QuotientVector, ip: InnerProduct) -> Result<f64> {
    if u.agents() != v.agents() || u.dim() != v.dim() {
        return Err(EmergenceError::ShapeMismatch(format!(
            "quotient inner product between {} x {} and {} x {}",
            u.agents(),
            u.dim(),
            v.agents(),
            v.dim()
        )));
    }
    let centered: f64 = u
        .values()
        .iter()
        .zip(v.values().iter())
        .map(|(a, b)| a * b)
        .sum();
    Ok(match ip {
        InnerProduct::PairwiseDifference => u.agents() as f64 * centered,
        InnerProduct::Euclidean => centered,
    })
}

/// Norm induced by `quotient_inner`. Zero exactly on the consensus class.
pub fn quotient_norm(v: &QuotientVector, ip: InnerProduct) -> f64 {
    let sq: f64 = v.values().iter().map(|a| a * a).sum();
    match ip {
        InnerProduct::PairwiseDifference => (v.agents() as f64 * sq).sqrt(),
        InnerProduct::Euclidean => sq.sqrt(),
    }
}

/// Norm of a raw array interpreted per geometry: quotient classes are
/// measured through their centered representative, ambient blocks through
/// the Frobenius norm.
pub fn frobenius_norm(values: &DMatrix<f64>) -> f64 {
    values.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Orthonormal basis of the complement of the all-ones vector in R^k
/// (Helmert frame), returned as a k x (k-1) matrix with orthonormal columns.
///
/// Column l (0-based) has entries 1/sqrt((l+1)(l+2)) in rows 0..=l,
/// -(l+1)/sqrt((l+1)(l+2)) in row l+1 and zero below.
pub fn complement_basis(k: usize) -> Result<DMatrix<f64>> {
    if k < 2 {
        return Err(EmergenceError::InvalidParameter(format!(
            "complement basis needs k >= 2 agents, got {k}"
        )));
    }
    let mut basis = DMatrix::zeros(k, k - 1);
    for l in 0..k - 1 {
        let len = ((l + 1) as f64 * (l + 2) as f64).sqrt();
        for r in 0..=l {
            basis[(r, l)] = 1.0 / len;
        }
        basis[(l + 1, l)] = -((l + 1) as f64) / len;
    }
    Ok(basis)
}

/// Isometric frame for a state block: maps flat coordinate vectors onto
/// k x d arrays so that the block norm of the image equals the Euclidean
/// norm of the coordinates.
///
/// For a quotient block the frame spans the centered subspace, giving an
/// effective dimension of (k-1) d; for an ambient block it is the plain
/// reshape with dimension k d.
#[derive(Debug, Clone)]
pub enum StateEmbedding {
    Centered {
        /// k x (k-1) orthonormal frame of the centered subspace.
        basis: DMatrix<f64>,
        /// 1 for the Euclidean form, 1/sqrt(k) for the pairwise form.
        scale: f64,
        dim: usize,
    },
    Ambient {
        agents: usize,
        dim: usize,
    },
}

impl StateEmbedding {
    pub fn centered(k: usize, d: usize, ip: InnerProduct) -> Result<Self> {
        if d == 0 {
            return Err(EmergenceError::InvalidParameter(
                "embedding needs d >= 1".into(),
            ));
        }
        let basis = complement_basis(k)?;
        let scale = match ip {
            InnerProduct::PairwiseDifference => 1.0 / (k as f64).sqrt(),
            InnerProduct::Euclidean => 1.0,
        };
        Ok(Self::Centered {
            basis,
            scale,
            dim: d,
        })
    }

    pub fn ambient(k: usize, d: usize) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(EmergenceError::InvalidParameter(
                "embedding needs k >= 1 and d >= 1".into(),
            ));
        }
        Ok(Self::Ambient { agents: k, dim: d })
    }

    /// Length of the coordinate vectors this frame accepts.
    pub fn coordinate_dim(&self) -> usize {
        match self {
            Self::Centered { basis, dim, .. } => basis.ncols() * dim,
            Self::Ambient { agents, dim } => agents * dim,
        }
    }

    /// Maps flat coordinates to a k x d array. Coordinates are grouped by
    /// frame vector: entry (l, axis) sits at index l * d + axis.
    pub fn embed(&self, coords: &[f64]) -> Result<DMatrix<f64>> {
        if coords.len() != self.coordinate_dim() {
            return Err(EmergenceError::ShapeMismatch(format!(
                "embedding expects {} coordinates, got {}",
                self.coordinate_dim(),
                coords.len()
            )));
        }
        match self {
            Self::Centered { basis, scale, dim } => {
                let k = basis.nrows();
                let mut out = DMatrix::zeros(k, *dim);
                for l in 0..basis.ncols() {
                    for axis in 0..*dim {
                        let c = coords[l * dim + axis] * scale;
                        if c == 0.0 {
                            continue;
                        }
                        for r in 0..k {
                            out[(r, axis)] += basis[(r, l)] * c;
                        }
                    }
                }
                Ok(out)
            }
            Self::Ambient { agents, dim } => {
                Ok(DMatrix::from_fn(*agents, *dim, |i, j| coords[i * dim + j]))
            }
        }
    }

    /// Inverse of `embed` up to projection: coordinates of a k x d array in
    /// this frame. The centered frame first projects out the consensus
    /// component, so for arrays already in the frame's range this is the
    /// exact inverse.
    pub fn coordinates(&self, values: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (k, d) = match self {
            Self::Centered { basis, dim, .. } => (basis.nrows(), *dim),
            Self::Ambient { agents, dim } => (*agents, *dim),
        };
        if values.nrows() != k || values.ncols() != d {
            return Err(EmergenceError::ShapeMismatch(format!(
                "coordinates expect a {k} x {d} array, got {} x {}",
                values.nrows(),
                values.ncols()
            )));
        }
        match self {
            Self::Centered { basis, scale, dim } => {
                let centered = center_columns(values);
                let mut coords = DVector::zeros(basis.ncols() * dim);
                for l in 0..basis.ncols() {
                    for axis in 0..*dim {
                        let mut acc = 0.0;
                        for r in 0..k {
                            acc += basis[(r, l)] * centered[(r, axis)];
                        }
                        coords[l * dim + axis] = acc / scale;
                    }
                }
                Ok(coords)
            }
            Self::Ambient { .. } => Ok(DVector::from_fn(k * d, |i, _| values[(i / d, i % d)])),
        }
    }
}
