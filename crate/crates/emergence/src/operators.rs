//! Distance-kernel couplings and their spectral bounds on the quotient.
//!
//! Interaction weights come from a bounded nonincreasing kernel of the
//! pairwise distance, `a_ij = kernel(||x_i - x_j||)`. The graph Laplacian is
//! `L = D - A` with the row sums on the diagonal, and the discrete-time
//! coupling operator is `S = I - h L`.
//!
//! Both `L` and `S` fix the consensus diagonal, so their relevant spectral
//! data lives on the centered subspace: with `B` an orthonormal frame of the
//! complement of the all-ones vector,
//!
//! ```text
//! ||S||_quot   = sigma_max(B^T S B)
//! coercivity L = lambda_min(B^T ((L + L^T)/2) B)
//! ```
//!
//! The pairwise and Euclidean quotient forms differ by a constant factor, so
//! these quantities are the same under either and no form parameter appears.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{EmergenceError, Result};
use crate::quotient::{complement_basis, AgentConfiguration};
use crate::systems::{Dynamics, SystemParams, SystemState, SystemVariant};

/// Bounded nonincreasing distance kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `scale / (1 + r)^exponent`, the discrete-time rational form.
    Rational { scale: f64, exponent: f64 },
    /// `scale / (1 + r^2)^exponent`, the continuous-time rational form.
    RationalSquared { scale: f64, exponent: f64 },
    /// Piecewise-linear table of `(r, value)` points, constant beyond the
    /// last point. Values must be nonnegative and nonincreasing.
    Table { points: Vec<(f64, f64)> },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Rational { scale, exponent } | Self::RationalSquared { scale, exponent } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(EmergenceError::InvalidParameter(format!(
                        "kernel scale must be positive and finite, got {scale}"
                    )));
                }
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(EmergenceError::InvalidParameter(format!(
                        "kernel exponent must be nonnegative, got {exponent}"
                    )));
                }
            }
            Self::Table { points } => {
                if points.is_empty() {
                    return Err(EmergenceError::InvalidParameter(
                        "kernel table needs at least one point".into(),
                    ));
                }
                let mut prev_r = -1.0;
                let mut prev_v = f64::INFINITY;
                for &(r, v) in points {
                    if !r.is_finite() || !v.is_finite() || r < 0.0 || v < 0.0 {
                        return Err(EmergenceError::InvalidParameter(
                            "kernel table entries must be finite and nonnegative".into(),
                        ));
                    }
                    if r <= prev_r {
                        return Err(EmergenceError::InvalidParameter(
                            "kernel table radii must be strictly increasing".into(),
                        ));
                    }
                    if v > prev_v {
                        return Err(EmergenceError::InvalidParameter(
                            "kernel table values must be nonincreasing".into(),
                        ));
                    }
                    prev_r = r;
                    prev_v = v;
                }
            }
        }
        Ok(())
    }

    /// Evaluates the kernel at a distance r >= 0.
    pub fn evaluate(&self, r: f64) -> f64 {
        debug_assert!(r >= 0.0, "kernel evaluated at negative distance {r}");
        match self {
            Self::Rational { scale, exponent } => scale / (1.0 + r).powf(*exponent),
            Self::RationalSquared { scale, exponent } => scale / (1.0 + r * r).powf(*exponent),
            Self::Table { points } => {
                if r <= points[0].0 {
                    return points[0].1;
                }
                for w in points.windows(2) {
                    let (r0, v0) = w[0];
                    let (r1, v1) = w[1];
                    if r <= r1 {
                        let t = (r - r0) / (r1 - r0);
                        return v0 + t * (v1 - v0);
                    }
                }
                points[points.len() - 1].1
            }
        }
    }
}

/// A k x k coupling operator with its symmetry recorded at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    matrix: DMatrix<f64>,
    symmetric: bool,
}

impl CouplingMatrix {
    /// Wraps a square matrix, detecting symmetry within a relative tolerance.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(EmergenceError::ShapeMismatch(format!(
                "coupling matrix must be square and nonempty, got {} x {}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(EmergenceError::NonFinite("coupling matrix".into()));
        }
        let max_abs = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * max_abs.max(1.0);
        let n = matrix.nrows();
        let mut symmetric = true;
        'outer: for i in 0..n {
            for j in i + 1..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > tol {
                    symmetric = false;
                    break 'outer;
                }
            }
        }
        Ok(Self { matrix, symmetric })
    }

    pub fn agents(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

/// Weight matrix from a kernel of pairwise row distances: zero diagonal,
/// `a_ij = kernel(r_ij)`. Always symmetric.
pub fn adjacency(positions: &AgentConfiguration, kernel: &KernelSpec) -> Result<CouplingMatrix> {
    kernel.validate()?;
    let k = positions.agents();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i + 1..k {
            let w = kernel.evaluate(positions.row_distance(i, j));
            if !w.is_finite() {
                return Err(EmergenceError::NonFinite(format!(
                    "kernel weight between agents {i} and {j}"
                )));
            }
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    Ok(CouplingMatrix {
        matrix: a,
        symmetric: true,
    })
}

/// Graph Laplacian `L = D - A` from a weight matrix. Off-diagonal weights
/// must be nonnegative; the input diagonal is ignored (self-loops do not
/// enter the Laplacian). Row sums of the result vanish, so `L 1 = 0`.
pub fn laplacian(weights: &CouplingMatrix) -> Result<CouplingMatrix> {
    let k = weights.agents();
    let a = weights.matrix();
    let mut l = DMatrix::zeros(k, k);
    for i in 0..k {
        let mut degree = 0.0;
        for j in 0..k {
            if i == j {
                continue;
            }
            let w = a[(i, j)];
            if w < 0.0 {
                return Err(EmergenceError::InvalidParameter(format!(
                    "negative off-diagonal weight {w} at ({i}, {j})"
                )));
            }
            l[(i, j)] = -w;
            degree += w;
        }
        l[(i, i)] = degree;
    }
    Ok(CouplingMatrix {
        matrix: l,
        symmetric: weights.symmetric,
    })
}

/// Discrete-time coupling operator `S = I - h L`.
pub fn s_operator(lap: &CouplingMatrix, h: f64) -> Result<CouplingMatrix> {
    if !(h.is_finite() && h >= 0.0) {
        return Err(EmergenceError::InvalidParameter(format!(
            "step size must be nonnegative and finite, got {h}"
        )));
    }
    let k = lap.agents();
    let mut s = -h * lap.matrix();
    for i in 0..k {
        s[(i, i)] += 1.0;
    }
    Ok(CouplingMatrix {
        matrix: s,
        symmetric: lap.symmetric,
    })
}

/// Restricts a k x k operator to the centered subspace: `B^T M B`.
fn restrict_to_quotient(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let basis = complement_basis(m.nrows())?;
    Ok(basis.transpose() * m * basis)
}

/// Operator norm of the induced action on the quotient.
///
/// Symmetric operators use the largest eigenvalue magnitude of the restricted
/// matrix; general operators fall back to the largest singular value via the
/// Gram matrix.
pub fn operator_norm_on_quotient(op: &CouplingMatrix) -> Result<f64> {
    let restricted = restrict_to_quotient(op.matrix())?;
    if op.symmetric {
        let eig = SymmetricEigen::new(restricted);
        Ok(eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())))
    } else {
        let gram = restricted.transpose() * &restricted;
        let eig = SymmetricEigen::new(gram);
        let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
        Ok(max.max(0.0).sqrt())
    }
}

/// Coercivity of a coupling operator on the quotient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coercivity {
    /// Smallest quotient eigenvalue of the symmetric part.
    pub value: f64,
    /// True when the input was not symmetric and the symmetric part was used.
    pub symmetrized: bool,
}

/// Smallest eigenvalue of the symmetric part restricted to the quotient;
/// for a symmetric Laplacian this is the Fiedler value.
pub fn coercivity(lap: &CouplingMatrix) -> Result<Coercivity> {
    let m = lap.matrix();
    let symmetric_part = if lap.symmetric {
        m.clone()
    } else {
        0.5 * (m + m.transpose())
    };
    let restricted = restrict_to_quotient(&symmetric_part)?;
    let eig = SymmetricEigen::new(restricted);
    let value = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v));
    Ok(Coercivity {
        value,
        symmetrized: !lap.symmetric,
    })
}

/// One verified inequality: `slack` is the margin by which it holds, so a
/// negative slack beyond the tolerance means the hypothesis failed.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub label: String,
    /// Measured side of the inequality.
    pub measured: f64,
    /// Required bound it is compared against.
    pub required: f64,
    pub slack: f64,
    pub satisfied: bool,
}

impl HypothesisCheck {
    /// `measured <= required`.
    pub fn upper(label: impl Into<String>, measured: f64, required: f64) -> Self {
        let slack = required - measured;
        Self::from_slack(label.into(), measured, required, slack)
    }

    /// `measured >= required`.
    pub fn lower(label: impl Into<String>, measured: f64, required: f64) -> Self {
        let slack = measured - required;
        Self::from_slack(label.into(), measured, required, slack)
    }

    fn from_slack(label: String, measured: f64, required: f64, slack: f64) -> Self {
        let tol = 1e-12 * measured.abs().max(required.abs()).max(1.0);
        Self {
            label,
            measured,
            required,
            slack,
            satisfied: slack >= -tol,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub checks: Vec<HypothesisCheck>,
    pub satisfied: bool,
}

impl HypothesisReport {
    pub fn from_checks(checks: Vec<HypothesisCheck>) -> Self {
        let satisfied = checks.iter().all(|c| c.satisfied);
        Self { checks, satisfied }
    }
}

/// Evaluates the operator-side hypothesis of the active system at one state:
/// the contraction bound on `||S||_quot` for the discrete systems, the
/// coercivity floor for the continuous ones. Both sides of each inequality
/// are reported with their slack.
pub fn verify_operator_hypotheses(
    state: &SystemState,
    dynamics: &Dynamics,
) -> Result<HypothesisReport> {
    let geom = &dynamics.geometry;
    let x_norm = geom.x_norm(&state.x);
    let y_norm = geom.y_norm(&state.y);
    let checks = match (&dynamics.variant, &dynamics.params) {
        (SystemVariant::DiscreteI, SystemParams::DiscreteI(p)) => {
            let lap = laplacian(&adjacency(
                &geom.x_configuration(&state.x)?,
                dynamics.kernel_x()?,
            )?)?;
            let s = s_operator(&lap, p.h)?;
            let norm = operator_norm_on_quotient(&s)?;
            let bound = 1.0 - p.h * p.g / (1.0 + x_norm).powf(p.beta);
            vec![HypothesisCheck::upper("contraction bound", norm, bound)]
        }
        (SystemVariant::DiscreteII, SystemParams::DiscreteII(p)) => {
            let lap1 = laplacian(&adjacency(
                &geom.y_configuration(&state.y)?,
                dynamics.kernel_y()?,
            )?)?;
            let s1 = s_operator(&lap1, p.h1)?;
            let norm1 = operator_norm_on_quotient(&s1)?;
            let bound1 = 1.0 - p.h1 * p.g1 / (1.0 + y_norm).powf(p.beta1);
            let lap2 = laplacian(&adjacency(
                &geom.x_configuration(&state.x)?,
                dynamics.kernel_x()?,
            )?)?;
            let s2 = s_operator(&lap2, p.h2)?;
            let norm2 = operator_norm_on_quotient(&s2)?;
            let bound2 = 1.0 - p.h2 * p.g2 / (1.0 + x_norm).powf(p.beta2);
            vec![
                HypothesisCheck::upper("contraction bound, position equation", norm1, bound1),
                HypothesisCheck::upper("contraction bound, second equation", norm2, bound2),
            ]
        }
        (SystemVariant::ContinuousI, SystemParams::ContinuousI(p)) => {
            let lap = laplacian(&adjacency(
                &geom.x_configuration(&state.x)?,
                dynamics.kernel_x()?,
            )?)?;
            let coer = coercivity(&lap)?;
            let floor = p.kappa / (1.0 + x_norm * x_norm).powf(p.beta);
            vec![HypothesisCheck::lower(
                "coercivity floor",
                coer.value,
                floor,
            )]
        }
        (SystemVariant::ContinuousII, SystemParams::ContinuousII(p)) => {
            let lap_from_y = laplacian(&adjacency(
                &geom.y_configuration(&state.y)?,
                dynamics.kernel_y()?,
            )?)?;
            let eta = coercivity(&lap_from_y)?;
            let floor_eta = p.kappa2 / (1.0 + y_norm * y_norm).powf(p.beta2);
            let lap_from_x = laplacian(&adjacency(
                &geom.x_configuration(&state.x)?,
                dynamics.kernel_x()?,
            )?)?;
            let xi = coercivity(&lap_from_x)?;
            let floor_xi = p.kappa1 / (1.0 + x_norm * x_norm).powf(p.beta1);
            vec![
                HypothesisCheck::lower("coercivity floor, position equation", eta.value, floor_eta),
                HypothesisCheck::lower("coercivity floor, second equation", xi.value, floor_xi),
            ]
        }
        _ => {
            return Err(EmergenceError::InvalidParameter(
                "system parameters do not match the system variant".into(),
            ))
        }
    };
    Ok(HypothesisReport::from_checks(checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn positions(rows: &[Vec<f64>]) -> AgentConfiguration {
        AgentConfiguration::from_rows(rows).unwrap()
    }

    fn unit_rational(exponent: f64) -> KernelSpec {
        KernelSpec::Rational {
            scale: 1.0,
            exponent,
        }
    }

    #[test]
    fn adjacency_of_coincident_agents_is_kernel_at_zero() {
        let a = adjacency(
            &positions(&[vec![1.0, 2.0], vec![1.0, 2.0]]),
            &unit_rational(0.7),
        )
        .unwrap();
        assert_relative_eq!(a.matrix()[(0, 1)], 1.0);
        assert_eq!(a.matrix()[(0, 0)], 0.0);
        assert!(a.is_symmetric());
    }

    #[test]
    fn adjacency_decays_with_distance() {
        let a = adjacency(&positions(&[vec![0.0], vec![3.0]]), &unit_rational(1.0)).unwrap();
        assert_relative_eq!(a.matrix()[(0, 1)], 0.25);
    }

    #[test]
    fn flat_kernel_keeps_its_scale_at_any_distance() {
        let kernel = KernelSpec::Rational {
            scale: 2.0,
            exponent: 0.0,
        };
        let a = adjacency(&positions(&[vec![0.0], vec![57.0]]), &kernel).unwrap();
        assert_relative_eq!(a.matrix()[(0, 1)], 2.0);
    }

    #[test]
    fn table_kernel_interpolates_and_validates() {
        let kernel = KernelSpec::Table {
            points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.0)],
        };
        kernel.validate().unwrap();
        assert_relative_eq!(kernel.evaluate(0.5), 0.75);
        assert_relative_eq!(kernel.evaluate(5.0), 0.0);
        let bad = KernelSpec::Table {
            points: vec![(0.0, 0.5), (1.0, 0.8)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn laplacian_annihilates_consensus() {
        let a = adjacency(
            &positions(&[vec![0.0], vec![1.0], vec![2.5]]),
            &unit_rational(1.3),
        )
        .unwrap();
        let l = laplacian(&a).unwrap();
        let ones = DMatrix::from_element(3, 1, 1.0);
        let image = l.matrix() * ones;
        for v in image.iter() {
            assert_relative_eq!(*v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn laplacian_rejects_negative_weights() {
        let w = CouplingMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, -0.5, -0.5, 0.0]))
            .unwrap();
        assert!(laplacian(&w).is_err());
    }

    #[test]
    fn s_operator_of_single_edge() {
        let w = CouplingMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .unwrap();
        let l = laplacian(&w).unwrap();
        let s = s_operator(&l, 0.1).unwrap();
        assert_relative_eq!(s.matrix()[(0, 0)], 0.9);
        assert_relative_eq!(s.matrix()[(0, 1)], 0.1);
    }

    #[test]
    fn operator_norm_on_single_edge_pair() {
        // L has quotient spectrum {2}; ||I - h L||_quot = |1 - 2 h|.
        let w = CouplingMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .unwrap();
        let l = laplacian(&w).unwrap();
        let s = s_operator(&l, 0.1).unwrap();
        assert_relative_eq!(operator_norm_on_quotient(&s).unwrap(), 0.8, epsilon = 1e-12);
        let flat = s_operator(&l, 0.5).unwrap();
        assert_relative_eq!(
            operator_norm_on_quotient(&flat).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let identity = s_operator(&l, 0.0).unwrap();
        assert_relative_eq!(operator_norm_on_quotient(&identity).unwrap(), 1.0);
    }

    #[test]
    fn coercivity_of_complete_graph() {
        // Complete unit-weight graph on k agents has quotient spectrum {k}.
        let k = 3;
        let mut w = DMatrix::from_element(k, k, 1.0);
        for i in 0..k {
            w[(i, i)] = 0.0;
        }
        let l = laplacian(&CouplingMatrix::from_matrix(w).unwrap()).unwrap();
        let c = coercivity(&l).unwrap();
        assert_relative_eq!(c.value, 3.0, epsilon = 1e-12);
        assert!(!c.symmetrized);
    }

    #[test]
    fn coercivity_of_zero_coupling_is_zero() {
        let l = CouplingMatrix::from_matrix(DMatrix::zeros(4, 4)).unwrap();
        assert_relative_eq!(coercivity(&l).unwrap().value, 0.0);
    }

    #[test]
    fn asymmetric_input_is_flagged_and_symmetrized() {
        // Directed single edge: L = [[1, -1], [0, 0]]. The symmetric part
        // restricted to (1,-1)/sqrt(2) gives 1.
        let l = CouplingMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]))
            .unwrap();
        let c = coercivity(&l).unwrap();
        assert!(c.symmetrized);
        assert_relative_eq!(c.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn asymmetric_norm_dominates_sampled_rayleigh_quotients() {
        let s = CouplingMatrix::from_matrix(DMatrix::from_row_slice(
            3,
            3,
            &[0.9, 0.05, 0.05, 0.0, 0.95, 0.05, 0.1, 0.1, 0.8],
        ))
        .unwrap();
        let norm = operator_norm_on_quotient(&s).unwrap();
        let basis = complement_basis(3).unwrap();
        for t in 0..50 {
            let coords = nalgebra::DVector::from_fn(2, |i, _| ((t * 2 + i) as f64 * 0.37).sin());
            let y = &basis * coords;
            // The image may leave the centered subspace; project it back
            // before measuring, since the quotient action is project-compose.
            let image = s.matrix() * &y;
            let mean_val = image.iter().sum::<f64>() / 3.0;
            let centered = image.map(|v| v - mean_val);
            assert!(centered.norm() <= norm * y.norm() + 1e-10);
        }
    }

    #[test]
    fn contraction_hypothesis_passes_with_slack() {
        // ||S||_quot = 0.8 against a required bound of 0.9.
        let check = HypothesisCheck::upper("contraction bound", 0.8, 0.9);
        assert!(check.satisfied);
        assert_relative_eq!(check.slack, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn vanishing_coupling_fails_the_contraction_hypothesis() {
        let check = HypothesisCheck::upper("contraction bound", 1.0, 0.9);
        assert!(!check.satisfied);
    }

    #[test]
    fn equality_passes_within_tolerance() {
        let check = HypothesisCheck::lower("coercivity floor", 3.0, 3.0);
        assert!(check.satisfied);
    }

    /// Oracle for the next two properties: eigenvalues of the full k x k
    /// symmetric Laplacian, with the one zero eigenvalue belonging to the
    /// consensus direction removed (the kernels below keep the graph
    /// connected, so exactly one eigenvalue vanishes).
    fn quotient_spectrum_oracle(l: &DMatrix<f64>) -> Vec<f64> {
        let eig = SymmetricEigen::new(l.clone());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        vals.remove(0);
        vals
    }

    proptest! {
        #[test]
        fn restricted_norm_matches_full_spectrum(
            k in 2usize..=8,
            seed_pts in prop::collection::vec(-4.0f64..4.0, 24),
            h in 0.001f64..0.2,
        ) {
            let pts: Vec<Vec<f64>> = (0..k).map(|i| vec![seed_pts[3 * i], seed_pts[3 * i + 1], seed_pts[3 * i + 2]]).collect();
            let a = adjacency(&positions(&pts), &unit_rational(1.0)).unwrap();
            let l = laplacian(&a).unwrap();
            let s = s_operator(&l, h).unwrap();
            let norm = operator_norm_on_quotient(&s).unwrap();
            let spectrum = quotient_spectrum_oracle(l.matrix());
            let oracle = spectrum.iter().fold(0.0f64, |m, lam| m.max((1.0 - h * lam).abs()));
            prop_assert!((norm - oracle).abs() <= 1e-9, "norm {norm} vs oracle {oracle}");
        }

        #[test]
        fn coercivity_matches_fiedler_value(
            k in 2usize..=8,
            seed_pts in prop::collection::vec(-4.0f64..4.0, 24),
        ) {
            let pts: Vec<Vec<f64>> = (0..k).map(|i| vec![seed_pts[3 * i], seed_pts[3 * i + 1], seed_pts[3 * i + 2]]).collect();
            let a = adjacency(&positions(&pts), &unit_rational(0.8)).unwrap();
            let l = laplacian(&a).unwrap();
            let c = coercivity(&l).unwrap();
            let spectrum = quotient_spectrum_oracle(l.matrix());
            prop_assert!((c.value - spectrum[0]).abs() <= 1e-9,
                "coercivity {} vs fiedler {}", c.value, spectrum[0]);
        }

        /// A strictly positive kernel keeps every weight above its value at
        /// the largest pairwise distance, which forces the Fiedler value to
        /// at least k times that weight.
        #[test]
        fn kernel_floor_certifies_coercivity(
            k in 2usize..=6,
            seed_pts in prop::collection::vec(-3.0f64..3.0, 18),
        ) {
            let pts: Vec<Vec<f64>> = (0..k).map(|i| vec![seed_pts[3 * i], seed_pts[3 * i + 1], seed_pts[3 * i + 2]]).collect();
            let cfg = positions(&pts);
            let kernel = unit_rational(1.2);
            let mut min_weight = f64::INFINITY;
            for i in 0..k {
                for j in i + 1..k {
                    min_weight = min_weight.min(kernel.evaluate(cfg.row_distance(i, j)));
                }
            }
            let l = laplacian(&adjacency(&cfg, &kernel).unwrap()).unwrap();
            let c = coercivity(&l).unwrap();
            prop_assert!(c.value >= k as f64 * min_weight - 1e-9);
        }
    }
}
