//! Multivariate Gaussian primitives.
//!
//! Every quadratic form and determinant goes through a Cholesky factor that is
//! computed once when an [`SpdMatrix`] is built. Covariances may be stored in
//! full or diagonal form; mixed operations promote to full.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that an input matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Tolerance on the norm of vectors flagged as unit-normalized.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Storage layout for covariance matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    Full,
    Diagonal,
}

/// A finite embedding vector, optionally flagged as unit-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: DVector<f64>,
    normalized: bool,
}

impl FeatureVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("feature vector must have positive dimension"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature vector has non-finite entries"));
        }
        Ok(FeatureVector { values, normalized: false })
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    /// Rescales `values` to unit Euclidean norm.
    pub fn unit(values: DVector<f64>) -> Result<Self> {
        let mut fv = Self::new(values)?;
        let norm = fv.values.norm();
        if norm == 0.0 {
            return Err(Error::invalid("cannot normalize a zero vector"));
        }
        fv.values /= norm;
        fv.normalized = true;
        Ok(fv)
    }

    /// Wraps values that are already unit-norm, checking the norm within [`UNIT_NORM_TOL`].
    pub fn assume_unit(values: DVector<f64>) -> Result<Self> {
        let mut fv = Self::new(values)?;
        let norm = fv.values.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("vector flagged normalized has norm {norm}")));
        }
        fv.normalized = true;
        Ok(fv)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }
}

impl AsRef<DVector<f64>> for FeatureVector {
    fn as_ref(&self) -> &DVector<f64> {
        &self.values
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Full { matrix: DMatrix<f64>, chol: Cholesky<f64, Dyn> },
    Diagonal(DVector<f64>),
}

/// Symmetric positive-definite matrix with its factorization computed at construction.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    repr: Repr,
}

impl SpdMatrix {
    /// Builds from a dense symmetric matrix. The input is checked for symmetry within
    /// [`SYMMETRY_TOL`] (relative to its largest entry) and then exactly symmetrized.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let matrix = symmetrized(matrix)?;
        let chol = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(SpdMatrix { repr: Repr::Full { matrix, chol } })
    }

    pub fn from_diagonal(diag: DVector<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::invalid("matrix must have positive dimension"));
        }
        if diag.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("diagonal has non-finite entries"));
        }
        if diag.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(SpdMatrix { repr: Repr::Diagonal(diag) })
    }

    /// `scale * I` in the requested storage mode.
    pub fn scaled_identity(dim: usize, scale: f64, mode: CovarianceMode) -> Result<Self> {
        let diag = DVector::from_element(dim, scale);
        match mode {
            CovarianceMode::Diagonal => Self::from_diagonal(diag),
            CovarianceMode::Full => Self::from_matrix(DMatrix::from_diagonal(&diag)),
        }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            Repr::Full { matrix, .. } => matrix.nrows(),
            Repr::Diagonal(d) => d.len(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.repr, Repr::Diagonal(_))
    }

    pub fn mode(&self) -> CovarianceMode {
        if self.is_diagonal() {
            CovarianceMode::Diagonal
        } else {
            CovarianceMode::Full
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Full { matrix, .. } => matrix.clone(),
            Repr::Diagonal(d) => DMatrix::from_diagonal(d),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match &self.repr {
            Repr::Full { matrix, .. } => matrix.diagonal(),
            Repr::Diagonal(d) => d.clone(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().sum()
    }

    /// Lower-triangular factor `L` with `L Lᵀ = self`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Full { chol, .. } => chol.l(),
            Repr::Diagonal(d) => DMatrix::from_diagonal(&d.map(f64::sqrt)),
        }
    }

    pub fn log_det(&self) -> f64 {
        match &self.repr {
            Repr::Full { chol, .. } => {
                2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
            }
            Repr::Diagonal(d) => d.iter().map(|v| v.ln()).sum(),
        }
    }

    /// Solves `self * x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Full { chol, .. } => chol.solve(b),
            Repr::Diagonal(d) => b.component_div(d),
        }
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            Repr::Full { matrix, .. } => matrix * v,
            Repr::Diagonal(d) => d.component_mul(v),
        }
    }

    /// `vᵀ self⁻¹ v` through a triangular solve.
    pub fn inv_quad_form(&self, v: &DVector<f64>) -> f64 {
        match &self.repr {
            Repr::Full { chol, .. } => {
                let z = chol
                    .l_dirty()
                    .solve_lower_triangular(v)
                    .expect("cholesky factor has a positive diagonal");
                z.norm_squared()
            }
            Repr::Diagonal(d) => v.iter().zip(d.iter()).map(|(x, s)| x * x / s).sum(),
        }
    }

    /// `tr(self⁻¹ other)`.
    pub fn trace_inv_product(&self, other: &SpdMatrix) -> f64 {
        match (&self.repr, &other.repr) {
            (Repr::Diagonal(a), Repr::Diagonal(b)) => {
                b.iter().zip(a.iter()).map(|(x, y)| x / y).sum()
            }
            (Repr::Diagonal(a), _) => {
                other.diagonal().iter().zip(a.iter()).map(|(x, y)| x / y).sum()
            }
            (Repr::Full { chol, .. }, _) => {
                // tr(A⁻¹B) = ‖L_A⁻¹ L_B‖²_F
                let lb = other.cholesky_factor();
                let z = chol
                    .l_dirty()
                    .solve_lower_triangular(&lb)
                    .expect("cholesky factor has a positive diagonal");
                z.norm_squared()
            }
        }
    }

    /// Matrix inverse via the Cholesky factor. Diagonal stays diagonal.
    pub fn inverse(&self) -> SpdMatrix {
        match &self.repr {
            Repr::Full { chol, .. } => {
                let inv = chol.inverse();
                Self::from_matrix(inv).expect("inverse of an SPD matrix is SPD")
            }
            Repr::Diagonal(d) => SpdMatrix { repr: Repr::Diagonal(d.map(|v| 1.0 / v)) },
        }
    }

    /// Sum of two SPD matrices; diagonal only when both operands are.
    pub fn add(&self, other: &SpdMatrix) -> Result<SpdMatrix> {
        Error::check_dim(self.dim(), other.dim())?;
        match (&self.repr, &other.repr) {
            (Repr::Diagonal(a), Repr::Diagonal(b)) => Self::from_diagonal(a + b),
            _ => Self::from_matrix(self.to_dense() + other.to_dense()),
        }
    }

    /// `self + weight * other` for a nonnegative weight.
    pub fn add_scaled(&self, other: &SpdMatrix, weight: f64) -> Result<SpdMatrix> {
        Error::check_dim(self.dim(), other.dim())?;
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("weight must be finite and nonnegative, got {weight}")));
        }
        match (&self.repr, &other.repr) {
            (Repr::Diagonal(a), Repr::Diagonal(b)) => Self::from_diagonal(a + b * weight),
            _ => Self::from_matrix(self.to_dense() + other.to_dense() * weight),
        }
    }

    pub fn scaled(&self, factor: f64) -> Result<SpdMatrix> {
        match &self.repr {
            Repr::Diagonal(d) => Self::from_diagonal(d * factor),
            Repr::Full { matrix, .. } => Self::from_matrix(matrix * factor),
        }
    }

    /// Keeps only the diagonal.
    pub fn to_diagonal(&self) -> SpdMatrix {
        match &self.repr {
            Repr::Diagonal(_) => self.clone(),
            Repr::Full { matrix, .. } => SpdMatrix { repr: Repr::Diagonal(matrix.diagonal()) },
        }
    }

    pub fn with_mode(&self, mode: CovarianceMode) -> SpdMatrix {
        match mode {
            CovarianceMode::Diagonal => self.to_diagonal(),
            CovarianceMode::Full => match &self.repr {
                Repr::Full { .. } => self.clone(),
                Repr::Diagonal(_) => {
                    Self::from_matrix(self.to_dense()).expect("positive diagonal is SPD")
                }
            },
        }
    }
}

fn symmetrized(matrix: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = matrix.nrows();
    if n == 0 || matrix.ncols() != n {
        return Err(Error::invalid(format!(
            "expected a nonempty square matrix, got {}x{}",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix has non-finite entries"));
    }
    let scale = matrix.amax();
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok((&matrix + matrix.transpose()) * 0.5)
}

/// Returns `S + εI` with `ε = rel_eps · tr(S)/d`, or `ε = rel_eps` when the trace is zero.
pub fn regularize_scatter(scatter: &DMatrix<f64>, rel_eps: f64) -> Result<SpdMatrix> {
    regularize_scatter_with(scatter, rel_eps, CovarianceMode::Full)
}

/// [`regularize_scatter`] with an explicit storage mode. Diagonal mode drops off-diagonal terms.
pub fn regularize_scatter_with(
    scatter: &DMatrix<f64>,
    rel_eps: f64,
    mode: CovarianceMode,
) -> Result<SpdMatrix> {
    if !(rel_eps >= 0.0 && rel_eps.is_finite()) {
        return Err(Error::invalid(format!("rel_eps must be finite and nonnegative, got {rel_eps}")));
    }
    let scatter = symmetrized(scatter.clone())?;
    let eps = regularization_epsilon(&scatter, rel_eps);
    match mode {
        CovarianceMode::Full => {
            let mut m = scatter;
            for i in 0..m.nrows() {
                m[(i, i)] += eps;
            }
            SpdMatrix::from_matrix(m)
        }
        CovarianceMode::Diagonal => SpdMatrix::from_diagonal(scatter.diagonal().add_scalar(eps)),
    }
}

/// The ε added by [`regularize_scatter`].
pub fn regularization_epsilon(scatter: &DMatrix<f64>, rel_eps: f64) -> f64 {
    let trace = scatter.trace();
    if trace == 0.0 {
        rel_eps
    } else {
        rel_eps * trace / scatter.nrows() as f64
    }
}

/// A multivariate normal distribution.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: SpdMatrix,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        Error::check_dim(cov.dim(), mean.len())?;
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("mean has non-finite entries"));
        }
        Ok(GaussianModel { mean, cov })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `ln N(x | mean, cov)`.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Error::check_dim(self.dim(), x.len())?;
        let diff = x - &self.mean;
        let d = self.dim() as f64;
        Ok(-0.5 * (d * (2.0 * PI).ln() + self.cov.log_det() + self.cov.inv_quad_form(&diff)))
    }
}

pub fn log_density(g: &GaussianModel, x: &DVector<f64>) -> Result<f64> {
    g.log_density(x)
}

/// Roundoff below this magnitude is clamped to zero in [`gaussian_kl`].
pub const KL_CLAMP_TOL: f64 = 1e-10;

/// Closed-form `KL(p ‖ q)` between two Gaussians.
pub fn gaussian_kl(p: &GaussianModel, q: &GaussianModel) -> Result<f64> {
    Error::check_dim(q.dim(), p.dim())?;
    let d = p.dim() as f64;
    let diff = q.mean() - p.mean();
    let kl = 0.5
        * (q.cov.trace_inv_product(&p.cov) + q.cov.inv_quad_form(&diff) - d + q.cov.log_det()
            - p.cov.log_det());
    if kl < 0.0 && kl >= -KL_CLAMP_TOL {
        Ok(0.0)
    } else {
        Ok(kl)
    }
}

/// `ln Σ exp(vᵢ)` with max-shift. Entries must be finite or `-∞`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("log_sum_exp of an empty list"));
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("log_sum_exp entries must be finite or -inf"));
    }
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}
