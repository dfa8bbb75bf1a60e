//! Affine-invariant shape comparison (AISC).
//!
//! A landmark shape `S` (m×2) is mapped to the projector `P = UUᵀ` onto its
//! column space, where `S = U·diag(d)·Vᵀ` is a thin SVD. Right-multiplying `S`
//! by any invertible 2×2 matrix leaves the column space, and hence `P`, fixed.
//! Two shapes are compared through `B = P₀ − P₁`.
//!
//! Two backward paths map `∂L/∂B` to `∂L/∂S₀` and `∂L/∂S₁`:
//!
//! * [`Aisc::backward_svd`] differentiates through the SVD, solving the 2×2
//!   system for each element of `Ω_U = Uᵀ ∂U/∂S_ij` by Cramer's rule.
//! * [`Aisc::backward_projector`] differentiates the closed form
//!   `P = S (SᵀS)⁻¹ Sᵀ`. It never touches the SVD and stays defined when the
//!   two singular values coincide.

use crate::error::{Error, Result};
use crate::kernels::{self, Matrix, ThinSvd};

/// Minimum `d₂ / d₁` for a shape to count as non-collinear.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Minimum `(d₁² − d₂²) / d₁²` for the SVD backward path.
pub const SPECTRUM_GAP_TOLERANCE: f64 = 1e-8;

/// An m×2 matrix of landmark coordinates, one `(x, y)` row per landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkShape {
    points: Matrix,
}

impl LandmarkShape {
    /// Validates `m ≥ 3`, two columns, finite entries and non-collinearity.
    pub fn new(points: Matrix) -> Result<Self> {
        if points.cols() != 2 {
            return Err(Error::Shape(format!(
                "landmark shapes have 2 columns, got {}",
                points.cols()
            )));
        }
        if points.rows() < 3 {
            return Err(Error::Shape(format!(
                "need at least 3 landmarks, got {}",
                points.rows()
            )));
        }
        if !points.is_finite() {
            return Err(Error::InvalidInput("non-finite landmark coordinate".into()));
        }
        check_rank(&points, "landmarks")?;
        Ok(LandmarkShape { points })
    }

    pub fn from_points(points: &[[f64; 2]]) -> Result<Self> {
        LandmarkShape::new(Matrix::from_rows(points)?)
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn landmark_count(&self) -> usize {
        self.points.rows()
    }

    /// `S·A` for a 2×2 matrix `A`.
    pub fn transform(&self, a: &Matrix) -> Result<Self> {
        LandmarkShape::new(self.points.matmul(a)?)
    }
}

fn check_rank(points: &Matrix, what: &str) -> Result<ThinSvd> {
    let svd = kernels::thin_svd(points)?;
    let (d1, d2) = (svd.d[0], svd.d[svd.d.len() - 1]);
    if d1.is_nan() || d1 <= 0.0 || d2 / d1 <= RANK_TOLERANCE {
        return Err(Error::DegenerateShape(format!(
            "{what} are collinear or coincident (d₂/d₁ = {:e})",
            if d1 > 0.0 { d2 / d1 } else { 0.0 }
        )));
    }
    Ok(svd)
}

/// Thin SVD of a (possibly centred) shape together with its projector.
#[derive(Debug, Clone, PartialEq)]
pub struct GrassmannDecomposition {
    /// The matrix that was decomposed: the shape itself, or its centred copy.
    pub basis_input: Matrix,
    pub svd: ThinSvd,
    /// `P = UUᵀ`, m×m.
    pub projector: Matrix,
    /// Whether the landmark centroid was removed before decomposing.
    pub centered: bool,
}

impl GrassmannDecomposition {
    pub fn landmark_count(&self) -> usize {
        self.projector.rows()
    }
}

/// The comparison feature `B = P₀ − P₁` (symmetric, m×m).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCompareFeature {
    pub b: Matrix,
}

impl ShapeCompareFeature {
    pub fn frobenius_norm(&self) -> f64 {
        self.b.frobenius_norm()
    }
}

/// Principal-angle summary of the geodesic between two shape subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicInfo {
    /// Cosines of the principal angles, descending, in `[0, 1]`.
    pub principal_cosines: Vec<f64>,
    /// Matching sines, ascending; accurate where the cosines are close to 1.
    pub principal_sines: Vec<f64>,
    /// Spectrum of `B`, descending.
    pub geodesic_generator_eigenvalues: Vec<f64>,
}

impl GeodesicInfo {
    /// Principal angles in radians, ascending.
    pub fn principal_angles(&self) -> Vec<f64> {
        self.principal_cosines
            .iter()
            .zip(&self.principal_sines)
            .map(|(c, s)| s.atan2(*c))
            .collect()
    }
}

/// Which denominator the closed-form `Ω_U` element uses.
///
/// Solving the 2×2 system `[D_l D_k; D_k D_l]·[Ω_U; Ω_V] = [U_ik V_jl; −U_il V_jk]`
/// gives determinant `D_l² − D_k²`. The `Sum` variant (`D_l² + D_k²`) exists
/// only so the two forms can be compared against finite differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaDenominator {
    Difference,
    Sum,
}

/// The AISC layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Aisc {
    /// Subtract the landmark centroid before decomposing, so translations are
    /// absorbed along with linear maps.
    pub centering: bool,
}

impl Default for Aisc {
    fn default() -> Self {
        Aisc { centering: true }
    }
}

impl Aisc {
    pub fn new(centering: bool) -> Self {
        Aisc { centering }
    }

    fn prepared(&self, s: &LandmarkShape) -> Matrix {
        if self.centering {
            s.points().center_columns()
        } else {
            s.points().clone()
        }
    }

    pub fn shape_to_projector(&self, s: &LandmarkShape) -> Result<GrassmannDecomposition> {
        let basis_input = self.prepared(s);
        let svd = check_rank(&basis_input, if self.centering { "centred landmarks" } else { "landmarks" })?;
        let projector = svd.u.matmul(&svd.u.transpose())?;
        Ok(GrassmannDecomposition {
            basis_input,
            svd,
            projector,
            centered: self.centering,
        })
    }

    pub fn forward(&self, s0: &LandmarkShape, s1: &LandmarkShape) -> Result<ShapeCompareFeature> {
        Ok(self.forward_with_decompositions(s0, s1)?.0)
    }

    /// Forward pass that also returns both decompositions for reuse in backward.
    pub fn forward_with_decompositions(
        &self,
        s0: &LandmarkShape,
        s1: &LandmarkShape,
    ) -> Result<(ShapeCompareFeature, GrassmannDecomposition, GrassmannDecomposition)> {
        if s0.landmark_count() != s1.landmark_count() {
            return Err(Error::Shape(format!(
                "landmark counts differ: {} vs {}",
                s0.landmark_count(),
                s1.landmark_count()
            )));
        }
        let d0 = self.shape_to_projector(s0)?;
        let d1 = self.shape_to_projector(s1)?;
        let feature = compare_projectors(&d0, &d1)?;
        Ok((feature, d0, d1))
    }

    /// `∂L/∂S₀, ∂L/∂S₁` through the SVD Jacobian.
    ///
    /// `upstream` is `∂L/∂B` (m×m, need not be symmetric). Fails with
    /// [`Error::DegenerateSpectrum`] when the singular values of either shape
    /// are too close for the Jacobian system to be solved.
    pub fn backward_svd(
        &self,
        decomp0: &GrassmannDecomposition,
        decomp1: &GrassmannDecomposition,
        upstream: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        self.backward_svd_with(decomp0, decomp1, upstream, OmegaDenominator::Difference)
    }

    /// [`Aisc::backward_svd`] with an explicit choice of `Ω_U` denominator.
    pub fn backward_svd_with(
        &self,
        decomp0: &GrassmannDecomposition,
        decomp1: &GrassmannDecomposition,
        upstream: &Matrix,
        denominator: OmegaDenominator,
    ) -> Result<(Matrix, Matrix)> {
        check_backward_dims(decomp0, decomp1, upstream)?;
        // ∂L/∂P₀ = ∂L/∂B and ∂L/∂P₁ = −∂L/∂B.
        let g0 = svd_shape_gradient(decomp0, upstream, denominator)?;
        let g1 = svd_shape_gradient(decomp1, &upstream.scale(-1.0), denominator)?;
        Ok((g0, g1))
    }

    /// `∂L/∂S₀, ∂L/∂S₁` through `dP = (I−P)·dS·S⁺ + (S⁺)ᵀ·dSᵀ·(I−P)`.
    ///
    /// Recomputes the projectors from the closed form; the SVD inside the
    /// decompositions is not used.
    pub fn backward_projector(
        &self,
        decomp0: &GrassmannDecomposition,
        decomp1: &GrassmannDecomposition,
        upstream: &Matrix,
    ) -> Result<(Matrix, Matrix)> {
        check_backward_dims(decomp0, decomp1, upstream)?;
        let g0 = projector_shape_gradient(decomp0, upstream)?;
        let g1 = projector_shape_gradient(decomp1, &upstream.scale(-1.0))?;
        Ok((g0, g1))
    }

    pub fn geodesic_info(
        &self,
        feature: &ShapeCompareFeature,
        decomp0: &GrassmannDecomposition,
        decomp1: &GrassmannDecomposition,
    ) -> Result<GeodesicInfo> {
        let cross = decomp0.svd.u.t_matmul(&decomp1.svd.u)?;
        let principal_cosines = kernels::thin_svd(&cross)?
            .d
            .into_iter()
            .map(|c| c.clamp(0.0, 1.0))
            .collect();
        // Component of U₁ outside span(U₀); its singular values are the sines.
        let u1 = &decomp1.svd.u;
        let residual = u1.sub(&decomp0.projector.matmul(u1)?)?;
        let mut principal_sines: Vec<f64> = kernels::thin_svd(&residual)?
            .d
            .into_iter()
            .map(|s| s.clamp(0.0, 1.0))
            .collect();
        principal_sines.reverse();
        let spectrum = kernels::sym_eigen(&feature.b)?.values;
        Ok(GeodesicInfo {
            principal_cosines,
            principal_sines,
            geodesic_generator_eigenvalues: spectrum,
        })
    }
}

/// `B = P₀ − P₁`.
pub fn compare_projectors(
    d0: &GrassmannDecomposition,
    d1: &GrassmannDecomposition,
) -> Result<ShapeCompareFeature> {
    Ok(ShapeCompareFeature {
        b: d0.projector.sub(&d1.projector)?,
    })
}

fn check_backward_dims(
    d0: &GrassmannDecomposition,
    d1: &GrassmannDecomposition,
    upstream: &Matrix,
) -> Result<()> {
    let m = d0.landmark_count();
    if d1.landmark_count() != m || upstream.dims() != (m, m) {
        return Err(Error::Shape(format!(
            "backward expects two {m}-landmark decompositions and an {m}x{m} upstream, got {} landmarks and {}x{}",
            d1.landmark_count(),
            upstream.rows(),
            upstream.cols()
        )));
    }
    Ok(())
}

/// Relative gap `(d₁² − d₂²)/d₁²` between the two leading singular values.
pub fn spectrum_gap(svd: &ThinSvd) -> f64 {
    let (d1, d2) = (svd.d[0], svd.d[1]);
    (d1 * d1 - d2 * d2) / (d1 * d1)
}

/// Gradient of `L` with respect to the decomposed shape, given `∂L/∂P`.
///
/// Works with a full orthogonal `U` (m×m): the trailing m−k columns complete
/// the basis and carry `D_k = 0`, and `V_jk` is taken as zero for k ≥ 2 since
/// `V` is only 2×2. For each `(i, j)` the gradient is the full contraction
/// `Σ_{a,l} (∂L/∂U)_{al} (U Ω_U^{ij})_{al} = Σ_{k,l} (Uᵀ ∂L/∂U)_{kl} Ω_{U,kl}^{ij}`.
fn svd_shape_gradient(
    decomp: &GrassmannDecomposition,
    grad_p: &Matrix,
    denominator: OmegaDenominator,
) -> Result<Matrix> {
    let svd = &decomp.svd;
    let rank = svd.d.len();
    let m = decomp.landmark_count();
    let gap = spectrum_gap(svd);
    if gap.is_nan() || gap <= SPECTRUM_GAP_TOLERANCE {
        return Err(Error::DegenerateSpectrum {
            gap,
            threshold: SPECTRUM_GAP_TOLERANCE,
        });
    }

    // ∂L/∂U = (G + Gᵀ)·U, which is 2·G·U for symmetric G.
    let g_sym = grad_p.add(&grad_p.transpose())?;
    let grad_u = g_sym.matmul(&svd.u)?;
    let full_u = kernels::complete_orthonormal_basis(&svd.u)?;
    let contracted = full_u.t_matmul(&grad_u)?; // m×rank

    let sing = |k: usize| if k < rank { svd.d[k] } else { 0.0 };
    let v = &svd.v;
    let mut grad = Matrix::zeros(m, rank);
    for i in 0..m {
        for j in 0..rank {
            let mut acc = 0.0;
            for l in 0..rank {
                let dl = sing(l);
                let u_il = full_u[(i, l)];
                let v_jl = v[(j, l)];
                for k in 0..m {
                    if k == l {
                        continue;
                    }
                    let dk = sing(k);
                    let v_jk = if k < rank { v[(j, k)] } else { 0.0 };
                    let omega = omega_u(dl, dk, full_u[(i, k)] * v_jl, -u_il * v_jk, denominator);
                    acc += contracted[(k, l)] * omega;
                }
            }
            grad[(i, j)] = acc;
        }
    }
    Ok(uncenter_gradient(grad, decomp.centered))
}

/// `Ω_U,kl` from the system
/// `D_l Ω_U + D_k Ω_V = r1`, `D_k Ω_U + D_l Ω_V = r2`.
#[inline]
fn omega_u(dl: f64, dk: f64, r1: f64, r2: f64, denominator: OmegaDenominator) -> f64 {
    // Cramer's rule on [[dl, dk], [dk, dl]].
    let numerator = r1 * dl - dk * r2;
    match denominator {
        OmegaDenominator::Difference => numerator / (dl * dl - dk * dk),
        OmegaDenominator::Sum => numerator / (dl * dl + dk * dk),
    }
}

fn projector_shape_gradient(decomp: &GrassmannDecomposition, grad_p: &Matrix) -> Result<Matrix> {
    let s = &decomp.basis_input;
    let gram = s.t_matmul(s)?;
    // W = S (SᵀS)⁻¹ = (S⁺)ᵀ
    let w = kernels::cholesky_solve(&gram, &s.transpose())
        .map_err(|_| Error::DegenerateShape("SᵀS is singular".into()))?
        .transpose();
    let g_sym = grad_p.add(&grad_p.transpose())?;
    let t = g_sym.matmul(&w)?;
    // (I − P)·T with P = W·Sᵀ
    let pt = w.matmul(&s.t_matmul(&t)?)?;
    let grad = t.sub(&pt)?;
    Ok(uncenter_gradient(grad, decomp.centered))
}

/// Chains a gradient with respect to the centred shape back through the
/// centring map, which is the symmetric projection `I − 11ᵀ/m`.
fn uncenter_gradient(grad: Matrix, centered: bool) -> Matrix {
    if centered {
        grad.center_columns()
    } else {
        grad
    }
}

/// `S (SᵀS)⁻¹ Sᵀ` without any SVD.
pub fn closed_form_projector(s: &Matrix) -> Result<Matrix> {
    let gram = s.t_matmul(s)?;
    let w = kernels::cholesky_solve(&gram, &s.transpose())
        .map_err(|_| Error::DegenerateShape("SᵀS is singular".into()))?;
    s.matmul(&w)
}
