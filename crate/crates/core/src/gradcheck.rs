//! Finite-difference verification of the AISC backward paths.
//!
//! The scalar probed is `L(S₀, S₁) = Σ G ∘ B(S₀, S₁)` for a fixed random
//! symmetric `G`, so `∂L/∂B = G`. Central differences use only the forward
//! pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grassmann::{spectrum_gap, Aisc, LandmarkShape, OmegaDenominator, SPECTRUM_GAP_TOLERANCE};
use crate::kernels::Matrix;

/// Relative FD step; the absolute step is this times the largest |entry|.
pub const RELATIVE_STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference(
    x: &Matrix,
    h: f64,
    mut f: impl FnMut(&Matrix) -> Result<f64>,
) -> Result<Matrix> {
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let orig = probe[(r, c)];
            probe[(r, c)] = orig + h;
            let plus = f(&probe)?;
            probe[(r, c)] = orig - h;
            let minus = f(&probe)?;
            probe[(r, c)] = orig;
            grad[(r, c)] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// `‖a − b‖_F / max(‖a‖_F, ‖b‖_F)`, or 0 when both vanish.
pub fn relative_error(a: &Matrix, b: &Matrix) -> f64 {
    let scale = a.frobenius_norm().max(b.frobenius_norm());
    let diff = a.sub(b).expect("same dimensions").frobenius_norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Landmark counts cycled through the trials.
    pub landmark_counts: Vec<usize>,
    pub trials: usize,
    pub centering: bool,
    pub fd_tolerance: f64,
    pub path_tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            seed: 0,
            landmark_counts: vec![5, 10, 68],
            trials: 100,
            centering: true,
            fd_tolerance: 1e-4,
            path_tolerance: 1e-8,
        }
    }
}

/// Worst-case errors over a gradcheck run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct GradcheckSummary {
    pub trials: usize,
    /// SVD path vs finite differences.
    pub svd_max_rel_err: f64,
    /// Projector path vs finite differences.
    pub projector_max_rel_err: f64,
    /// SVD path vs projector path.
    pub path_max_rel_diff: f64,
    /// The `D_l² + D_k²` variant of the Ω_U closed form vs finite differences.
    pub sum_denominator_max_rel_err: f64,
    /// Smallest relative singular-value gap encountered.
    pub min_spectrum_gap: f64,
    pub fd_tolerance: f64,
    pub path_tolerance: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.svd_max_rel_err < self.fd_tolerance
            && self.projector_max_rel_err < self.fd_tolerance
            && self.path_max_rel_diff <= self.path_tolerance
    }

    /// Which Ω_U denominator agrees with finite differences.
    pub fn matching_denominator(&self) -> Option<OmegaDenominator> {
        let diff_ok = self.svd_max_rel_err < self.fd_tolerance;
        let sum_ok = self.sum_denominator_max_rel_err < self.fd_tolerance;
        match (diff_ok, sum_ok) {
            (true, false) => Some(OmegaDenominator::Difference),
            (false, true) => Some(OmegaDenominator::Sum),
            _ => None,
        }
    }

    pub fn to_table(&self) -> String {
        let verdict = |e: f64, tol: f64, strict: bool| {
            if (strict && e < tol) || (!strict && e <= tol) {
                "ok"
            } else {
                "FAIL"
            }
        };
        let mut out = String::new();
        out.push_str(&format!("trials={}\n", self.trials));
        out.push_str(&format!("min_spectrum_gap={:e}\n", self.min_spectrum_gap));
        out.push_str(&format!(
            "svd_vs_fd          max_rel_err={:.3e}  tol={:e}  {}\n",
            self.svd_max_rel_err,
            self.fd_tolerance,
            verdict(self.svd_max_rel_err, self.fd_tolerance, true)
        ));
        out.push_str(&format!(
            "projector_vs_fd    max_rel_err={:.3e}  tol={:e}  {}\n",
            self.projector_max_rel_err,
            self.fd_tolerance,
            verdict(self.projector_max_rel_err, self.fd_tolerance, true)
        ));
        out.push_str(&format!(
            "svd_vs_projector   max_rel_err={:.3e}  tol={:e}  {}\n",
            self.path_max_rel_diff,
            self.path_tolerance,
            verdict(self.path_max_rel_diff, self.path_tolerance, false)
        ));
        out.push_str(&format!(
            "sum_denominator    max_rel_err={:.3e}  (diagnostic)\n",
            self.sum_denominator_max_rel_err
        ));
        let form = match self.matching_denominator() {
            Some(OmegaDenominator::Difference) => "difference (D_l^2 - D_k^2)",
            Some(OmegaDenominator::Sum) => "sum (D_l^2 + D_k^2)",
            None => "undetermined",
        };
        out.push_str(&format!("matching_denominator={form}\n"));
        out
    }
}

/// Uniform random shape in `[-1, 1]²`, resampled until it is well conditioned.
pub fn random_shape(rng: &mut impl Rng, m: usize, aisc: &Aisc) -> LandmarkShape {
    loop {
        let pts: Vec<[f64; 2]> = (0..m)
            .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
            .collect();
        let Ok(shape) = LandmarkShape::from_points(&pts) else {
            continue;
        };
        match aisc.shape_to_projector(&shape) {
            Ok(d) if spectrum_gap(&d.svd) > 1e3 * SPECTRUM_GAP_TOLERANCE => return shape,
            _ => continue,
        }
    }
}

pub fn random_symmetric(rng: &mut impl Rng, m: usize) -> Matrix {
    let mut g = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = rng.gen_range(-1.0..1.0);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// FD gradient of `Σ upstream ∘ B` with respect to one of the two shapes.
pub fn fd_shape_gradient(
    aisc: &Aisc,
    s0: &LandmarkShape,
    s1: &LandmarkShape,
    upstream: &Matrix,
    wrt_second: bool,
) -> Result<Matrix> {
    let target = if wrt_second { s1 } else { s0 };
    let h = RELATIVE_STEP * target.points().max_abs().max(f64::MIN_POSITIVE);
    central_difference(target.points(), h, |x| {
        let moved = LandmarkShape::new(x.clone())?;
        let b = if wrt_second {
            aisc.forward(s0, &moved)?
        } else {
            aisc.forward(&moved, s1)?
        };
        b.b.inner(upstream)
    })
}

pub fn run(config: &GradcheckConfig) -> Result<GradcheckSummary> {
    if config.landmark_counts.is_empty() || config.landmark_counts.iter().any(|&m| m < 3) {
        return Err(Error::Config("landmark counts must be ≥ 3".into()));
    }
    if config.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let aisc = Aisc::new(config.centering);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut summary = GradcheckSummary {
        min_spectrum_gap: f64::INFINITY,
        fd_tolerance: config.fd_tolerance,
        path_tolerance: config.path_tolerance,
        ..Default::default()
    };
    for trial in 0..config.trials {
        let m = config.landmark_counts[trial % config.landmark_counts.len()];
        let s0 = random_shape(&mut rng, m, &aisc);
        let s1 = random_shape(&mut rng, m, &aisc);
        let upstream = random_symmetric(&mut rng, m);
        let (_, d0, d1) = aisc.forward_with_decompositions(&s0, &s1)?;
        summary.min_spectrum_gap = summary
            .min_spectrum_gap
            .min(spectrum_gap(&d0.svd))
            .min(spectrum_gap(&d1.svd));

        let fd0 = fd_shape_gradient(&aisc, &s0, &s1, &upstream, false)?;
        let fd1 = fd_shape_gradient(&aisc, &s0, &s1, &upstream, true)?;
        let (svd0, svd1) = aisc.backward_svd(&d0, &d1, &upstream)?;
        let (prj0, prj1) = aisc.backward_projector(&d0, &d1, &upstream)?;
        let (sum0, sum1) = aisc.backward_svd_with(&d0, &d1, &upstream, OmegaDenominator::Sum)?;

        let worst = |a: f64, b: f64, c: f64| a.max(b).max(c);
        summary.svd_max_rel_err = worst(
            summary.svd_max_rel_err,
            relative_error(&svd0, &fd0),
            relative_error(&svd1, &fd1),
        );
        summary.projector_max_rel_err = worst(
            summary.projector_max_rel_err,
            relative_error(&prj0, &fd0),
            relative_error(&prj1, &fd1),
        );
        summary.path_max_rel_diff = worst(
            summary.path_max_rel_diff,
            relative_error(&svd0, &prj0),
            relative_error(&svd1, &prj1),
        );
        summary.sum_denominator_max_rel_err = worst(
            summary.sum_denominator_max_rel_err,
            relative_error(&sum0, &fd0),
            relative_error(&sum1, &fd1),
        );
        summary.trials += 1;
    }
    Ok(summary)
}
