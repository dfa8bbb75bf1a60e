//! Per-pair feature extraction and end-to-end gradients.
//!
//! A pair is turned into two comparison features: the flattened AISC matrix
//! `B` (m² values, row-major) and the appearance product `a ∘ b`. Trained
//! branches see these after per-feature standardisation.

use serde::{Deserialize, Serialize};

use crate::appearance::{ac_backward, ac_forward, AppearanceVector};
use crate::data::PairSample;
use crate::error::{Error, Result};
use crate::grassmann::Aisc;
use crate::kernels::Matrix;
use crate::network::{softmax, softmax_xent, FusionMode, PairModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PairFeatures {
    /// Flattened `B = P_a − P_b`.
    pub shape: Vec<f64>,
    /// `a ∘ b`, when the pair carries appearance vectors.
    pub appearance: Option<Vec<f64>>,
}

fn prepared_appearance(
    pair: &(AppearanceVector, AppearanceVector),
    normalize: bool,
) -> (AppearanceVector, AppearanceVector) {
    if normalize {
        (pair.0.l2_normalized(), pair.1.l2_normalized())
    } else {
        pair.clone()
    }
}

pub fn extract_features(sample: &PairSample, aisc: &Aisc, normalize_appearance: bool) -> Result<PairFeatures> {
    let b = aisc.forward(&sample.shape_a, &sample.shape_b)?;
    let appearance = match &sample.appearance {
        Some(pair) => {
            let (a, b) = prepared_appearance(pair, normalize_appearance);
            Some(ac_forward(&a, &b)?.values().to_vec())
        }
        None => None,
    };
    Ok(PairFeatures {
        shape: b.b.into_vec(),
        appearance,
    })
}

/// Per-feature affine map `x ↦ (x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation per feature; constant features
    /// keep scale 1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        Self::fit_odd(rows, dim, 0)
    }

    /// Like [`Standardizer::fit`], but the first `odd` features are treated as
    /// sign-symmetric: their mean is fixed at 0 and their scale is the root
    /// mean square, so standardising `−x` gives exactly `−` the standardised `x`.
    pub fn fit_odd<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize, odd: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        let mut m2 = vec![0.0; dim];
        // Welford's update keeps the variance accurate for tiny spreads.
        for row in rows {
            n += 1;
            for ((mu, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(row) {
                let delta = x - *mu;
                *mu += delta / n as f64;
                *s += delta * (x - *mu);
            }
        }
        for (mu, s) in mean.iter_mut().zip(m2.iter_mut()).take(odd) {
            *s += n as f64 * *mu * *mu;
            *mu = 0.0;
        }
        let scale = m2
            .iter()
            .map(|&s| {
                let sd = if n > 0 { (s / n as f64).sqrt() } else { 0.0 };
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Chains a gradient with respect to the standardised input back to the raw input.
    pub fn backward(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter().zip(&self.scale).map(|(g, s)| g / s).collect()
    }
}

/// Gradients of the training loss with respect to the raw pair inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradients {
    pub shape_a: Matrix,
    pub shape_b: Matrix,
    pub appearance: Option<(Vec<f64>, Vec<f64>)>,
}

impl PairModel {
    /// Loss of one pair (sum over branches of `−ln p(label)`, using the
    /// sign-averaged probability for pair-symmetric branches) and its gradient
    /// with respect to both landmark shapes and appearance vectors.
    ///
    /// The shape gradient goes through the SVD backward path, falling back to
    /// the projector path when a shape's singular values nearly coincide.
    pub fn loss_and_input_gradients(&self, sample: &PairSample) -> Result<(f64, InputGradients)> {
        let aisc = Aisc::new(self.config.centering);
        let (feature, d0, d1) = aisc.forward_with_decompositions(&sample.shape_a, &sample.shape_b)?;
        let m = feature.b.rows();
        let label = sample.label.class_index();
        let shape_raw = feature.b.as_slice();

        let app_pair = sample
            .appearance
            .as_ref()
            .map(|p| prepared_appearance(p, self.config.normalize_appearance));
        let app_raw = match &app_pair {
            Some((a, b)) => Some(ac_forward(a, b)?.values().to_vec()),
            None => None,
        };
        if app_raw.is_some() != self.appearance_dim.is_some() {
            return Err(Error::Data("pair and model disagree on appearance inputs".into()));
        }

        let mut loss = 0.0;
        let mut grad_b = vec![0.0; m * m];
        let mut grad_app = app_raw.as_ref().map(|a| vec![0.0; a.len()]);

        match self.config.fusion {
            FusionMode::Score => {
                let branch = self.shape.as_ref().ok_or_else(missing_branch)?;
                let (l, g) = branch_loss_grad(branch, shape_raw, label)?;
                loss += l;
                grad_b = g;
                if let (Some(branch), Some(x)) = (&self.appearance, &app_raw) {
                    let (l, g) = branch_loss_grad(branch, x, label)?;
                    loss += l;
                    grad_app = Some(g);
                }
            }
            FusionMode::Concat => {
                let branch = self.joint.as_ref().ok_or_else(missing_branch)?;
                let mut x = shape_raw.to_vec();
                if let Some(a) = &app_raw {
                    x.extend_from_slice(a);
                }
                let (l, g) = branch_loss_grad(branch, &x, label)?;
                loss += l;
                grad_b.copy_from_slice(&g[..m * m]);
                if let Some(ga) = grad_app.as_mut() {
                    ga.copy_from_slice(&g[m * m..]);
                }
            }
        }

        let upstream = Matrix::from_vec(m, m, grad_b)?;
        let (shape_a, shape_b) = match aisc.backward_svd(&d0, &d1, &upstream) {
            Err(Error::DegenerateSpectrum { .. }) => aisc.backward_projector(&d0, &d1, &upstream)?,
            other => other?,
        };
        let appearance = match (&app_pair, grad_app) {
            (Some((a, b)), Some(g)) => {
                // Normalisation, when enabled, is treated as fixed preprocessing.
                Some(ac_backward(a, b, &g)?)
            }
            _ => None,
        };
        Ok((
            loss,
            InputGradients {
                shape_a,
                shape_b,
                appearance,
            },
        ))
    }
}

fn missing_branch() -> Error {
    Error::State("model is missing the branch required by its fusion mode".into())
}

fn branch_loss_grad(branch: &crate::network::Branch, raw: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let x = branch.standardizer.apply(raw);
    if branch.odd_inputs == 0 {
        let (logits, cache) = branch.net.forward(&x)?;
        let (loss, g) = softmax_xent(&logits, label);
        let (_, gin) = branch.net.backward(&cache, &g)?;
        return Ok((loss, branch.standardizer.backward(&gin)));
    }
    // L = −ln ½(p_y(x) + p_y(x̃)), x̃ = x with its odd part negated.
    let flipped = crate::network::flip_odd(&x, branch.odd_inputs);
    let (z_plus, c_plus) = branch.net.forward(&x)?;
    let (z_minus, c_minus) = branch.net.forward(&flipped)?;
    let (p_plus, p_minus) = (softmax(&z_plus), softmax(&z_minus));
    let mean = 0.5 * (p_plus[label] + p_minus[label]);
    let dlogits = |p: &[f64]| -> Vec<f64> {
        // ∂p_y/∂z = p_y (e_y − p)
        (0..p.len())
            .map(|k| {
                let e = if k == label { 1.0 } else { 0.0 };
                -0.5 / mean * p[label] * (e - p[k])
            })
            .collect()
    };
    let (_, g_plus) = branch.net.backward(&c_plus, &dlogits(&p_plus))?;
    let (_, g_minus) = branch.net.backward(&c_minus, &dlogits(&p_minus))?;
    let g_minus = crate::network::flip_odd(&g_minus, branch.odd_inputs);
    let gin: Vec<f64> = g_plus.iter().zip(&g_minus).map(|(a, b)| a + b).collect();
    Ok((-mean.ln(), branch.standardizer.backward(&gin)))
}
