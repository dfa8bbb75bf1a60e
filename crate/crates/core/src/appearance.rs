//! Appearance comparison: element-wise product of two feature vectors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceVector {
    values: Vec<f64>,
}

impl AppearanceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("appearance vectors need at least one entry".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite appearance value".into()));
        }
        Ok(AppearanceVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Copy scaled to unit Euclidean norm (unchanged if the norm is zero).
    pub fn l2_normalized(&self) -> AppearanceVector {
        let n = crate::kernels::norm(&self.values);
        if n == 0.0 {
            return self.clone();
        }
        AppearanceVector {
            values: self.values.iter().map(|v| v / n).collect(),
        }
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "appearance dimensions differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// `out_i = a_i · b_i`.
pub fn ac_forward(a: &AppearanceVector, b: &AppearanceVector) -> Result<AppearanceVector> {
    check_dims(&a.values, &b.values)?;
    Ok(AppearanceVector {
        values: a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect(),
    })
}

/// Product rule: `(upstream ∘ b, upstream ∘ a)`.
pub fn ac_backward(
    a: &AppearanceVector,
    b: &AppearanceVector,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(&a.values, &b.values)?;
    check_dims(&a.values, upstream)?;
    let grad_a = upstream.iter().zip(&b.values).map(|(g, y)| g * y).collect();
    let grad_b = upstream.iter().zip(&a.values).map(|(g, x)| g * x).collect();
    Ok((grad_a, grad_b))
}
