//! Dense vector primitives, normalized cosine distance and EMA arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A non-empty vector of finite `f64` components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension {
                expected: 1,
                actual: 0,
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "component {i} is {}",
                values[i]
            )));
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Returns `self / ‖self‖`, rejecting the zero vector.
    pub fn normalized(&self) -> Result<Vector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::DegenerateVector("cannot normalize zero vector".into()));
        }
        Ok(Vector(self.0.iter().map(|v| v / n).collect()))
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Vector::new(values)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl AsRef<[f64]> for Vector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Distance, and its gradients with respect to both arguments.
#[derive(Clone, Debug)]
pub struct DistanceGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector(
            "cosine distance of a zero vector".into(),
        ));
    }
    Ok((na, nb))
}

/// Normalized cosine distance `1 - (cossim(a, b) + 1) / 2`, in `[0, 1]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = check_pair(a, b)?;
    let cos = (dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    Ok(1.0 - (cos + 1.0) / 2.0)
}

/// [`cosine_distance`] together with its analytic gradient.
///
/// The gradient is taken through the implicit normalization of both
/// arguments, so for unit inputs it is tangent to the sphere.
pub fn cosine_distance_grad(a: &[f64], b: &[f64]) -> Result<DistanceGrad> {
    let (na, nb) = check_pair(a, b)?;
    let raw = dot(a, b) / (na * nb);
    let cos = raw.clamp(-1.0, 1.0);
    // d(dist)/d(cos) = -1/2; d(cos)/da = b/(|a||b|) - cos * a/|a|^2
    let inv = 1.0 / (na * nb);
    let grad_a = a
        .iter()
        .zip(b)
        .map(|(x, y)| -0.5 * (y * inv - raw * x / (na * na)))
        .collect();
    let grad_b = a
        .iter()
        .zip(b)
        .map(|(x, y)| -0.5 * (x * inv - raw * y / (nb * nb)))
        .collect();
    Ok(DistanceGrad {
        value: 1.0 - (cos + 1.0) / 2.0,
        grad_a,
        grad_b,
    })
}

/// EMA smoothing factor `gamma`, with step `s = 2 / (gamma + 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaParams {
    gamma: f64,
}

impl EmaParams {
    /// `gamma` must be at least 1 so that the step lies in `(0, 1]`.
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 1.0 {
            return Err(Error::Config(format!(
                "smoothing factor gamma must be finite and >= 1, got {gamma}"
            )));
        }
        Ok(EmaParams { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn step(&self) -> f64 {
        2.0 / (self.gamma + 1.0)
    }
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("{what} is {x}")))
    }
}

/// One EMA update: `current * (1 - s) + x * s`.
pub fn ema_step(current: f64, x: f64, params: EmaParams) -> Result<f64> {
    finite(current, "EMA state")?;
    finite(x, "EMA observation")?;
    let s = params.step();
    Ok(current * (1.0 - s) + x * s)
}

/// Closed-form EMA over an ordered batch of observations.
///
/// Equals folding [`ema_step`] over `xs` in order.
pub fn ema_batch(current: f64, xs: &[f64], params: EmaParams) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch("ema_batch needs at least one observation".into()));
    }
    finite(current, "EMA state")?;
    let s = params.step();
    let keep = 1.0 - s;
    let h = xs.len();
    let mut acc = 0.0;
    for (j, &x) in xs.iter().enumerate() {
        finite(x, "EMA observation")?;
        acc += x * keep.powi((h - 1 - j) as i32);
    }
    Ok(current * keep.powi(h as i32) + s * acc)
}

/// Central finite-difference gradient of `f` at `at`.
pub fn finite_difference_gradient<F>(mut f: F, at: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut x = at.to_vec();
    let mut grad = Vec::with_capacity(at.len());
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = finite(f(&x), "function value")?;
        x[i] = orig - step;
        let minus = finite(f(&x), "function value")?;
        x[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}
