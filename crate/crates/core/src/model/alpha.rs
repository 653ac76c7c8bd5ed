//! Built-in nonlinearities `α` for the integral term `S(u)`.
//!
//! Every family is `C²` with `α(0) = α′(0) = 0` and certified constants
//! `C1`, `C2` such that `|α(u)| ≤ C1|u|`, `|α′(u)| ≤ C1`, `|α″(u)| ≤ C2`.

use serde::{Deserialize, Serialize};

use crate::error::{KinvError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum AlphaSpec {
    Zero,
    /// `c (√(1+u²) − 1)`
    #[serde(rename = "softabs")]
    SoftAbs { c: f64 },
    /// `c u³ / (1 + u²)`
    CubicSaturating { c: f64 },
}

impl Default for AlphaSpec {
    fn default() -> Self {
        AlphaSpec::Zero
    }
}

impl AlphaSpec {
    pub fn check(&self) -> Result<()> {
        match *self {
            AlphaSpec::Zero => Ok(()),
            AlphaSpec::SoftAbs { c } | AlphaSpec::CubicSaturating { c } => {
                if c.is_finite() && c > 0.0 {
                    Ok(())
                } else {
                    Err(KinvError::Config(format!("alpha scale c must be positive, got {c}")))
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, AlphaSpec::Zero)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlphaSpec::Zero => "zero",
            AlphaSpec::SoftAbs { .. } => "softabs",
            AlphaSpec::CubicSaturating { .. } => "cubic_saturating",
        }
    }

    /// Bound on `|α(u)|/|u|` and `|α′(u)|`.
    pub fn c1(&self) -> f64 {
        match *self {
            AlphaSpec::Zero => 0.0,
            AlphaSpec::SoftAbs { c } => c,
            // sup of u²(3+u²)/(1+u²)² is 9/8, attained at u² = 3
            AlphaSpec::CubicSaturating { c } => 1.125 * c,
        }
    }

    /// Bound on `|α″(u)|`.
    pub fn c2(&self) -> f64 {
        match *self {
            AlphaSpec::Zero => 0.0,
            AlphaSpec::SoftAbs { c } => c,
            // sup of |2u(3−u²)|/(1+u²)³ is about 1.4571
            AlphaSpec::CubicSaturating { c } => 1.5 * c,
        }
    }

    pub fn value(&self, u: f64) -> f64 {
        match *self {
            AlphaSpec::Zero => 0.0,
            // u²/(√(1+u²)+1) avoids cancellation near zero
            AlphaSpec::SoftAbs { c } => c * u * u / ((1.0 + u * u).sqrt() + 1.0),
            AlphaSpec::CubicSaturating { c } => c * u * u * u / (1.0 + u * u),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            AlphaSpec::Zero => 0.0,
            AlphaSpec::SoftAbs { c } => c * u / (1.0 + u * u).sqrt(),
            AlphaSpec::CubicSaturating { c } => {
                let s = 1.0 + u * u;
                c * u * u * (3.0 + u * u) / (s * s)
            }
        }
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        match *self {
            AlphaSpec::Zero => 0.0,
            AlphaSpec::SoftAbs { c } => {
                let s = 1.0 + u * u;
                c / (s * s.sqrt())
            }
            AlphaSpec::CubicSaturating { c } => {
                let s = 1.0 + u * u;
                2.0 * c * u * (3.0 - u * u) / (s * s * s)
            }
        }
    }

    /// `(α(u), α′(u), α″(u))`.
    pub fn eval(&self, u: f64) -> (f64, f64, f64) {
        (self.value(u), self.derivative(u), self.second_derivative(u))
    }
}

/// Outcome of checking the growth and derivative bounds on samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaCheck {
    pub family: String,
    pub samples: usize,
    pub bound_violations: usize,
    pub origin_ok: bool,
    /// Largest relative mismatch between `α′, α″` and central differences.
    pub max_fd_rel_error: f64,
    pub passed: bool,
}

/// Checks the bounds on `samples` points spread over `[-1e6, 1e6]` and
/// compares the closed-form derivatives with central differences.
pub fn check_alpha(spec: &AlphaSpec, samples: usize, fd_tolerance: f64) -> AlphaCheck {
    let c1 = spec.c1();
    let c2 = spec.c2();
    let mut violations = 0;
    // log-spaced magnitudes so both the origin and the far field are covered
    let points: Vec<f64> = (0..samples)
        .map(|k| {
            let s = k as f64 / (samples.max(2) - 1) as f64;
            let mag = 10f64.powf(-6.0 + 12.0 * s);
            if k % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect();
    let slack = 1.0 + 1e-12;
    for &u in &points {
        let (a, d1, d2) = spec.eval(u);
        if a.abs() > c1 * u.abs() * slack || d1.abs() > c1 * slack || d2.abs() > c2 * slack {
            violations += 1;
        }
    }
    let (a0, d0, _) = spec.eval(0.0);
    let origin_ok = a0 == 0.0 && d0 == 0.0;

    let h = 1e-5;
    let mut max_rel: f64 = 0.0;
    for &u in points.iter().filter(|u| u.abs() <= 100.0 && u.abs() >= 1e-2) {
        let fd1 = (spec.value(u + h) - spec.value(u - h)) / (2.0 * h);
        let fd2 = (spec.derivative(u + h) - spec.derivative(u - h)) / (2.0 * h);
        for (exact, fd) in [(spec.derivative(u), fd1), (spec.second_derivative(u), fd2)] {
            // relative to the family's scale so near-zero derivatives don't blow up the quotient
            let scale = exact.abs().max(c1.max(c2) * 1e-3).max(f64::MIN_POSITIVE);
            max_rel = max_rel.max((exact - fd).abs() / scale);
        }
    }
    let passed = violations == 0 && origin_ok && max_rel <= fd_tolerance;
    AlphaCheck {
        family: spec.name().to_string(),
        samples,
        bound_violations: violations,
        origin_ok,
        max_fd_rel_error: max_rel,
        passed,
    }
}
