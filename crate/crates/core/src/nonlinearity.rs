//! Power-law pressure r(s) = s^γ with its enthalpy h, the primitive H of h,
//! the generalized inverse g of h, the Bernoulli function and the edge
//! diffusion coefficients dr.

use crate::error::{invalid_arg, Result};

/// Below this magnitude [`bernoulli`] switches to its Taylor series.
pub const BERNOULLI_SERIES_THRESHOLD: f64 = 1e-4;

/// Below this gap |log b - log a| the log-mean dr falls back to r'((a+b)/2).
pub const LOG_MEAN_GUARD: f64 = 1e-8;

/// B(x) = x / (e^x - 1), B(0) = 1, evaluated without overflow or cancellation.
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < BERNOULLI_SERIES_THRESHOLD {
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 - x2 * x2 / 720.0
    } else if x > 0.0 {
        let e = (-x).exp();
        x * e / -(-x).exp_m1()
    } else {
        x / x.exp_m1()
    }
}

/// r(s) = s^γ with γ >= 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PressureLaw {
    gamma: f64,
}

impl PressureLaw {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 1.0) {
            return invalid_arg(format!("pressure exponent must be >= 1, got {gamma}"));
        }
        Ok(PressureLaw { gamma })
    }

    /// Linear pressure r(s) = s.
    pub fn linear() -> Self {
        PressureLaw { gamma: 1.0 }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_linear(&self) -> bool {
        self.gamma == 1.0
    }

    pub fn pressure(&self, s: f64) -> f64 {
        if self.is_linear() {
            s
        } else {
            s.powf(self.gamma)
        }
    }

    /// r'(s).
    pub fn derivative(&self, s: f64) -> f64 {
        if self.is_linear() {
            1.0
        } else {
            self.gamma * s.powf(self.gamma - 1.0)
        }
    }

    /// h(0+): -γ/(γ-1), or -inf for the linear law.
    pub fn enthalpy_at_zero(&self) -> f64 {
        if self.is_linear() {
            f64::NEG_INFINITY
        } else {
            -self.gamma / (self.gamma - 1.0)
        }
    }

    /// h(s) = ∫_1^s r'(τ)/τ dτ.
    pub fn enthalpy(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return invalid_arg(format!("enthalpy of negative density {s}"));
        }
        if s == 0.0 && self.is_linear() {
            return invalid_arg("enthalpy h(0) = -inf for linear pressure");
        }
        Ok(self.h(s))
    }

    /// Unchecked h; returns -inf at 0 for the linear law.
    pub(crate) fn h(&self, s: f64) -> f64 {
        if self.is_linear() {
            s.ln()
        } else {
            let g = self.gamma;
            g / (g - 1.0) * ((g - 1.0) * s.ln()).exp_m1()
        }
    }

    /// H(s) = ∫_1^s h(τ) dτ, with H(0) = 1 for every γ.
    pub fn primitive(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return invalid_arg(format!("H of negative density {s}"));
        }
        Ok(self.big_h(s))
    }

    pub(crate) fn big_h(&self, s: f64) -> f64 {
        // H(1) = h(1) = 0, so H is the convexity gap at 1.
        self.convexity_gap(s, 1.0)
    }

    /// Convexity gap H(u) - H(a) - h(a)(u - a) >= 0, evaluated without
    /// cancellation when u is close to a (Taylor series in (u-a)/a).
    pub fn convexity_gap(&self, u: f64, a: f64) -> f64 {
        let g = self.gamma;
        if a == 0.0 {
            return match (self.is_linear(), u == 0.0) {
                (_, true) => 0.0,
                (true, false) => f64::INFINITY,
                (false, false) => u.powf(g) / (g - 1.0),
            };
        }
        let x = (u - a) / a;
        if x.abs() <= 1e-2 {
            // h^(k)(a) = γ Π_{j=2..k}(γ-j) a^{γ-1-k}
            let mut coef = 1.0;
            let mut pow = x;
            let mut fact = 1.0;
            let mut sum = 0.0;
            for k in 1..=8 {
                if k >= 2 {
                    coef *= g - k as f64;
                }
                pow *= x;
                fact *= (k + 1) as f64;
                sum += coef * pow / fact;
            }
            return g * a.powf(g) * sum;
        }
        let direct = if self.is_linear() {
            if u == 0.0 {
                a
            } else {
                u * (u / a).ln() - u + a
            }
        } else {
            (u.powf(g) - a.powf(g) - g * a.powf(g - 1.0) * (u - a)) / (g - 1.0)
        };
        direct.max(0.0)
    }

    /// Generalized inverse of h: h^{-1}(s) above h(0+), zero below.
    pub fn g_inverse(&self, s: f64) -> f64 {
        if self.is_linear() {
            s.exp()
        } else {
            let g = self.gamma;
            let base = (g - 1.0) * s / g + 1.0;
            if base <= 0.0 {
                0.0
            } else {
                base.powf(1.0 / (g - 1.0))
            }
        }
    }

    /// g'(s); infinite at the edge of the support when γ > 2.
    pub fn g_derivative(&self, s: f64) -> f64 {
        if self.is_linear() {
            s.exp()
        } else {
            let g = self.gamma;
            let base = (g - 1.0) * s / g + 1.0;
            if base <= 0.0 {
                0.0
            } else {
                base.powf(1.0 / (g - 1.0) - 1.0) / g
            }
        }
    }
}

/// Edge approximation of r'(u) used by the extended Scharfetter-Gummel flux.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiffusionAverage {
    /// r'((a+b)/2).
    Midpoint,
    /// (h(b)-h(a)) / (log b - log a); preserves the steady states with
    /// d_σ q_{K,σ} = Dh.
    LogMean,
}

impl DiffusionAverage {
    pub fn evaluate(self, law: &PressureLaw, a: f64, b: f64) -> Result<f64> {
        match self {
            DiffusionAverage::Midpoint => dr_midpoint(law, a, b),
            DiffusionAverage::LogMean => dr_log_mean(law, a, b),
        }
    }

    pub(crate) fn eval(self, law: &PressureLaw, a: f64, b: f64) -> f64 {
        match self {
            DiffusionAverage::Midpoint => law.derivative(0.5 * (a + b)),
            DiffusionAverage::LogMean => log_mean(law, a, b),
        }
    }
}

fn check_densities(a: f64, b: f64) -> Result<()> {
    if !(a >= 0.0 && b >= 0.0) {
        return invalid_arg(format!("edge densities must be nonnegative, got ({a}, {b})"));
    }
    Ok(())
}

/// dr(a, b) = r'((a+b)/2).
pub fn dr_midpoint(law: &PressureLaw, a: f64, b: f64) -> Result<f64> {
    check_densities(a, b)?;
    Ok(law.derivative(0.5 * (a + b)))
}

/// dr(a, b) = (h(b)-h(a)) / (log b - log a) when ab > 0 and a != b,
/// r'((a+b)/2) otherwise.
pub fn dr_log_mean(law: &PressureLaw, a: f64, b: f64) -> Result<f64> {
    check_densities(a, b)?;
    Ok(log_mean(law, a, b))
}

fn log_mean(law: &PressureLaw, a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 && a != b {
        let dl = b.ln() - a.ln();
        if dl.abs() >= LOG_MEAN_GUARD {
            return (law.h(b) - law.h(a)) / dl;
        }
    }
    law.derivative(0.5 * (a + b))
}
