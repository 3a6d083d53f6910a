//! Two-point numerical fluxes across an edge σ between a cell K and its
//! neighbour (another cell or a Dirichlet trace).
//!
//! Every flux here is expressed per unit transmissibility, F_{K,σ} / τ_σ,
//! and takes the convective data as the product `drift = d_σ q_{K,σ}`.
//! The Scharfetter-Gummel family is linear in the unknowns at the new time
//! level and is returned as [`EdgeCoefficients`]; the two upwind fluxes are
//! nonlinear and are returned as a value plus its exact partial derivatives
//! for Newton's method.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid_arg, invalid_config, Error, Result};
use crate::nonlinearity::{bernoulli, DiffusionAverage, PressureLaw};

/// Edge diffusion coefficients below `DEGENERACY_THRESHOLD * max(1, |drift|)`
/// are treated as zero and the SG flux is replaced by its upwind limit.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

/// Below this |x| the coth form uses x coth x ≈ 1 + x²/3.
const COTH_SERIES_THRESHOLD: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FluxKind {
    /// r(U_K) - r(U_L) + d_σ (q⁺ U_K - q⁻ U_L).
    ClassicalUpwind,
    /// Upwind convection with min(U_K, U_L) Dh diffusion.
    NonlinearUpwind,
    /// Scharfetter-Gummel for linear pressure (or an explicit viscosity).
    SgClassic,
    /// Extended SG with dr = r'((a+b)/2).
    SgExtMidpoint,
    /// Extended SG with the log-mean dr.
    SgExtLogMean,
}

impl FluxKind {
    pub const ALL: [FluxKind; 5] = [
        FluxKind::ClassicalUpwind,
        FluxKind::NonlinearUpwind,
        FluxKind::SgClassic,
        FluxKind::SgExtMidpoint,
        FluxKind::SgExtLogMean,
    ];

    /// Scharfetter-Gummel fluxes lead to one linear solve per time step.
    pub fn is_linear(self) -> bool {
        matches!(self, FluxKind::SgClassic | FluxKind::SgExtMidpoint | FluxKind::SgExtLogMean)
    }

    /// Name used in configuration files and output file names.
    pub fn name(self) -> &'static str {
        match self {
            FluxKind::ClassicalUpwind => "upwind",
            FluxKind::NonlinearUpwind => "nonlinear_upwind",
            FluxKind::SgClassic => "sg",
            FluxKind::SgExtMidpoint => "sg_jp",
            FluxKind::SgExtLogMean => "sg_ext",
        }
    }
}

impl fmt::Display for FluxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FluxKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FluxKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown flux '{s}' (expected upwind, nonlinear_upwind, sg, sg_jp or sg_ext)")))
    }
}

/// A flux kind bound to a pressure law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxModel {
    kind: FluxKind,
    law: PressureLaw,
    viscosity: Option<f64>,
}

impl FluxModel {
    pub fn new(kind: FluxKind, law: PressureLaw) -> Result<Self> {
        if kind == FluxKind::SgClassic && !law.is_linear() {
            return invalid_config(format!(
                "the classical Scharfetter-Gummel flux needs linear pressure (gamma = 1), got gamma = {}",
                law.gamma()
            ));
        }
        Ok(FluxModel { kind, law, viscosity: None })
    }

    /// Classical SG flux for ∂_t u - div(ε ∇u - q u) = 0.
    pub fn with_viscosity(law: PressureLaw, viscosity: f64) -> Result<Self> {
        if !(viscosity > 0.0 && viscosity.is_finite()) {
            return invalid_arg(format!("viscosity must be positive, got {viscosity}"));
        }
        Ok(FluxModel { kind: FluxKind::SgClassic, law, viscosity: Some(viscosity) })
    }

    pub fn kind(&self) -> FluxKind {
        self.kind
    }

    pub fn law(&self) -> &PressureLaw {
        &self.law
    }

    pub fn viscosity(&self) -> Option<f64> {
        self.viscosity
    }

    /// Linearization coefficients of an SG-family flux from time-n densities.
    pub fn coefficients(&self, u_self: f64, u_nb: f64, drift: f64) -> Result<EdgeCoefficients> {
        match self.kind {
            FluxKind::SgClassic => Ok(sg_classic_coefficients(drift, self.viscosity.unwrap_or(1.0))),
            FluxKind::SgExtMidpoint => sg_ext_coefficients(&self.law, DiffusionAverage::Midpoint, u_self, u_nb, drift),
            FluxKind::SgExtLogMean => sg_ext_coefficients(&self.law, DiffusionAverage::LogMean, u_self, u_nb, drift),
            k => invalid_config(format!("flux '{k}' is nonlinear and has no linear coefficients")),
        }
    }

    /// Value and partial derivatives of an upwind-family flux.
    pub fn residual(&self, u_self: f64, u_nb: f64, drift: f64) -> Result<EdgeResidual> {
        match self.kind {
            FluxKind::ClassicalUpwind => classical_upwind_residual(&self.law, u_self, u_nb, drift),
            FluxKind::NonlinearUpwind => nonlinear_upwind_residual(&self.law, u_self, u_nb, drift),
            k => invalid_config(format!("flux '{k}' is linear; use coefficients()")),
        }
    }

    /// Unchecked variant used inside assembly loops; densities must be >= 0.
    pub(crate) fn coefficients_unchecked(&self, u_self: f64, u_nb: f64, drift: f64) -> EdgeCoefficients {
        match self.kind {
            FluxKind::SgClassic => sg_classic_coefficients(drift, self.viscosity.unwrap_or(1.0)),
            FluxKind::SgExtMidpoint => sg_coefficients_from_dr(DiffusionAverage::Midpoint.eval(&self.law, u_self, u_nb), drift),
            FluxKind::SgExtLogMean => sg_coefficients_from_dr(DiffusionAverage::LogMean.eval(&self.law, u_self, u_nb), drift),
            _ => unreachable!("upwind fluxes are handled by Newton"),
        }
    }

    pub(crate) fn residual_unchecked(&self, u_self: f64, u_nb: f64, drift: f64) -> EdgeResidual {
        match self.kind {
            FluxKind::ClassicalUpwind => classical_upwind(&self.law, u_self, u_nb, drift),
            FluxKind::NonlinearUpwind => nonlinear_upwind(&self.law, u_self, u_nb, drift),
            _ => unreachable!("SG fluxes are assembled linearly"),
        }
    }
}

/// F_{K,σ} = τ_σ (coef_self U_K - coef_nb U_nb) + affine, with coefficients
/// built from time-n data only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCoefficients {
    pub coef_self: f64,
    pub coef_nb: f64,
    pub affine: f64,
}

impl EdgeCoefficients {
    /// F / τ_σ for the given new-time states.
    pub fn flux(&self, u_self: f64, u_nb: f64) -> f64 {
        self.coef_self * u_self - self.coef_nb * u_nb + self.affine
    }
}

/// F / τ_σ of a nonlinear flux and its derivatives in U_K and U_nb.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeResidual {
    pub value: f64,
    pub d_self: f64,
    pub d_nb: f64,
}

fn check_nonneg(u_self: f64, u_nb: f64) -> Result<()> {
    if !(u_self >= 0.0 && u_nb >= 0.0) {
        return invalid_arg(format!("densities must be nonnegative, got ({u_self}, {u_nb})"));
    }
    Ok(())
}

/// Extended SG coefficients: dr B(-drift/dr), dr B(drift/dr), degenerating
/// to the upwind pair (drift⁺, drift⁻) when dr vanishes.
pub fn sg_ext_coefficients(
    law: &PressureLaw,
    average: DiffusionAverage,
    u_self: f64,
    u_nb: f64,
    drift: f64,
) -> Result<EdgeCoefficients> {
    check_nonneg(u_self, u_nb)?;
    Ok(sg_coefficients_from_dr(average.eval(law, u_self, u_nb), drift))
}

/// SG coefficients for a given edge diffusion coefficient `dr`.
pub fn sg_coefficients_from_dr(dr: f64, drift: f64) -> EdgeCoefficients {
    if dr < DEGENERACY_THRESHOLD * drift.abs().max(1.0) {
        EdgeCoefficients {
            coef_self: drift.max(0.0),
            coef_nb: (-drift).max(0.0),
            affine: 0.0,
        }
    } else {
        let x = drift / dr;
        EdgeCoefficients {
            coef_self: dr * bernoulli(-x),
            coef_nb: dr * bernoulli(x),
            affine: 0.0,
        }
    }
}

/// Classical SG coefficients ε B(-drift/ε), ε B(drift/ε).
pub fn sg_classic_coefficients(drift: f64, viscosity: f64) -> EdgeCoefficients {
    EdgeCoefficients {
        coef_self: viscosity * bernoulli(-drift / viscosity),
        coef_nb: viscosity * bernoulli(drift / viscosity),
        affine: 0.0,
    }
}

pub fn classical_upwind_residual(law: &PressureLaw, u_self: f64, u_nb: f64, drift: f64) -> Result<EdgeResidual> {
    check_nonneg(u_self, u_nb)?;
    Ok(classical_upwind(law, u_self, u_nb, drift))
}

fn classical_upwind(law: &PressureLaw, u_self: f64, u_nb: f64, drift: f64) -> EdgeResidual {
    let (qp, qm) = (drift.max(0.0), (-drift).max(0.0));
    EdgeResidual {
        value: law.pressure(u_self) - law.pressure(u_nb) + qp * u_self - qm * u_nb,
        d_self: law.derivative(u_self) + qp,
        d_nb: -law.derivative(u_nb) - qm,
    }
}

/// -min(U_K, U_nb) (h(U_nb) - h(U_K)) + drift⁺ U_K - drift⁻ U_nb.
///
/// The min picks U_K on ties. A zero minimum switches the diffusive part off
/// (0 · h(0) = 0 even when h(0) = -inf).
pub fn nonlinear_upwind_residual(law: &PressureLaw, u_self: f64, u_nb: f64, drift: f64) -> Result<EdgeResidual> {
    check_nonneg(u_self, u_nb)?;
    Ok(nonlinear_upwind(law, u_self, u_nb, drift))
}

fn nonlinear_upwind(law: &PressureLaw, u_self: f64, u_nb: f64, drift: f64) -> EdgeResidual {
    let (qp, qm) = (drift.max(0.0), (-drift).max(0.0));
    let mut out = EdgeResidual {
        value: qp * u_self - qm * u_nb,
        d_self: qp,
        d_nb: -qm,
    };
    let self_is_min = u_self <= u_nb;
    let m = if self_is_min { u_self } else { u_nb };
    if m > 0.0 {
        let dh = law.h(u_nb) - law.h(u_self);
        out.value -= m * dh;
        if self_is_min {
            // d/dU_K [U_K h(U_K)] contributes U_K h'(U_K) = r'(U_K).
            out.d_self += -dh + law.derivative(u_self);
            out.d_nb -= m * law.derivative(u_nb) / u_nb;
        } else {
            out.d_self += m * law.derivative(u_self) / u_self;
            out.d_nb += -dh - law.derivative(u_nb);
        }
    } else if !law.is_linear() {
        // One-sided derivative of m (h(U_nb) - h(U_K)) as m -> 0+.
        let dh = law.h(u_nb) - law.h(u_self);
        if self_is_min {
            out.d_self -= dh;
        } else {
            out.d_nb -= dh;
        }
    }
    out
}

/// The extended SG flux written as centred convection plus a coth-weighted
/// diffusion, F = m q (U_K + U_nb)/2 - (m q / 2) coth(d q / (2 dr)) (U_nb - U_K).
/// Returns the full flux (not divided by τ_σ).
pub fn coth_form_flux(dr: f64, u_self: f64, u_nb: f64, q: f64, distance: f64, measure: f64) -> f64 {
    let tau = measure / distance;
    let drift = distance * q;
    let x = drift / (2.0 * dr);
    // (m q / 2) coth(x) = τ dr x coth(x)
    let x_coth = if x.abs() < COTH_SERIES_THRESHOLD {
        1.0 + x * x / 3.0
    } else {
        x / x.tanh()
    };
    tau * (0.5 * drift * (u_self + u_nb) + dr * x_coth * (u_self - u_nb))
}
