//! Matérn-correlated Gaussian random fields on the interior grid.

pub mod bessel;
pub mod kle;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{DekiError, Result};
pub use bessel::bessel_k;
pub use kle::{build_kle, KleBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    /// Correlation length.
    pub ell: f64,
    /// Smoothness.
    pub nu: f64,
}

impl MaternParams {
    pub fn new(ell: f64, nu: f64) -> Result<Self> {
        let p = Self { ell, nu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ell > 0.0 && self.ell.is_finite() && self.nu > 0.0 && self.nu.is_finite()) {
            return Err(DekiError::InvalidArgument(format!(
                "Matérn parameters must be positive, got ell = {}, nu = {}",
                self.ell, self.nu
            )));
        }
        Ok(())
    }
}

/// Unit-variance Matérn correlation `2^{1-nu}/Gamma(nu) K_nu(s) s^nu`, `s = r/ell`.
pub fn matern_cov(r: f64, params: MaternParams) -> Result<f64> {
    params.validate()?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "distance must be nonnegative, got {r}"
        )));
    }
    let s = r / params.ell;
    if s == 0.0 {
        return Ok(1.0);
    }
    let nu = params.nu;
    // K_nu(s) underflows long before the power overflows
    if s > 700.0 {
        return Ok(0.0);
    }
    let log_prefactor = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * s.ln();
    let value = log_prefactor.exp() * bessel_k(nu, s)?;
    // rounding can push the value a hair above 1 at tiny s
    Ok(value.min(1.0))
}
