//! Modified Bessel function of the second kind `K_nu(x)` for real `nu >= 0`.
//!
//! The order is split as `nu = mu + m` with `|mu| <= 1/2`. `K_mu` and
//! `K_{mu+1}` come from Temme's series for `x < 2` and from Steed's
//! continued fraction otherwise; upward recurrence then reaches `K_nu`.

use std::f64::consts::PI;

use crate::error::{DekiError, Result};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

/// Taylor coefficients of `1/Gamma(z) = sum_k c_k z^k`, `k = 1..26`.
const RECIP_GAMMA: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_9,
    -0.655_878_071_520_253_8,
    -0.042_002_635_034_095_2,
    0.166_538_611_382_291_5,
    -0.042_197_734_555_544_3,
    -0.009_621_971_527_877_0,
    0.007_218_943_246_663_0,
    -0.001_165_167_591_859_1,
    -0.000_215_241_674_114_9,
    0.000_128_050_282_388_2,
    -0.000_020_134_854_780_7,
    -0.000_001_250_493_482_1,
    0.000_001_133_027_232_0,
    -0.000_000_205_633_841_7,
    0.000_000_006_116_095_0,
    0.000_000_005_002_007_5,
    -0.000_000_001_181_274_6,
    0.000_000_000_104_342_7,
    0.000_000_000_007_782_3,
    -0.000_000_000_003_696_8,
    0.000_000_000_000_510_0,
    -0.000_000_000_000_020_6,
    -0.000_000_000_000_005_4,
    0.000_000_000_000_001_4,
    0.000_000_000_000_000_1,
];

/// `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for `|mu| <= 1/2`, where
/// `gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` and
/// `gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/Gamma(1+mu) = sum_i c_{i+1} mu^i; the even part is gam2 and the odd
    // part is -mu gam1.
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mut power = 1.0;
    for pair in RECIP_GAMMA.chunks(2) {
        gam2 += pair[0] * power;
        if let Some(odd) = pair.get(1) {
            gam1 -= odd * power;
        }
        power *= mu * mu;
    }
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `(K_mu(x), K_{mu+1}(x))` for `|mu| <= 1/2`.
fn k_pair(mu: f64, x: f64) -> Result<(f64, f64)> {
    let mu2 = mu * mu;
    if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                return Ok((sum, sum1 * 2.0 / x));
            }
        }
        Err(DekiError::Solver(format!(
            "Bessel K series did not converge at x = {x}"
        )))
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                let h = a1 * h;
                let kmu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
                let k1 = kmu * (mu + x + 0.5 - h) / x;
                return Ok((kmu, k1));
            }
        }
        Err(DekiError::Solver(format!(
            "Bessel K continued fraction did not converge at x = {x}"
        )))
    }
}

/// `K_nu(x)` for `nu >= 0`, `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if !(nu >= 0.0 && nu.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "Bessel order must be finite and nonnegative, got {nu}"
        )));
    }
    if !(x > 0.0 && x.is_finite()) {
        return Err(DekiError::InvalidArgument(format!(
            "Bessel argument must be positive, got {x}"
        )));
    }
    let m = (nu + 0.5).floor();
    let mu = nu - m;
    let (mut k0, mut k1) = k_pair(mu, x)?;
    for i in 1..=(m as usize) {
        let next = (mu + i as f64) * (2.0 / x) * k1 + k0;
        k0 = k1;
        k1 = next;
    }
    Ok(k0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_half(x: f64) -> f64 {
        (PI / (2.0 * x)).sqrt() * (-x).exp()
    }

    /// `K_nu(x) = int_0^inf exp(-x cosh t) cosh(nu t) dt` by composite Simpson.
    fn quadrature(nu: f64, x: f64) -> f64 {
        // cut where the integrand is e^-60 below its peak
        let t_peak = (nu / x).asinh();
        let floor = x * t_peak.cosh() - nu * t_peak;
        let mut t_max = t_peak + 0.5;
        while x * t_max.cosh() - nu * t_max < floor + 60.0 {
            t_max += 0.5;
        }
        let n = 200_000;
        let h = t_max / n as f64;
        let f = |t: f64| (-x * t.cosh() + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
        let mut s = f(0.0) + f(t_max);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn temme_gammas_match_gamma_function() {
        use statrs::function::gamma::gamma;
        for mu in [-0.5, -0.3, -1e-9, 0.0, 1e-9, 0.25, 0.5] {
            let (g1, g2, gp, gm) = temme_gammas(mu);
            assert!((gp - 1.0 / gamma(1.0 + mu)).abs() < 1e-14, "mu={mu}");
            assert!((gm - 1.0 / gamma(1.0 - mu)).abs() < 1e-14, "mu={mu}");
            assert!((g2 - 0.5 * (gm + gp)).abs() < 1e-14);
            if mu.abs() > 1e-3 {
                assert!((g1 - (gm - gp) / (2.0 * mu)).abs() < 1e-12);
            }
        }
        // gam1(0) = -c_2 = -Euler's constant
        assert!((temme_gammas(0.0).0 + 0.577_215_664_901_532_9).abs() < 1e-15);
    }

    #[test]
    fn half_integer_orders_match_closed_forms() {
        for x in [0.01, 0.3, 1.0, 1.999, 2.0, 2.5, 7.0, 40.0, 300.0] {
            let k05 = bessel_k(0.5, x).unwrap();
            assert!((k05 / closed_half(x) - 1.0).abs() < 1e-12, "x={x}");
            let k15 = bessel_k(1.5, x).unwrap();
            assert!(
                (k15 / (closed_half(x) * (1.0 + 1.0 / x)) - 1.0).abs() < 1e-12,
                "x={x}"
            );
            let k25 = bessel_k(2.5, x).unwrap();
            let c25 = closed_half(x) * (1.0 + 3.0 / x + 3.0 / (x * x));
            assert!((k25 / c25 - 1.0).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn matches_integral_representation() {
        for nu in [0.0, 0.3, 1.0, 2.2, 3.4] {
            for x in [0.1, 0.7, 1.9, 2.1, 5.0, 20.0] {
                let k = bessel_k(nu, x).unwrap();
                let q = quadrature(nu, x);
                assert!((k / q - 1.0).abs() < 1e-10, "nu={nu} x={x}: {k} vs {q}");
            }
        }
    }

    #[test]
    fn known_values() {
        // K_0(1) and K_1(1)
        assert!((bessel_k(0.0, 1.0).unwrap() - 0.421_024_438_240_708_3).abs() < 1e-15);
        assert!((bessel_k(1.0, 1.0).unwrap() - 0.601_907_230_197_234_6).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(bessel_k(-1.0, 1.0).is_err());
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, f64::NAN).is_err());
    }
}
