//! Closed-form laws and parameterized small-ball bound evaluators.
//!
//! The bounds carry universal constants that are never pinned down; they are
//! explicit [`BoundConfig`] fields defaulting to 1. All bounds on probabilities
//! are capped at 1.
//!
//! # Product of uniforms
//!
//! For `Z = U_1 ⋯ U_ℓ` with `U_j` uniform on `[-1, 1]` and `0 < |z| ≤ 1`,
//!
//! ```text
//! F(z) = 1/2 + (z/2) · Σ_{j=0}^{ℓ-1} log(1/|z|)^j / j!
//! ```
//!
//! The sum stops at `ℓ − 1`: this matches the `ℓ = 2` base case and the
//! induction step, and it is the only choice with `F(1) = 1` for every `ℓ`.
//! A Monte-Carlo check of the formula lives in the tests and in `selftest`.
//! For uniforms on `[-s, s]`, `Z = s^ℓ Z'`, so the CDF is `F(z / s^ℓ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    #[serde(rename = "C_main")]
    pub c_main: f64,
    #[serde(rename = "C_prime")]
    pub c_prime: f64,
    #[serde(rename = "C_dprime")]
    pub c_dprime: f64,
    /// Constant in the validity threshold `ε < exp(−c·ℓ)` and the `c` of the
    /// smoothed singular-value threshold.
    pub c_small: f64,
    /// Isotropic constant of log-concave marginals. Configuration only.
    #[serde(rename = "L_iso")]
    pub l_iso: f64,
    /// Poincaré constant. Configuration only.
    #[serde(rename = "C_P")]
    pub c_p: f64,
    /// Subgaussian norm bound. Configuration only.
    #[serde(rename = "C_K")]
    pub c_k: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            c_main: 1.0,
            c_prime: 1.0,
            c_dprime: 1.0,
            c_small: 1.0,
            l_iso: 1.0,
            c_p: 1.0,
            c_k: 1.0,
        }
    }
}

impl BoundConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("C_main", self.c_main),
            ("C_prime", self.c_prime),
            ("C_dprime", self.c_dprime),
            ("c_small", self.c_small),
            ("L_iso", self.l_iso),
            ("C_P", self.c_p),
            ("C_K", self.c_k),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Upper end of the small-ε validity range, `exp(−c_small·ℓ)`.
    pub fn eps_ceiling(&self, order: usize) -> f64 {
        (-self.c_small * order as f64).exp()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `Σ_{j=0}^{k-1} x^j / j!`
fn exp_partial_sum(x: f64, k: usize) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for j in 0..k {
        if j > 0 {
            term *= x / j as f64;
        }
        sum += term;
    }
    sum
}

/// CDF of a product of `order` independent uniforms on `[-1, 1]`.
pub fn product_uniform_cdf(order: usize, z: f64) -> Result<f64> {
    if order == 0 {
        return Err(Error::Domain("order must be at least 1".into()));
    }
    if !(z.abs() <= 1.0) {
        return Err(Error::Domain(format!("|z| = {} exceeds 1", z.abs())));
    }
    if z == 0.0 {
        return Ok(0.5);
    }
    let l = (1.0 / z.abs()).ln();
    Ok((0.5 + 0.5 * z * exp_partial_sum(l, order)).clamp(0.0, 1.0))
}

/// `P(|U_1 ⋯ U_ℓ| ≤ ε)` for `U_j` uniform on `[-s, s]`.
pub fn product_uniform_smallball(order: usize, half_width: f64, eps: f64) -> Result<f64> {
    if !(half_width > 0.0) {
        return Err(Error::Domain("half-width must be positive".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::Domain("ε must be nonnegative".into()));
    }
    let top = half_width.powi(order as i32);
    let mut u = eps / top;
    if u > 1.0 {
        log::warn!("ε = {eps} exceeds the support bound {top}; clamping to probability 1");
        u = 1.0;
    }
    Ok(product_uniform_cdf(order, u)? - product_uniform_cdf(order, -u)?)
}

fn check_small_eps(eps: f64, order: usize, cfg: &BoundConfig) -> Result<()> {
    let top = cfg.eps_ceiling(order);
    if !(eps > 0.0 && eps < top) {
        return Err(Error::Range(format!(
            "ε = {eps} outside the small-ball validity range (0, exp(-c·ℓ)) = (0, {top:.6})"
        )));
    }
    Ok(())
}

fn cap(x: f64) -> f64 {
    if x.is_nan() {
        1.0
    } else {
        x.min(1.0)
    }
}

fn single_direction_raw(eps: f64, order: usize, c: f64) -> f64 {
    let l = (1.0 / eps).ln();
    eps / factorial(order - 1) * (c * l).powi(order as i32 - 1)
}

fn fixed_subspace_multiplier(eps: f64, m: usize, order: usize, cfg: &BoundConfig) -> f64 {
    let l = (1.0 / eps).ln();
    (m as f64).min(cfg.c_prime.powi(order as i32) * l)
}

/// `min{m, C′^ℓ log(1/ε)} · ε/(ℓ−1)! · (C″ log(1/ε))^{ℓ−1}`, capped at 1.
pub fn bound_fixed_subspace(eps: f64, m: usize, order: usize, cfg: &BoundConfig) -> Result<f64> {
    if order < 2 {
        return Err(Error::Range("the fixed-subspace bound needs ℓ ≥ 2".into()));
    }
    if m == 0 {
        return Err(Error::Range(
            "subspace dimension m must be at least 1".into(),
        ));
    }
    check_small_eps(eps, order, cfg)?;
    Ok(cap(fixed_subspace_multiplier(eps, m, order, cfg)
        * single_direction_raw(eps, order, cfg.c_dprime)))
}

/// `ε/(ℓ−1)! · (C″ log(1/ε))^{ℓ−1}`, capped at 1.
///
/// Uses `C_dprime` so that multiplying by `min{m, C′^ℓ log(1/ε)}` reproduces
/// [`bound_fixed_subspace`].
pub fn bound_single_direction(eps: f64, order: usize, cfg: &BoundConfig) -> Result<f64> {
    if order < 2 {
        return Err(Error::Range(
            "the single-direction bound needs ℓ ≥ 2".into(),
        ));
    }
    check_small_eps(eps, order, cfg)?;
    Ok(cap(single_direction_raw(eps, order, cfg.c_dprime)))
}

/// `(C′ε)^{C″·min{m,n}} + exp(−C_main·n)`, capped at 1.
pub fn bound_generic_subspace(
    eps: f64,
    m: usize,
    n: usize,
    _order: usize,
    cfg: &BoundConfig,
) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Range(format!("ε = {eps} outside (0, 1)")));
    }
    let k = m.min(n) as f64;
    Ok(cap(
        (cfg.c_prime * eps).powf(cfg.c_dprime * k) + (-cfg.c_main * n as f64).exp()
    ))
}

/// Carbery–Wright form `C·ℓ·ε^{1/ℓ}`, capped at 1.
pub fn bound_carbery_wright(eps: f64, order: usize, cfg: &BoundConfig) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) || order == 0 {
        return Err(Error::Range(format!("ε = {eps} outside (0, 1]")));
    }
    Ok(cap(cfg.c_main
        * order as f64
        * eps.powf(1.0 / order as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NondeterministicBound {
    pub value: f64,
    /// Decay exponent `e* = (n − (n^ℓ − m)^{1/ℓ}) / ℓ` of ε.
    pub exponent: f64,
}

/// `2 n^{ℓ−1} (c√n)^{ℓ·e*} ε^{e*}`, capped at 1.
pub fn bound_nondeterministic(
    eps: f64,
    n: usize,
    order: usize,
    m: usize,
    c: f64,
) -> Result<NondeterministicBound> {
    let nf = n as f64;
    let d = nf.powi(order as i32);
    if m as f64 > d {
        return Err(Error::Range(format!("m = {m} exceeds n^ℓ = {d}")));
    }
    if !(eps >= 0.0) || order == 0 {
        return Err(Error::Range("ε must be nonnegative and ℓ ≥ 1".into()));
    }
    let gap = nf - (d - m as f64).powf(1.0 / order as f64);
    let exponent = gap / order as f64;
    let value = 2.0 * nf.powi(order as i32 - 1) * (c * nf.sqrt()).powf(gap) * eps.powf(exponent);
    Ok(NondeterministicBound {
        value: cap(value),
        exponent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConcentrationVariant {
    /// `2 exp(−C (1−ε)² m / (ℓ n^{ℓ−1}))`
    Vershynin,
    /// `e² exp(−C_ℓ (1−ε)² m / n^{ℓ−1})`
    Bamberger,
}

/// Concentration-based small-ball forms; `C` (or `C_ℓ`) is `C_main`.
pub fn bound_concentration_subgaussian(
    eps: f64,
    m: usize,
    n: usize,
    order: usize,
    cfg: &BoundConfig,
    variant: ConcentrationVariant,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&eps) || order == 0 {
        return Err(Error::Range(format!("ε = {eps} outside [0, 1]")));
    }
    let base = (1.0 - eps).powi(2) * m as f64 / (n as f64).powi(order as i32 - 1);
    let v = match variant {
        ConcentrationVariant::Vershynin => 2.0 * (-cfg.c_main * base / order as f64).exp(),
        ConcentrationVariant::Bamberger => (2.0 - cfg.c_main * base).exp(),
    };
    Ok(cap(v))
}

/// Lower bound `C ε/(ℓ−2)! · log(1/ε)^{ℓ−2}` attained by the coordinate-line subspace.
pub fn sharpness_lower_bound(eps: f64, order: usize, cfg: &BoundConfig) -> Result<f64> {
    if order < 2 {
        return Err(Error::Range("the sharpness bound needs ℓ ≥ 2".into()));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Range(format!("ε = {eps} outside (0, 1)")));
    }
    let l = (1.0 / eps).ln();
    Ok(cfg.c_main * eps / factorial(order - 2) * l.powi(order as i32 - 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SminTailBound {
    /// `√(1 − r/n^ℓ) (cρ)^ℓ ε`
    pub threshold: f64,
    /// `ε r/(ℓ−1)! (C′ log(1/ε))^ℓ`, capped at 1.
    pub bound: f64,
}

/// Threshold factor `√(1 − r/n^ℓ)·(cρ)^ℓ` of the smoothed `s_min` tail.
pub fn smin_threshold_scale(r: usize, n: usize, order: usize, rho: f64, cfg: &BoundConfig) -> f64 {
    let d = (n as f64).powi(order as i32);
    (1.0 - r as f64 / d).sqrt() * (cfg.c_small * rho).powi(order as i32)
}

pub fn check_smin_hypothesis(r: usize, n: usize, order: usize) -> Result<()> {
    let d = (n as f64).powi(order as i32);
    if r as f64 > d / 2.0 {
        return Err(Error::Hypothesis(format!(
            "rank r = {r} exceeds n^ℓ/2 = {}",
            d / 2.0
        )));
    }
    Ok(())
}

pub fn bound_smin_tail(
    eps: f64,
    r: usize,
    n: usize,
    order: usize,
    rho: f64,
    cfg: &BoundConfig,
) -> Result<SminTailBound> {
    check_smin_hypothesis(r, n, order)?;
    let top = (-cfg.c_main * order as f64).exp();
    if !(eps > 0.0 && eps < top) {
        return Err(Error::Range(format!(
            "ε = {eps} outside the validity range (0, exp(-C·ℓ)) = (0, {top:.6})"
        )));
    }
    let l = (1.0 / eps).ln();
    let bound = eps * r as f64 / factorial(order - 1) * (cfg.c_prime * l).powi(order as i32);
    Ok(SminTailBound {
        threshold: smin_threshold_scale(r, n, order, rho, cfg) * eps,
        bound: cap(bound),
    })
}

/// Least-squares multiplicative prefactor `K` with `p̂(ε) ≈ K·b(ε)` on the log scale.
///
/// Points with a nonpositive estimate or bound are skipped.
pub fn fit_prefactor(estimates: &[f64], bounds: &[f64]) -> Result<f64> {
    let logs: Vec<f64> = estimates
        .iter()
        .zip(bounds)
        .filter(|(&p, &b)| p > 0.0 && b > 0.0)
        .map(|(p, b)| p.ln() - b.ln())
        .collect();
    if logs.is_empty() {
        return Err(Error::DataSparsity(
            "no positive points to fit a constant".into(),
        ));
    }
    Ok((logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    const ONE: BoundConfig = BoundConfig {
        c_main: 1.0,
        c_prime: 1.0,
        c_dprime: 1.0,
        c_small: 1.0,
        l_iso: 1.0,
        c_p: 1.0,
        c_k: 1.0,
    };

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(product_uniform_cdf(2, 1.0).unwrap(), 1.0);
        assert_eq!(product_uniform_cdf(3, 0.0).unwrap(), 0.5);
        assert!(close(product_uniform_cdf(2, 0.5).unwrap(), 0.923287, 1e-6));
        for l in 1..=6 {
            assert_eq!(product_uniform_cdf(l, -1.0).unwrap(), 0.0);
            assert_eq!(product_uniform_cdf(l, 1.0).unwrap(), 1.0);
        }
        for z in [-0.7, -0.1, 0.3, 0.9] {
            assert!(close(
                product_uniform_cdf(1, z).unwrap(),
                (z + 1.0) / 2.0,
                1e-15
            ));
        }
        assert!(matches!(product_uniform_cdf(2, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn cdf_matches_monte_carlo_oracle() {
        // independent oracle: 10^7 products of two uniforms, CI ±4e-4
        let mut rng = stream(314);
        let n = 10_000_000;
        let hits = (0..n)
            .filter(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                a * b <= 0.5
            })
            .count();
        let p = hits as f64 / n as f64;
        assert!(close(p, 0.923287, 4e-4), "MC {p}");
        assert!(close(product_uniform_cdf(2, 0.5).unwrap(), p, 4e-4));
    }

    #[test]
    fn smallball_examples() {
        assert!(close(
            product_uniform_smallball(2, 1.0, 0.5).unwrap(),
            0.846574,
            2e-6
        ));
        let s3 = 3f64.sqrt();
        assert!(close(
            product_uniform_smallball(1, s3, s3).unwrap(),
            1.0,
            1e-15
        ));
        assert_eq!(product_uniform_smallball(4, s3, 0.0).unwrap(), 0.0);
        assert_eq!(product_uniform_smallball(2, 1.0, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn fixed_subspace_examples() {
        let l = 100f64.ln();
        let b = bound_fixed_subspace(0.01, 10, 2, &ONE).unwrap();
        assert!(close(b, l * 0.01 * l, 1e-12));
        assert!(close(b, 0.21208, 1e-5));
        let b1 = bound_fixed_subspace(0.01, 1, 2, &ONE).unwrap();
        assert!(close(b1, 0.0460517, 1e-7));
        assert!(bound_fixed_subspace(1e-300, 5, 3, &ONE).unwrap() < 1e-290);
        assert!(matches!(
            bound_fixed_subspace(0.5, 1, 2, &ONE),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn single_direction_examples() {
        assert!(close(
            bound_single_direction(0.01, 2, &ONE).unwrap(),
            0.0460517,
            1e-7
        ));
        assert!(close(
            bound_single_direction(0.01, 3, &ONE).unwrap(),
            0.106038,
            1e-6
        ));
        assert!(bound_single_direction(1e-200, 3, &ONE).unwrap() < 1e-190);
    }

    #[test]
    fn generic_subspace_examples() {
        let b = bound_generic_subspace(0.1, 4, 8, 2, &ONE).unwrap();
        assert!(close(b, 1e-4 + (-8f64).exp(), 1e-15));
        assert!(close(b, 4.355e-4, 1e-6));
        assert_eq!(
            bound_generic_subspace(1.0 - 1e-12, 4, 8, 2, &ONE).unwrap(),
            1.0
        );
        let small = bound_generic_subspace(0.5, 6, 8, 2, &ONE).unwrap();
        let big = bound_generic_subspace(0.5, 2, 8, 2, &ONE).unwrap();
        assert!(small < big);
    }

    #[test]
    fn comparison_forms() {
        assert!(close(
            bound_carbery_wright(0.01, 2, &ONE).unwrap(),
            0.2,
            1e-15
        ));
        assert_eq!(bound_carbery_wright(1.0, 3, &ONE).unwrap(), 1.0);
        assert!(close(
            bound_carbery_wright(0.25, 1, &ONE).unwrap(),
            0.25,
            1e-15
        ));

        let nd = bound_nondeterministic(0.1, 3, 2, 9, 1.0).unwrap();
        assert!(close(nd.exponent, 1.5, 1e-15));
        let nd = bound_nondeterministic(0.1, 4, 2, 7, 1.0).unwrap();
        assert!(close(nd.exponent, 0.5, 1e-15));
        assert_eq!(
            bound_nondeterministic(0.0, 4, 2, 7, 1.0).unwrap().value,
            0.0
        );

        use ConcentrationVariant::*;
        assert_eq!(
            bound_concentration_subgaussian(1.0, 64, 4, 2, &ONE, Vershynin).unwrap(),
            1.0
        );
        let v = bound_concentration_subgaussian(0.0, 64, 4, 2, &ONE, Vershynin).unwrap();
        assert!(close(v, 2.0 * (-8f64).exp(), 1e-15));
        assert!(close(v, 6.7e-4, 1e-5));
        let far = bound_concentration_subgaussian(0.0, 100_000, 4, 2, &ONE, Bamberger).unwrap();
        assert!(far < 1e-100);
    }

    #[test]
    fn sharpness_examples() {
        assert!(close(
            sharpness_lower_bound(0.01, 2, &ONE).unwrap(),
            0.01,
            1e-15
        ));
        assert!(close(
            sharpness_lower_bound(0.01, 3, &ONE).unwrap(),
            0.0460517,
            1e-7
        ));
        assert!(sharpness_lower_bound(1e-300, 3, &ONE).unwrap() < 1e-290);
    }

    #[test]
    fn smin_tail_examples() {
        let b = bound_smin_tail(0.01, 8, 6, 2, 1.0, &ONE).unwrap();
        assert!(close(
            b.threshold,
            0.01 * (1.0f64 - 8.0 / 36.0).sqrt(),
            1e-15
        ));
        assert!(close(b.threshold, 0.008819, 1e-6));
        assert_eq!(b.bound, 1.0);
        let half = bound_smin_tail(0.01, 18, 6, 2, 2.0, &ONE).unwrap();
        assert!(close(half.threshold, 0.5f64.sqrt() * 4.0 * 0.01, 1e-15));
        assert!(bound_smin_tail(1e-300, 8, 6, 2, 1.0, &ONE).unwrap().bound < 1e-290);
        assert!(matches!(
            bound_smin_tail(0.01, 19, 6, 2, 1.0, &ONE),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn prefactor_recovers_scale() {
        let b = [0.1, 0.01, 0.001];
        let p: Vec<f64> = b.iter().map(|x| 3.5 * x).collect();
        assert!(close(fit_prefactor(&p, &b).unwrap(), 3.5, 1e-12));
        assert!(fit_prefactor(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn config_json_defaults() {
        let cfg: BoundConfig = serde_json::from_str(r#"{"C_prime": 2.0}"#).unwrap();
        assert_eq!(cfg.c_prime, 2.0);
        assert_eq!(cfg.c_main, 1.0);
        let bad: BoundConfig = serde_json::from_str(r#"{"C_P": -1.0}"#).unwrap();
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn cdf_monotone_and_odd(l in 1usize..7, a in -1.0..1.0f64, b in -1.0..1.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(product_uniform_cdf(l, lo).unwrap() <= product_uniform_cdf(l, hi).unwrap() + 1e-15);
            let s = product_uniform_cdf(l, a).unwrap() + product_uniform_cdf(l, -a).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-14);
        }

        #[test]
        fn bounds_monotone_in_eps(l in 2usize..6, m in 1usize..20, t1 in 0.0..1.0f64, t2 in 0.0..1.0f64) {
            let top = ONE.eps_ceiling(l);
            let (a, b) = (1e-8f64.max(top * t1.min(t2)), top * t1.max(t2) * 0.999_999);
            prop_assume!(a < b);
            prop_assert!(bound_fixed_subspace(a, m, l, &ONE).unwrap() <= bound_fixed_subspace(b, m, l, &ONE).unwrap());
            prop_assert!(bound_single_direction(a, l, &ONE).unwrap() <= bound_single_direction(b, l, &ONE).unwrap());
            prop_assert!(sharpness_lower_bound(a, l, &ONE).unwrap() <= sharpness_lower_bound(b, l, &ONE).unwrap());
            prop_assert!(bound_carbery_wright(a, l, &ONE).unwrap() <= bound_carbery_wright(b, l, &ONE).unwrap());
            prop_assert!(bound_generic_subspace(a, m, 4, l, &ONE).unwrap() <= bound_generic_subspace(b, m, 4, l, &ONE).unwrap());
            prop_assert!(bound_smin_tail(a, 1, 4, l, 1.0, &ONE).unwrap().bound <= bound_smin_tail(b, 1, 4, l, 1.0, &ONE).unwrap().bound);
        }

        #[test]
        fn fixed_is_single_times_multiplier(l in 2usize..6, m in 1usize..30, t in 0.01..1.0f64) {
            let eps = ONE.eps_ceiling(l) * t * 0.01;
            let single = bound_single_direction(eps, l, &ONE).unwrap();
            let fixed = bound_fixed_subspace(eps, m, l, &ONE).unwrap();
            prop_assume!(fixed < 1.0);
            let mult = fixed_subspace_multiplier(eps, m, l, &ONE);
            prop_assert!((single * mult - fixed).abs() <= 1e-15 * fixed.max(1e-300));
        }

        #[test]
        fn sharpness_below_single(l in 2usize..7, t in 1e-6..1.0f64) {
            let eps = ONE.eps_ceiling(l) * t;
            prop_assert!(sharpness_lower_bound(eps, l, &ONE).unwrap() <= bound_single_direction(eps, l, &ONE).unwrap());
        }
    }
}
