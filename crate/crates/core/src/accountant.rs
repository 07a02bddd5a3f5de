//! Rényi-DP privacy ledger.
//!
//! Each optimizer step of a noised run charges the Gaussian mechanism's RDP,
//! `α / (2σ²)` at every tracked order `α`. Steps compose additively, and the
//! running totals convert to `(ε, δ)` with
//!
//! ```text
//! ε = min_α  total(α) + ln(1/δ) / (α − 1)
//! ```
//!
//! A step that used several noise multipliers (token-wise noise) is charged at
//! the smallest nonzero one. A step that used none makes the whole run
//! non-private; conversion then reports an infinite ε.
//!
//! With `amplify_subsampling` on, integer orders use the Poisson-subsampled
//! Gaussian bound `ln(Σ_k C(α,k) (1−q)^{α−k} q^k e^{(k²−k)/(2σ²)}) / (α−1)`
//! instead. This is experimental; the default is the plain bound.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DELTA: f64 = 1e-5;
pub const PARITY_ORDER: f64 = 32.0;

#[derive(Debug, Error, PartialEq)]
pub enum AccountError {
    #[error("Rényi order must be > 1, got {0}")]
    Order(f64),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("noise multiplier must be >= 0, got {0}")]
    Sigma(f64),
    #[error("sample rate must lie in (0, 1], got {0}")]
    SampleRate(f64),
    #[error("no steps recorded")]
    NoSteps,
    #[error("empty order grid")]
    EmptyGrid,
}

/// RDP of one Gaussian-mechanism release with noise multiplier `sigma` at
/// order `alpha`. `sigma == 0` is infinite loss.
pub fn step_rdp(sigma: f64, alpha: f64) -> Result<f64, AccountError> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(AccountError::Order(alpha));
    }
    if !(sigma >= 0.0) {
        return Err(AccountError::Sigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(alpha / (2.0 * sigma * sigma))
}

/// RDP of the Poisson-subsampled Gaussian mechanism. Exact for integer
/// orders; other orders fall back to the unsubsampled bound, which is never
/// smaller.
pub fn step_rdp_subsampled(q: f64, sigma: f64, alpha: f64) -> Result<f64, AccountError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(AccountError::SampleRate(q));
    }
    let plain = step_rdp(sigma, alpha)?;
    if q == 1.0 || !plain.is_finite() || alpha.fract() != 0.0 || alpha > 4096.0 {
        return Ok(plain);
    }
    let a = alpha as u64;
    let (ln_q, ln_1q) = (q.ln(), (-q).ln_1p());
    let mut ln_binom = 0.0f64;
    let mut terms = Vec::with_capacity(a as usize + 1);
    for k in 0..=a {
        if k > 0 {
            ln_binom += ((a - k + 1) as f64).ln() - (k as f64).ln();
        }
        let kf = k as f64;
        terms.push(ln_binom + (a - k) as f64 * ln_1q + kf * ln_q + (kf * kf - kf) / (2.0 * sigma * sigma));
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ln_a = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok((ln_a / (alpha - 1.0)).clamp(0.0, plain))
}

/// The orders 2, 3, …, 64.
pub fn default_orders() -> Vec<f64> {
    (2..=64).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub idx: u64,
    /// Charged noise multiplier; `None` for a non-private step.
    pub sigma: Option<f64>,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub epsilon: f64,
    pub delta: f64,
    pub argmin_order: f64,
    pub epsilon_at_32: Option<f64>,
    /// Set when some step added no noise; `epsilon` is then infinite.
    pub non_private: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    orders: Vec<f64>,
    totals: Vec<f64>,
    delta: f64,
    amplify_subsampling: bool,
    steps: Vec<StepRecord>,
    non_private: Option<String>,
}

impl PrivacyLedger {
    /// Builds a ledger over `orders`. The parity order 32 is added when
    /// missing; duplicates are removed and the grid is sorted.
    pub fn new(orders: &[f64], delta: f64) -> Result<Self, AccountError> {
        if orders.is_empty() {
            return Err(AccountError::EmptyGrid);
        }
        if let Some(&bad) = orders.iter().find(|&&a| !(a > 1.0) || !a.is_finite()) {
            return Err(AccountError::Order(bad));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(AccountError::Delta(delta));
        }
        let mut orders = orders.to_vec();
        if !orders.contains(&PARITY_ORDER) {
            orders.push(PARITY_ORDER);
        }
        orders.sort_by(f64::total_cmp);
        orders.dedup();
        Ok(PrivacyLedger {
            totals: vec![0.0; orders.len()],
            orders,
            delta,
            amplify_subsampling: false,
            steps: Vec::new(),
            non_private: None,
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(&default_orders(), DEFAULT_DELTA).expect("default grid is valid")
    }

    pub fn amplify_subsampling(mut self, on: bool) -> Self {
        self.amplify_subsampling = on;
        self
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn is_private(&self) -> bool {
        self.non_private.is_none()
    }

    pub fn total_at(&self, order: f64) -> Option<f64> {
        self.orders.iter().position(|&a| a == order).map(|i| self.totals[i])
    }

    /// Charges one step. `sigmas` lists the multipliers used in the step;
    /// zeros are ignored and the smallest positive value is charged.
    pub fn record_step(&mut self, sigmas: &[f64], q: f64) -> Result<(), AccountError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(AccountError::SampleRate(q));
        }
        if let Some(&bad) = sigmas.iter().find(|s| !(**s >= 0.0)) {
            return Err(AccountError::Sigma(bad));
        }
        let idx = self.steps.len() as u64;
        let worst = sigmas.iter().copied().filter(|&s| s > 0.0).fold(None, |m: Option<f64>, s| {
            Some(m.map_or(s, |m| m.min(s)))
        });
        match worst {
            Some(sigma) => {
                for (total, &alpha) in self.totals.iter_mut().zip(&self.orders) {
                    *total += if self.amplify_subsampling {
                        step_rdp_subsampled(q, sigma, alpha)?
                    } else {
                        step_rdp(sigma, alpha)?
                    };
                }
            }
            None => {
                log::warn!("step {idx} added no noise; run is no longer differentially private");
                self.non_private
                    .get_or_insert_with(|| format!("step {idx} added no noise (no token or sample had sigma > 0)"));
                self.totals.iter_mut().for_each(|t| *t = f64::INFINITY);
            }
        }
        self.steps.push(StepRecord { idx, sigma: worst, q });
        Ok(())
    }

    pub fn convert(&self) -> Result<Conversion, AccountError> {
        if self.steps.is_empty() {
            return Err(AccountError::NoSteps);
        }
        let log_inv_delta = (1.0 / self.delta).ln();
        let at = |i: usize| self.totals[i] + log_inv_delta / (self.orders[i] - 1.0);
        let (best, epsilon) = (0..self.orders.len())
            .map(|i| (i, at(i)))
            .fold((0, f64::INFINITY), |acc, (i, e)| if e < acc.1 { (i, e) } else { acc });
        Ok(Conversion {
            epsilon,
            delta: self.delta,
            argmin_order: self.orders[best],
            epsilon_at_32: self.orders.iter().position(|&a| a == PARITY_ORDER).map(at),
            non_private: self.non_private.clone(),
        })
    }

    pub fn export(&self) -> LedgerExport {
        let conv = self.convert().ok();
        LedgerExport {
            orders: self.orders.clone(),
            totals: self.totals.clone(),
            steps: self.steps.clone(),
            delta: self.delta,
            epsilon: conv.as_ref().map(|c| c.epsilon).filter(|e| e.is_finite()),
            argmin_order: conv.as_ref().map(|c| c.argmin_order),
            epsilon_at_32: conv.as_ref().and_then(|c| c.epsilon_at_32).filter(|e| e.is_finite()),
            amplify_subsampling: self.amplify_subsampling,
            non_private: self.non_private.clone(),
        }
    }
}

/// JSON form of a ledger. Infinite values are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerExport {
    pub orders: Vec<f64>,
    pub totals: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub delta: f64,
    pub epsilon: Option<f64>,
    pub argmin_order: Option<f64>,
    pub epsilon_at_32: Option<f64>,
    pub amplify_subsampling: bool,
    pub non_private: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN_1E5: f64 = 11.512925464970229;

    #[test]
    fn closed_forms() {
        assert_eq!(step_rdp(2.0, 32.0).unwrap(), 4.0);
        assert!((step_rdp(3.0, 32.0).unwrap() - 32.0 / 18.0).abs() < 1e-15);
        assert_eq!(step_rdp(1.0, 2.0).unwrap(), 1.0);
        assert_eq!(step_rdp(0.0, 2.0).unwrap(), f64::INFINITY);
        assert!(step_rdp(1.0, 1.0).is_err());
    }

    #[test]
    fn three_steps_at_sigma_three() {
        let mut l = PrivacyLedger::new(&[32.0], DEFAULT_DELTA).unwrap();
        for _ in 0..3 {
            l.record_step(&[3.0], 0.1).unwrap();
        }
        assert!((l.total_at(32.0).unwrap() - 16.0 / 3.0).abs() < 1e-12);
        let c = l.convert().unwrap();
        assert!((c.epsilon - (16.0 / 3.0 + LN_1E5 / 31.0)).abs() < 1e-9);
        assert!((c.epsilon - 5.7047).abs() < 1e-4);
    }

    #[test]
    fn worst_tier_is_charged() {
        let mut l = PrivacyLedger::new(&[32.0], DEFAULT_DELTA).unwrap();
        l.record_step(&[0.0, 3.0, 2.0], 0.1).unwrap();
        assert_eq!(l.steps()[0].sigma, Some(2.0));
        assert_eq!(l.total_at(32.0), Some(4.0));
        let c = l.convert().unwrap();
        assert!((c.epsilon - 4.3714).abs() < 1e-4);
    }

    #[test]
    fn zero_steps() {
        let l = PrivacyLedger::with_defaults();
        assert!(l.totals().iter().all(|&t| t == 0.0));
        assert_eq!(l.convert(), Err(AccountError::NoSteps));
    }

    #[test]
    fn noiseless_step_is_non_private() {
        let mut l = PrivacyLedger::with_defaults();
        l.record_step(&[0.0, 0.0], 0.1).unwrap();
        let c = l.convert().unwrap();
        assert!(c.epsilon.is_infinite());
        assert!(c.non_private.is_some());
        let e = l.export();
        assert_eq!(e.epsilon, None);
        assert!(serde_json::to_string(&e).unwrap().contains("\"epsilon\":null"));
    }

    #[test]
    fn grid_always_has_parity_order() {
        let l = PrivacyLedger::new(&[4.0, 2.0, 4.0], DEFAULT_DELTA).unwrap();
        assert_eq!(l.orders(), &[2.0, 4.0, 32.0]);
        assert!(PrivacyLedger::new(&[1.0], DEFAULT_DELTA).is_err());
        assert!(PrivacyLedger::new(&[2.0], 1.0).is_err());
    }

    #[test]
    fn larger_grid_never_worse() {
        let mut small = PrivacyLedger::new(&[32.0], DEFAULT_DELTA).unwrap();
        let mut big = PrivacyLedger::with_defaults();
        small.record_step(&[2.0], 0.1).unwrap();
        big.record_step(&[2.0], 0.1).unwrap();
        let (s, b) = (small.convert().unwrap(), big.convert().unwrap());
        assert!(b.epsilon <= s.epsilon);
        assert_eq!(b.epsilon_at_32, Some(s.epsilon));
    }

    #[test]
    fn subsampled_full_rate_is_plain() {
        for alpha in [2.0, 8.0, 32.0] {
            let a = step_rdp_subsampled(1.0, 2.0, alpha).unwrap();
            assert!((a - step_rdp(2.0, alpha).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn subsampled_matches_quadrature() {
        // E_{z~N(0,σ²)} [((1-q) + q·exp((2z-1)/(2σ²)))^α], trapezoid rule
        let quad = |q: f64, sigma: f64, alpha: f64| {
            let (lo, hi, n) = (-30.0 * sigma, 30.0 * sigma + 30.0, 400_000);
            let h = (hi - lo) / n as f64;
            let f = |z: f64| {
                let pdf = (-z * z / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let ratio = (1.0 - q) + q * ((2.0 * z - 1.0) / (2.0 * sigma * sigma)).exp();
                pdf * ratio.powf(alpha)
            };
            let mut s = 0.5 * (f(lo) + f(hi));
            for i in 1..n {
                s += f(lo + i as f64 * h);
            }
            (s * h).ln() / (alpha - 1.0)
        };
        for (q, sigma, alpha) in [(0.1, 2.0, 8.0), (0.1, 1.0, 4.0), (0.05, 3.0, 32.0), (0.5, 2.0, 3.0)] {
            let closed = step_rdp_subsampled(q, sigma, alpha).unwrap();
            let numeric = quad(q, sigma, alpha);
            assert!(
                (closed - numeric).abs() <= 1e-6 * numeric.abs().max(1e-3),
                "q={q} σ={sigma} α={alpha}: {closed} vs {numeric}"
            );
            assert!(closed <= step_rdp(sigma, alpha).unwrap());
        }
    }

    proptest! {
        #[test]
        fn composition_is_additive(sigma in 0.5f64..5.0, t in 1usize..40) {
            let mut l = PrivacyLedger::with_defaults();
            for _ in 0..t {
                l.record_step(&[sigma], 0.1).unwrap();
            }
            for (&alpha, &total) in l.orders().iter().zip(l.totals()) {
                let single = step_rdp(sigma, alpha).unwrap();
                prop_assert!((total - t as f64 * single).abs() <= 1e-12 * total.max(1.0));
            }
        }

        #[test]
        fn convert_is_monotone(sigmas in prop::collection::vec(0.5f64..5.0, 1..20)) {
            let mut l = PrivacyLedger::with_defaults();
            let mut last = 0.0;
            for s in sigmas {
                l.record_step(&[s], 0.1).unwrap();
                let e = l.convert().unwrap().epsilon;
                prop_assert!(e >= last);
                last = e;
            }
        }
    }
}
