//! Privacy accounting for the subsampled Gaussian mechanism.
//!
//! Per-round divergences are tracked on an integer grid of Renyi orders and
//! composed additively; the reported epsilon is the tail-bound conversion
//! `min_alpha [sum_rounds rdp(alpha) + ln(1/delta) / (alpha - 1)]`.
//! Sampling is Poisson: each agent joins a round independently with
//! probability `p`, matching the simulator's cohort draw.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Default Renyi order grid: every integer order in [2, 512].
pub const DEFAULT_MIN_ORDER: u32 = 2;
pub const DEFAULT_MAX_ORDER: u32 = 512;

/// Renyi divergence of order `alpha` between N(0, sigma^2) and N(1, sigma^2):
/// `alpha / (2 sigma^2)`, the per-release RDP of the unsubsampled Gaussian
/// mechanism at sensitivity 1.
pub fn rdp_gaussian(sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::config("rdp_gaussian: sigma must be positive"));
    }
    if !(alpha > 1.0) {
        return Err(Error::config("rdp_gaussian: order must exceed 1"));
    }
    Ok(alpha / (2.0 * sigma * sigma))
}

/// RDP of the Poisson-subsampled Gaussian mechanism at integer order
/// `alpha >= 2`, via the exact binomial expansion
/// `(1/(alpha-1)) * ln( sum_k C(alpha,k) (1-p)^(alpha-k) p^k e^{k(k-1)/(2 sigma^2)} )`.
///
/// Fractional orders are not supported: the ledger works on an integer grid
/// and rejects orders below 2.
pub fn rdp_subsampled_gaussian(sample_prob: f64, sigma: f64, alpha: u32) -> Result<f64> {
    if !(sample_prob > 0.0 && sample_prob <= 1.0) {
        return Err(Error::config(
            "rdp_subsampled_gaussian: sampling probability must be in (0, 1]",
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::config(
            "rdp_subsampled_gaussian: sigma must be positive",
        ));
    }
    if alpha < 2 {
        return Err(Error::config("rdp_subsampled_gaussian: order must be >= 2"));
    }
    if sample_prob == 1.0 {
        return rdp_gaussian(sigma, alpha as f64);
    }
    let a = alpha as f64;
    let log_p = sample_prob.ln();
    let log_1p = libm::log1p(-sample_prob);
    // log-sum-exp over the binomial terms; k(k-1)/(2 sigma^2) overflows a
    // plain exp well before alpha reaches the top of the grid.
    let mut log_terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        let kf = k as f64;
        let log_binom = libm::lgamma(a + 1.0) - libm::lgamma(kf + 1.0) - libm::lgamma(a - kf + 1.0);
        let term =
            log_binom + kf * log_p + (a - kf) * log_1p + kf * (kf - 1.0) / (2.0 * sigma * sigma);
        log_terms.push(term);
    }
    let max = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + log_terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
    Ok((log_sum / (a - 1.0)).max(0.0))
}

/// One recorded mechanism release.
#[derive(Debug, Clone, Copy, PartialEq)]
struct RoundEntry {
    sample_prob: f64,
    sigma: f64,
    count: u64,
}

/// Accumulated privacy state of one experiment.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    delta: f64,
    orders: Vec<u32>,
    entries: Vec<RoundEntry>,
}

impl PrivacyLedger {
    pub fn new(delta: f64) -> Result<Self> {
        Self::with_orders(delta, (DEFAULT_MIN_ORDER..=DEFAULT_MAX_ORDER).collect())
    }

    pub fn with_orders(delta: f64, orders: Vec<u32>) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::config("ledger delta must be in (0, 1)"));
        }
        if orders.is_empty() || orders.iter().any(|&a| a < 2) {
            return Err(Error::config("ledger orders must be integers >= 2"));
        }
        Ok(PrivacyLedger {
            delta,
            orders,
            entries: Vec::new(),
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Number of recorded releases.
    pub fn rounds(&self) -> u64 {
        self.entries.iter().map(|e| e.count).sum()
    }

    /// Records one round of the subsampled Gaussian mechanism.
    pub fn record_round(&mut self, sample_prob: f64, sigma: f64) -> Result<()> {
        if !(sigma > 0.0) {
            return Err(Error::config("record_round: sigma must be positive"));
        }
        if !(sample_prob > 0.0 && sample_prob <= 1.0) {
            return Err(Error::config("record_round: sample_prob must be in (0, 1]"));
        }
        if let Some(last) = self.entries.last_mut() {
            if last.sample_prob == sample_prob && last.sigma == sigma {
                last.count += 1;
                return Ok(());
            }
        }
        self.entries.push(RoundEntry {
            sample_prob,
            sigma,
            count: 1,
        });
        Ok(())
    }

    /// Composes all recorded rounds and converts to epsilon at the ledger's
    /// delta: `min_alpha [ total_rdp(alpha) + ln(1/delta) / (alpha - 1) ]`.
    pub fn epsilon(&self) -> Result<f64> {
        if self.entries.is_empty() {
            return Err(Error::Query(format!(
                "privacy ledger is empty at delta {}",
                self.delta
            )));
        }
        let log_inv_delta = (1.0 / self.delta).ln();
        let mut best = f64::INFINITY;
        for &alpha in &self.orders {
            let mut total = 0.0;
            for entry in &self.entries {
                total += entry.count as f64
                    * rdp_subsampled_gaussian(entry.sample_prob, entry.sigma, alpha)?;
            }
            let eps = total + log_inv_delta / (alpha as f64 - 1.0);
            best = best.min(eps);
        }
        Ok(best)
    }
}

/// Result of a noise calibration search.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CalibrationResult {
    pub sigma: f64,
    pub achieved_epsilon: f64,
    pub iterations: u32,
}

/// Epsilon spent by `rounds` identical releases at (p, sigma, delta).
pub fn epsilon_for(sigma: f64, delta: f64, rounds: u64, sample_prob: f64) -> Result<f64> {
    let mut ledger = PrivacyLedger::new(delta)?;
    if rounds == 0 {
        return Ok(0.0);
    }
    ledger.record_round(sample_prob, sigma)?;
    ledger.entries[0].count = rounds;
    ledger.epsilon()
}

const SIGMA_LO: f64 = 0.1;
const SIGMA_HI: f64 = 1.0e4;

/// Finds the smallest noise multiplier whose composed spend over `rounds`
/// releases is at most `target_epsilon`, by bisection on [0.1, 1e4].
///
/// The search is valid because epsilon is non-increasing in sigma; it stops
/// once the achieved epsilon lands in [0.99, 1.0] times the target.
pub fn calibrate_sigma(
    target_epsilon: f64,
    delta: f64,
    rounds: u64,
    sample_prob: f64,
) -> Result<CalibrationResult> {
    if !(target_epsilon > 0.0) {
        return Err(Error::config(
            "calibrate_sigma: target epsilon must be positive",
        ));
    }
    if rounds == 0 {
        return Err(Error::config("calibrate_sigma: need at least one round"));
    }
    if epsilon_for(SIGMA_LO, delta, rounds, sample_prob)? <= target_epsilon {
        return Err(Error::Calibration(format!(
            "target epsilon {target_epsilon} is met by the minimum sigma {SIGMA_LO}; \
             no calibration needed in [{SIGMA_LO}, {SIGMA_HI}]"
        )));
    }
    let mut hi = SIGMA_HI;
    let hi_eps = epsilon_for(hi, delta, rounds, sample_prob)?;
    if hi_eps > target_epsilon {
        return Err(Error::Calibration(format!(
            "target epsilon {target_epsilon} unreachable: sigma {SIGMA_HI} still spends {hi_eps}"
        )));
    }
    let mut lo = SIGMA_LO;
    let mut achieved = hi_eps;
    let mut iterations = 0;
    while iterations < 200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let eps = epsilon_for(mid, delta, rounds, sample_prob)?;
        if eps <= target_epsilon {
            hi = mid;
            achieved = eps;
            if achieved >= 0.99 * target_epsilon {
                break;
            }
        } else {
            lo = mid;
        }
    }
    if achieved < 0.99 * target_epsilon {
        return Err(Error::Calibration(format!(
            "bisection did not tighten into [0.99, 1.0] x target {target_epsilon}; got {achieved}"
        )));
    }
    Ok(CalibrationResult {
        sigma: hi,
        achieved_epsilon: achieved,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_rdp_closed_form() {
        assert!((rdp_gaussian(1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        // sigma -> infinity: indistinguishable.
        assert!(rdp_gaussian(1e9, 2.0).unwrap() < 1e-17);
        // Doubling sigma quarters the divergence.
        let base = rdp_gaussian(1.5, 8.0).unwrap();
        let double = rdp_gaussian(3.0, 8.0).unwrap();
        assert!((base / double - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rdp_rejects_bad_order() {
        assert!(matches!(rdp_gaussian(1.0, 1.0), Err(Error::Config(_))));
        assert!(matches!(rdp_gaussian(0.0, 2.0), Err(Error::Config(_))));
    }

    #[test]
    fn full_sampling_reduces_to_gaussian() {
        for alpha in [2u32, 4, 16, 64, 512] {
            for sigma in [0.5, 1.0, 2.0, 8.0] {
                let sub = rdp_subsampled_gaussian(1.0, sigma, alpha).unwrap();
                let full = rdp_gaussian(sigma, alpha as f64).unwrap();
                assert!((sub - full).abs() < 1e-9, "alpha {alpha} sigma {sigma}");
            }
        }
        // p = 1, sigma = 2, alpha = 4 => 4 / (2 * 4) = 0.5.
        assert!((rdp_subsampled_gaussian(1.0, 2.0, 4).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn order_two_has_closed_form() {
        // A_2 = 1 + p^2 (e^{1/sigma^2} - 1).
        for &(p, sigma) in &[(0.01, 1.0), (0.1, 0.7), (0.5, 2.0)] {
            let want = libm::log1p(p * p * libm::expm1(1.0 / (sigma * sigma)));
            let got = rdp_subsampled_gaussian(p, sigma, 2).unwrap();
            assert!((got - want).abs() < 1e-12, "p {p} sigma {sigma}");
        }
    }

    #[test]
    fn subsampled_rdp_is_monotone_in_sampling_probability() {
        for alpha in [2u32, 8, 32] {
            let mut last = 0.0;
            for i in 1..=20 {
                let p = i as f64 / 20.0;
                let v = rdp_subsampled_gaussian(p, 1.2, alpha).unwrap();
                assert!(v >= last - 1e-12, "alpha {alpha} p {p}");
                last = v;
            }
        }
    }

    #[test]
    fn ledger_epsilon_is_bounded_by_single_order_term() {
        let mut ledger = PrivacyLedger::new(1e-5).unwrap();
        ledger.record_round(1.0, 1.0).unwrap();
        let eps = ledger.epsilon().unwrap();
        let order2 = 1.0 + (1.0f64 / 1e-5).ln();
        assert!((order2 - 12.513).abs() < 0.01);
        assert!(eps <= order2);
        assert!(eps > 0.0);
    }

    #[test]
    fn empty_ledger_is_a_query_error() {
        let ledger = PrivacyLedger::new(1e-5).unwrap();
        assert!(matches!(ledger.epsilon(), Err(Error::Query(_))));
    }

    #[test]
    fn epsilon_grows_with_rounds() {
        let mut last = 0.0;
        for t in [1u64, 2, 5, 10, 50, 200] {
            let eps = epsilon_for(1.1, 1e-5, t, 0.1).unwrap();
            assert!(eps > last, "t {t} eps {eps}");
            last = eps;
        }
    }

    #[test]
    fn epsilon_shrinks_with_sigma() {
        let mut last = f64::INFINITY;
        for i in 1..=20 {
            let sigma = 0.5 + 0.25 * i as f64;
            let eps = epsilon_for(sigma, 1e-5, 100, 0.05).unwrap();
            assert!(eps <= last + 1e-12, "sigma {sigma} eps {eps}");
            last = eps;
        }
    }

    #[test]
    fn repeated_rounds_match_scaled_single_entry() {
        let t = 37;
        let mut ledger = PrivacyLedger::new(1e-6).unwrap();
        for _ in 0..t {
            ledger.record_round(0.2, 1.3).unwrap();
        }
        assert_eq!(ledger.rounds(), t);
        let direct = epsilon_for(1.3, 1e-6, t, 0.2).unwrap();
        assert!((ledger.epsilon().unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn calibration_round_trip_is_tight() {
        for &(eps, t, p) in &[(2.0, 100u64, 0.05), (4.0, 50, 0.1), (8.0, 300, 0.02)] {
            let result = calibrate_sigma(eps, 1e-5, t, p).unwrap();
            let achieved = epsilon_for(result.sigma, 1e-5, t, p).unwrap();
            assert!(
                achieved <= eps && achieved >= 0.99 * eps,
                "achieved {achieved}"
            );
            assert_eq!(achieved, result.achieved_epsilon);
        }
    }

    #[test]
    fn larger_target_gives_smaller_sigma() {
        let tight = calibrate_sigma(1.0, 1e-5, 100, 0.05).unwrap();
        let loose = calibrate_sigma(6.0, 1e-5, 100, 0.05).unwrap();
        assert!(loose.sigma < tight.sigma);
    }

    #[test]
    fn sigma_scales_with_sqrt_rounds() {
        // Needs a noise level high enough that the composed divergence is in
        // its quadratic regime; a tight epsilon target puts it there.
        let t = 100u64;
        let s1 = calibrate_sigma(0.5, 1e-5, t, 0.05).unwrap().sigma;
        let s4 = calibrate_sigma(0.5, 1e-5, 4 * t, 0.05).unwrap().sigma;
        let ratio = s4 / s1;
        assert!((1.8..=2.2).contains(&ratio), "ratio {ratio}");

        let s1 = calibrate_sigma(3.0, 1e-5, t, 1.0).unwrap().sigma;
        let s4 = calibrate_sigma(3.0, 1e-5, 4 * t, 1.0).unwrap().sigma;
        let ratio = s4 / s1;
        assert!((1.8..=2.2).contains(&ratio), "full-sampling ratio {ratio}");
    }

    #[test]
    fn unreachable_target_is_a_calibration_error() {
        // Even sigma = 1e4 cannot push a huge composition under epsilon 1e-9.
        assert!(matches!(
            calibrate_sigma(1e-9, 1e-5, 1_000_000, 1.0),
            Err(Error::Calibration(_))
        ));
    }
}
