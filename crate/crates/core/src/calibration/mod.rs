//! Population-level calibration: conditional histograms, KL divergence,
//! monotone quantile maps, and importance reweighting.
//!
//! Conditioning bins are (first-level category) x (income bracket) x
//! (discount tercile); outcomes are integer quantity buckets with an
//! overflow tail. Smoothing is additive (s = 1) at estimation time — the
//! KL routine itself never injects epsilons.

mod feedback;

pub use feedback::{
    decompose_targets, detect_bottleneck, feedback_adjust, generalization_gain_lower_bound,
    AdjustSchedule, Aggregation, BoundError, FeedbackSignal, TargetNode,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("no observations to estimate from")]
    EmptyInput,
    #[error("histogram dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("distribution Q must be strictly positive")]
    QNotPositive,
    #[error("conditioning bins differ between histograms")]
    BinMismatch,
    #[error("bin {0} has zero simulated mass")]
    ZeroSimMass(String),
}

/// One observation for conditional estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalObservation {
    pub category: String,
    pub income_bracket: String,
    pub discount: f64,
    pub quantity: u32,
}

/// Binning settings: outcome buckets 0..n_buckets-2 plus an overflow
/// bucket, discount terciles from the real data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinningConfig {
    pub n_buckets: usize,
    pub tercile_breaks: [f64; 2],
    pub min_count: u64,
    pub smoothing: f64,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            n_buckets: 11,
            tercile_breaks: [0.0, 0.1],
            min_count: 5,
            smoothing: 1.0,
        }
    }
}

impl BinningConfig {
    /// Terciles of the observed discount distribution.
    pub fn from_observations(observations: &[CalObservation]) -> BinningConfig {
        let mut discounts: Vec<f64> = observations.iter().map(|o| o.discount).collect();
        discounts.sort_by(f64::total_cmp);
        let at = |q: f64| -> f64 {
            if discounts.is_empty() {
                return 0.0;
            }
            let idx = ((discounts.len() as f64) * q) as usize;
            discounts[idx.min(discounts.len() - 1)]
        };
        BinningConfig {
            tercile_breaks: [at(1.0 / 3.0), at(2.0 / 3.0)],
            ..BinningConfig::default()
        }
    }

    fn tercile(&self, discount: f64) -> u8 {
        if discount <= self.tercile_breaks[0] {
            0
        } else if discount <= self.tercile_breaks[1] {
            1
        } else {
            2
        }
    }

    fn bucket(&self, quantity: u32) -> usize {
        (quantity as usize).min(self.n_buckets - 1)
    }
}

/// Conditioning-bin key, serialized as "category|income|T<k>".
pub type BinKey = String;

fn bin_key(config: &BinningConfig, obs: &CalObservation) -> BinKey {
    format!(
        "{}|{}|T{}",
        obs.category,
        obs.income_bracket,
        config.tercile(obs.discount)
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinHistogram {
    pub counts: Vec<u64>,
    /// Additively smoothed probabilities; always strictly positive.
    pub probs: Vec<f64>,
    pub n: u64,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalHistogram {
    pub config: BinningConfig,
    pub bins: BTreeMap<BinKey, BinHistogram>,
}

impl PartialEq for BinningConfig {
    fn eq(&self, other: &Self) -> bool {
        self.n_buckets == other.n_buckets
            && self.tercile_breaks == other.tercile_breaks
            && self.min_count == other.min_count
            && self.smoothing == other.smoothing
    }
}

fn smooth(counts: &[u64], smoothing: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + smoothing * counts.len() as f64;
    counts
        .iter()
        .map(|c| (*c as f64 + smoothing) / denom)
        .collect()
}

/// Estimate P(quantity bucket | bin) with additive smoothing; bins under
/// `min_count` observations are flagged low-confidence.
pub fn estimate_conditional(
    observations: &[CalObservation],
    config: &BinningConfig,
) -> Result<ConditionalHistogram, CalibrationError> {
    if observations.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let mut bins: BTreeMap<BinKey, Vec<u64>> = BTreeMap::new();
    for obs in observations {
        let key = bin_key(config, obs);
        let counts = bins.entry(key).or_insert_with(|| vec![0; config.n_buckets]);
        counts[config.bucket(obs.quantity)] += 1;
    }
    let bins = bins
        .into_iter()
        .map(|(key, counts)| {
            let n: u64 = counts.iter().sum();
            let histogram = BinHistogram {
                probs: smooth(&counts, config.smoothing),
                low_confidence: n < config.min_count,
                counts,
                n,
            };
            (key, histogram)
        })
        .collect();
    Ok(ConditionalHistogram {
        config: config.clone(),
        bins,
    })
}

/// Discrete KL(P || Q) in nats. Q must be strictly positive (smoothing
/// guarantees this for estimated histograms); zero-mass P entries
/// contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, CalibrationError> {
    if p.len() != q.len() {
        return Err(CalibrationError::DimensionMismatch(p.len(), q.len()));
    }
    if q.iter().any(|&v| v <= 0.0) {
        return Err(CalibrationError::QNotPositive);
    }
    let mut kl = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi > 0.0 {
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Per-bin monotone non-decreasing piecewise-linear map on quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinMap {
    /// (input quantity, output quantity) knots, inputs strictly increasing.
    pub knots: Vec<(f64, f64)>,
    pub identity: bool,
}

impl BinMap {
    pub fn identity_map() -> BinMap {
        BinMap {
            knots: Vec::new(),
            identity: true,
        }
    }

    /// Piecewise-linear evaluation with end-slope extrapolation, clamped
    /// to non-negative outputs.
    pub fn apply_f64(&self, quantity: f64) -> f64 {
        if self.identity || self.knots.is_empty() {
            return quantity.max(0.0);
        }
        if self.knots.len() == 1 {
            return self.knots[0].1.max(0.0);
        }
        let first = self.knots[0];
        let last = self.knots[self.knots.len() - 1];
        let value = if quantity <= first.0 {
            let second = self.knots[1];
            let slope = (second.1 - first.1) / (second.0 - first.0);
            first.1 + slope * (quantity - first.0)
        } else if quantity >= last.0 {
            let prev = self.knots[self.knots.len() - 2];
            let slope = (last.1 - prev.1) / (last.0 - prev.0);
            last.1 + slope * (quantity - last.0)
        } else {
            let mut value = last.1;
            for pair in self.knots.windows(2) {
                let (x0, y0) = pair[0];
                let (x1, y1) = pair[1];
                if quantity >= x0 && quantity <= x1 {
                    let t = if x1 > x0 { (quantity - x0) / (x1 - x0) } else { 0.0 };
                    value = y0 + t * (y1 - y0);
                    break;
                }
            }
            value
        };
        value.max(0.0)
    }

    /// Map and round to the nearest non-negative integer quantity.
    pub fn apply(&self, quantity: u32) -> u32 {
        self.apply_f64(quantity as f64).round().max(0.0) as u32
    }

    pub fn is_monotone(&self) -> bool {
        self.knots.windows(2).all(|p| p[1].1 >= p[0].1)
    }
}

/// The calibration map f: one monotone quantile map per conditioning bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub bins: BTreeMap<BinKey, BinMap>,
    pub n_buckets: usize,
}

impl CalibrationMap {
    pub fn apply(&self, bin: &str, quantity: u32) -> u32 {
        match self.bins.get(bin) {
            Some(map) => map.apply(quantity),
            None => quantity,
        }
    }
}

/// Raw empirical CDF over bucket counts. Quantile maps are built from
/// raw CDFs; smoothing only enters divergence estimation.
fn raw_cdf(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = (total as f64).max(1.0);
    let mut acc = 0u64;
    counts
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / denom
        })
        .collect()
}

/// Piecewise-linear inverse CDF over bucket values -1..B-1 (the CDF is 0
/// at the virtual value -1 and F[v] at each bucket v).
fn inverse_cdf(cdf: &[f64], u: f64) -> f64 {
    let mut lo_x = -1.0;
    let mut lo_f = 0.0;
    for (v, f) in cdf.iter().enumerate() {
        if u <= *f {
            let span = f - lo_f;
            let t = if span > 0.0 { (u - lo_f) / span } else { 1.0 };
            return lo_x + t * (v as f64 - lo_x);
        }
        lo_x = v as f64;
        lo_f = *f;
    }
    (cdf.len() - 1) as f64
}

/// Push simulated counts through a bin map and re-smooth, giving the
/// calibrated distribution estimate under the same estimator.
fn pushforward(counts: &[u64], map: &BinMap, n_buckets: usize, smoothing: f64) -> Vec<f64> {
    let mut pushed = vec![0u64; n_buckets];
    for (v, c) in counts.iter().enumerate() {
        if *c > 0 {
            let target = map.apply(v as u32).min(n_buckets as u32 - 1) as usize;
            pushed[target] += c;
        }
    }
    smooth(&pushed, smoothing)
}

/// Fit the per-bin quantile-matching map. The fitted map is kept only
/// when it does not increase KL(P_real || f(P_sim)) versus the identity —
/// checked here, per bin, not assumed.
pub fn fit_calibration(
    sim: &ConditionalHistogram,
    real: &ConditionalHistogram,
) -> Result<CalibrationMap, CalibrationError> {
    if sim.config.n_buckets != real.config.n_buckets {
        return Err(CalibrationError::DimensionMismatch(
            sim.config.n_buckets,
            real.config.n_buckets,
        ));
    }
    let n_buckets = real.config.n_buckets;
    let mut bins = BTreeMap::new();
    for (key, real_bin) in &real.bins {
        let Some(sim_bin) = sim.bins.get(key) else {
            // No simulated mass for this conditioning bin.
            bins.insert(key.clone(), BinMap::identity_map());
            continue;
        };
        let sim_cdf = raw_cdf(&sim_bin.counts);
        let real_cdf = raw_cdf(&real_bin.counts);
        let mut knots: Vec<(f64, f64)> = Vec::with_capacity(n_buckets);
        let mut prev = 0.0f64;
        for v in 0..n_buckets {
            let mapped = inverse_cdf(&real_cdf, sim_cdf[v]).max(0.0);
            let mono = mapped.max(prev);
            knots.push((v as f64, mono));
            prev = mono;
        }
        let candidate = BinMap {
            knots,
            identity: false,
        };
        debug_assert!(candidate.is_monotone());

        let kl_identity = kl_divergence(&real_bin.probs, &sim_bin.probs)?;
        let calibrated = pushforward(
            &sim_bin.counts,
            &candidate,
            n_buckets,
            real.config.smoothing,
        );
        let kl_fitted = kl_divergence(&real_bin.probs, &calibrated)?;
        if kl_fitted <= kl_identity {
            bins.insert(key.clone(), candidate);
        } else {
            bins.insert(key.clone(), BinMap::identity_map());
        }
    }
    Ok(CalibrationMap { bins, n_buckets })
}

/// KL(P_real || f(P_sim)) summed over matched bins, for before/after
/// comparisons.
pub fn calibration_kl(
    map: &CalibrationMap,
    sim: &ConditionalHistogram,
    real: &ConditionalHistogram,
) -> Result<f64, CalibrationError> {
    let mut total = 0.0;
    for (key, real_bin) in &real.bins {
        let Some(sim_bin) = sim.bins.get(key) else {
            continue;
        };
        let identity = BinMap::identity_map();
        let bin_map = map.bins.get(key).unwrap_or(&identity);
        let calibrated = pushforward(
            &sim_bin.counts,
            bin_map,
            real.config.n_buckets,
            real.config.smoothing,
        );
        total += kl_divergence(&real_bin.probs, &calibrated)?;
    }
    Ok(total)
}

/// Apply the calibration map to a decision quantity: map, round, clamp at
/// zero. Product selection is untouched by design.
pub fn apply_calibration(map: &CalibrationMap, bin: &str, quantity: u32) -> u32 {
    map.apply(bin, quantity)
}

/// Per-bin importance weights P_real(bin) / P_sim(bin) over the bin
/// marginals, clipped into [w_min, w_max].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReweightTable {
    pub weights: BTreeMap<BinKey, f64>,
    pub w_min: f64,
    pub w_max: f64,
    /// E_sim[w] before clipping would be exactly 1; reported after.
    pub expectation_under_sim: f64,
}

pub fn reweight(
    real: &ConditionalHistogram,
    sim: &ConditionalHistogram,
    w_min: f64,
    w_max: f64,
) -> Result<ReweightTable, CalibrationError> {
    let keys: std::collections::BTreeSet<&BinKey> =
        real.bins.keys().chain(sim.bins.keys()).collect();
    if keys.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let total_real: u64 = real.bins.values().map(|b| b.n).sum();
    let total_sim: u64 = sim.bins.values().map(|b| b.n).sum();
    let k = keys.len() as f64;
    let mut weights = BTreeMap::new();
    let mut expectation = 0.0;
    for key in keys {
        // Additive smoothing over bins keeps both marginals positive.
        let p_real = (real.bins.get(key).map(|b| b.n).unwrap_or(0) as f64 + 1.0)
            / (total_real as f64 + k);
        let p_sim = (sim.bins.get(key).map(|b| b.n).unwrap_or(0) as f64 + 1.0)
            / (total_sim as f64 + k);
        let w = (p_real / p_sim).clamp(w_min, w_max);
        expectation += p_sim * w;
        weights.insert(key.clone(), w);
    }
    Ok(ReweightTable {
        weights,
        w_min,
        w_max,
        expectation_under_sim: expectation,
    })
}
