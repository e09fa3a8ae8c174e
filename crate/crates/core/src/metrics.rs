//! The evaluation harness: hit rate, quantity error, stability, loss
//! aggregation, time-cost normalization, and run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{RetailDecision, WholesaleDecision};
use crate::data::OodSplit;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no valid instances to score")]
    NoValidInstances,
    #[error("no instances with a purchase prediction")]
    NoPurchasePredictions,
    #[error("instance {0} has fewer than 2 stability samples")]
    TooFewSamples(String),
    #[error("need at least 2 values to normalize")]
    TooFewValues,
    #[error("episodes and truth disagree on instance ids; first offender {0}")]
    IdMismatch(String),
    #[error("reports come from different configurations: {0} vs {1}")]
    ConfigMismatch(String, String),
    #[error("ground-truth quantity must be >= 1 on instance {0}")]
    BadTruth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Retail(RetailDecision),
    Wholesale(WholesaleDecision),
}

impl Prediction {
    pub fn product_id(&self) -> Option<&str> {
        match self {
            Prediction::Retail(d) => d.product_id.as_deref(),
            Prediction::Wholesale(d) => Some(&d.product_id),
        }
    }

    /// Quantity when the prediction commits to a purchase.
    pub fn purchase_quantity(&self) -> Option<u32> {
        match self {
            Prediction::Retail(d) if d.buy => Some(d.quantity),
            Prediction::Retail(_) => None,
            Prediction::Wholesale(d) => Some(d.quantity),
        }
    }
}

/// One evaluation instance: ground truth vs prediction, with optional
/// stability samples and wall time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalInstance {
    pub id: String,
    pub truth_product: String,
    pub truth_quantity: u32,
    /// None when the agent response never parsed (invalid episode).
    pub prediction: Option<Prediction>,
    #[serde(default)]
    pub samples: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_secs: Option<f64>,
}

impl EvalInstance {
    fn validate(&self) -> Result<(), MetricsError> {
        if self.truth_quantity < 1 {
            return Err(MetricsError::BadTruth(self.id.clone()));
        }
        Ok(())
    }

    fn hit(&self) -> bool {
        self.prediction
            .as_ref()
            .and_then(|p| p.product_id())
            .map(|id| id == self.truth_product)
            .unwrap_or(false)
    }
}

/// Fraction of all instances whose predicted product matches the truth.
/// Invalid (unparsed) instances count as misses; they are also reported
/// separately in the run report.
pub fn hit_rate(instances: &[EvalInstance]) -> Result<f64, MetricsError> {
    for i in instances {
        i.validate()?;
    }
    let valid = instances.iter().filter(|i| i.prediction.is_some()).count();
    if valid == 0 {
        return Err(MetricsError::NoValidInstances);
    }
    let hits = instances.iter().filter(|i| i.hit()).count();
    Ok(hits as f64 / instances.len() as f64)
}

/// Mean relative quantity error |q_hat - q| / max(q, 1) over instances
/// with a purchase prediction. Unparsed or no-buy predictions are
/// excluded (they already count against hit rate).
pub fn quantity_error(instances: &[EvalInstance]) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in instances {
        i.validate()?;
        if let Some(q_hat) = i.prediction.as_ref().and_then(|p| p.purchase_quantity()) {
            let q = i.truth_quantity as f64;
            sum += (q_hat as f64 - q).abs() / q.max(1.0);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricsError::NoPurchasePredictions);
    }
    Ok(sum / n as f64)
}

/// Mean over instances of the Bessel-corrected sample variance of
/// predicted quantities, normalized per instance by max(sample mean, 1).
pub fn stability(instances: &[EvalInstance]) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in instances {
        if i.samples.len() < 2 {
            return Err(MetricsError::TooFewSamples(i.id.clone()));
        }
        let k = i.samples.len() as f64;
        let mean = i.samples.iter().map(|q| *q as f64).sum::<f64>() / k;
        let var = i
            .samples
            .iter()
            .map(|q| (*q as f64 - mean) * (*q as f64 - mean))
            .sum::<f64>()
            / (k - 1.0);
        total += var / mean.max(1.0);
        n += 1;
    }
    if n == 0 {
        return Err(MetricsError::NoValidInstances);
    }
    Ok(total / n as f64)
}

/// Min-max normalization into [0, 1]; all-equal inputs map to all zeros.
pub fn normalize_time_costs(values: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewValues);
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(vec![0.0; values.len()]);
    }
    Ok(values.iter().map(|v| (v - min) / (max - min)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SquaredQuantity,
    ZeroOneSelection,
}

/// Full run-level aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub config_tag: String,
    pub hit_rate: f64,
    /// None when no instance carried a purchase prediction.
    pub quantity_error: Option<f64>,
    /// None when stability sampling was off (fewer than 2 samples).
    pub stability: Option<f64>,
    /// Expected loss per loss kind.
    pub expected_loss: BTreeMap<String, f64>,
    pub time_cost_raw: Option<f64>,
    pub time_cost_normalized: Option<f64>,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub ood: bool,
}

/// Compute every metric over id-aligned instances. Truth alignment is by
/// instance id; the first mismatching id aborts the run.
pub fn evaluate_run(
    instances: &[EvalInstance],
    truth_ids: &[String],
    config_tag: &str,
    ood: bool,
) -> Result<RunReport, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::NoValidInstances);
    }
    if instances.len() != truth_ids.len() {
        return Err(MetricsError::IdMismatch(format!(
            "{} episodes vs {} truths",
            instances.len(),
            truth_ids.len()
        )));
    }
    for (i, id) in instances.iter().zip(truth_ids) {
        if &i.id != id {
            return Err(MetricsError::IdMismatch(i.id.clone()));
        }
    }

    let hit = hit_rate(instances)?;
    let qerr = match quantity_error(instances) {
        Ok(v) => Some(v),
        Err(MetricsError::NoPurchasePredictions) => None,
        Err(e) => return Err(e),
    };
    let stab = if instances.iter().all(|i| i.samples.len() >= 2) {
        Some(stability(instances)?)
    } else {
        None
    };

    // Expected losses: squared error over purchase quantities, 0/1 over
    // selections (exactly 1 - hit_rate by construction).
    let mut sq_sum = 0.0;
    let mut sq_n = 0usize;
    for i in instances {
        if let Some(q_hat) = i.prediction.as_ref().and_then(|p| p.purchase_quantity()) {
            let d = q_hat as f64 - i.truth_quantity as f64;
            sq_sum += d * d;
            sq_n += 1;
        }
    }
    let mut expected_loss = BTreeMap::new();
    if sq_n > 0 {
        expected_loss.insert("squared_quantity".to_string(), sq_sum / sq_n as f64);
    }
    expected_loss.insert("zero_one_selection".to_string(), 1.0 - hit);

    let n_valid = instances.iter().filter(|i| i.prediction.is_some()).count();
    let times: Vec<f64> = instances.iter().filter_map(|i| i.wall_time_secs).collect();
    let time_cost_raw = if times.len() == instances.len() {
        Some(times.iter().sum())
    } else {
        None
    };

    Ok(RunReport {
        config_tag: config_tag.to_string(),
        hit_rate: hit,
        quantity_error: qerr,
        stability: stab,
        expected_loss,
        time_cost_raw,
        time_cost_normalized: None,
        n_valid,
        n_invalid: instances.len() - n_valid,
        ood,
    })
}

/// Side-by-side train/test comparison over an out-of-distribution split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OodComparison {
    pub train: RunReport,
    pub test: RunReport,
    pub hit_rate_delta: f64,
    pub quantity_error_delta: Option<f64>,
    pub stability_delta: Option<f64>,
    pub train_categories: Vec<String>,
    pub test_categories: Vec<String>,
}

pub fn ood_report(
    train: &RunReport,
    test: &RunReport,
    split: &OodSplit,
) -> Result<OodComparison, MetricsError> {
    if train.config_tag != test.config_tag {
        return Err(MetricsError::ConfigMismatch(
            train.config_tag.clone(),
            test.config_tag.clone(),
        ));
    }
    let delta_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    Ok(OodComparison {
        train: train.clone(),
        test: test.clone(),
        hit_rate_delta: test.hit_rate - train.hit_rate,
        quantity_error_delta: delta_opt(train.quantity_error, test.quantity_error),
        stability_delta: delta_opt(train.stability, test.stability),
        train_categories: split.train_categories.iter().cloned().collect(),
        test_categories: split.test_categories.iter().cloned().collect(),
    })
}

/// Human-readable table mirroring the headline metric rows.
pub fn report_markdown(report: &RunReport) -> String {
    let fmt_opt = |v: Option<f64>| {
        v.map(|x| format!("{x:.4}"))
            .unwrap_or_else(|| "n/a".to_string())
    };
    format!(
        "| Metric | Value |\n|---|---|\n| Hit Rate | {:.4} |\n| Quantity Error | {} |\n| Stability | {} |\n| Valid | {} |\n| Invalid | {} |\n",
        report.hit_rate,
        fmt_opt(report.quantity_error),
        fmt_opt(report.stability),
        report.n_valid,
        report.n_invalid,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(id: &str, truth: (&str, u32), pred: Option<(&str, u32)>) -> EvalInstance {
        EvalInstance {
            id: id.to_string(),
            truth_product: truth.0.to_string(),
            truth_quantity: truth.1,
            prediction: pred.map(|(p, q)| {
                Prediction::Retail(RetailDecision::purchase(p.to_string(), q))
            }),
            samples: Vec::new(),
            wall_time_secs: None,
        }
    }

    #[test]
    fn hit_rate_counts_invalid_as_misses() {
        let mut instances: Vec<EvalInstance> = (0..775)
            .map(|i| instance(&format!("i{i}"), ("A", 2), Some(("A", 2))))
            .collect();
        for i in 775..1000 {
            // 150 wrong picks, 75 unparsed.
            let pred = if i < 925 { Some(("B", 2)) } else { None };
            instances.push(instance(&format!("i{i}"), ("A", 2), pred));
        }
        let hr = hit_rate(&instances).unwrap();
        assert!((hr - 0.775).abs() < 1e-12);
    }

    #[test]
    fn hit_rate_identity_and_errors() {
        let all = vec![instance("a", ("X", 1), Some(("X", 1)))];
        assert_eq!(hit_rate(&all).unwrap(), 1.0);
        let none: Vec<EvalInstance> = vec![instance("a", ("X", 1), None)];
        assert!(matches!(hit_rate(&none), Err(MetricsError::NoValidInstances)));
    }

    #[test]
    fn quantity_error_arithmetic() {
        let instances = vec![
            instance("a", ("X", 1), Some(("X", 2))),
            instance("b", ("Y", 5), Some(("Y", 4))),
        ];
        // mean(|2-1|/1, |4-5|/5) = mean(1.0, 0.2) = 0.6
        assert!((quantity_error(&instances).unwrap() - 0.6).abs() < 1e-12);

        let exact = vec![instance("a", ("X", 3), Some(("X", 3)))];
        assert_eq!(quantity_error(&exact).unwrap(), 0.0);
    }

    #[test]
    fn quantity_error_can_exceed_one() {
        let instances = vec![instance("a", ("X", 2), Some(("X", 7)))];
        assert!(quantity_error(&instances).unwrap() > 1.0);
    }

    #[test]
    fn stability_arithmetic() {
        let mut i = instance("a", ("X", 3), Some(("X", 3)));
        i.samples = vec![2, 2, 4, 4];
        // variance 4/3, mean 3 -> 4/9.
        assert!((stability(&[i]).unwrap() - 4.0 / 9.0).abs() < 1e-12);

        let mut det = instance("b", ("X", 3), Some(("X", 3)));
        det.samples = vec![3, 3, 3];
        assert_eq!(stability(&[det]).unwrap(), 0.0);

        let short = instance("c", ("X", 3), Some(("X", 3)));
        assert!(matches!(
            stability(&[short]),
            Err(MetricsError::TooFewSamples(_))
        ));
    }

    #[test]
    fn time_normalization() {
        assert_eq!(
            normalize_time_costs(&[10.0, 20.0, 30.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(normalize_time_costs(&[7.0, 7.0]).unwrap(), vec![0.0, 0.0]);
        assert!(normalize_time_costs(&[1.0]).is_err());

        // Ordering is preserved.
        let vals = [4.0, 9.0, 1.0, 6.0];
        let norm = normalize_time_costs(&vals).unwrap();
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                assert_eq!(vals[i] < vals[j], norm[i] < norm[j]);
            }
        }
    }

    #[test]
    fn evaluate_run_bookkeeping_and_losses() {
        let instances = vec![
            instance("a", ("X", 2), Some(("X", 2))),
            instance("b", ("Y", 3), Some(("Z", 4))),
            instance("c", ("W", 1), None),
        ];
        let ids: Vec<String> = instances.iter().map(|i| i.id.clone()).collect();
        let report = evaluate_run(&instances, &ids, "cfg", false).unwrap();
        assert_eq!(report.n_valid + report.n_invalid, 3);
        assert_eq!(report.n_invalid, 1);
        assert!((report.expected_loss["zero_one_selection"] - (1.0 - report.hit_rate)).abs() < 1e-15);

        // Id mismatch aborts with the offender.
        let wrong = vec!["a".to_string(), "nope".to_string(), "c".to_string()];
        assert!(matches!(
            evaluate_run(&instances, &wrong, "cfg", false),
            Err(MetricsError::IdMismatch(id)) if id == "b"
        ));

        assert!(matches!(
            evaluate_run(&[], &[], "cfg", false),
            Err(MetricsError::NoValidInstances)
        ));
    }

    #[test]
    fn metrics_are_instance_order_invariant() {
        let mut instances = vec![
            instance("a", ("X", 2), Some(("X", 2))),
            instance("b", ("Y", 3), Some(("Z", 4))),
            instance("c", ("W", 5), Some(("W", 9))),
        ];
        let h1 = hit_rate(&instances).unwrap();
        let q1 = quantity_error(&instances).unwrap();
        instances.reverse();
        assert_eq!(h1, hit_rate(&instances).unwrap());
        assert_eq!(q1, quantity_error(&instances).unwrap());
    }

    #[test]
    fn ood_comparison_deltas() {
        let instances = vec![instance("a", ("X", 2), Some(("X", 2)))];
        let ids = vec!["a".to_string()];
        let train = evaluate_run(&instances, &ids, "cfg", false).unwrap();
        let test = evaluate_run(&instances, &ids, "cfg", true).unwrap();
        let split = OodSplit {
            train_categories: ["Home Cleaning".to_string()].into_iter().collect(),
            test_categories: ["Daily Necessities".to_string()].into_iter().collect(),
        };
        let cmp = ood_report(&train, &test, &split).unwrap();
        assert_eq!(cmp.hit_rate_delta, 0.0);
        assert_eq!(cmp.train_categories, vec!["Home Cleaning"]);

        let mut other = test.clone();
        other.config_tag = "different".into();
        assert!(ood_report(&train, &other, &split).is_err());
    }

    #[test]
    fn markdown_mirrors_metric_rows() {
        let instances = vec![instance("a", ("X", 2), Some(("X", 2)))];
        let ids = vec!["a".to_string()];
        let report = evaluate_run(&instances, &ids, "cfg", false).unwrap();
        let md = report_markdown(&report);
        assert!(md.contains("Hit Rate"));
        assert!(md.contains("Quantity Error"));
        assert!(md.contains("Stability"));
    }
}
