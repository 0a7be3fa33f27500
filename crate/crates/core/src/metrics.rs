//! Velocity accuracy metrics and evaluation report assembly.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Root of the mean squared velocity-vector error over the paired epochs.
pub fn vrmse(truth: &[Vector3<f64>], estimate: &[Vector3<f64>]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(Error::UndefinedMetric(format!(
            "vrmse needs equal, non-empty series (got {} and {})",
            truth.len(),
            estimate.len()
        )));
    }
    let sum: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(t, e)| (t - e).norm_squared())
        .sum();
    Ok((sum / truth.len() as f64).sqrt())
}

/// Relative VRMSE difference against a reference, in percent:
/// `|m - ref| / ref * 100`.
pub fn vrte(vrmse_method: f64, vrmse_reference: f64) -> Result<f64> {
    if vrmse_reference <= 0.0 {
        return Err(Error::UndefinedMetric(
            "vrte reference VRMSE must be positive".into(),
        ));
    }
    Ok((vrmse_method - vrmse_reference).abs() / vrmse_reference * 100.0)
}

/// One method's scores on one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub pattern: String,
    pub strategy: String,
    pub vrmse: f64,
    /// Improvement over the per-scenario reference strategy, percent.
    /// Absent for the reference row itself.
    pub vrte_vs_reference: Option<f64>,
    pub reference: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Fixed-width text table, one row per (scenario, strategy).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:<14} {:<12} {:>12} {:>10}\n",
            "scenario", "pattern", "strategy", "vrmse[m/s]", "vrte[%]"
        ));
        out.push_str(&"-".repeat(70));
        out.push('\n');
        for r in &self.rows {
            let vrte = r
                .vrte_vs_reference
                .map(|v| format!("{v:.1}"))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{:<18} {:<14} {:<12} {:>12.4} {:>10}\n",
                r.scenario, r.pattern, r.strategy, r.vrmse, vrte
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vrmse_trivial_cases() {
        let truth = vec![Vector3::new(1.0, 0.0, 0.0); 5];
        assert!(vrmse(&truth, &truth).unwrap().abs() < 1e-15);

        let est = vec![Vector3::new(1.0, 0.3, 0.0); 5];
        assert!((vrmse(&truth, &est).unwrap() - 0.3).abs() < 1e-12);

        // mixed magnitudes: sqrt(mean(0.1^2, 0.5^2))
        let t2 = vec![Vector3::zeros(); 2];
        let e2 = vec![Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.0, 0.5, 0.0)];
        let expect = ((0.01 + 0.25) / 2.0f64).sqrt();
        assert!((vrmse(&t2, &e2).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn vrmse_contract_violations() {
        let a = vec![Vector3::zeros(); 3];
        let b = vec![Vector3::zeros(); 2];
        assert!(vrmse(&a, &b).is_err());
        assert!(vrmse(&[], &[]).is_err());
    }

    #[test]
    fn vrte_published_examples() {
        // 0.17 vs 8.62 -> 98.0% within 0.2pp
        let v = vrte(0.17, 8.62).unwrap();
        assert!((v - 98.0).abs() < 0.2, "{v}");
        // 0.25 vs 0.28 -> ~10.7%
        let v = vrte(0.25, 0.28).unwrap();
        assert!((v - 10.7).abs() < 0.1, "{v}");
        // symmetric in the absolute sense
        assert!((vrte(0.28, 0.28).unwrap()).abs() < 1e-12);
        assert!(vrte(0.5, 0.0).is_err());
        assert!(vrte(0.5, -1.0).is_err());
    }

    #[test]
    fn report_json_round_trip_and_table() {
        let report = EvaluationReport {
            rows: vec![
                ReportRow {
                    scenario: "traj1".into(),
                    pattern: "two_missing".into(),
                    strategy: "average_lc".into(),
                    vrmse: 0.19,
                    vrte_vs_reference: None,
                    reference: None,
                },
                ReportRow {
                    scenario: "traj1".into(),
                    pattern: "two_missing".into(),
                    strategy: "hnlc".into(),
                    vrmse: 0.17,
                    vrte_vs_reference: Some(10.5),
                    reference: Some("average_lc".into()),
                },
            ],
        };
        let back = EvaluationReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[1].strategy, "hnlc");
        assert!((back.rows[1].vrmse - 0.17).abs() < 1e-15);

        let table = report.to_table();
        assert!(table.contains("hnlc"));
        assert!(table.contains("0.1700"));
        assert!(table.lines().count() >= 4);
    }
}
