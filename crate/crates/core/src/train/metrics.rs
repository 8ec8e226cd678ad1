use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXCELLENT_RPD: f64 = 3.0;

/// Regression and pretext quality numbers for one evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    /// `None` when the targets have zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    /// `None` when undefined (zero variance) or infinite (zero error).
    pub rpd: Option<f64>,
    pub r2_undefined: bool,
    pub rpd_undefined: bool,
    pub rpd_infinite: bool,
    pub perm_exact_match_acc: Option<f64>,
    pub perm_per_segment_acc: Option<f64>,
    pub epoch: Option<usize>,
}

impl MetricsReport {
    /// R² with the undefined case reported as 0.
    pub fn r2_or_zero(&self) -> f64 {
        self.r2.unwrap_or(0.0)
    }

    pub fn is_excellent(&self) -> bool {
        self.rpd_infinite || self.rpd.is_some_and(|r| r > EXCELLENT_RPD)
    }

    /// Human-readable summary lines.
    pub fn banner(&self) -> String {
        let fmt = |v: Option<f64>, undefined: bool| match v {
            Some(v) => format!("{v:.4}"),
            None if undefined => "undefined".to_string(),
            None => "inf".to_string(),
        };
        let mut s = format!(
            "R2 {}  RMSE {:.4}  MAE {:.4}  RPD {}  (n = {})",
            fmt(self.r2, self.r2_undefined),
            self.rmse,
            self.mae,
            fmt(self.rpd, self.rpd_undefined),
            self.count
        );
        if self.is_excellent() {
            s.push_str("\nRPD above 3.0: excellent predictive performance");
        }
        s
    }
}

/// R², RMSE, MAE and RPD of `predictions` against `targets`.
pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<MetricsReport> {
    let n = targets.len();
    if predictions.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {n} targets",
            predictions.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    if predictions.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "compute_metrics" });
    }
    let nf = n as f64;
    let mean = targets.iter().sum::<f64>() / nf;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum();
    let mae = predictions.iter().zip(targets).map(|(p, t)| (t - p).abs()).sum::<f64>() / nf;
    let rmse = (ss_res / nf).sqrt();
    let sd = (ss_tot / (nf - 1.0)).sqrt();

    let variance_ok = ss_tot > 0.0;
    let mut report = MetricsReport { count: n, rmse, mae, ..Default::default() };
    if variance_ok {
        report.r2 = Some(1.0 - ss_res / ss_tot);
        if rmse > 0.0 {
            report.rpd = Some(sd / rmse);
        } else {
            report.rpd_infinite = true;
        }
    } else {
        report.r2_undefined = true;
        report.rpd_undefined = true;
    }
    Ok(report)
}
