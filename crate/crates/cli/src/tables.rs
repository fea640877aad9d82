//! Fixed CSV schemas. Any header change must bump
//! [`crate::manifest::FORMAT_VERSION`].

use mdnet_core::bounds::BoundReport;
use mdnet_core::report::{csv_float, float};
use mdnet_core::train::TelemetryRecord;
use serde::{Deserialize, Serialize};

pub fn cell(v: f64) -> String {
    csv_float(v)
}

pub fn opt_cell(v: Option<f64>) -> String {
    v.map(csv_float).unwrap_or_default()
}

pub const BOUNDS_HEADER: [&str; 24] = [
    "checkpoint",
    "epoch",
    "gamma_ref",
    "l1_inf",
    "frobenius",
    "spec_l12",
    "spec_fro",
    "compression",
    "mdnet_ratio",
    "mdnet_theorem_form",
    "R_bartlett",
    "R_neyshabur",
    "theorem1_gap",
    "mdnet_valid",
    "lambda",
    "r",
    "theta",
    "c",
    "d",
    "m",
    "rho",
    "delta",
    "train_accuracy",
    "resilience_sum",
];

/// One checkpoint's bound terms, shared by the CSV row and the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub checkpoint: String,
    pub epoch: Option<usize>,
    pub gamma_ref: f64,
    #[serde(with = "float")]
    pub l1_inf: f64,
    #[serde(with = "float")]
    pub frobenius: f64,
    #[serde(with = "float")]
    pub spec_l12: f64,
    #[serde(with = "float")]
    pub spec_fro: f64,
    #[serde(with = "float")]
    pub compression: f64,
    /// Figure form; `inf` when the margin-ratio terms are invalid.
    #[serde(with = "float")]
    pub mdnet_ratio: f64,
    #[serde(with = "float::option")]
    pub mdnet_theorem_form: Option<f64>,
    #[serde(rename = "R_bartlett", with = "float")]
    pub r_bartlett: f64,
    #[serde(rename = "R_neyshabur", with = "float")]
    pub r_neyshabur: f64,
    #[serde(with = "float::option")]
    pub theorem1_gap: Option<f64>,
    pub mdnet_valid: bool,
    #[serde(with = "float")]
    pub lambda: f64,
    pub r: f64,
    pub theta: f64,
    #[serde(with = "float")]
    pub c: f64,
    pub d: usize,
    pub m: usize,
    pub rho: usize,
    pub delta: f64,
    pub train_accuracy: f64,
    #[serde(with = "float")]
    pub resilience_sum: f64,
}

impl BoundRow {
    pub fn new(
        checkpoint: String,
        epoch: Option<usize>,
        report: &BoundReport,
        train_accuracy: f64,
        resilience_sum: f64,
    ) -> Self {
        let t = &report.terms;
        let i = &report.inputs;
        Self {
            checkpoint,
            epoch,
            gamma_ref: report.gamma_ref,
            l1_inf: t.l1_inf,
            frobenius: t.frobenius,
            spec_l12: t.spec_l12,
            spec_fro: t.spec_fro,
            compression: t.compression,
            mdnet_ratio: report.mdnet_ratio(),
            mdnet_theorem_form: report.capacity.map(|c| c.theorem_form),
            r_bartlett: t.r_bartlett,
            r_neyshabur: t.r_neyshabur,
            theorem1_gap: report.theorem1_gap,
            mdnet_valid: report.mdnet_valid,
            lambda: i.lambda,
            r: i.r,
            theta: i.theta,
            c: i.c,
            d: i.d,
            m: i.m,
            rho: i.rho,
            delta: i.delta,
            train_accuracy,
            resilience_sum,
        }
    }

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.checkpoint.clone(),
            self.epoch.map(|e| e.to_string()).unwrap_or_default(),
            cell(self.gamma_ref),
            cell(self.l1_inf),
            cell(self.frobenius),
            cell(self.spec_l12),
            cell(self.spec_fro),
            cell(self.compression),
            cell(self.mdnet_ratio),
            opt_cell(self.mdnet_theorem_form),
            cell(self.r_bartlett),
            cell(self.r_neyshabur),
            opt_cell(self.theorem1_gap),
            self.mdnet_valid.to_string(),
            cell(self.lambda),
            cell(self.r),
            cell(self.theta),
            cell(self.c),
            self.d.to_string(),
            self.m.to_string(),
            self.rho.to_string(),
            cell(self.delta),
            cell(self.train_accuracy),
            cell(self.resilience_sum),
        ]
    }
}

pub const HISTORY_HEADER: [&str; 15] = [
    "epoch",
    "train_loss",
    "train_accuracy",
    "test_accuracy",
    "margin_mean",
    "margin_variance",
    "margin_ratio",
    "theta_used",
    "gamma_ref",
    "l1_inf",
    "frobenius",
    "spec_l12",
    "spec_fro",
    "compression",
    "mdnet_ratio",
];

/// Bound columns stay empty unless telemetry bounds were requested.
pub fn history_cells(rec: &TelemetryRecord) -> Vec<String> {
    let b = rec.bounds.as_ref();
    let term = |f: fn(&BoundReport) -> f64| opt_cell(b.map(f));
    vec![
        rec.epoch.to_string(),
        cell(rec.train_loss),
        cell(rec.train_accuracy),
        opt_cell(rec.test_accuracy),
        cell(rec.margins.mean_r),
        cell(rec.margins.var_theta2),
        cell(rec.margins.ratio_lambda),
        cell(rec.theta_used),
        term(|b| b.gamma_ref),
        term(|b| b.terms.l1_inf),
        term(|b| b.terms.frobenius),
        term(|b| b.terms.spec_l12),
        term(|b| b.terms.spec_fro),
        term(|b| b.terms.compression),
        term(BoundReport::mdnet_ratio),
    ]
}

pub const SMALL_SAMPLE_HEADER: [&str; 9] = [
    "fraction",
    "loss",
    "seed",
    "train_size",
    "train_accuracy",
    "test_accuracy",
    "margin_mean",
    "margin_ratio",
    "epochs",
];

pub const SMALL_SAMPLE_TREND_HEADER: [&str; 5] = ["fraction", "loss", "seeds", "mean_test_accuracy", "std_test_accuracy"];

pub const MARGINS_HEADER: [&str; 4] = ["sample_id", "label", "predicted", "margin"];

pub const HISTOGRAM_HEADER: [&str; 3] = ["bin_lo", "bin_hi", "count"];

pub const DELTAS_HEADER: [&str; 4] = ["trial", "half_sigma", "sigma", "double_sigma"];

pub const GRID_HEADER: [&str; 5] = ["r", "theta", "eta", "valid", "val_accuracy"];

/// Leading columns followed by `{prefix}0 .. {prefix}{dim-1}`.
pub fn feature_header(leading: &[&str], prefix: &str, dim: usize) -> Vec<String> {
    let mut h: Vec<String> = leading.iter().map(|s| s.to_string()).collect();
    h.extend((0..dim).map(|i| format!("{prefix}{i}")));
    h
}
