//! Threshold-sweep ROC analysis over `(Pd, Pf, tau)` triples and the eight
//! derived area-under-curve metrics.

use crate::error::{Error, Result};
use crate::hsi::{GroundTruthMask, ScoreMap};

/// Detection/false-alarm rates over a sorted threshold grid. The grid spans
/// `[0, 1]` and carries one extra trailing point at `tau = 1` with
/// `Pd = Pf = 0`, standing for a threshold just above every score.
#[derive(Debug, Clone)]
pub struct RocCurve {
    taus: Vec<f64>,
    pd: Vec<f64>,
    pf: Vec<f64>,
}

impl RocCurve {
    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn pd(&self) -> &[f64] {
        &self.pd
    }

    pub fn pf(&self) -> &[f64] {
        &self.pf
    }
}

/// The eight AUC metrics derived from a 3D-ROC curve. The five composite
/// values satisfy their defining identities exactly by construction:
/// `td = df + dtau`, `bs = df - ftau`, `snpr = dtau / ftau`,
/// `td_bs = dtau - ftau`, `odp = df + dtau - ftau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AucReport {
    pub auc_df: f64,
    pub auc_dtau: f64,
    pub auc_ftau: f64,
    pub auc_td: f64,
    pub auc_bs: f64,
    /// Reported as `+inf` when `auc_ftau` is zero.
    pub auc_snpr: f64,
    pub auc_td_bs: f64,
    pub auc_odp: f64,
}

impl AucReport {
    /// Builds the full report from the three primitive areas.
    pub fn from_primitives(auc_df: f64, auc_dtau: f64, auc_ftau: f64) -> Self {
        let auc_snpr = if auc_ftau == 0.0 { f64::INFINITY } else { auc_dtau / auc_ftau };
        Self {
            auc_df,
            auc_dtau,
            auc_ftau,
            auc_td: auc_df + auc_dtau,
            auc_bs: auc_df - auc_ftau,
            auc_snpr,
            auc_td_bs: auc_dtau - auc_ftau,
            auc_odp: auc_df + auc_dtau - auc_ftau,
        }
    }

    pub fn csv_header() -> &'static str {
        "auc_df,auc_dtau,auc_ftau,auc_td,auc_bs,auc_snpr,auc_td_bs,auc_odp"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.auc_df,
            self.auc_dtau,
            self.auc_ftau,
            self.auc_td,
            self.auc_bs,
            self.auc_snpr,
            self.auc_td_bs,
            self.auc_odp
        )
    }

    fn values(&self) -> [f64; 8] {
        [
            self.auc_df,
            self.auc_dtau,
            self.auc_ftau,
            self.auc_td,
            self.auc_bs,
            self.auc_snpr,
            self.auc_td_bs,
            self.auc_odp,
        ]
    }
}

const TABLE_COLUMNS: [&str; 8] =
    ["AUC(D,F)", "AUC(D,t)", "AUC(F,t)", "AUC_TD", "AUC_BS", "AUC_SNPR", "AUC_TD-BS", "AUC_ODP"];

/// Aligned text table of reports, one row per labelled method.
pub fn format_table(rows: &[(String, AucReport)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    out.push_str(&format!("{:<label_width$}", "method"));
    for col in TABLE_COLUMNS {
        out.push_str(&format!(" {col:>10}"));
    }
    out.push('\n');
    for (label, report) in rows {
        out.push_str(&format!("{label:<label_width$}"));
        for v in report.values() {
            out.push_str(&format!(" {v:>10.4}"));
        }
        out.push('\n');
    }
    out
}

/// Sweeps `n_thresholds` uniform thresholds over `[0, 1]` (closed detection
/// rule: a pixel is flagged when `score >= tau`) and counts detection and
/// false-alarm rates against the mask. Scores are expected in `[0, 1]`.
pub fn roc_3d(
    scores: &ScoreMap,
    mask: &GroundTruthMask,
    n_thresholds: usize,
) -> Result<RocCurve> {
    if n_thresholds < 2 {
        return Err(Error::InvalidParameter("need at least 2 thresholds".into()));
    }
    if (scores.height(), scores.width()) != (mask.height(), mask.width()) {
        return Err(Error::InvalidDimensions("scores and mask shapes differ".into()));
    }
    if !mask.has_both_classes() {
        return Err(Error::SingleClassMask);
    }

    let mut anomaly_scores = Vec::new();
    let mut background_scores = Vec::new();
    for (s, m) in scores.data().iter().zip(mask.data().iter()) {
        if *m == 1 {
            anomaly_scores.push(*s);
        } else {
            background_scores.push(*s);
        }
    }
    anomaly_scores.sort_by(|a, b| a.total_cmp(b));
    background_scores.sort_by(|a, b| a.total_cmp(b));
    let n_anom = anomaly_scores.len() as f64;
    let n_back = background_scores.len() as f64;

    // Fraction of scores >= tau, on a sorted-ascending slice.
    let frac_at_or_above = |sorted: &[f64], tau: f64| {
        let below = sorted.partition_point(|&s| s < tau);
        (sorted.len() - below) as f64
    };

    let mut taus = Vec::with_capacity(n_thresholds + 1);
    let mut pd = Vec::with_capacity(n_thresholds + 1);
    let mut pf = Vec::with_capacity(n_thresholds + 1);
    for i in 0..n_thresholds {
        let tau = i as f64 / (n_thresholds - 1) as f64;
        taus.push(tau);
        pd.push(frac_at_or_above(&anomaly_scores, tau) / n_anom);
        pf.push(frac_at_or_above(&background_scores, tau) / n_back);
    }
    // Sentinel for "threshold above every score".
    taus.push(1.0);
    pd.push(0.0);
    pf.push(0.0);

    Ok(RocCurve { taus, pd, pf })
}

/// Integrates the three primitive areas from a curve (trapezoids; the
/// `(D,F)` area over false-alarm rate sorted ascending, the two
/// tau-parameterized areas over the threshold grid) and derives the five
/// composites.
pub fn auc_report(curve: &RocCurve) -> AucReport {
    // Pd over Pf: walking the grid from the highest threshold down, both
    // rates grow together, so the points already trace the curve with Pf
    // ascending.
    let mut auc_df = 0.0;
    for i in (1..curve.taus.len()).rev() {
        auc_df += (curve.pf[i - 1] - curve.pf[i]) * (curve.pd[i - 1] + curve.pd[i]) * 0.5;
    }

    let trapz_over_tau = |y: &[f64]| {
        let mut area = 0.0;
        for i in 1..curve.taus.len() {
            area += (curve.taus[i] - curve.taus[i - 1]) * (y[i] + y[i - 1]) * 0.5;
        }
        area
    };
    let auc_dtau = trapz_over_tau(&curve.pd);
    let auc_ftau = trapz_over_tau(&curve.pf);

    AucReport::from_primitives(auc_df, auc_dtau, auc_ftau)
}
