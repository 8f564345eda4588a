//! Standard depth evaluation metrics.

use rayon::prelude::*;

use crate::error::{contract, Result};
use crate::grid::{check_shape, LabelGrid, ScalarGrid};

pub const DEFAULT_CAP: f64 = 80.0;
/// Predictions are clamped to `[MIN_DEPTH, cap]` before scoring.
pub const MIN_DEPTH: f64 = 1e-3;

pub const CSV_HEADER: &str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

impl MetricSet {
    pub fn as_array(&self) -> [f64; 7] {
        [self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3]
    }

    fn from_array(a: [f64; 7]) -> Self {
        Self { abs_rel: a[0], sq_rel: a[1], rmse: a[2], rmse_log: a[3], delta1: a[4], delta2: a[5], delta3: a[6] }
    }

    pub fn csv_row(&self) -> String {
        self.as_array().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Metrics over pixels with a non-zero `valid` label and `gt <= cap`.
pub fn compute_metrics(
    pred: &ScalarGrid,
    gt: &ScalarGrid,
    valid: &LabelGrid,
    cap: f64,
    median_scale: bool,
) -> Result<MetricSet> {
    check_shape(pred, gt, "prediction vs ground truth")?;
    check_shape(pred, valid, "prediction vs valid mask")?;
    if !(cap > MIN_DEPTH) {
        return contract(format!("depth cap must exceed {MIN_DEPTH}, got {cap}"));
    }
    let mut p = Vec::new();
    let mut g = Vec::new();
    for i in 0..pred.len() {
        if valid.labels()[i] == 0 {
            continue;
        }
        let gv = gt.data()[i];
        if !(gv > 0.0) {
            return contract(format!("ground truth must be positive on valid pixels, got {gv}"));
        }
        if gv <= cap {
            p.push(pred.data()[i]);
            g.push(gv);
        }
    }
    if g.is_empty() {
        return contract("no valid pixels under the depth cap");
    }
    if median_scale {
        let mp = median(&p).expect("non-empty");
        if !(mp > 0.0) {
            return contract(format!("median prediction must be positive for median scaling, got {mp}"));
        }
        let s = median(&g).expect("non-empty") / mp;
        p.iter_mut().for_each(|v| *v *= s);
    }
    let n = g.len() as f64;
    let mut acc = [0.0; 7];
    for (&pv, &gv) in p.iter().zip(&g) {
        let pv = pv.clamp(MIN_DEPTH, cap);
        let diff = pv - gv;
        acc[0] += diff.abs() / gv;
        acc[1] += diff * diff / gv;
        acc[2] += diff * diff;
        let dl = pv.ln() - gv.ln();
        acc[3] += dl * dl;
        let ratio = (pv / gv).max(gv / pv);
        let mut t = 1.25;
        for slot in &mut acc[4..7] {
            if ratio < t {
                *slot += 1.0;
            }
            t *= 1.25;
        }
    }
    let mut out = acc.map(|v| v / n);
    out[2] = out[2].sqrt();
    out[3] = out[3].sqrt();
    Ok(MetricSet::from_array(out))
}

/// One metric set per image plus their arithmetic mean.
pub fn compute_metrics_batch(
    items: &[(ScalarGrid, ScalarGrid, LabelGrid)],
    cap: f64,
    median_scale: bool,
) -> Result<(Vec<MetricSet>, MetricSet)> {
    if items.is_empty() {
        return contract("metrics batch is empty");
    }
    let per: Vec<MetricSet> = items
        .par_iter()
        .map(|(p, g, v)| compute_metrics(p, g, v, cap, median_scale))
        .collect::<Result<_>>()?;
    let mut mean = [0.0; 7];
    for m in &per {
        for (o, v) in mean.iter_mut().zip(m.as_array()) {
            *o += v;
        }
    }
    let n = per.len() as f64;
    Ok((per.clone(), MetricSet::from_array(mean.map(|v| v / n))))
}

/// CSV with one row per image followed by the mean row.
pub fn metrics_csv(per_image: &[MetricSet], mean: &MetricSet) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for m in per_image.iter().chain(std::iter::once(mean)) {
        s.push_str(&m.csv_row());
        s.push('\n');
    }
    s
}
