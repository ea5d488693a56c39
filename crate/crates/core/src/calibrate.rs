//! Post-hoc temperature scaling and expected calibration error.
//!
//! A single scalar temperature divides the logits before the softmax; it is
//! fitted on validation logits by minimizing mean negative log-likelihood
//! with a derivative-free golden-section search on a bounded interval, which
//! is deterministic and easy to cross-check against a brute-force grid.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Search interval for the temperature.
pub const T_MIN: f64 = 0.05;
pub const T_MAX: f64 = 10.0;
/// Golden-section stops when the bracket is narrower than this.
pub const T_TOL: f64 = 1e-4;
/// Default number of equal-width confidence bins for ECE.
pub const DEFAULT_ECE_BINS: usize = 15;

const PROB_FLOOR: f64 = 1e-12;

/// Raw model scores with labels and provenance, the interchange format
/// between training and all downstream analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    pub values: Array2<f64>,
    pub labels: Vec<usize>,
    pub sample_ids: Vec<String>,
    pub video_ids: Vec<Option<String>>,
}

impl LogitMatrix {
    pub fn new(
        values: Array2<f64>,
        labels: Vec<usize>,
        sample_ids: Vec<String>,
        video_ids: Vec<Option<String>>,
    ) -> Result<Self> {
        let (n, c) = values.dim();
        if n == 0 {
            return Err(Error::Metric("logit matrix has no rows".into()));
        }
        if labels.len() != n || sample_ids.len() != n || video_ids.len() != n {
            return Err(Error::Metric("logit matrix columns are not parallel".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Metric(format!("label {bad} out of range [0, {c})")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Metric("logit matrix contains non-finite values".into()));
        }
        Ok(LogitMatrix {
            values,
            labels,
            sample_ids,
            video_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.values.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.values.dim().1
    }

    /// Write `sample_id,video_id,label,logit_0,...,logit_{C-1}`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let werr = |msg: String| Error::Csv {
            path: path.into(),
            msg,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| werr(e.to_string()))?;
        let c = self.num_classes();
        let mut header = vec!["sample_id".to_string(), "video_id".to_string(), "label".to_string()];
        header.extend((0..c).map(|j| format!("logit_{j}")));
        w.write_record(&header).map_err(|e| werr(e.to_string()))?;
        for i in 0..self.len() {
            let mut row = vec![
                self.sample_ids[i].clone(),
                self.video_ids[i].clone().unwrap_or_default(),
                self.labels[i].to_string(),
            ];
            row.extend((0..c).map(|j| format!("{}", self.values[[i, j]])));
            w.write_record(&row).map_err(|e| werr(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let rerr = |msg: String| Error::Csv {
            path: path.into(),
            msg,
        };
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| rerr(format!("cannot open: {e}")))?;
        let headers = rdr.headers().map_err(|e| rerr(e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[0] != "sample_id" || cols[1] != "video_id" || cols[2] != "label" {
            return Err(rerr(format!("unexpected header {cols:?}")));
        }
        let c = cols.len() - 3;
        for (j, col) in cols[3..].iter().enumerate() {
            if *col != format!("logit_{j}") {
                return Err(rerr(format!("unexpected logit column {col:?}")));
            }
        }
        let mut values = Vec::new();
        let mut labels = Vec::new();
        let mut sample_ids = Vec::new();
        let mut video_ids = Vec::new();
        for row in rdr.records() {
            let row = row.map_err(|e| rerr(e.to_string()))?;
            sample_ids.push(row.get(0).unwrap_or("").to_string());
            video_ids.push(match row.get(1).unwrap_or("") {
                "" => None,
                v => Some(v.to_string()),
            });
            labels.push(
                row.get(2)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| rerr(format!("bad label {:?}", row.get(2))))?,
            );
            for j in 0..c {
                let raw = row.get(3 + j).unwrap_or("");
                values.push(
                    raw.parse::<f64>()
                        .map_err(|_| rerr(format!("bad logit {raw:?}")))?,
                );
            }
        }
        let n = labels.len();
        let values = Array2::from_shape_vec((n, c), values)
            .map_err(|e| rerr(format!("ragged rows: {e}")))?;
        LogitMatrix::new(values, labels, sample_ids, video_ids)
    }
}

/// Fitted temperature with before/after NLL and ECE on the fitting set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub num_bins: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl CalibrationResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("calibration serialize");
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Json {
            path: path.into(),
            msg: e.to_string(),
        })
    }
}

/// Row-wise `softmax(z / T)`. Each output row sums to one.
pub fn apply_temperature(logits: &LogitMatrix, temperature: f64) -> Result<Array2<f64>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::config(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut out = logits.values.mapv(|z| z / temperature);
    for mut row in out.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Mean negative log-likelihood of the true labels, probability floored at
/// 1e-12.
pub fn mean_nll(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total += -probs[[i, y]].max(PROB_FLOOR).ln();
    }
    total / n as f64
}

fn nll_at(logits: &LogitMatrix, t: f64) -> f64 {
    let probs = apply_temperature(logits, t).expect("positive t");
    mean_nll(&probs, &logits.labels)
}

/// Fit the temperature on validation logits by golden-section search of the
/// mean NLL over `[0.05, 10]`. Degenerate inputs (every row constant) leave
/// `T = 1` and set a warning.
pub fn fit_temperature(val_logits: &LogitMatrix) -> Result<CalibrationResult> {
    fit_temperature_with_bins(val_logits, DEFAULT_ECE_BINS)
}

pub fn fit_temperature_with_bins(
    val_logits: &LogitMatrix,
    num_bins: usize,
) -> Result<CalibrationResult> {
    if val_logits.len() < 2 {
        return Err(Error::Metric(
            "temperature fitting needs at least 2 rows".into(),
        ));
    }

    let degenerate = val_logits.values.rows().into_iter().all(|row| {
        let first = row[0];
        row.iter().all(|&v| v == first)
    });

    let nll_before = nll_at(val_logits, 1.0);
    let (temperature, warning) = if degenerate {
        (
            1.0,
            Some("all logit rows are constant; temperature left at 1".to_string()),
        )
    } else {
        let mut t = golden_section(|t| nll_at(val_logits, t), T_MIN, T_MAX, T_TOL);
        // T = 1 is always feasible; never report a fit that loses to it.
        if nll_at(val_logits, t) > nll_before {
            t = 1.0;
        }
        (t, None)
    };

    let probs_before = apply_temperature(val_logits, 1.0)?;
    let probs_after = apply_temperature(val_logits, temperature)?;
    Ok(CalibrationResult {
        temperature,
        nll_before,
        nll_after: mean_nll(&probs_after, &val_logits.labels),
        ece_before: expected_calibration_error(&probs_before, &val_logits.labels, num_bins)?,
        ece_after: expected_calibration_error(&probs_after, &val_logits.labels, num_bins)?,
        num_bins,
        warning,
    })
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

/// ECE over equal-width bins on the max-probability confidence, interval
/// `(0, 1]` with right-closed bins; empty bins contribute nothing.
pub fn expected_calibration_error(
    probs: &Array2<f64>,
    labels: &[usize],
    num_bins: usize,
) -> Result<f64> {
    let n = probs.dim().0;
    if num_bins == 0 {
        return Err(Error::Metric("num_bins must be >= 1".into()));
    }
    if n == 0 || labels.len() != n {
        return Err(Error::Metric("probability matrix and labels must be parallel".into()));
    }
    let mut bin_count = vec![0usize; num_bins];
    let mut bin_conf = vec![0.0f64; num_bins];
    let mut bin_acc = vec![0.0f64; num_bins];
    for (i, (row, &label)) in probs.rows().into_iter().zip(labels).enumerate() {
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Metric(format!(
                "probability row {i} sums to {sum}, not 1"
            )));
        }
        let mut pred = 0usize;
        let mut conf = f64::NEG_INFINITY;
        for (j, &p) in row.iter().enumerate() {
            if p > conf {
                conf = p;
                pred = j;
            }
        }
        // Right-closed bins over (0, 1]: bin k covers (k/B, (k+1)/B].
        let bin = ((conf * num_bins as f64).ceil() as usize)
            .saturating_sub(1)
            .min(num_bins - 1);
        bin_count[bin] += 1;
        bin_conf[bin] += conf;
        if pred == label {
            bin_acc[bin] += 1.0;
        }
    }
    let mut ece = 0.0;
    for b in 0..num_bins {
        if bin_count[b] == 0 {
            continue;
        }
        let weight = bin_count[b] as f64 / n as f64;
        let conf = bin_conf[b] / bin_count[b] as f64;
        let acc = bin_acc[b] / bin_count[b] as f64;
        ece += weight * (acc - conf).abs();
    }
    Ok(ece)
}
