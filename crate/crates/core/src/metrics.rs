//! The evaluation suite: accuracy, per-class precision/recall/F1, one-vs-rest
//! AUC with midrank tie handling, confusion matrix, and frame-to-video
//! aggregation with confidence analysis.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// One-vs-rest AUC; absent when the class has no positives or no
    /// negatives among the labels.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub weighted_ovr_auc: Option<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<PerClass>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).expect("metrics serialize");
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

fn argmax_row(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (j, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Midranks of `scores` (average rank across ties, 1-based).
fn midranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0; // average of 1-based ranks i+1..=j+1
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// One-vs-rest AUC from the rank statistic `U / (n_pos * n_neg)` with
/// midrank tie correction. `None` when either side is empty.
fn ovr_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Full classification report from raw scores (logits or probabilities; AUC
/// and argmax only depend on within-row order, which both share).
pub fn classification_report(scores: &Array2<f64>, labels: &[usize]) -> Result<MetricsReport> {
    let (n, c) = scores.dim();
    if n == 0 {
        return Err(Error::Metric("no samples to score".into()));
    }
    if c < 2 {
        return Err(Error::Metric("need at least 2 classes".into()));
    }
    if labels.len() != n {
        return Err(Error::Metric("scores and labels must be parallel".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Metric(format!("label {bad} out of range [0, {c})")));
    }

    let preds: Vec<usize> = scores.rows().into_iter().map(argmax_row).collect();
    let mut confusion = vec![vec![0usize; c]; c];
    for (&y, &p) in labels.iter().zip(&preds) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
    let accuracy = correct as f64 / n as f64;

    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    for (class, truth_row) in confusion.iter().enumerate() {
        let support: usize = truth_row.iter().sum();
        let tp = truth_row[class];
        let predicted: usize = (0..c).map(|y| confusion[y][class]).sum();
        // 0/0 conventions: an undefined precision/recall/F1 counts as 0.
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let col: Vec<f64> = scores.column(class).to_vec();
        let positive: Vec<bool> = labels.iter().map(|&y| y == class).collect();
        let auc = ovr_auc(&col, &positive);
        if auc.is_none() {
            warnings.push(format!(
                "class {class}: AUC undefined (needs both positives and negatives); \
                 excluded from averages"
            ));
        }
        per_class.push(PerClass {
            class,
            precision,
            recall,
            f1,
            support,
            auc,
        });
    }

    let macro_f1 = per_class.iter().map(|p| p.f1).sum::<f64>() / c as f64;
    let defined: Vec<&PerClass> = per_class.iter().filter(|p| p.auc.is_some()).collect();
    let (macro_auc, weighted_ovr_auc) = if defined.is_empty() {
        (None, None)
    } else {
        let macro_auc =
            defined.iter().map(|p| p.auc.unwrap()).sum::<f64>() / defined.len() as f64;
        let total_support: usize = defined.iter().map(|p| p.support).sum();
        let weighted = defined
            .iter()
            .map(|p| p.auc.unwrap() * p.support as f64)
            .sum::<f64>()
            / total_support as f64;
        (Some(macro_auc), Some(weighted))
    };

    Ok(MetricsReport {
        accuracy,
        macro_f1,
        macro_auc,
        weighted_ovr_auc,
        confusion,
        per_class,
        warnings,
    })
}

/// One aggregated verdict per video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub video_id: String,
    pub predicted_class: usize,
    /// Fraction of frames voting for the winner.
    pub vote_fraction: f64,
    /// Mean over frames of the max class probability.
    pub mean_confidence: f64,
    pub frame_count: usize,
}

/// How frame predictions reduce to one verdict per video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    /// Majority vote over frame argmaxes (the default).
    MajorityVote,
    /// Argmax of the mean class probabilities, for sensitivity checks.
    MeanProbability,
}

impl std::str::FromStr for AggregationRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(AggregationRule::MajorityVote),
            "mean-prob" => Ok(AggregationRule::MeanProbability),
            other => Err(Error::config(format!(
                "unknown aggregation rule {other:?} (expected majority or mean-prob)"
            ))),
        }
    }
}

/// Majority vote over frame argmaxes; ties break toward the class with the
/// higher mean probability across the video's frames, then the lower index.
pub fn aggregate_video(
    frame_probs: &Array2<f64>,
    video_ids: &[String],
) -> Result<Vec<VideoPrediction>> {
    aggregate_video_with(frame_probs, video_ids, AggregationRule::MajorityVote)
}

pub fn aggregate_video_with(
    frame_probs: &Array2<f64>,
    video_ids: &[String],
    rule: AggregationRule,
) -> Result<Vec<VideoPrediction>> {
    let (n, c) = frame_probs.dim();
    if n == 0 {
        return Err(Error::Metric("no frames to aggregate".into()));
    }
    if video_ids.len() != n {
        return Err(Error::Metric("frame probabilities and video ids must be parallel".into()));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, vid) in video_ids.iter().enumerate() {
        groups.entry(vid.as_str()).or_default().push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (vid, rows) in groups {
        let mut votes = vec![0usize; c];
        let mut confs = Vec::with_capacity(rows.len());
        for &i in &rows {
            let row = frame_probs.row(i);
            let pred = argmax_row(row);
            votes[pred] += 1;
            confs.push(row[pred]);
        }
        // Summing in sorted order makes the result independent of frame
        // order, so tie-breaks and reported confidences are exactly
        // permutation-invariant.
        let prob_sum: Vec<f64> = (0..c)
            .map(|j| sorted_sum(rows.iter().map(|&i| frame_probs[[i, j]])))
            .collect();
        let conf_sum = sorted_sum(confs.iter().copied());
        let mut winner = 0usize;
        for j in 1..c {
            let better = match rule {
                AggregationRule::MajorityVote => {
                    votes[j] > votes[winner]
                        || (votes[j] == votes[winner] && prob_sum[j] > prob_sum[winner])
                }
                AggregationRule::MeanProbability => prob_sum[j] > prob_sum[winner],
            };
            if better {
                winner = j;
            }
        }
        out.push(VideoPrediction {
            video_id: vid.to_string(),
            predicted_class: winner,
            vote_fraction: votes[winner] as f64 / rows.len() as f64,
            mean_confidence: conf_sum / rows.len() as f64,
            frame_count: rows.len(),
        });
    }
    Ok(out)
}

fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.iter().sum()
}

/// Fraction of videos whose aggregated prediction matches the truth.
pub fn video_accuracy(
    preds: &[VideoPrediction],
    truths: &BTreeMap<String, usize>,
) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Metric("no video predictions".into()));
    }
    let mut correct = 0usize;
    for p in preds {
        let truth = truths.get(&p.video_id).ok_or_else(|| {
            Error::Metric(format!("no truth label for video {:?}", p.video_id))
        })?;
        if p.predicted_class == *truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / preds.len() as f64)
}

/// Confidence band of a video's mean max-probability. The 0.9 boundary
/// belongs to the moderate band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Low,
    Moderate,
    High,
}

impl Band {
    pub fn of(mean_confidence: f64) -> Band {
        if mean_confidence < 0.5 {
            Band::Low
        } else if mean_confidence <= 0.9 {
            Band::Moderate
        } else {
            Band::High
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Band::Low => f.write_str("low"),
            Band::Moderate => f.write_str("moderate"),
            Band::High => f.write_str("high"),
        }
    }
}

/// One row of the per-video confidence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub video_id: String,
    pub truth: usize,
    pub predicted: usize,
    pub vote_fraction: f64,
    pub mean_confidence: f64,
    pub band: Band,
    pub correct: bool,
}

/// Per-video correctness and confidence-band table.
pub fn confidence_report(
    frame_probs: &Array2<f64>,
    video_ids: &[String],
    truths: &BTreeMap<String, usize>,
) -> Result<Vec<VideoVerdict>> {
    confidence_report_with(frame_probs, video_ids, truths, AggregationRule::MajorityVote)
}

pub fn confidence_report_with(
    frame_probs: &Array2<f64>,
    video_ids: &[String],
    truths: &BTreeMap<String, usize>,
    rule: AggregationRule,
) -> Result<Vec<VideoVerdict>> {
    let preds = aggregate_video_with(frame_probs, video_ids, rule)?;
    preds
        .into_iter()
        .map(|p| {
            let truth = *truths.get(&p.video_id).ok_or_else(|| {
                Error::Metric(format!("no truth label for video {:?}", p.video_id))
            })?;
            Ok(VideoVerdict {
                correct: p.predicted_class == truth,
                truth,
                predicted: p.predicted_class,
                vote_fraction: p.vote_fraction,
                mean_confidence: p.mean_confidence,
                band: Band::of(p.mean_confidence),
                video_id: p.video_id,
            })
        })
        .collect()
}

/// Write `video_id,truth,predicted,vote_fraction,mean_confidence,band,correct`.
pub fn save_videos_csv(verdicts: &[VideoVerdict], path: &Path) -> Result<()> {
    let werr = |msg: String| Error::Csv {
        path: path.into(),
        msg,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| werr(e.to_string()))?;
    w.write_record([
        "video_id",
        "truth",
        "predicted",
        "vote_fraction",
        "mean_confidence",
        "band",
        "correct",
    ])
    .map_err(|e| werr(e.to_string()))?;
    for v in verdicts {
        w.write_record([
            v.video_id.as_str(),
            &v.truth.to_string(),
            &v.predicted.to_string(),
            &format!("{}", v.vote_fraction),
            &format!("{}", v.mean_confidence),
            &v.band.to_string(),
            &v.correct.to_string(),
        ])
        .map_err(|e| werr(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    /// O(n^2) concordant-pair oracle with half-credit ties.
    fn pairwise_auc_oracle(scores: &[f64], positive: &[bool]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| p)
            .map(|(s, _)| *s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(positive)
            .filter(|(_, &p)| !p)
            .map(|(s, _)| *s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut total = 0.0;
        for &p in &pos {
            for &q in &neg {
                total += if p > q {
                    1.0
                } else if p == q {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(total / (pos.len() * neg.len()) as f64)
    }

    /// Independent majority-vote oracle with the same tie rule, written over
    /// hash maps instead of score accumulators.
    fn aggregate_oracle(probs: &Array2<f64>, vids: &[String]) -> Vec<(String, usize)> {
        use std::collections::HashMap;
        let mut by_vid: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, v) in vids.iter().enumerate() {
            by_vid.entry(v.clone()).or_default().push(i);
        }
        let c = probs.dim().1;
        let mut out = Vec::new();
        for (vid, rows) in by_vid {
            let mut votes: HashMap<usize, usize> = HashMap::new();
            for &i in &rows {
                *votes.entry(argmax_row(probs.row(i))).or_default() += 1;
            }
            let max_votes = *votes.values().max().unwrap();
            let tied: Vec<usize> = (0..c)
                .filter(|cl| votes.get(cl).copied().unwrap_or(0) == max_votes)
                .collect();
            let winner = if tied.len() == 1 {
                tied[0]
            } else {
                // Higher mean probability wins; comparing per-video sums is
                // the same ordering without the float division (summed in
                // sorted order, as the implementation contract promises).
                // Scanning in index order makes the strict comparison
                // enforce the lower-index preference.
                let mut best = tied[0];
                let total = |cl: usize| {
                    let mut vals: Vec<f64> = rows.iter().map(|&i| probs[[i, cl]]).collect();
                    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    vals.iter().sum::<f64>()
                };
                for &cl in &tied[1..] {
                    if total(cl) > total(best) {
                        best = cl;
                    }
                }
                best
            };
            out.push((vid, winner));
        }
        out
    }

    #[test]
    fn perfectly_separated_scores_reach_auc_one() {
        let scores = array![[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.2, 0.8]];
        let report = classification_report(&scores, &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(report.macro_auc.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.accuracy, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.macro_f1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_scores_give_auc_half() {
        let scores = array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]];
        let report = classification_report(&scores, &[0, 1, 0, 1]).unwrap();
        for pc in &report.per_class {
            assert_abs_diff_eq!(pc.auc.unwrap(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_class_labels_drop_auc_but_keep_accuracy() {
        let scores = array![[0.9, 0.1], [0.8, 0.2]];
        let report = classification_report(&scores, &[0, 0]).unwrap();
        assert!(report.macro_auc.is_none());
        assert!(report.weighted_ovr_auc.is_none());
        assert!(!report.warnings.is_empty());
        assert_abs_diff_eq!(report.accuracy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn confusion_row_sums_equal_supports() {
        let scores = array![
            [0.6, 0.3, 0.1],
            [0.2, 0.5, 0.3],
            [0.1, 0.2, 0.7],
            [0.5, 0.4, 0.1],
            [0.3, 0.3, 0.4]
        ];
        let labels = [0usize, 1, 2, 1, 0];
        let report = classification_report(&scores, &labels).unwrap();
        for (class, row) in report.confusion.iter().enumerate() {
            let support = labels.iter().filter(|&&y| y == class).count();
            assert_eq!(row.iter().sum::<usize>(), support);
        }
        let trace: usize = (0..3).map(|i| report.confusion[i][i]).sum();
        assert_abs_diff_eq!(
            report.accuracy,
            trace as f64 / labels.len() as f64,
            epsilon = 1e-15
        );
    }

    #[test]
    fn unanimous_frames_aggregate_cleanly() {
        let probs = array![[0.1, 0.9], [0.2, 0.8], [0.3, 0.7]];
        let vids = vec!["v".to_string(); 3];
        let preds = aggregate_video(&probs, &vids).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].predicted_class, 1);
        assert_abs_diff_eq!(preds[0].vote_fraction, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(preds[0].mean_confidence, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn two_one_vote_picks_the_majority() {
        let probs = array![[0.9, 0.1], [0.6, 0.4], [0.2, 0.8]];
        let vids = vec!["v".to_string(); 3];
        let preds = aggregate_video(&probs, &vids).unwrap();
        assert_eq!(preds[0].predicted_class, 0);
        assert_abs_diff_eq!(preds[0].vote_fraction, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn vote_tie_breaks_by_mean_probability() {
        // Two frames each way; class 0 has the larger probability mass.
        let probs = array![[0.6, 0.4], [0.6, 0.4], [0.45, 0.55], [0.5, 0.5]];
        // Frame 4 ties within the row; argmax tie goes to the lower index,
        // giving votes 3-1. Rebuild so votes tie 2-2.
        let probs = {
            let mut p = probs;
            p[[3, 0]] = 0.4;
            p[[3, 1]] = 0.6;
            p
        };
        let vids = vec!["v".to_string(); 4];
        let preds = aggregate_video(&probs, &vids).unwrap();
        // Mean probs: class 0 = (0.6+0.6+0.45+0.4)/4 = 0.5125, class 1 = 0.4875.
        assert_eq!(preds[0].predicted_class, 0);
    }

    #[test]
    fn mean_probability_rule_can_disagree_with_majority() {
        // Two low-margin frames vote class 1; one confident frame carries the
        // probability mass to class 0.
        let probs = array![[0.9, 0.1], [0.45, 0.55], [0.45, 0.55]];
        let vids = vec!["v".to_string(); 3];
        let majority = aggregate_video(&probs, &vids).unwrap();
        assert_eq!(majority[0].predicted_class, 1);
        let mean =
            aggregate_video_with(&probs, &vids, AggregationRule::MeanProbability).unwrap();
        assert_eq!(mean[0].predicted_class, 0);
        assert_eq!(mean[0].frame_count, 3);
    }

    #[test]
    fn video_accuracy_hand_fractions() {
        let make = |correct: usize, total: usize| {
            let preds: Vec<VideoPrediction> = (0..total)
                .map(|i| VideoPrediction {
                    video_id: format!("v{i}"),
                    predicted_class: usize::from(i >= correct),
                    vote_fraction: 1.0,
                    mean_confidence: 1.0,
                    frame_count: 1,
                })
                .collect();
            let truths: BTreeMap<String, usize> =
                (0..total).map(|i| (format!("v{i}"), 0)).collect();
            video_accuracy(&preds, &truths).unwrap()
        };
        assert_abs_diff_eq!(make(6, 7), 0.857, epsilon = 5e-4);
        assert_abs_diff_eq!(make(5, 7), 0.714, epsilon = 5e-4);
        assert_abs_diff_eq!(make(7, 7), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_truth_is_an_error() {
        let preds = vec![VideoPrediction {
            video_id: "ghost".into(),
            predicted_class: 0,
            vote_fraction: 1.0,
            mean_confidence: 1.0,
            frame_count: 1,
        }];
        let err = video_accuracy(&preds, &BTreeMap::new()).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn confidence_bands_respect_boundaries() {
        assert_eq!(Band::of(0.95), Band::High);
        assert_eq!(Band::of(0.9), Band::Moderate);
        assert_eq!(Band::of(0.5), Band::Moderate);
        assert_eq!(Band::of(0.49), Band::Low);
    }

    #[test]
    fn confidence_report_flags_misclassified_videos() {
        let probs = array![[0.3, 0.7], [0.35, 0.65]];
        let vids = vec!["a".to_string(), "a".to_string()];
        let truths: BTreeMap<String, usize> = [("a".to_string(), 0)].into();
        let table = confidence_report(&probs, &vids, &truths).unwrap();
        assert_eq!(table.len(), 1);
        assert!(!table[0].correct);
        assert_eq!(table[0].band, Band::Moderate);
        assert_abs_diff_eq!(table[0].mean_confidence, 0.675, epsilon = 1e-12);
    }

    fn random_scores(seed: u64, n: usize, c: usize, tie_prone: bool) -> (Array2<f64>, Vec<usize>) {
        let mut rng = crate::seed::rng(seed, &[55]);
        let mut scores = Array2::zeros((n, c));
        for v in scores.iter_mut() {
            *v = if tie_prone {
                // Coarse grid; ties happen often.
                (rng.random_range(0..5) as f64) / 4.0
            } else {
                rng.random_range(-3.0..=3.0)
            };
        }
        let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
        (scores, labels)
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_oracle(seed in 0u64..300, tie_prone in proptest::bool::ANY) {
            let (scores, labels) = random_scores(seed, 20, 3, tie_prone);
            let report = classification_report(&scores, &labels).unwrap();
            for pc in &report.per_class {
                let col: Vec<f64> = scores.column(pc.class).to_vec();
                let pos: Vec<bool> = labels.iter().map(|&y| y == pc.class).collect();
                let want = pairwise_auc_oracle(&col, &pos);
                match (pc.auc, want) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                    (None, None) => {}
                    other => prop_assert!(false, "mismatch: {other:?}"),
                }
            }
        }

        #[test]
        fn auc_is_invariant_under_monotone_transforms(seed in 0u64..100) {
            let (scores, labels) = random_scores(seed, 15, 3, false);
            let a = classification_report(&scores, &labels).unwrap();
            let transformed = scores.mapv(|v| (v / 2.0).exp());
            let b = classification_report(&transformed, &labels).unwrap();
            match (a.macro_auc, b.macro_auc) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                other => prop_assert!(false, "mismatch: {other:?}"),
            }
        }

        #[test]
        fn aggregation_matches_oracle_and_ignores_frame_order(seed in 0u64..300) {
            let mut rng = crate::seed::rng(seed, &[56]);
            let n = rng.random_range(4..30);
            let c = rng.random_range(2..5);
            let mut probs = Array2::zeros((n, c));
            for mut row in probs.rows_mut() {
                let mut total = 0.0;
                for v in row.iter_mut() {
                    // Coarse grid so vote and argmax ties actually occur.
                    *v = (rng.random_range(1..6) as f64) / 5.0;
                    total += *v;
                }
                row.mapv_inplace(|v| v / total);
            }
            let vids: Vec<String> =
                (0..n).map(|_| format!("v{}", rng.random_range(0..4))).collect();

            let got = aggregate_video(&probs, &vids).unwrap();
            let want = aggregate_oracle(&probs, &vids);
            prop_assert_eq!(got.len(), want.len());
            for (g, (wv, wc)) in got.iter().zip(&want) {
                prop_assert_eq!(&g.video_id, wv);
                prop_assert_eq!(g.predicted_class, *wc);
            }

            let perm: Vec<usize> = (0..n).rev().collect();
            let probs_p = probs.select(ndarray::Axis(0), &perm);
            let vids_p: Vec<String> = perm.iter().map(|&i| vids[i].clone()).collect();
            let got_p = aggregate_video(&probs_p, &vids_p).unwrap();
            prop_assert_eq!(got, got_p);
        }

        #[test]
        fn macro_f1_is_one_iff_confusion_is_diagonal(seed in 0u64..100) {
            let (scores, labels) = random_scores(seed, 12, 3, false);
            let report = classification_report(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&report.macro_f1));
            let diagonal = report
                .confusion
                .iter()
                .enumerate()
                .all(|(i, row)| row.iter().enumerate().all(|(j, &v)| v == 0 || i == j));
            // All classes must also be present for macro F1 to reach 1.
            let all_present = report.per_class.iter().all(|p| p.support > 0);
            if diagonal && all_present {
                prop_assert!((report.macro_f1 - 1.0).abs() < 1e-12);
            }
            if (report.macro_f1 - 1.0).abs() < 1e-12 {
                prop_assert!(diagonal);
            }
        }
    }
}
