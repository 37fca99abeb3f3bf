//! Evaluation protocol: time-to-accident, mean TTA over a threshold grid,
//! video-level average precision, and the sweep harnesses.

mod sweep;

use serde::{Deserialize, Serialize};

use crate::dataset::ScenarioLabel;
use crate::error::{Error, Result};

pub use sweep::{
    ablation_variants, gaussian_levels, impulse_levels, reward_settings, sweep_ablation, sweep_noise, sweep_reward,
    AblationRow, AblationTable, NoiseLevel, NoiseRow, NoiseTable, RewardRow, RewardSetting, RewardTable,
};

/// Frame-wise predictions for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub probs: Vec<f64>,
    pub label: ScenarioLabel,
    pub fps: f64,
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Domain(format!("fps must be positive, got {}", self.fps)));
        }
        self.label.validate(usize::MAX)
    }

    /// Video-level score: the peak frame probability.
    pub fn score(&self) -> f64 {
        self.probs.iter().copied().fold(0.0, f64::max)
    }
}

/// 21 thresholds `0.00, 0.05, ..., 1.00`.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// 0-based index of the first frame with `p >= threshold`.
pub fn first_crossing(probs: &[f64], threshold: f64) -> Option<usize> {
    probs.iter().position(|&p| p >= threshold)
}

/// Lead time in seconds of the first crossing before the accident frame,
/// floored at zero; `None` when no frame crosses.
pub fn tta(record: &PredictionRecord, threshold: f64) -> Result<Option<f64>> {
    if !record.label.positive {
        return Err(Error::Domain(
            "time-to-accident is undefined for a negative video".into(),
        ));
    }
    let tau = record.label.accident_frame as f64;
    Ok(first_crossing(&record.probs, threshold).map(|t| ((tau - t as f64) / record.fps).max(0.0)))
}

/// TTA counted as a warning: the first crossing precedes the accident frame.
fn warning_lead(record: &PredictionRecord, threshold: f64) -> Option<f64> {
    first_crossing(&record.probs, threshold)
        .filter(|&t| t < record.label.accident_frame)
        .map(|t| (record.label.accident_frame - t) as f64 / record.fps)
}

fn positives(records: &[PredictionRecord]) -> Result<Vec<&PredictionRecord>> {
    let pos: Vec<_> = records.iter().filter(|r| r.label.positive).collect();
    if pos.is_empty() {
        return Err(Error::Domain(
            "no positive videos to measure time-to-accident on".into(),
        ));
    }
    Ok(pos)
}

/// Mean lead time over positives warned at `threshold`; 0 when none is.
pub fn mean_tta(records: &[PredictionRecord], threshold: f64) -> Result<f64> {
    let leads: Vec<f64> = positives(records)?
        .into_iter()
        .filter_map(|r| warning_lead(r, threshold))
        .collect();
    Ok(if leads.is_empty() {
        0.0
    } else {
        leads.iter().sum::<f64>() / leads.len() as f64
    })
}

/// Mean over `grid` of [`mean_tta`].
pub fn mtta(records: &[PredictionRecord], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Domain("empty threshold grid".into()));
    }
    positives(records)?;
    let mut total = 0.0;
    for &a in grid {
        total += mean_tta(records, a)?;
    }
    Ok(total / grid.len() as f64)
}

/// Precision/recall at each distinct score, highest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn check_classes(labels: &[bool]) -> Result<usize> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::Domain(
            "average precision needs both positive and negative videos".into(),
        ));
    }
    Ok(n_pos)
}

pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            context: "scores vs labels",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let n_pos = check_classes(labels)? as f64;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN video score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut curve = PrCurve {
        thresholds: Vec::new(),
        precision: Vec::new(),
        recall: Vec::new(),
    };
    let (mut tp, mut predicted) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            predicted += 1;
            i += 1;
        }
        curve.thresholds.push(s);
        curve.precision.push(tp as f64 / predicted as f64);
        curve.recall.push(tp as f64 / n_pos);
    }
    Ok(curve)
}

/// All-points area under the precision-recall curve; tied scores form a
/// single operating point.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let curve = pr_curve(scores, labels)?;
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in curve.precision.iter().zip(&curve.recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    Ok(ap)
}

/// Video-level AP using each record's peak probability.
pub fn records_ap(records: &[PredictionRecord]) -> Result<f64> {
    let scores: Vec<f64> = records.iter().map(PredictionRecord::score).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label.positive).collect();
    average_precision(&scores, &labels)
}

/// Alarm behaviour at a fixed threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlarmStats {
    pub threshold: f64,
    /// Positives with at least one alarm.
    pub true_positives: usize,
    /// Negatives with at least one alarm.
    pub false_positives: usize,
    /// Mean time in seconds of the first alarm over alarmed positives.
    pub mean_first_alarm_secs: Option<f64>,
    /// Alarmed frames summed over negatives.
    pub false_alarm_frames: usize,
}

pub fn alarm_stats(records: &[PredictionRecord], threshold: f64) -> AlarmStats {
    let mut first = Vec::new();
    let mut false_positives = 0;
    let mut false_alarm_frames = 0;
    for r in records {
        if r.label.positive {
            if let Some(t) = first_crossing(&r.probs, threshold) {
                first.push(t as f64 / r.fps);
            }
        } else {
            let n = r.probs.iter().filter(|&&p| p >= threshold).count();
            false_alarm_frames += n;
            false_positives += (n > 0) as usize;
        }
    }
    AlarmStats {
        threshold,
        true_positives: first.len(),
        false_positives,
        mean_first_alarm_secs: (!first.is_empty()).then(|| first.iter().sum::<f64>() / first.len() as f64),
        false_alarm_frames,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap: f64,
    pub mtta: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub pr_curve: PrCurve,
    pub grid: Vec<f64>,
    /// `tta_per_video[i][j]`: TTA of the i-th positive at `grid[j]`.
    pub tta_per_video: Vec<Vec<Option<f64>>>,
    pub alarms: AlarmStats,
}

pub fn report(records: &[PredictionRecord], grid: &[f64]) -> Result<MetricsReport> {
    for r in records {
        r.validate()?;
    }
    let scores: Vec<f64> = records.iter().map(PredictionRecord::score).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.label.positive).collect();
    let pr = pr_curve(&scores, &labels)?;
    let tta_per_video = positives(records)?
        .into_iter()
        .map(|r| grid.iter().map(|&a| tta(r, a)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        ap: average_precision(&scores, &labels)?,
        mtta: mtta(records, grid)?,
        n_positive: labels.iter().filter(|&&l| l).count(),
        n_negative: labels.iter().filter(|&&l| !l).count(),
        pr_curve: pr,
        grid: grid.to_vec(),
        tta_per_video,
        alarms: alarm_stats(records, 0.5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(probs: Vec<f64>, tau: usize) -> PredictionRecord {
        PredictionRecord {
            probs,
            label: if tau > 0 {
                ScenarioLabel::positive(tau)
            } else {
                ScenarioLabel::negative()
            },
            fps: 20.0,
        }
    }

    #[test]
    fn tta_substitution() {
        let mut p = vec![0.0; 100];
        for x in &mut p[40..] {
            *x = 0.9;
        }
        assert_eq!(tta(&rec(p, 80), 0.5).unwrap(), Some(2.0));
    }

    #[test]
    fn late_crossing_floors_at_zero() {
        let mut p = vec![0.0; 100];
        p[90] = 0.9;
        assert_eq!(tta(&rec(p, 80), 0.5).unwrap(), Some(0.0));
    }

    #[test]
    fn no_crossing_and_negative() {
        assert_eq!(tta(&rec(vec![0.99; 10], 5), 1.0).unwrap(), None);
        assert!(tta(&rec(vec![0.5; 10], 0), 0.5).is_err());
    }

    #[test]
    fn constant_trace_mtta() {
        let r = vec![rec(vec![1.0; 50], 50)];
        assert!((mtta(&r, &default_grid()).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn ap_hand_cases() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        let tied = average_precision(&[0.5; 4], &[true, false, false, true]).unwrap();
        assert_eq!(tied, 0.5);
        assert!(average_precision(&[0.2, 0.3], &[true, true]).is_err());
    }

    #[test]
    fn mtta_requires_positive() {
        assert!(mtta(&[rec(vec![0.1; 5], 0)], &default_grid()).is_err());
    }

    #[test]
    fn appended_frames_after_accident_do_not_matter() {
        let base = vec![
            rec(vec![0.1, 0.6, 0.2, 0.1], 3),
            rec(vec![0.1; 4], 4),
            rec(vec![0.0; 4], 0),
        ];
        let mut extended = base.clone();
        extended[1].probs.extend([1.0, 0.9]);
        extended[0].probs.extend([1.0]);
        let g = default_grid();
        assert_eq!(mtta(&base, &g).unwrap(), mtta(&extended, &g).unwrap());
    }
}
