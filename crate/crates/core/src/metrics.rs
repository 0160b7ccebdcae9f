//! Task recognition metrics (t-acc, t-mAP) and frame-level segmentation
//! metrics (acc, acc-bg, IoU, IoD).
//!
//! IoU and IoD are computed per (video, ground-truth-present foreground
//! class), averaged over classes within the video, then averaged over videos.
//! Frame accuracies aggregate by pooling frame counts across videos.

use ndarray::Array2;
use serde::Serialize;

use crate::corpus::BACKGROUND;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct TaskMetrics {
    pub t_acc: f64,
    pub t_map: f64,
    /// Average precision per task; `None` for tasks with no positives
    /// (excluded from the mean).
    pub per_task_ap: Vec<Option<f64>>,
}

/// Classification metrics from an N x tasks score matrix.
pub fn task_metrics(scores: &Array2<f64>, gt: &[usize]) -> Result<TaskMetrics> {
    let (n, c) = scores.dim();
    if n == 0 || gt.len() != n {
        return Err(Error::Data("task metrics: empty or mismatched inputs".into()));
    }
    let mut correct = 0usize;
    for (i, &task) in gt.iter().enumerate() {
        let row = scores.row(i);
        let mut best = 0;
        for j in 1..c {
            if row[j] > row[best] {
                best = j;
            }
        }
        correct += usize::from(best == task);
    }
    let t_acc = correct as f64 / n as f64;

    let mut per_task_ap = Vec::with_capacity(c);
    for tau in 0..c {
        let positives = gt.iter().filter(|&&t| t == tau).count();
        if positives == 0 {
            log::warn!("task {tau} has no positive videos; excluded from t-mAP");
            per_task_ap.push(None);
            continue;
        }
        // Rank videos by this task's score, ties broken by lower video index.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            scores[(b, tau)]
                .partial_cmp(&scores[(a, tau)])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &video) in order.iter().enumerate() {
            if gt[video] == tau {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        per_task_ap.push(Some(precision_sum / positives as f64));
    }
    let aps: Vec<f64> = per_task_ap.iter().flatten().copied().collect();
    let t_map = if aps.is_empty() { 0.0 } else { aps.iter().sum::<f64>() / aps.len() as f64 };
    Ok(TaskMetrics { t_acc, t_map, per_task_ap })
}

/// Per-video segmentation tallies; aggregates pool these across videos.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SegCounts {
    pub frames: usize,
    pub correct: usize,
    pub fg_frames: usize,
    pub fg_correct: usize,
    /// Mean IoU over ground-truth-present foreground classes.
    pub iou: Option<f64>,
    pub iod: Option<f64>,
}

impl SegCounts {
    pub fn acc(&self) -> f64 {
        self.correct as f64 / self.frames as f64
    }

    pub fn acc_bg(&self) -> Option<f64> {
        (self.fg_frames > 0).then(|| self.fg_correct as f64 / self.fg_frames as f64)
    }
}

/// Frame accuracy with and without background, plus per-class IoU and IoD
/// averaged over the ground-truth-present foreground classes.
pub fn segmentation_metrics(pred: &[usize], gt: &[usize], bg: usize) -> Result<SegCounts> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!(
            "segmentation metrics: length mismatch ({} vs {})",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Data("segmentation metrics: empty inputs".into()));
    }
    let frames = gt.len();
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    let fg_frames = gt.iter().filter(|&&g| g != bg).count();
    let fg_correct = pred.iter().zip(gt).filter(|&(p, g)| *g != bg && p == g).count();

    let mut classes: Vec<usize> = gt.iter().copied().filter(|&g| g != bg).collect();
    classes.sort_unstable();
    classes.dedup();
    let (mut iou_sum, mut iod_sum) = (0.0, 0.0);
    for &class in &classes {
        let inter = pred
            .iter()
            .zip(gt)
            .filter(|&(p, g)| *p == class && *g == class)
            .count();
        let pred_count = pred.iter().filter(|&&p| p == class).count();
        let gt_count = gt.iter().filter(|&&g| g == class).count();
        let union = pred_count + gt_count - inter;
        iou_sum += inter as f64 / union as f64;
        iod_sum += if pred_count == 0 { 0.0 } else { inter as f64 / pred_count as f64 };
    }
    let (iou, iod) = if classes.is_empty() {
        (None, None)
    } else {
        (Some(iou_sum / classes.len() as f64), Some(iod_sum / classes.len() as f64))
    };
    Ok(SegCounts { frames, correct, fg_frames, fg_correct, iou, iod })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SegSummary {
    /// Frame accuracy pooled over all videos.
    pub acc: f64,
    /// Frame accuracy pooled over non-background ground-truth frames.
    pub acc_bg: f64,
    /// Mean over videos of the per-video class-mean IoU.
    pub iou: f64,
    pub iod: f64,
}

/// Pool per-video tallies into corpus-level values.
pub fn pool_segmentation(items: &[SegCounts]) -> Result<SegSummary> {
    if items.is_empty() {
        return Err(Error::Data("no videos to pool".into()));
    }
    let frames: usize = items.iter().map(|i| i.frames).sum();
    let correct: usize = items.iter().map(|i| i.correct).sum();
    let fg_frames: usize = items.iter().map(|i| i.fg_frames).sum();
    let fg_correct: usize = items.iter().map(|i| i.fg_correct).sum();
    let ious: Vec<f64> = items.iter().filter_map(|i| i.iou).collect();
    let iods: Vec<f64> = items.iter().filter_map(|i| i.iod).collect();
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(SegSummary {
        acc: correct as f64 / frames as f64,
        acc_bg: if fg_frames == 0 { 0.0 } else { fg_correct as f64 / fg_frames as f64 },
        iou: mean(&ious),
        iod: mean(&iods),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PerVideoRow {
    pub id: String,
    pub gt_task: String,
    pub pred_task: String,
    pub seg: Option<SegCounts>,
}

/// Combined report emitted by the `eval` subcommand.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub t_acc: f64,
    pub t_map: f64,
    pub per_task_ap: Vec<(String, Option<f64>)>,
    pub segmentation: Option<SegSummary>,
    pub per_video: Vec<PerVideoRow>,
}

impl EvalReport {
    /// Aligned-text rendering for terminal output.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:>8}\n", "metric", "value"));
        out.push_str(&format!("{:<12} {:>8.4}\n", "t-acc", self.t_acc));
        out.push_str(&format!("{:<12} {:>8.4}\n", "t-mAP", self.t_map));
        if let Some(seg) = &self.segmentation {
            out.push_str(&format!("{:<12} {:>8.4}\n", "acc", seg.acc));
            out.push_str(&format!("{:<12} {:>8.4}\n", "acc-bg", seg.acc_bg));
            out.push_str(&format!("{:<12} {:>8.4}\n", "IoU", seg.iou));
            out.push_str(&format!("{:<12} {:>8.4}\n", "IoD", seg.iod));
        }
        out.push_str("\nper-task AP:\n");
        for (name, ap) in &self.per_task_ap {
            match ap {
                Some(ap) => out.push_str(&format!("  {:<16} {:>8.4}\n", name, ap)),
                None => out.push_str(&format!("  {:<16} {:>8}\n", name, "n/a")),
            }
        }
        out
    }
}

pub fn background() -> usize {
    BACKGROUND
}
