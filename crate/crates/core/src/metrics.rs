//! Detection-to-ground-truth matching and AP/mAP computation.
//!
//! Detections are matched class-aware at an IoU threshold, in descending
//! confidence order (ties broken by image id, then file order, for full
//! determinism). Per-class precision-recall curves are swept over the
//! pooled ranked detections and integrated into average precision either
//! by the all-points monotone envelope or by 101-point sampling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    BoundingBox, ClassDef, ClassId, Dataset, Detection, GroundTruthInstance, ImageRecord,
};
use crate::error::{Error, Result};

/// Intersection over union of two positive-area boxes.
///
/// Symmetric; 0 for disjoint boxes, 1 for identical ones.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    // Areas come from the same corner differences as the intersection so
    // that iou(a, a) is exactly 1.
    let corner_area = |bx: &BoundingBox| (bx.x2() - bx.x1()) * (bx.y2() - bx.y1());
    let ix1 = a.x1().max(b.x1());
    let iy1 = a.y1().max(b.y1());
    let ix2 = a.x2().min(b.x2());
    let iy2 = a.y2().min(b.y2());
    let inter = (ix2 - ix1).max(0.0) * (iy2 - iy1).max(0.0);
    let union = corner_area(a) + corner_area(b) - inter;
    inter / union
}

/// Outcome for one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    /// Matched the ground-truth instance at this index (same class, IoU >= threshold).
    TruePositive { gt_index: usize },
    FalsePositive,
}

impl MatchFlag {
    pub fn is_tp(&self) -> bool {
        matches!(self, MatchFlag::TruePositive { .. })
    }
}

/// Per-class tallies after matching one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_count: usize,
    /// Structurally zero: detection has no enumerable negatives.
    pub tn: usize,
}

/// Result of matching one image's detections against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Parallel to the input detection list, in its original order.
    pub assignments: Vec<MatchFlag>,
    /// Indices of ground-truth instances left unmatched (the false negatives).
    pub unmatched_gt: Vec<usize>,
    /// Tallies for every class present in either list.
    pub counts: BTreeMap<ClassId, ClassCounts>,
}

impl MatchResult {
    /// Tallies summed over all classes.
    pub fn total_counts(&self) -> ClassCounts {
        let mut total = ClassCounts::default();
        for c in self.counts.values() {
            total.tp += c.tp;
            total.fp += c.fp;
            total.fn_count += c.fn_count;
        }
        total
    }
}

/// Greedily matches detections to ground truth of the same class.
///
/// Detections are processed in descending confidence order (ties keep
/// input order). Each one claims the still-unmatched same-class ground
/// truth with the highest IoU, provided that IoU is at least `iou_threshold`
/// (inclusive); otherwise it is a false positive. Each ground truth can be
/// claimed at most once.
pub fn match_detections(
    gt: &[GroundTruthInstance],
    detections: &[Detection],
    iou_threshold: f64,
) -> Result<MatchResult> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidIouThreshold {
            value: iou_threshold,
        });
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .confidence
            .total_cmp(&detections[i].confidence)
            .then(i.cmp(&j))
    });

    let mut gt_taken = vec![false; gt.len()];
    let mut assignments = vec![MatchFlag::FalsePositive; detections.len()];

    for &det_idx in &order {
        let det = &detections[det_idx];
        let mut best: Option<(usize, f64)> = None;
        for (gt_idx, inst) in gt.iter().enumerate() {
            if gt_taken[gt_idx] || inst.class != det.class {
                continue;
            }
            let overlap = iou(&det.bbox, &inst.bbox);
            if overlap < iou_threshold {
                continue;
            }
            // Strict > keeps the lowest index on IoU ties.
            if best.is_none_or(|(_, b)| overlap > b) {
                best = Some((gt_idx, overlap));
            }
        }
        if let Some((gt_idx, _)) = best {
            gt_taken[gt_idx] = true;
            assignments[det_idx] = MatchFlag::TruePositive { gt_index: gt_idx };
        }
    }

    let unmatched_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_taken[i]).collect();

    let mut counts: BTreeMap<ClassId, ClassCounts> = BTreeMap::new();
    for (det, flag) in detections.iter().zip(&assignments) {
        let entry = counts.entry(det.class).or_default();
        if flag.is_tp() {
            entry.tp += 1;
        } else {
            entry.fp += 1;
        }
    }
    for &gt_idx in &unmatched_gt {
        counts.entry(gt[gt_idx].class).or_default().fn_count += 1;
    }
    // Classes whose every instance was matched still get an entry.
    for inst in gt {
        counts.entry(inst.class).or_default();
    }

    Ok(MatchResult {
        assignments,
        unmatched_gt,
        counts,
    })
}

/// TP / (TP + FP). Errors when no prediction was made at all.
pub fn precision(tp: usize, fp: usize) -> Result<f64> {
    if tp + fp == 0 {
        return Err(Error::UndefinedPrecision);
    }
    Ok(tp as f64 / (tp + fp) as f64)
}

/// TP / (TP + FN). Errors when the class has no positive instances.
pub fn recall(tp: usize, fn_count: usize) -> Result<f64> {
    if tp + fn_count == 0 {
        return Err(Error::UndefinedRecall);
    }
    Ok(tp as f64 / (tp + fn_count) as f64)
}

/// One point of a precision-recall sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    /// Confidence of the detection that produced this point; `None` for
    /// the synthetic (r=0, p=1) anchor.
    pub confidence: Option<f64>,
}

/// Confidence-swept precision-recall curve for one class.
///
/// Recall is non-decreasing along `points`; the first point is always the
/// synthetic (0, 1) anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class: ClassDef,
    pub points: Vec<PrPoint>,
}

/// AP integration method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApMethod {
    /// Monotone precision envelope integrated exactly over recall.
    Envelope,
    /// Envelope sampled at 101 equally spaced recall points and averaged.
    Coco101,
}

impl std::fmt::Display for ApMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApMethod::Envelope => write!(f, "envelope"),
            ApMethod::Coco101 => write!(f, "coco101"),
        }
    }
}

/// Integrated area under one class's PR curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    pub class: ClassDef,
    pub ap: f64,
    pub curve: PrCurve,
    pub method: ApMethod,
}

impl ApResult {
    /// An AP value without its sweep, for records that only carry the number.
    pub fn summary(class: ClassDef, ap: f64, method: ApMethod) -> Self {
        let curve = PrCurve {
            class: class.clone(),
            points: vec![PrPoint {
                recall: 0.0,
                precision: 1.0,
                confidence: None,
            }],
        };
        Self {
            class,
            ap,
            curve,
            method,
        }
    }
}

struct PooledDetection<'a> {
    confidence: f64,
    image_id: &'a str,
    det_index: usize,
    is_tp: bool,
}

fn pool_class_detections<'a>(
    images: &'a [ImageRecord],
    matches: &[MatchResult],
    class: ClassId,
) -> Vec<PooledDetection<'a>> {
    let mut pooled = Vec::new();
    for (image, result) in images.iter().zip(matches) {
        for (det_index, det) in image.detections.iter().enumerate() {
            if det.class != class {
                continue;
            }
            pooled.push(PooledDetection {
                confidence: det.confidence,
                image_id: &image.image_id,
                det_index,
                is_tp: result.assignments[det_index].is_tp(),
            });
        }
    }
    pooled.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then_with(|| a.image_id.cmp(b.image_id))
            .then(a.det_index.cmp(&b.det_index))
    });
    pooled
}

fn curve_from_pooled(class: &ClassDef, pooled: &[PooledDetection], total_gt: usize) -> PrCurve {
    let mut points = vec![PrPoint {
        recall: 0.0,
        precision: 1.0,
        confidence: None,
    }];
    let mut cum_tp = 0;
    let mut cum_fp = 0;
    for det in pooled {
        if det.is_tp {
            cum_tp += 1;
        } else {
            cum_fp += 1;
        }
        points.push(PrPoint {
            recall: recall(cum_tp, total_gt - cum_tp).expect("total_gt >= 1"),
            precision: precision(cum_tp, cum_fp).expect("rank >= 1"),
            confidence: Some(det.confidence),
        });
    }
    PrCurve {
        class: class.clone(),
        points,
    }
}

/// Sweeps the PR curve for `class` over a set of images.
///
/// Detections of the class are pooled across images and ranked by
/// descending confidence; cumulative TP/FP come from per-image matching.
pub fn pr_curve(images: &[ImageRecord], class: &ClassDef, iou_threshold: f64) -> Result<PrCurve> {
    let total_gt: usize = images
        .iter()
        .map(|img| img.ground_truth.iter().filter(|g| g.class == class.id).count())
        .sum();
    if total_gt == 0 {
        return Err(Error::NoPositives {
            class: class.name.clone(),
        });
    }
    let matches: Vec<MatchResult> = images
        .iter()
        .map(|img| match_detections(&img.ground_truth, &img.detections, iou_threshold))
        .collect::<Result<_>>()?;
    let pooled = pool_class_detections(images, &matches, class.id);
    Ok(curve_from_pooled(class, &pooled, total_gt))
}

fn real_points(curve: &PrCurve) -> Vec<&PrPoint> {
    curve
        .points
        .iter()
        .filter(|p| p.confidence.is_some())
        .collect()
}

/// Integrates a PR curve into average precision.
///
/// The synthetic anchor pins the integration start at recall 0 but
/// contributes no precision value of its own; envelope heights come from
/// actual detection ranks only, so a curve with no detections scores 0
/// under both methods.
pub fn average_precision(curve: &PrCurve, method: ApMethod) -> ApResult {
    let real = real_points(curve);
    let ap = match method {
        ApMethod::Envelope => {
            // Suffix max turns precision into its monotone envelope.
            let mut env = vec![0.0f64; real.len()];
            let mut running = 0.0f64;
            for i in (0..real.len()).rev() {
                running = running.max(real[i].precision);
                env[i] = running;
            }
            let mut area = 0.0;
            let mut prev_recall = 0.0;
            for (i, point) in real.iter().enumerate() {
                area += (point.recall - prev_recall) * env[i];
                prev_recall = point.recall;
            }
            area
        }
        ApMethod::Coco101 => {
            let mut sum = 0.0;
            for i in 0..=100 {
                let r = i as f64 / 100.0;
                let env_at = real
                    .iter()
                    .filter(|p| p.recall >= r)
                    .map(|p| p.precision)
                    .fold(0.0f64, f64::max);
                sum += env_at;
            }
            sum / 101.0
        }
    };
    ApResult {
        class: curve.class.clone(),
        ap,
        curve: curve.clone(),
        method,
    }
}

/// Arithmetic mean of per-class AP values.
pub fn mean_ap(aps: &[ApResult]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::EmptyApList);
    }
    Ok(aps.iter().map(|a| a.ap).sum::<f64>() / aps.len() as f64)
}

/// What to do with classes that have no ground truth at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroGtPolicy {
    /// Drop the class from the report with a warning (default).
    Exclude,
    /// Keep the class with AP 0.
    ScoreZero,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub method: ApMethod,
    pub zero_gt_policy: ZeroGtPolicy,
    /// Match images on the rayon pool; the reduction order is fixed either
    /// way, so results are bit-identical to the sequential path.
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            method: ApMethod::Envelope,
            zero_gt_policy: ZeroGtPolicy::Exclude,
            parallel: true,
        }
    }
}

/// Full per-class AP breakdown plus their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub per_class: Vec<ApResult>,
    pub map: f64,
}

impl EvalReport {
    /// Header and value cells of the one-row summary table: per-class AP
    /// percentages followed by mAP, one decimal each.
    pub fn table_cells(&self) -> (Vec<String>, Vec<String>) {
        let mut header = Vec::new();
        let mut row = Vec::new();
        for ap in &self.per_class {
            header.push(format!("AP_{} (%)", ap.class.name));
            row.push(pct1(ap.ap));
        }
        header.push(format!("mAP@{} (%)", self.iou_threshold));
        row.push(pct1(self.map));
        (header, row)
    }

    /// Single-row markdown table of the summary cells.
    pub fn text_table(&self) -> String {
        let (header, row) = self.table_cells();
        let mut out = String::from("|");
        for h in &header {
            out.push_str(&format!(" {h} |"));
        }
        out.push_str("\n|");
        for _ in &header {
            out.push_str("----|");
        }
        out.push('\n');
        out.push('|');
        for cell in &row {
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
        out
    }

    /// The same summary as CSV.
    pub fn csv_table(&self) -> String {
        let (header, row) = self.table_cells();
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&header).expect("in-memory csv write");
        writer.write_record(&row).expect("in-memory csv write");
        String::from_utf8(writer.into_inner().expect("in-memory csv flush"))
            .expect("csv output is utf-8")
    }
}

/// Formats a fraction as a percentage with one decimal, rounding half to even.
pub fn pct1(fraction: f64) -> String {
    let scaled = (fraction * 1000.0).round_ties_even();
    format!("{:.1}", scaled / 10.0)
}

/// Evaluates a dataset: per-class PR sweep and AP, then mAP.
///
/// Classes without ground truth are handled per `zero_gt_policy`; if no
/// class has any ground truth the evaluation fails.
pub fn evaluate(dataset: &Dataset, options: &EvalOptions) -> Result<EvalReport> {
    if !(options.iou_threshold > 0.0 && options.iou_threshold <= 1.0) {
        return Err(Error::InvalidIouThreshold {
            value: options.iou_threshold,
        });
    }

    let matches: Vec<MatchResult> = if options.parallel {
        dataset
            .images
            .par_iter()
            .map(|img| match_detections(&img.ground_truth, &img.detections, options.iou_threshold))
            .collect::<Result<_>>()?
    } else {
        dataset
            .images
            .iter()
            .map(|img| match_detections(&img.ground_truth, &img.detections, options.iou_threshold))
            .collect::<Result<_>>()?
    };

    let mut per_class = Vec::new();
    for def in dataset.classes.defs() {
        let total_gt = dataset.ground_truth_count(def.id);
        if total_gt == 0 {
            match options.zero_gt_policy {
                ZeroGtPolicy::Exclude => {
                    log::warn!("class '{}' has no ground truth; excluded from mAP", def.name);
                    continue;
                }
                ZeroGtPolicy::ScoreZero => {
                    per_class.push(ApResult::summary(def.clone(), 0.0, options.method));
                    continue;
                }
            }
        }
        let pooled = pool_class_detections(&dataset.images, &matches, def.id);
        let curve = curve_from_pooled(def, &pooled, total_gt);
        per_class.push(average_precision(&curve, options.method));
    }

    if per_class.is_empty() {
        return Err(Error::NothingToEvaluate);
    }
    let map = mean_ap(&per_class)?;
    Ok(EvalReport {
        iou_threshold: options.iou_threshold,
        per_class,
        map,
    })
}
