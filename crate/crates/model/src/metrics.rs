//! Evaluation metrics: per-class IoU / mIoU from a pixel confusion matrix,
//! and region-detection mAP.
//!
//! mAP convention: detections are connected components of the predicted
//! mask, scored by the mean per-pixel max-softmax confidence; they match
//! unmatched ground-truth components of the same class at region IoU >=
//! `iou_thresh`, highest confidence first. AP is the area under the
//! all-points interpolated precision-recall curve, and mAP averages over
//! classes with at least one ground-truth region.

use ctxseg_core::Scalar;
use ctxseg_core::Tensor;
use ctxseg_data::regions::region_iou;
use ctxseg_data::{connected_components, Mask, Vocab};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::Result;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    /// Channel names: background first, then the vocabulary.
    pub classes: Vec<String>,
    /// Per channel; `None` when the class appears in neither prediction
    /// nor ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// Per foreground class; `None` without ground-truth regions.
    pub per_class_ap: Vec<Option<f64>>,
    pub map: f64,
    pub confusion: Vec<Vec<usize>>,
    pub sample_count: usize,
    pub include_background: bool,
    pub iou_thresh: f64,
}

#[derive(Debug, Clone, Copy)]
struct Detection {
    confidence: f64,
    true_positive: bool,
    sample: usize,
    index: usize,
}

/// Streaming accumulator over evaluation samples.
pub struct SegmentationScorer {
    channels: usize,
    confusion: Vec<Vec<usize>>,
    detections: Vec<Vec<Detection>>,
    gt_regions: Vec<usize>,
    samples: usize,
    iou_thresh: f64,
}

impl SegmentationScorer {
    pub fn new(vocab: &Vocab, iou_thresh: f64) -> Self {
        let channels = vocab.channels();
        Self {
            channels,
            confusion: vec![vec![0; channels]; channels],
            detections: vec![Vec::new(); vocab.len()],
            gt_regions: vec![0; vocab.len()],
            samples: 0,
        iou_thresh,
        }
    }

    /// Accumulate one sample. `confidence` holds the per-pixel max-softmax
    /// probability aligned with `pred`.
    pub fn add_sample(&mut self, pred: &Mask, confidence: &[f64], gt: &Mask) -> Result<()> {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(ModelError::Config(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.width, pred.height, gt.width, gt.height
            )));
        }
        if confidence.len() != pred.data.len() {
            return Err(ModelError::Config("confidence map length mismatch".into()));
        }
        let sample = self.samples;
        self.samples += 1;

        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            if (p as usize) < self.channels && (g as usize) < self.channels {
                self.confusion[g as usize][p as usize] += 1;
            }
        }

        let pred_regions = connected_components(pred);
        let gt_regions = connected_components(gt);
        for class in 0..self.detections.len() {
            let value = (class + 1) as u8;
            let gts: Vec<&ctxseg_data::Region> =
                gt_regions.iter().filter(|r| r.mask_value == value).collect();
            self.gt_regions[class] += gts.len();

            let mut dets: Vec<(f64, usize)> = pred_regions
                .iter()
                .enumerate()
                .filter(|(_, r)| r.mask_value == value)
                .map(|(i, r)| {
                    let total: f64 = r.pixels.iter().map(|&p| confidence[p as usize]).sum();
                    (total / r.area() as f64, i)
                })
                .collect();
            // highest confidence first; region scan order breaks ties
            dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

            let mut taken = vec![false; gts.len()];
            for (det_rank, (conf, region_idx)) in dets.iter().enumerate() {
                let pixels = &pred_regions[*region_idx].pixels;
                let mut best: Option<(f64, usize)> = None;
                for (gi, gt_region) in gts.iter().enumerate() {
                    if taken[gi] {
                        continue;
                    }
                    let iou = region_iou(pixels, &gt_region.pixels);
                    if iou >= self.iou_thresh {
                        let better = match best {
                            None => true,
                            Some((b, _)) => iou > b,
                        };
                        if better {
                            best = Some((iou, gi));
                        }
                    }
                }
                let true_positive = if let Some((_, gi)) = best {
                    taken[gi] = true;
                    true
                } else {
                    false
                };
                self.detections[class].push(Detection {
                    confidence: *conf,
                    true_positive,
                    sample,
                    index: det_rank,
                });
            }
        }
        Ok(())
    }

    pub fn finish(&self, vocab: &Vocab, include_background: bool) -> EvalReport {
        let mut per_class_iou = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let inter = self.confusion[c][c];
            let row: usize = self.confusion[c].iter().sum();
            let col: usize = (0..self.channels).map(|r| self.confusion[r][c]).sum();
            let union = row + col - inter;
            per_class_iou.push(if union == 0 { None } else { Some(inter as f64 / union as f64) });
        }
        let mut included = Vec::new();
        for (c, iou) in per_class_iou.iter().enumerate() {
            if c == 0 && !include_background {
                continue;
            }
            if let Some(v) = iou {
                included.push(*v);
            }
        }
        let miou = if included.is_empty() {
            0.0
        } else {
            included.iter().sum::<f64>() / included.len() as f64
        };

        let mut per_class_ap = Vec::with_capacity(vocab.len());
        for class in 0..vocab.len() {
            if self.gt_regions[class] == 0 {
                per_class_ap.push(None);
            } else {
                per_class_ap.push(Some(average_precision(
                    &self.detections[class],
                    self.gt_regions[class],
                )));
            }
        }
        let with_gt: Vec<f64> = per_class_ap.iter().flatten().copied().collect();
        let map = if with_gt.is_empty() {
            0.0
        } else {
            with_gt.iter().sum::<f64>() / with_gt.len() as f64
        };

        let mut classes = vec!["background".to_string()];
        classes.extend(vocab.labels().iter().cloned());
        EvalReport {
            classes,
            per_class_iou,
            miou,
            per_class_ap,
            map,
            confusion: self.confusion.clone(),
            sample_count: self.samples,
            include_background,
            iou_thresh: self.iou_thresh,
        }
    }
}

/// Area under the all-points interpolated precision-recall curve.
fn average_precision(detections: &[Detection], gt_total: usize) -> f64 {
    let mut sorted: Vec<&Detection> = detections.iter().collect();
    sorted.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then(a.sample.cmp(&b.sample))
            .then(a.index.cmp(&b.index))
    });
    let mut precisions = Vec::with_capacity(sorted.len());
    let mut recalls = Vec::with_capacity(sorted.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for d in &sorted {
        if d.true_positive {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / gt_total as f64);
    }
    // precision envelope from the right
    let mut envelope = precisions.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        if envelope[i + 1] > envelope[i] {
            envelope[i] = envelope[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..envelope.len() {
        ap += (recalls[i] - prev_recall) * envelope[i];
        prev_recall = recalls[i];
    }
    ap
}

/// One-shot per-class IoU and mIoU between two masks.
pub fn compute_miou(
    pred: &Mask,
    gt: &Mask,
    vocab: &Vocab,
    include_background: bool,
) -> Result<(Vec<Option<f64>>, f64)> {
    let mut scorer = SegmentationScorer::new(vocab, 0.5);
    let confidence = vec![1.0; pred.data.len()];
    scorer.add_sample(pred, &confidence, gt)?;
    let report = scorer.finish(vocab, include_background);
    Ok((report.per_class_iou, report.miou))
}

/// Argmax mask and per-pixel max-softmax confidence from a `(h*w, K)`
/// logits tensor. Channel c maps to mask value c; ties resolve to the
/// lowest channel.
pub fn decode_predictions<F: Scalar>(
    logits: &Tensor<F>,
    h: usize,
    w: usize,
) -> (Mask, Vec<f64>) {
    let k = logits.shape()[1];
    let mut mask = Mask::new(w as u32, h as u32);
    let mut confidence = Vec::with_capacity(h * w);
    for (p, row) in logits.data().chunks_exact(k).enumerate() {
        let mut best = 0usize;
        let mut best_v = row[0].as_f64();
        for (c, v) in row.iter().enumerate().skip(1) {
            let v = v.as_f64();
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        // stable softmax for the winning probability
        let sum: f64 = row.iter().map(|v| (v.as_f64() - best_v).exp()).sum();
        mask.data[p] = best as u8;
        confidence.push(1.0 / sum);
    }
    (mask, confidence)
}
