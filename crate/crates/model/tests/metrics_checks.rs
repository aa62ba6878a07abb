//! Metric contracts: closed-form cases, a hand-built PR fixture, and exact
//! agreement with brute-force oracles on 500 random masks.

use std::collections::BTreeSet;

use ctxseg_core::Rng;
use ctxseg_data::regions::region_iou;
use ctxseg_data::{connected_components, Mask, Vocab};
use ctxseg_model::metrics::{compute_miou, SegmentationScorer};

fn vocab(n: usize) -> Vocab {
    Vocab::new((0..n).map(|i| format!("c{i}")).collect()).unwrap()
}

fn mask_of(values: &[u8], w: u32, h: u32) -> Mask {
    Mask { width: w, height: h, data: values.to_vec() }
}

#[test]
fn perfect_prediction_scores_one() {
    let v = vocab(3);
    let mut rng = Rng::new(1, 0);
    let gt = {
        let mut m = Mask::new(8, 8);
        for val in m.data.iter_mut() {
            *val = rng.below(4) as u8;
        }
        m
    };
    let (per_class, miou) = compute_miou(&gt, &gt, &v, false).unwrap();
    assert_eq!(miou, 1.0);
    for iou in per_class.iter().flatten() {
        assert_eq!(*iou, 1.0);
    }

    let mut scorer = SegmentationScorer::new(&v, 0.5);
    scorer.add_sample(&gt, &vec![1.0; 64], &gt).unwrap();
    let report = scorer.finish(&v, false);
    assert_eq!(report.map, 1.0);
}

#[test]
fn disjoint_masks_score_zero() {
    let v = vocab(1);
    let pred = mask_of(&[1, 1, 0, 0], 2, 2);
    let gt = mask_of(&[0, 0, 1, 1], 2, 2);
    let (per_class, miou) = compute_miou(&pred, &gt, &v, false).unwrap();
    assert_eq!(per_class[1], Some(0.0));
    assert_eq!(miou, 0.0);
}

#[test]
fn overlap_fixture_is_exactly_half() {
    // 4x4 grid: pred covers 3 pixels, gt covers 3 pixels, 2 overlap
    let v = vocab(1);
    let mut pred = Mask::new(4, 4);
    let mut gt = Mask::new(4, 4);
    for &(x, y) in &[(0u32, 0u32), (1, 0), (2, 0)] {
        pred.set(x, y, 1);
    }
    for &(x, y) in &[(1u32, 0u32), (2, 0), (3, 0)] {
        gt.set(x, y, 1);
    }
    let (per_class, miou) = compute_miou(&pred, &gt, &v, false).unwrap();
    assert_eq!(per_class[1], Some(0.5));
    assert_eq!(miou, 0.5);
}

#[test]
fn extent_mismatch_is_an_error() {
    let v = vocab(1);
    let pred = Mask::new(4, 4);
    let gt = Mask::new(4, 5);
    assert!(compute_miou(&pred, &gt, &v, false).is_err());
}

#[test]
fn no_predicted_regions_gives_zero_map() {
    let v = vocab(1);
    let pred = Mask::new(4, 4);
    let gt = mask_of(&[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], 4, 4);
    let mut scorer = SegmentationScorer::new(&v, 0.5);
    scorer.add_sample(&pred, &vec![1.0; 16], &gt).unwrap();
    let report = scorer.finish(&v, false);
    assert_eq!(report.map, 0.0);
    assert_eq!(report.per_class_ap[0], Some(0.0));
}

/// Hand-built precision-recall fixture: three detections ordered TP, FP,
/// TP by confidence against two ground-truth regions.
#[test]
fn three_detection_fixture_matches_hand_built_pr_curve() {
    let v = vocab(1);
    // one 8x3 sample; gt regions: columns 0-1 and columns 6-7 (rows 0-2)
    let mut gt = Mask::new(8, 3);
    for y in 0..3 {
        for x in [0u32, 1, 6, 7] {
            gt.set(x, y, 1);
        }
    }
    // detections: A matches gt1 (conf .9), B in the middle matches nothing
    // (conf .8), C matches gt2 (conf .7)
    let mut pred = Mask::new(8, 3);
    let mut conf = vec![0.0f64; 24];
    for y in 0..3 {
        for x in [0u32, 1] {
            pred.set(x, y, 1);
            conf[(y * 8 + x) as usize] = 0.9;
        }
        pred.set(4, y, 1);
        conf[(y * 8 + 4) as usize] = 0.8;
        for x in [6u32, 7] {
            pred.set(x, y, 1);
            conf[(y * 8 + x) as usize] = 0.7;
        }
    }
    let mut scorer = SegmentationScorer::new(&v, 0.5);
    scorer.add_sample(&pred, &conf, &gt).unwrap();
    let report = scorer.finish(&v, false);

    // PR points: (r=1/2, p=1/1), (r=1/2, p=1/2), (r=1, p=2/3)
    // envelope: max precision at recall >= r; AP = 1/2*1 + 1/2*2/3
    let expect = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    assert!((report.per_class_ap[0].unwrap() - expect).abs() <= 1e-12);
}

#[test]
fn miou_is_symmetric_under_consistent_relabeling() {
    let v = vocab(3);
    let mut rng = Rng::new(77, 0);
    for _ in 0..50 {
        let mut pred = Mask::new(6, 6);
        let mut gt = Mask::new(6, 6);
        for i in 0..36 {
            pred.data[i] = rng.below(4) as u8;
            gt.data[i] = rng.below(4) as u8;
        }
        let (_, base) = compute_miou(&pred, &gt, &v, false).unwrap();
        // swap labels 1 <-> 3 in both masks
        let relabel = |m: &Mask| {
            let mut out = m.clone();
            for v in out.data.iter_mut() {
                *v = match *v {
                    1 => 3,
                    3 => 1,
                    x => x,
                };
            }
            out
        };
        let (_, swapped) = compute_miou(&relabel(&pred), &relabel(&gt), &v, false).unwrap();
        // the mean is permutation-invariant up to f64 summation order
        assert!((base - swapped).abs() <= 1e-12, "{base} vs {swapped}");
    }
}

// ── brute-force oracles ─────────────────────────────────────────────

/// mIoU oracle: per class, collect pixel index sets and count directly.
fn miou_oracle(pred: &Mask, gt: &Mask, classes: usize, include_background: bool) -> Vec<Option<f64>> {
    let mut out = Vec::new();
    for c in 0..=classes {
        if c == 0 && !include_background {
            out.push(None);
        }
        let pred_set: BTreeSet<usize> =
            pred.data.iter().enumerate().filter(|(_, &v)| v as usize == c).map(|(i, _)| i).collect();
        let gt_set: BTreeSet<usize> =
            gt.data.iter().enumerate().filter(|(_, &v)| v as usize == c).map(|(i, _)| i).collect();
        let inter = pred_set.intersection(&gt_set).count();
        let union = pred_set.union(&gt_set).count();
        if c == 0 && !include_background {
            continue;
        }
        out.push(if union == 0 { None } else { Some(inter as f64 / union as f64) });
    }
    out
}

#[test]
fn miou_matches_exhaustive_pixel_counting_on_500_random_masks() {
    let v = vocab(3);
    for trial in 0..500u64 {
        let mut rng = Rng::new(0xA11CE, trial);
        let w = rng.range_inclusive(1, 8) as u32;
        let h = rng.range_inclusive(1, 8) as u32;
        let mut pred = Mask::new(w, h);
        let mut gt = Mask::new(w, h);
        for i in 0..(w * h) as usize {
            pred.data[i] = rng.below(4) as u8;
            gt.data[i] = rng.below(4) as u8;
        }
        let (per_class, miou) = compute_miou(&pred, &gt, &v, false).unwrap();
        let oracle = miou_oracle(&pred, &gt, 3, false);
        // exact equality: both sides divide integer counts
        assert_eq!(&per_class[1..], &oracle[1..], "trial {trial}");
        let included: Vec<f64> = oracle[1..].iter().flatten().copied().collect();
        let expect =
            if included.is_empty() { 0.0 } else { included.iter().sum::<f64>() / included.len() as f64 };
        assert_eq!(miou, expect, "trial {trial}");
    }
}

/// mAP oracle: an independent re-derivation with explicit region sets and
/// a naive prefix rescan of the ranked detection list.
fn map_oracle(samples: &[(Mask, Vec<f64>, Mask)], classes: usize, thresh: f64) -> Vec<Option<f64>> {
    let mut per_class = Vec::new();
    for class in 0..classes {
        let value = (class + 1) as u8;
        // (confidence, tp, sample, rank) via per-sample greedy matching
        let mut detections: Vec<(f64, bool, usize, usize)> = Vec::new();
        let mut gt_total = 0usize;
        for (s, (pred, conf, gt)) in samples.iter().enumerate() {
            let gts: Vec<Vec<u32>> = connected_components(gt)
                .into_iter()
                .filter(|r| r.mask_value == value)
                .map(|r| r.pixels)
                .collect();
            gt_total += gts.len();
            let mut dets: Vec<(f64, Vec<u32>, usize)> = connected_components(pred)
                .into_iter()
                .enumerate()
                .filter(|(_, r)| r.mask_value == value)
                .map(|(i, r)| {
                    let c: f64 =
                        r.pixels.iter().map(|&p| conf[p as usize]).sum::<f64>() / r.area() as f64;
                    (c, r.pixels, i)
                })
                .collect();
            dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)));
            let mut taken = vec![false; gts.len()];
            for (rank, (c, pixels, _)) in dets.iter().enumerate() {
                let mut best: Option<(f64, usize)> = None;
                for (gi, g) in gts.iter().enumerate() {
                    if taken[gi] {
                        continue;
                    }
                    let iou = region_iou(pixels, g);
                    if iou >= thresh && best.map_or(true, |(b, _)| iou > b) {
                        best = Some((iou, gi));
                    }
                }
                let tp = if let Some((_, gi)) = best {
                    taken[gi] = true;
                    true
                } else {
                    false
                };
                detections.push((*c, tp, s, rank));
            }
        }
        if gt_total == 0 {
            per_class.push(None);
            continue;
        }
        detections.sort_by(|a, b| {
            b.0.partial_cmp(&a.0).unwrap().then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3))
        });
        // naive: precision/recall at each prefix recomputed from scratch
        let n = detections.len();
        let mut prec = Vec::with_capacity(n);
        let mut rec = Vec::with_capacity(n);
        for k in 1..=n {
            let tp = detections[..k].iter().filter(|d| d.1).count();
            prec.push(tp as f64 / k as f64);
            rec.push(tp as f64 / gt_total as f64);
        }
        let mut ap = 0.0;
        let mut prev = 0.0;
        for k in 0..n {
            // envelope: max precision at recall >= rec[k]
            let env = prec[k..].iter().cloned().fold(0.0f64, f64::max);
            ap += (rec[k] - prev) * env;
            prev = rec[k];
        }
        per_class.push(Some(ap));
    }
    per_class
}

#[test]
fn map_matches_brute_force_oracle_on_500_random_masks() {
    let v = vocab(3);
    let mut scorer_trials = 0;
    for trial in 0..125u64 {
        // 4 samples per scorer, 125 scorers -> 500 masks
        let mut rng = Rng::new(0xD15C0, trial);
        let mut samples = Vec::new();
        for _ in 0..4 {
            let w = rng.range_inclusive(2, 8) as u32;
            let h = rng.range_inclusive(2, 8) as u32;
            let mut pred = Mask::new(w, h);
            let mut gt = Mask::new(w, h);
            for i in 0..(w * h) as usize {
                pred.data[i] = rng.below(4) as u8;
                gt.data[i] = rng.below(4) as u8;
            }
            // quantized confidences provoke ties
            let conf: Vec<f64> =
                (0..(w * h) as usize).map(|_| rng.below(5) as f64 / 4.0).collect();
            samples.push((pred, conf, gt));
        }
        let mut scorer = SegmentationScorer::new(&v, 0.5);
        for (pred, conf, gt) in &samples {
            scorer.add_sample(pred, conf, gt).unwrap();
        }
        let report = scorer.finish(&v, false);
        let oracle = map_oracle(&samples, 3, 0.5);
        assert_eq!(report.per_class_ap, oracle, "trial {trial}");
        let with_gt: Vec<f64> = oracle.iter().flatten().copied().collect();
        let expect = if with_gt.is_empty() {
            0.0
        } else {
            with_gt.iter().sum::<f64>() / with_gt.len() as f64
        };
        assert_eq!(report.map, expect, "trial {trial}");
        scorer_trials += 1;
    }
    assert_eq!(scorer_trials, 125);
}
