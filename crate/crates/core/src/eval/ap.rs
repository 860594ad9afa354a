use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// IoU thresholds 0.50, 0.55, …, 0.95 (computed as exact hundredths).
pub const AP_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub iou: f64,
    pub ap: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Precision and recall after each ranked prediction.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceApResult {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub thresholds: Vec<ThresholdResult>,
}

struct Groups {
    sizes: Vec<usize>,
    /// Smallest point index, used as the label-independent tie-breaker.
    first: Vec<usize>,
}

fn collect(labels: impl Iterator<Item = (usize, i64)>) -> (Groups, HashMap<i64, usize>) {
    let mut slot: HashMap<i64, usize> = HashMap::new();
    let mut g = Groups {
        sizes: Vec::new(),
        first: Vec::new(),
    };
    for (i, l) in labels {
        let s = *slot.entry(l).or_insert_with(|| {
            g.sizes.push(0);
            g.first.push(i);
            g.sizes.len() - 1
        });
        g.sizes[s] += 1;
    }
    (g, slot)
}

/// Detection-style AP of a predicted point partition against ground truth.
///
/// Points with ground truth `-1` are ignored; predicted `-1` means
/// unassigned. Predictions are ranked by size (ties: smallest point index),
/// and each takes the unmatched ground-truth group of highest IoU; it is a
/// true positive when that IoU reaches the threshold. AP per threshold is
/// the area under the interpolated precision/recall curve.
pub fn instance_ap<P, G>(pred_labels: &[P], gt_labels: &[G]) -> Result<InstanceApResult, EvalError>
where
    P: Copy + Into<i64>,
    G: Copy + Into<i64>,
{
    if pred_labels.len() != gt_labels.len() {
        return Err(EvalError::LengthMismatch(pred_labels.len(), gt_labels.len()));
    }
    let kept: Vec<usize> = (0..gt_labels.len()).filter(|&i| gt_labels[i].into() >= 0).collect();
    let (gt, gt_slot) = collect(kept.iter().map(|&i| (i, gt_labels[i].into())));
    let (pr, pr_slot) = collect(
        kept.iter()
            .filter(|&&i| pred_labels[i].into() >= 0)
            .map(|&i| (i, pred_labels[i].into())),
    );
    let mut inter: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for &i in &kept {
        let p = pred_labels[i].into();
        if p >= 0 {
            *inter.entry((pr_slot[&p], gt_slot[&gt_labels[i].into()])).or_default() += 1;
        }
    }
    let mut overlaps: Vec<Vec<(usize, f64)>> = vec![Vec::new(); pr.sizes.len()];
    for (&(p, g), &n) in &inter {
        let union = pr.sizes[p] + gt.sizes[g] - n;
        overlaps[p].push((g, n as f64 / union as f64));
    }
    let mut order: Vec<usize> = (0..pr.sizes.len()).collect();
    order.sort_by_key(|&p| (std::cmp::Reverse(pr.sizes[p]), pr.first[p]));

    let thresholds: Vec<ThresholdResult> = AP_THRESHOLDS
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let tau = (50 + 5 * k) as f64 / 100.0;
            let mut matched = vec![false; gt.sizes.len()];
            let mut tp_flags = Vec::with_capacity(order.len());
            for &p in &order {
                let best = overlaps[p]
                    .iter()
                    .filter(|(g, _)| !matched[*g])
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(gt.first[b.0].cmp(&gt.first[a.0])));
                let tp = match best {
                    Some(&(g, iou)) if iou >= tau => {
                        matched[g] = true;
                        true
                    }
                    _ => false,
                };
                tp_flags.push(tp);
            }
            score(tau, &tp_flags, gt.sizes.len())
        })
        .collect();
    let ap = thresholds.iter().map(|t| t.ap).sum::<f64>() / thresholds.len() as f64;
    Ok(InstanceApResult {
        ap,
        ap50: thresholds[0].ap,
        ap75: thresholds[5].ap,
        thresholds,
    })
}

fn score(iou: f64, tp_flags: &[bool], n_gt: usize) -> ThresholdResult {
    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut recall = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &t) in tp_flags.iter().enumerate() {
        tp += t as usize;
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
    }
    // interpolated precision: running max from the tail
    let mut interp = precision.clone();
    for k in (0..interp.len().saturating_sub(1)).rev() {
        interp[k] = interp[k].max(interp[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..recall.len() {
        if recall[k] > prev_recall {
            ap += (recall[k] - prev_recall) * interp[k];
            prev_recall = recall[k];
        }
    }
    ThresholdResult {
        iou,
        ap,
        true_positives: tp,
        false_positives: tp_flags.len() - tp,
        false_negatives: n_gt - tp,
        precision,
        recall,
    }
}
