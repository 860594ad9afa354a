use std::collections::HashMap;

use pointlift_core::anomaly::{apply_report, consistency_masks, filter_cloud, FilterConfig};
use pointlift_core::eval::instance_ap;
use pointlift_core::instance::{label_cloud, lift_masks, unify_instances, UnifyConfig};
use pointlift_core::scene::{assemble_point_cloud, unproject_all, InstanceMask2D};
use pointlift_core::synth::{generate, SynthConfig};

/// Rand index from the contingency table; pairs are counted, not enumerated.
fn rand_index(a: &[i32], b: &[i32]) -> f64 {
    let pairs = |n: u64| n * n.saturating_sub(1) / 2;
    let mut joint: HashMap<(i32, i32), u64> = HashMap::new();
    let (mut ca, mut cb): (HashMap<i32, u64>, HashMap<i32, u64>) = Default::default();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let n = a.len() as u64;
    let same_both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let same_a: u64 = ca.values().map(|&c| pairs(c)).sum();
    let same_b: u64 = cb.values().map(|&c| pairs(c)).sum();
    let total = pairs(n);
    let agree = total + 2 * same_both - same_a - same_b;
    agree as f64 / total as f64
}

#[test]
fn rand_index_oracle_sanity() {
    assert_eq!(rand_index(&[0, 0, 1, 1], &[5, 5, 9, 9]), 1.0);
    // pairs: (0,1) agree-same, others split one way only
    assert!((rand_index(&[0, 0, 1], &[0, 1, 1]) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn five_objects_six_views_unify_exactly() {
    let scene = generate(&SynthConfig {
        views: 6,
        objects: 5,
        ..Default::default()
    });
    let frames = &scene.bundle.frames;
    let pms = unproject_all(frames);
    let report = consistency_masks(&pms, frames, &FilterConfig::default()).unwrap();
    assert_eq!(report.total_flagged(), 0);
    let kept = apply_report(&pms, &report).unwrap();
    let cloud = filter_cloud(&assemble_point_cloud(&pms, frames).unwrap(), &report).unwrap();

    // independent random label values per view
    let masks: Vec<InstanceMask2D> = frames.iter().map(|f| f.masks.clone().unwrap()).collect();
    let distinct: Vec<Vec<u32>> = masks.iter().map(|m| m.label_set()).collect();
    assert!(distinct.iter().any(|a| distinct.iter().any(|b| a != b && !a.is_empty() && !b.is_empty())));

    let cfg = UnifyConfig::default();
    let groups = lift_masks(&masks, &kept, &cloud, cfg.min_group_points).unwrap();
    let unified = unify_instances(&groups, &cloud, frames, &cfg).unwrap();
    assert_eq!(unified.len(), 5, "{:?}", unified.iter().map(|g| g.members.len()).collect::<Vec<_>>());

    let labeled = label_cloud(&cloud, &unified).unwrap();
    let gt = scene.gt.point_labels(&labeled).unwrap();
    assert_eq!(rand_index(&labeled.instance_id, &gt), 1.0);

    let ap = instance_ap(&labeled.instance_id, &gt).unwrap();
    assert_eq!((ap.ap, ap.ap50, ap.ap75), (1.0, 1.0, 1.0));
}

#[test]
fn stricter_eta_never_reduces_group_count() {
    let scene = generate(&SynthConfig {
        views: 4,
        objects: 4,
        ..Default::default()
    });
    let frames = &scene.bundle.frames;
    let pms = unproject_all(frames);
    let cloud = assemble_point_cloud(&pms, frames).unwrap();
    let masks: Vec<InstanceMask2D> = frames.iter().map(|f| f.masks.clone().unwrap()).collect();
    let groups = lift_masks(&masks, &pms, &cloud, 20).unwrap();
    let mut prev = 0;
    for eta in [0.05, 0.2, 1.0 / 3.0, 0.6, 0.95] {
        let cfg = UnifyConfig {
            eta,
            ..Default::default()
        };
        let n = unify_instances(&groups, &cloud, frames, &cfg).unwrap().len();
        assert!(n >= prev, "eta {eta}: {n} < {prev}");
        prev = n;
    }
}
