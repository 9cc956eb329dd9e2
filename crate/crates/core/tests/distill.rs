mod common;

use dasecount::convnet::loss::{cross_entropy, distill_loss};
use dasecount::convnet::Split;
use dasecount::distill::{distill_lineage, select_generation, DistillConfig, DistillLineage, Selection};
use dasecount::linalg::{softmax_row, Matrix};
use dasecount::preprocess::Sample;
use proptest::prelude::*;

fn logits_strategy() -> impl Strategy<Value = (Matrix<f64>, Vec<usize>)> {
    (1usize..6, 2usize..8).prop_flat_map(|(n, c)| {
        (prop::collection::vec(-8.0..8.0f64, n * c), prop::collection::vec(0..c, n)).prop_map(move |(d, y)| (Matrix::from_vec(n, c, d), y))
    })
}

proptest! {
    #[test]
    fn alpha_one_equals_cross_entropy((logits, labels) in logits_strategy(), t in 0.5..4.0f64) {
        let teacher: Vec<Vec<f64>> = logits.rows_iter().map(|r| softmax_row(&r.iter().map(|v| v * 0.3).collect::<Vec<_>>(), t)).collect();
        let (parts, g) = distill_loss(&logits, &labels, Some(&teacher), 1.0, t).unwrap();
        let (ce, g_ce) = cross_entropy(&logits, &labels).unwrap();
        prop_assert!((parts.total - ce).abs() <= 1e-9);
        for (a, b) in g.data.iter().zip(&g_ce.data) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kl_vanishes_when_student_matches_teacher((logits, labels) in logits_strategy(), t in 0.5..4.0f64, alpha in 0.0..1.0f64) {
        let teacher: Vec<Vec<f64>> = logits.rows_iter().map(|r| softmax_row(r, t)).collect();
        let (parts, _) = distill_loss(&logits, &labels, Some(&teacher), alpha, t).unwrap();
        prop_assert!(parts.kl.abs() <= 1e-9);
        prop_assert!(parts.kl >= -1e-12);
    }
}

#[test]
fn lineage_holds_every_generation() {
    let l = common::tiny_lineage(6);
    assert_eq!(l.models.len(), 7);
    assert_eq!(l.stats.len(), 7);
    let count = l.models[0].amp.param_count() + l.models[0].phd.param_count();
    for (k, m) in l.models.iter().enumerate() {
        assert_eq!(m.generation, k);
        assert_eq!(m.amp.param_count() + m.phd.param_count(), count);
    }
    for w in l.models.windows(2) {
        assert_ne!(w[0].amp.params(), w[1].amp.params());
    }
    let best = l.stats.iter().map(|s| s.val_acc_combined).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(l.stats[l.chosen].val_acc_combined, best);
    assert!(l.stats[..l.chosen].iter().all(|s| s.val_acc_combined < best));
    assert!(select_generation(&l, Selection::Explicit(7)).is_err());
}

#[test]
fn lineage_is_deterministic_and_survives_save_load() {
    let a = common::tiny_lineage(2);
    let b = common::tiny_lineage(2);
    for (x, y) in a.models.iter().zip(&b.models) {
        assert_eq!(x.amp.params(), y.amp.params());
        assert_eq!(x.phd.params(), y.phd.params());
    }
    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let back = DistillLineage::load(dir.path()).unwrap();
    assert_eq!(back.stats, a.stats);
    assert_eq!(back.chosen, a.chosen);
    assert_eq!(back.models[2].phd.params(), a.models[2].phd.params());
}

#[test]
fn alpha_outside_unit_interval_is_rejected() {
    let samples = common::tiny_samples(3, 4, 0.5, 1);
    let refs: Vec<&Sample> = samples.iter().collect();
    let split = Split::stratified(&refs, 0.25, 2);
    let cfg = DistillConfig { alpha: 1.5, ..Default::default() };
    let e = distill_lineage(&common::tiny_extractor(3, 0), &refs, &split, &cfg).unwrap_err();
    assert_eq!(e.category(), "config");
}
