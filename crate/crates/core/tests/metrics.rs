use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scd_core::loss::SekConvention;
use scd_core::metrics::{self, ConfusionMatrix};

mod common;
use common::{cm_of, random_maps, Maps, Oracle};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn metrics_match_scalar_oracle_on_fuzzed_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let n = rng.random_range(2..=7usize);
        let m = random_maps(32 * 32, n as u8, &mut rng);
        let cm = cm_of(&m, n);
        let o = Oracle::new(&m, n);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(cm.get(i, j) as f64, o.q[i][j], "case {case} cell ({i},{j})");
            }
        }
        let checks = [
            ("oa", metrics::oa(&cm).unwrap(), o.oa()),
            ("miou", metrics::miou(&cm).unwrap(), o.miou()),
            ("fscd", metrics::fscd(&cm).unwrap().2, o.fscd()),
            ("sek", metrics::sek(&cm, SekConvention::ZeroNoChange).unwrap().sek, o.sek()),
        ];
        for (name, got, want) in checks {
            assert!(
                got == want || rel(got, want) <= 1e-12,
                "case {case} {name}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn hand_example_matrix() {
    let cm = ConfusionMatrix::from_counts(3, vec![10, 0, 0, 0, 4, 1, 0, 1, 4]).unwrap();
    assert!((metrics::oa(&cm).unwrap() - 0.9).abs() < 1e-12);
    let (p, r, f) = metrics::fscd(&cm).unwrap();
    assert!((p - 0.8).abs() < 1e-12 && (r - 0.8).abs() < 1e-12 && (f - 0.8).abs() < 1e-12);
    let s = metrics::sek(&cm, SekConvention::ZeroNoChange).unwrap().sek;
    assert!((s - 0.6).abs() < 1e-12, "{s}");
    let b = ConfusionMatrix::from_counts(2, vec![4, 1, 1, 4]).unwrap();
    assert!((metrics::miou(&b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!(metrics::oa(&ConfusionMatrix::new(3)).is_err());
}

#[test]
fn identical_maps_give_perfect_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = random_maps(400, 5, &mut rng);
    let mut cm = ConfusionMatrix::new(5);
    cm.accumulate(&m.gt_sem, &m.gt_change, &m.gt_sem, &m.gt_change, &m.void)
        .unwrap();
    assert_eq!(metrics::oa(&cm).unwrap(), 1.0);
    assert_eq!(metrics::fscd(&cm).unwrap().2, 1.0);
}

fn maps_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..6, 1usize..200)
}

proptest! {
    #[test]
    fn merged_matrices_equal_single_pass((seed, n, len) in maps_strategy(), split in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_maps(len, n as u8, &mut rng);
        let cut = split.min(len);
        let part = |lo: usize, hi: usize| Maps {
            pred_sem: m.pred_sem[lo..hi].to_vec(),
            pred_change: m.pred_change[lo..hi].to_vec(),
            gt_sem: m.gt_sem[lo..hi].to_vec(),
            gt_change: m.gt_change[lo..hi].to_vec(),
            void: m.void[lo..hi].to_vec(),
        };
        let whole = cm_of(&m, n);
        let mut a = cm_of(&part(0, cut), n);
        let b = cm_of(&part(cut, len), n);
        let mut ba = b.clone();
        a.merge(&b).unwrap();
        ba.merge(&cm_of(&part(0, cut), n)).unwrap();
        prop_assert_eq!(&a, &whole);
        prop_assert_eq!(&ba, &whole);
        if whole.total() > 0 {
            prop_assert_eq!(metrics::oa(&a).unwrap(), metrics::oa(&whole).unwrap());
            prop_assert_eq!(metrics::sek(&a, SekConvention::ZeroNoChange).unwrap(), metrics::sek(&whole, SekConvention::ZeroNoChange).unwrap());
        }
    }

    #[test]
    fn permuting_semantic_ids_preserves_scores(seed in any::<u64>(), n in 3usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_maps(300, n as u8, &mut rng);
        // random permutation of 1..n, 0 fixed
        let mut perm: Vec<u8> = (1..n as u8).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let map = |v: u8| if v == 0 { 0 } else { perm[v as usize - 1] };
        let pm = Maps {
            pred_sem: m.pred_sem.iter().map(|&v| map(v)).collect(),
            gt_sem: m.gt_sem.iter().map(|&v| map(v)).collect(),
            pred_change: m.pred_change.clone(),
            gt_change: m.gt_change.clone(),
            void: m.void.clone(),
        };
        let (a, b) = (cm_of(&m, n), cm_of(&pm, n));
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(1.0);
        prop_assert!(close(metrics::oa(&a).unwrap(), metrics::oa(&b).unwrap()));
        prop_assert!(close(metrics::miou(&a).unwrap(), metrics::miou(&b).unwrap()));
        prop_assert!(close(metrics::fscd(&a).unwrap().2, metrics::fscd(&b).unwrap().2));
        prop_assert!(close(
            metrics::sek(&a, SekConvention::ZeroNoChange).unwrap().sek,
            metrics::sek(&b, SekConvention::ZeroNoChange).unwrap().sek
        ));
    }
}
