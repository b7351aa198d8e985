mod oracle;

use dpe_core::maps::*;
use dpe_core::Error;
use proptest::prelude::*;

const D1_EFFECTIVE: [u32; 8] = [65536, 16384, 65536, 16384, 4096, 4096, 8192, 32768];

fn plan_inputs(effective: Vec<u32>, target: u32, groups: usize, key_dims: Vec<Vec<usize>>) -> PlanInputs {
    PlanInputs {
        head_dim: 128,
        train_length: 8192,
        target_length: target,
        num_groups: groups,
        window: 1024,
        effective_lengths: effective,
        key_dims,
        clamp: true,
    }
}

#[test]
fn worked_examples() {
    assert_eq!(map_rerope(3000, 2048).unwrap(), 2048);
    assert_eq!(map_self_extend(1056, 1024, 32).unwrap(), 1025);
    assert_eq!(map_detection(65536, 4096, 1024, 131072).unwrap(), 3040);
    assert_eq!(map_dpe(4224, 32, 1024, 4096, false).unwrap(), 1124);
    assert_eq!(map_dpe(7, 2, 2, 5, false).unwrap(), 4);
    assert_eq!(map_dpe(131071, 2, 1024, 65536, true).unwrap(), 65536);
    assert_eq!(map_standard(-1), Err(Error::NegativeDistance(-1)));
    assert!(map_self_extend(10, 4, 0).is_err());
    assert!(map_detection(10, 4, 8, 8).is_err());
    assert!(map_dpe(10, 0, 4, 8, false).is_err());
}

#[test]
fn baseline_maps_match_integer_oracles() {
    let ctx = 1u64 << 17;
    let rerope = PositionMap::rerope(2048);
    let se = PositionMap::self_extend(1024, 32).unwrap();
    let detections: Vec<(u64, PositionMap)> = (10..=17)
        .map(|p| (1u64 << p, PositionMap::detection(1 << p, 1024, ctx as u32).unwrap()))
        .collect();
    for rel in 0..=ctx {
        let r = rel as u32;
        assert_eq!(rerope.apply(r) as u64, oracle::rerope(rel, 2048), "rerope {rel}");
        assert_eq!(se.apply(r) as u64, oracle::self_extend(rel, 1024, 32), "self-extend {rel}");
        for (t, map) in &detections {
            assert_eq!(map.apply(r) as u64, oracle::detection(rel, *t, 1024, ctx), "detection t={t} rel={rel}");
        }
    }
}

#[test]
fn detection_maximum_is_near_t() {
    let ctx = 1u32 << 17;
    for p in 10..=17 {
        let t = 1u32 << p;
        let v = map_detection(ctx as i64 - 1, t as i64, 1024, ctx as i64).unwrap() as i64;
        assert!((v - t as i64).abs() <= 1024, "t={t} max={v}");
    }
}

#[test]
fn reference_plan_scale_sizes() {
    let plan = DimensionPlan::build(plan_inputs(D1_EFFECTIVE.to_vec(), 131072, 8, vec![vec![]])).unwrap();
    let want: Vec<u32> = D1_EFFECTIVE.iter().map(|e| 131072 / e).collect();
    assert_eq!(plan.scale_sizes, want);
    assert_eq!(plan.scale_sizes, vec![2, 8, 2, 8, 32, 32, 16, 4]);
    assert_eq!(plan.groups[1], [8, 16]);
    assert!(plan.warnings().contains(&PlanWarning::EmptyKeySets));
}

#[test]
fn plan_rejects_bad_inputs() {
    assert!(DimensionPlan::build(plan_inputs(vec![4096; 7], 131072, 8, vec![vec![]])).is_err());
    assert!(DimensionPlan::build(plan_inputs(vec![1024; 8], 131072, 8, vec![vec![]])).is_err());
    assert!(DimensionPlan::build(plan_inputs(vec![4096; 8], 4096, 8, vec![vec![]])).is_err());
    assert!(DimensionPlan::build(plan_inputs(vec![4096; 8], 131072, 8, vec![vec![64]])).is_err());
    assert!(DimensionPlan::build(plan_inputs(vec![4096; 8], 131072, 8, vec![vec![1, 2], vec![3]])).is_err());
}

#[test]
fn remainder_group_warns() {
    let plan = DimensionPlan::build(plan_inputs(vec![4096; 7], 131072, 7, vec![vec![0, 5]])).unwrap();
    assert_eq!(plan.groups.last().unwrap(), &[54, 64]);
    assert!(plan
        .warnings()
        .iter()
        .any(|w| matches!(w, PlanWarning::RemainderGroup { last_group_size: 10, .. })));
}

#[test]
fn split_index_within_one_of_dpe() {
    for s in [2u32, 8, 16, 32] {
        for w in [0u32, 16, 1024] {
            let split = SplitIndex::new(s, w, SplitForm::Shifted).unwrap();
            let mut worst = 0i64;
            for m in 0..4096u32 {
                for n in 0..=m {
                    let rel = m - n;
                    if rel <= w {
                        continue;
                    }
                    let exact = oracle::dpe(rel as u64, s as u64, w as u64, 0, false) as i64;
                    let got = split.query_index(m) as i64 - split.key_index(n) as i64;
                    worst = worst.max((got - exact).abs());
                }
            }
            assert!(worst <= 1, "s={s} w={w} deviation {worst}");
        }
    }
}

proptest! {
    #[test]
    fn maps_are_monotone_and_identity_in_window(
        rel in 0u32..200_000,
        w in 0u32..4096,
        g in 1u32..64,
        s in 1u32..64,
        t in 1u32..200_000,
        extra in 1u32..200_000,
        e_extra in 1u32..100_000,
        clamp in any::<bool>(),
    ) {
        let ctx = w + extra;
        let maps = [
            PositionMap::Standard,
            PositionMap::rerope(w),
            PositionMap::self_extend(w, g).unwrap(),
            PositionMap::detection(t, w, ctx).unwrap(),
            PositionMap::dpe(s, w, w + e_extra, clamp).unwrap(),
        ];
        for map in maps {
            prop_assert_eq!(map.apply(0), 0);
            prop_assert!(map.apply(rel) <= map.apply(rel + 1), "{:?} at {}", map, rel);
            if rel <= w {
                prop_assert_eq!(map.apply(rel), rel);
            }
        }
    }

    #[test]
    fn clamped_dpe_never_exceeds_e(rel in 0u32..u32::MAX / 2, s in 1u32..64, w in 0u32..4096, e_extra in 1u32..100_000) {
        let e = w + e_extra;
        prop_assert!(map_dpe(rel as i64, s as i64, w as i64, e as i64, true).unwrap() as u32 <= e);
    }

    #[test]
    fn rerope_saturates(rel in 0u32..1_000_000, w in 0u32..4096) {
        prop_assume!(rel > w);
        prop_assert_eq!(map_rerope(rel as i64, w as i64).unwrap(), w);
    }

    #[test]
    fn groups_partition_pairs(pairs in 1usize..128, groups in 1usize..16) {
        prop_assume!(groups <= pairs);
        let layout = GroupLayout::new(pairs, groups).unwrap();
        let mut next = 0;
        for g in 0..groups {
            let r = layout.pairs(g);
            prop_assert_eq!(r.start, next);
            prop_assert!(!r.is_empty());
            for p in r.clone() {
                prop_assert_eq!(layout.group_of(p), g);
            }
            next = r.end;
        }
        prop_assert_eq!(next, pairs);
    }
}
