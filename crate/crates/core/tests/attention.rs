mod oracle;

use dpe_core::attention::*;
use dpe_core::maps::{DimensionPlan, PlanInputs, PositionMap, SplitForm};
use dpe_core::rope::FrequencyBasis;
use dpe_core::seed;
use dpe_core::tensor::HeadTensor;
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(rng: &mut impl Rng, h: usize, l: usize, d: usize) -> HeadTensor {
    HeadTensor::from_fn(h, l, d, |_, _, _| rng.random_range(-1.0f32..1.0))
}

fn random_problem(root: u64, h: usize, l: usize, d: usize, scheme: PositionScheme) -> AttentionProblem {
    let mut rng = seed::rng(root, "attention-test", 0);
    let q = random_tensor(&mut rng, h, l, d);
    let k = random_tensor(&mut rng, h, l, d);
    let v = random_tensor(&mut rng, h, l, d);
    AttentionProblem::new(q, k, v, FrequencyBasis::standard(d).unwrap(), scheme).unwrap()
}

fn plan(d: usize, heads: usize, target: u32, window: u32, effective: Vec<u32>, top_k: usize, clamp: bool) -> DimensionPlan {
    let num_groups = effective.len();
    DimensionPlan::build(PlanInputs {
        head_dim: d,
        train_length: target / 4,
        target_length: target,
        num_groups,
        window,
        effective_lengths: effective,
        key_dims: (0..heads).map(|h| (0..top_k).map(|i| (i * 3 + h) % (d / 2)).collect::<std::collections::BTreeSet<_>>().into_iter().collect()).collect(),
        clamp,
    })
    .unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn standard_matches_absolute_oracle() {
    for case in 0..20u64 {
        let (h, l, d) = (2, 1 + (case as usize * 37) % 96, [4, 8, 16, 64][case as usize % 4]);
        let p = random_problem(case, h, l, d, PositionScheme::Uniform(PositionMap::Standard));
        let out = attend_exact(&p).unwrap().output;
        let th = oracle::thetas(d, 10000.0);
        for head in 0..h {
            let want = oracle::attention_head_absolute(
                p.queries.head(head),
                p.keys.head(head),
                p.values.head(head),
                l,
                d,
                &th,
                1.0 / (d as f64).sqrt(),
            );
            for (g, w) in out.head(head).iter().zip(&want) {
                assert!((*g as f64 - w).abs() <= 1e-5 * w.abs().max(1.0), "case {case}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn dpe_plan_matches_relative_oracle() {
    let d = 16;
    let pl = plan(d, 2, 256, 8, vec![32, 64, 128, 256], 5, true);
    let p = random_problem(7, 2, 200, d, PositionScheme::Plan(pl.clone()));
    let out = attend_exact(&p).unwrap().output;
    let th = oracle::thetas(d, 10000.0);
    for head in 0..2 {
        let want = oracle::attention_head(
            p.queries.head(head),
            p.keys.head(head),
            p.values.head(head),
            200,
            d,
            d,
            &th,
            0.25,
            |j, m, n| {
                let rel = (m - n) as u64;
                if pl.is_key(head, j) {
                    let g = pl.layout().group_of(j);
                    oracle::dpe(rel, pl.scale_sizes[g] as u64, 8, pl.effective_lengths[g] as u64, true)
                } else {
                    rel
                }
            },
        );
        for (g, w) in out.head(head).iter().zip(&want) {
            assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
        }
    }
}

#[test]
fn single_token_returns_value() {
    let p = random_problem(1, 3, 1, 8, PositionScheme::Uniform(PositionMap::Standard));
    assert_eq!(attend_exact(&p).unwrap().output, p.values);
    assert_eq!(attend_tiled(&p, 4).unwrap().output, p.values);
}

#[test]
fn zero_maps_are_position_free() {
    let p = random_problem(2, 1, 40, 8, PositionScheme::Uniform(PositionMap::rerope(0)));
    let out = attend_exact(&p).unwrap().output;
    let want = oracle::attention_head(p.queries.head(0), p.keys.head(0), p.values.head(0), 40, 8, 8, &oracle::thetas(8, 1e4), 1.0 / 8f64.sqrt(), |_, _, _| 0);
    for (g, w) in out.data().iter().zip(&want) {
        assert!((*g as f64 - w).abs() < 1e-6);
    }
}

#[test]
fn logits_are_causal_and_rows_normalize() {
    let p = random_problem(3, 2, 30, 8, PositionScheme::Uniform(PositionMap::Standard));
    let out = attend_exact_with(&p, ExactOptions { keep_logits: true, ..Default::default() }).unwrap();
    let logits = out.logits.unwrap();
    for h in 0..2 {
        for m in 0..30 {
            let row = logits.row(h, m);
            assert!(row[m + 1..].iter().all(|x| *x == f32::NEG_INFINITY));
            let max = row[..=m].iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let total: f64 = row[..=m].iter().map(|x| (*x as f64 - max).exp()).sum();
            let sum: f64 = row[..=m].iter().map(|x| (*x as f64 - max).exp() / total).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn window_only_problem_matches_standard() {
    let d = 16;
    let pl = plan(d, 1, 1024, 64, vec![128, 256, 512, 1024], 4, true);
    let p = random_problem(4, 1, 65, d, PositionScheme::SplitPlan { plan: pl, form: SplitForm::Shifted });
    let mut standard = p.clone();
    standard.scheme = PositionScheme::Uniform(PositionMap::Standard);
    let a = attend_tiled(&p, 16).unwrap().output;
    let b = attend_exact(&standard).unwrap().output;
    assert!(max_abs_diff(a.data(), b.data()) < 1e-5);
}

#[test]
fn unit_scales_match_standard() {
    let d = 16;
    let pl = plan(d, 2, 512, 32, vec![512; 4], 6, false);
    let p = random_problem(5, 2, 300, d, PositionScheme::SplitPlan { plan: pl, form: SplitForm::Shifted });
    let mut standard = p.clone();
    standard.scheme = PositionScheme::Uniform(PositionMap::Standard);
    let a = attend_tiled(&p, 32).unwrap().output;
    let b = attend_exact(&standard).unwrap().output;
    assert!(max_abs_diff(a.data(), b.data()) < 1e-4);
}

#[test]
fn tiled_matches_exact_with_split_maps() {
    for (case, clamp) in [(0u64, false), (1, true), (2, true)] {
        let d = 32;
        let pl = plan(d, 2, 1024, 48, vec![128, 512, 256, 1024], 7, clamp);
        let scheme = PositionScheme::SplitPlan { plan: pl, form: SplitForm::Shifted };
        let p = random_problem(10 + case, 2, 700, d, scheme);
        let a = attend_tiled(&p, 64).unwrap().output;
        let b = attend_exact(&p).unwrap().output;
        assert!(max_abs_diff(a.data(), b.data()) < 1e-4, "case {case}");
    }
}

#[test]
fn tiled_handles_uniform_baselines() {
    for map in [PositionMap::Standard, PositionMap::rerope(20), PositionMap::self_extend(20, 4).unwrap()] {
        let p = random_problem(6, 1, 150, 16, PositionScheme::Uniform(map));
        let a = attend_tiled(&p, 17).unwrap().output;
        let exact = if let PositionMap::SelfExtend { window, group } = map {
            let pl = DimensionPlan::build(PlanInputs {
                head_dim: 16,
                train_length: 150,
                target_length: 150 * group,
                num_groups: 1,
                window,
                effective_lengths: vec![150],
                key_dims: vec![(0..8).collect()],
                clamp: false,
            })
            .unwrap();
            let mut q = p.clone();
            q.scheme = PositionScheme::SplitPlan { plan: pl, form: SplitForm::GroupedOffset };
            attend_exact(&q).unwrap().output
        } else {
            attend_exact(&p).unwrap().output
        };
        assert!(max_abs_diff(a.data(), exact.data()) < 1e-4, "{map:?}");
    }
}

#[test]
fn errors() {
    let p = random_problem(8, 1, 20, 8, PositionScheme::Uniform(PositionMap::Standard));
    assert!(matches!(
        attend_exact_with(&p, ExactOptions { max_len: 10, keep_logits: false }),
        Err(dpe_core::Error::SequenceTooLong { len: 20, cap: 10 })
    ));
    assert!(attend_tiled(&p, 0).is_err());
    let mut bad = p.queries.clone();
    bad.data_mut()[3] = f32::NAN;
    assert!(AttentionProblem::new(bad, p.keys.clone(), p.values.clone(), p.basis.clone(), p.scheme.clone()).is_err());
    let det = PositionScheme::Uniform(PositionMap::detection(8, 2, 20).unwrap());
    let q = random_problem(8, 1, 20, 8, det);
    assert!(attend_exact(&q).is_ok());
    assert!(attend_tiled(&q, 4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn causality(seed_ in any::<u64>(), l in 2usize..60, cut in 0usize..60) {
        let cut = cut % l;
        let p = random_problem(seed_, 1, l, 8, PositionScheme::Uniform(PositionMap::rerope(5)));
        let mut q = p.clone();
        for n in cut + 1..l {
            q.values.row_mut(0, n).fill(0.0);
        }
        let a = attend_exact(&p).unwrap().output;
        let b = attend_exact(&q).unwrap().output;
        for m in 0..=cut {
            prop_assert_eq!(a.row(0, m), b.row(0, m));
        }
        let ta = attend_tiled(&p, 7).unwrap().output;
        let tb = attend_tiled(&q, 7).unwrap().output;
        for m in 0..=cut {
            prop_assert_eq!(ta.row(0, m), tb.row(0, m));
        }
    }

    #[test]
    fn rows_are_convex_combinations(seed_ in any::<u64>(), l in 1usize..50) {
        let p = random_problem(seed_, 2, l, 8, PositionScheme::Uniform(PositionMap::Standard));
        let out = attend_exact(&p).unwrap().output;
        for h in 0..2 {
            for m in 0..l {
                for c in 0..8 {
                    let vals: Vec<f32> = (0..=m).map(|n| p.values.row(h, n)[c]).collect();
                    let lo = vals.iter().cloned().fold(f32::INFINITY, f32::min);
                    let hi = vals.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let x = out.row(h, m)[c];
                    prop_assert!(x >= lo - 1e-5 && x <= hi + 1e-5);
                }
            }
        }
    }

    #[test]
    fn head_permutation_equivariance(seed_ in any::<u64>(), l in 1usize..40) {
        let p = random_problem(seed_, 3, l, 8, PositionScheme::Uniform(PositionMap::self_extend(4, 2).unwrap()));
        let perm = [2usize, 0, 1];
        let permute = |t: &HeadTensor| {
            let [h, l, d] = t.shape();
            HeadTensor::from_fn(h, l, d, |hh, m, c| t.row(perm[hh], m)[c])
        };
        let q = AttentionProblem::new(permute(&p.queries), permute(&p.keys), permute(&p.values), p.basis.clone(), p.scheme.clone()).unwrap();
        let a = attend_exact(&p).unwrap().output;
        let b = attend_exact(&q).unwrap().output;
        prop_assert_eq!(permute(&a), b);
    }
}
