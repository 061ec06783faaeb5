//! Property tests for the spec-level invariants.

use proptest::prelude::*;
use voxalign_core::labels::{
    agreement_metrics, consensus_filter, parse_label_response, AgreementProtocol,
};
use voxalign_core::nn::Tensor;
use voxalign_core::schema::{schema_desk_8, LabelSchema, LabelVector, SchemaKind};
use voxalign_core::training::{contrastive_loss, masked_bce, UncertainPolicy};

fn tri_values(arity: usize) -> impl Strategy<Value = Vec<i8>> {
    proptest::collection::vec(prop_oneof![Just(-1i8), Just(0i8), Just(1i8)], arity)
}

fn desk_vectors(n: usize) -> impl Strategy<Value = Vec<LabelVector>> {
    proptest::collection::vec(tri_values(8), n).prop_map(|rows| {
        let s = schema_desk_8();
        rows.into_iter()
            .map(|v| LabelVector::new(&s, v).unwrap())
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// parse(render(v)) == v for every valid label vector.
    #[test]
    fn parse_render_round_trip(values in tri_values(8)) {
        let s = schema_desk_8();
        let v = LabelVector::new(&s, values).unwrap();
        let parsed = parse_label_response(&v.render(), &s).unwrap();
        prop_assert_eq!(parsed, v);
    }

    /// Accepted strings parse to the same vector after whitespace mangling;
    /// re-rendering canonicalizes.
    #[test]
    fn parse_is_idempotent_modulo_whitespace(
        values in tri_values(8),
        spaces in proptest::collection::vec(0usize..3, 9),
    ) {
        let s = schema_desk_8();
        let v = LabelVector::new(&s, values).unwrap();
        let tokens: Vec<String> = v.values.iter().map(|x| x.to_string()).collect();
        let mut mangled = String::new();
        for (i, t) in tokens.iter().enumerate() {
            mangled.push_str(&" ".repeat(spaces[i]));
            mangled.push_str(t);
            if i + 1 < tokens.len() {
                mangled.push(',');
            }
        }
        mangled.push_str(&" ".repeat(spaces[8]));
        let first = parse_label_response(&mangled, &s).unwrap();
        prop_assert_eq!(&first, &v);
        let second = parse_label_response(&first.render(), &s).unwrap();
        prop_assert_eq!(second, v);
    }

    /// Arity mismatches and out-of-domain tokens never parse.
    #[test]
    fn parse_rejects_wrong_arity_and_domain(
        values in tri_values(8),
        drop in 0usize..8,
        bad in prop_oneof![Just("2"), Just("3"), Just("-2"), Just("x"), Just("")],
    ) {
        let s = schema_desk_8();
        // wrong count
        let mut short: Vec<String> = values.iter().map(|x| x.to_string()).collect();
        short.remove(drop);
        prop_assert!(parse_label_response(&short.join(","), &s).is_err());
        // bad token
        let mut bad_tokens: Vec<String> = values.iter().map(|x| x.to_string()).collect();
        bad_tokens[drop] = bad.to_string();
        prop_assert!(parse_label_response(&bad_tokens.join(","), &s).is_err());
    }

    /// consensus_filter is symmetric and monotone in the threshold.
    #[test]
    fn consensus_symmetric_and_monotone(
        a in desk_vectors(12),
        b in desk_vectors(12),
        t_lo in 0.05f64..0.5,
        t_hi in 0.5f64..0.99,
    ) {
        let ab = consensus_filter(&a, &b, t_lo).unwrap();
        let ba = consensus_filter(&b, &a, t_lo).unwrap();
        prop_assert_eq!(&ab, &ba);
        let hi = consensus_filter(&a, &b, t_hi).unwrap();
        for c in &hi {
            prop_assert!(ab.contains(c), "raising threshold added category {}", c);
        }
    }

    /// map_uncertain_to_negative equals scoring pre-mapped inputs.
    #[test]
    fn agreement_map_equals_premapped(pred in desk_vectors(6), gold in desk_vectors(6)) {
        let map = |vs: &Vec<LabelVector>| -> Vec<LabelVector> {
            vs.iter()
                .map(|v| LabelVector {
                    schema: v.schema.clone(),
                    values: v.values.iter().map(|x| (*x).max(0)).collect(),
                })
                .collect()
        };
        let direct = agreement_metrics(&pred, &gold, AgreementProtocol::MapUncertainToNegative).unwrap();
        let premapped = agreement_metrics(&map(&pred), &map(&gold), AgreementProtocol::MapUncertainToNegative).unwrap();
        prop_assert_eq!(direct.kappa.to_bits(), premapped.kappa.to_bits());
        prop_assert_eq!(direct.f1.to_bits(), premapped.f1.to_bits());
        prop_assert_eq!(direct.accuracy.to_bits(), premapped.accuracy.to_bits());
        prop_assert!(direct.kappa <= 1.0);
    }

    /// Jointly permuting (z_i, t_i) pairs leaves the contrastive loss
    /// unchanged (up to summation rounding).
    #[test]
    fn contrastive_is_permutation_equivariant(
        seed in 0u64..1000,
        n in 2usize..8,
        dim in 2usize..6,
    ) {
        use rand::SeedableRng;
        use rand::seq::SliceRandom;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::randn(&[n, dim], 1.0, &mut rng);
        let t = Tensor::randn(&[n, dim], 1.0, &mut rng);
        let base = contrastive_loss(&z, &t, false).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut zp = Tensor::zeros(&[n, dim]);
        let mut tp = Tensor::zeros(&[n, dim]);
        for (row, &src) in perm.iter().enumerate() {
            zp.data[row * dim..(row + 1) * dim].copy_from_slice(&z.data[src * dim..(src + 1) * dim]);
            tp.data[row * dim..(row + 1) * dim].copy_from_slice(&t.data[src * dim..(src + 1) * dim]);
        }
        let permuted = contrastive_loss(&zp, &tp, false).unwrap();
        prop_assert!((base - permuted).abs() < 1e-9, "{} vs {}", base, permuted);
    }

    /// Under the ignore policy the loss is invariant to logits at masked
    /// cells.
    #[test]
    fn masked_cells_do_not_affect_bce(
        labels in tri_values(8),
        logits in proptest::collection::vec(-3.0f64..3.0, 8),
        junk in proptest::collection::vec(-100.0f64..100.0, 8),
    ) {
        prop_assume!(labels.iter().any(|&l| l != -1));
        let base = masked_bce(&logits, &labels, UncertainPolicy::Ignore).unwrap();
        let mut poisoned = logits.clone();
        for (i, &l) in labels.iter().enumerate() {
            if l == -1 {
                poisoned[i] = junk[i];
            }
        }
        let after = masked_bce(&poisoned, &labels, UncertainPolicy::Ignore).unwrap();
        prop_assert_eq!(base.to_bits(), after.to_bits());
    }

    /// recall@k is monotone nondecreasing in k and reaches 1 at k = N.
    #[test]
    fn recall_monotone_and_complete(seed in 0u64..500, n in 2usize..20) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let sim = Tensor::randn(&[n, n], 1.0, &mut rng);
        let ks: Vec<usize> = (1..=n).collect();
        let r = voxalign_core::eval::recall_at_k(&sim, &ks).unwrap();
        let mut prev = 0.0;
        for k in 1..=n {
            let v = r[&k];
            prop_assert!(v >= prev);
            prev = v;
        }
        prop_assert_eq!(r[&n], 1.0);
    }
}

#[test]
fn random_ranking_recall_matches_k_over_n_statistically() {
    // Expected recall@k of a random ranking is k/N; check within 3 standard
    // errors over 1000 shuffled similarity matrices.
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let n = 20;
    let trials = 1000;
    let ks = [1usize, 5, 10];
    let mut hits = [0usize; 3];
    for _ in 0..trials {
        let mut sim = Tensor::zeros(&[n, n]);
        for v in &mut sim.data {
            *v = rng.gen::<f64>();
        }
        let r = voxalign_core::eval::recall_at_k(&sim, &ks).unwrap();
        for (i, &k) in ks.iter().enumerate() {
            hits[i] += (r[&k] * n as f64).round() as usize;
        }
    }
    for (i, &k) in ks.iter().enumerate() {
        let p = k as f64 / n as f64;
        let total = (trials * n) as f64;
        let observed = hits[i] as f64 / total;
        let se = (p * (1.0 - p) / total).sqrt();
        assert!(
            (observed - p).abs() < 3.0 * se,
            "recall@{k}: observed {observed}, expected {p} ± {}",
            3.0 * se
        );
    }
}

#[test]
fn visual_schema_round_trip_under_binary_domain() {
    let s = LabelSchema::new(
        "bin4",
        vec!["a".into(), "b".into(), "c".into(), "d".into()],
        vec![0, 1],
        SchemaKind::VisualPattern,
    )
    .unwrap();
    let v = LabelVector::new(&s, vec![0, 1, 1, 0]).unwrap();
    assert_eq!(parse_label_response(&v.render(), &s).unwrap(), v);
    assert!(parse_label_response("0,1,-1,0", &s).is_err());
}
