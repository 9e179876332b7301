use std::path::Path;

use ncmrec::nn::log_softmax;
use ncmrec::scm::format::{from_text, to_text};
use ncmrec::scm::{
    counterfactual_distribution, gumbel_max_select, probability_of_necessity, verify_gumbel_consistency,
    verify_with_coupling, CounterfactualQuery, GumbelNoise, Intervention, LogitTable, NoiseCoupling,
    StructuralCausalModel, WorldOutcome,
};
use ncmrec::rng::{stream, Purpose};
use proptest::prelude::*;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn within(est: f64, p: f64, n: usize) -> bool {
    (est - p).abs() <= 3.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-12
}

/// Two-valued action `A` and two-valued response `R`.
fn model(r_rows: &[Vec<f64>]) -> StructuralCausalModel {
    StructuralCausalModel::builder()
        .node("A", 2, &[], LogitTable::from_probabilities(&[vec![0.3, 0.7]]).unwrap())
        .node("R", 2, &["A"], LogitTable::from_probabilities(r_rows).unwrap())
        .build()
        .unwrap()
}

#[test]
fn selection_frequencies_match_the_softmax() {
    let logits = [0.3, -1.2, 0.9, 0.0];
    let p: Vec<f64> = log_softmax(&logits).iter().map(|l| l.exp()).collect();
    let n = 200_000;
    let mut r = stream(1, Purpose::Exogenous, &[0x5e1]);
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[gumbel_max_select(&logits, &GumbelNoise::sample(&mut r, 4)).unwrap()] += 1;
    }
    for i in 0..4 {
        assert!(within(counts[i] as f64 / n as f64, p[i], n), "{i}: {counts:?} vs {p:?}");
    }
}

#[test]
fn binary_counterfactual_joint_is_comonotone() {
    // With shared noise, R = 1 exactly when (l1 - l0) + logistic noise > 0,
    // so both worlds threshold the same variable.
    let m = model(&[vec![0.8, 0.2], vec![0.35, 0.65]]);
    let q = CounterfactualQuery::new(vec![
        (vec![Intervention::set("A", 0)], "R"),
        (vec![Intervention::set("A", 1)], "R"),
    ]);
    let n = 100_000;
    let joint = counterfactual_distribution(&m, &q, n, 7).unwrap();
    let p0 = sigmoid((0.2f64 / 0.8).ln());
    let p1 = sigmoid((0.65f64 / 0.35).ln());
    let exact = [[1.0 - p1, p1 - p0], [0.0, p0]];
    for (a, row) in exact.iter().enumerate() {
        for (b, &want) in row.iter().enumerate() {
            assert!(within(joint.get(&[a, b]), want, n), "({a},{b}) {} vs {want}", joint.get(&[a, b]));
        }
    }
    assert_eq!(joint.get(&[1, 0]), 0.0);
}

#[test]
fn interventions_and_evidence() {
    let m = model(&[vec![0.9, 0.1], vec![0.4, 0.6]]);
    let n = 50_000;
    let obs = counterfactual_distribution(&m, &CounterfactualQuery::new(vec![(vec![], "R")]), n, 3).unwrap();
    let p_r1 = 0.3 * 0.1 + 0.7 * 0.6;
    assert!(within(obs.marginal(0)[1], p_r1, n));
    let done = CounterfactualQuery::new(vec![(vec![Intervention::set("A", 1)], "R")]);
    assert!(within(counterfactual_distribution(&m, &done, n, 3).unwrap().marginal(0)[1], 0.6, n));

    let given = CounterfactualQuery::new(vec![(vec![], "A")]).with_evidence("R", 1);
    let post = counterfactual_distribution(&m, &given, n, 3).unwrap();
    let want = 0.7 * 0.6 / p_r1;
    assert!(within(post.marginal(0)[1], want, post.accepted));

    assert!(counterfactual_distribution(&m, &CounterfactualQuery::new(vec![(vec![], "Z")]), 10, 0).is_err());
    assert!(counterfactual_distribution(&m, &CounterfactualQuery::new(vec![(vec![Intervention::set("A", 2)], "R")]), 10, 0).is_err());
}

#[test]
fn necessity_respects_the_ratio_ordering() {
    // The alternative action raises P(R = 1), so had R = 1 occurred under A = 0
    // it would have stayed 1 under A = 1.
    let m = model(&[vec![0.8, 0.2], vec![0.35, 0.65]]);
    let (f, c) = ([Intervention::set("A", 0)], [Intervention::set("A", 1)]);
    let pn = probability_of_necessity(
        &m,
        WorldOutcome {
            interventions: &f,
            target: "R",
            value: 1,
        },
        WorldOutcome {
            interventions: &c,
            target: "R",
            value: 0,
        },
        50_000,
        11,
    )
    .unwrap();
    assert_eq!(pn, 0.0);
}

#[test]
fn text_format_round_trips() {
    let m = StructuralCausalModel::builder()
        .node("U", 3, &[], LogitTable::root(vec![0.1, -0.4, 0.25]).unwrap())
        .node("A", 2, &["U"], LogitTable::from_probabilities(&[vec![0.5, 0.5], vec![0.1, 0.9], vec![0.7, 0.3]]).unwrap())
        .node(
            "R",
            2,
            &["U", "A"],
            LogitTable::new(2, (0..6).map(|i| vec![0.0, i as f64 * 0.3 - 0.7]).collect()).unwrap(),
        )
        .build()
        .unwrap();
    let text = to_text(&m);
    let back = from_text(&text, Path::new("m.scm")).unwrap();
    assert_eq!(to_text(&back), text);
    let u = m.draw_exogenous(4, 0, 9);
    assert_eq!(m.evaluate(&u), back.evaluate(&u));

    let bad = "node A 2\nnode R 2 B\n";
    assert!(from_text(bad, Path::new("bad.scm")).is_err());
    let cyc = StructuralCausalModel::builder()
        .node("X", 2, &["Y"], LogitTable::new(2, vec![vec![0.0, 0.0]; 2]).unwrap())
        .node("Y", 2, &["X"], LogitTable::new(2, vec![vec![0.0, 0.0]; 2]).unwrap())
        .build();
    assert!(cyc.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn shared_noise_never_violates_the_theorem(
        f in prop::collection::vec(-3.0f64..3.0, 2..6),
        shift in prop::collection::vec(-3.0f64..3.0, 6),
        seed in 0u64..1000,
    ) {
        let c: Vec<f64> = f.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let r = verify_gumbel_consistency(&f, &c, 20_000, seed).unwrap();
        prop_assert_eq!(r.violations, 0);
        prop_assert!(r.consistent);
    }

    #[test]
    fn identical_worlds_agree_exactly(f in prop::collection::vec(-3.0f64..3.0, 2..6), seed in 0u64..1000) {
        let r = verify_with_coupling(&f, &f, 5_000, seed, NoiseCoupling::Shared).unwrap();
        for (i, row) in r.pn_table.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_nan() {
                    prop_assert_eq!(v, if i == j { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn evaluation_is_a_pure_function_of_the_draw(seed in 0u64..10_000, sample in 0u64..100) {
        let m = model(&[vec![0.9, 0.1], vec![0.4, 0.6]]);
        prop_assert_eq!(m.evaluate(&m.draw_exogenous(seed, 0, sample)), m.evaluate(&m.draw_exogenous(seed, 0, sample)));
    }
}
