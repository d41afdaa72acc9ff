use cfsim::parse::{parse_answer, parse_simulation};
use cfsim::stats::{majority_vote, paired_permutation_test};
use cfsim::text::{bleu, generality_from, jaccard, Stopwords};
use cfsim::{Label, SimulationJudgment, TaskKind};
use proptest::prelude::*;

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec("[a-z]{1,6}", 1..10).prop_map(|w| w.join(" "))
}

fn judgment() -> impl Strategy<Value = SimulationJudgment> {
    prop_oneof![
        Just(SimulationJudgment::EntailedOutput(Label::Yes)),
        Just(SimulationJudgment::EntailedOutput(Label::No)),
        Just(SimulationJudgment::Unsimulatable),
    ]
}

proptest! {
    #[test]
    fn jaccard_is_symmetric_and_bounded(a in words(), b in words()) {
        let sw = Stopwords::default();
        let ab = jaccard(&a, &b, &sw);
        prop_assert_eq!(ab, jaccard(&b, &a, &sw));
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(jaccard(&a, &a, &sw), 1.0);
    }

    #[test]
    fn bleu_is_bounded_and_one_on_identity(a in words(), b in words()) {
        let s = bleu(&a, &b, 4);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((bleu(&a, &a, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generality_ignores_item_order(texts in prop::collection::vec(words(), 2..7), seed in any::<u64>()) {
        let sw = Stopwords::default();
        let mut shuffled = texts.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let g1 = generality_from(texts.len(), |i, j| jaccard(&texts[i], &texts[j], &sw)).unwrap();
        let g2 = generality_from(shuffled.len(), |i, j| jaccard(&shuffled[i], &shuffled[j], &sw)).unwrap();
        prop_assert_eq!(g1, g2);
        prop_assert!((0.0..=1.0).contains(&g1));
    }

    #[test]
    fn majority_needs_more_than_half(js in prop::collection::vec(judgment(), 1..=3)) {
        let out = majority_vote(&js, 3).unwrap();
        let count = js.iter().filter(|j| **j == out).count();
        if out.is_simulatable() {
            prop_assert!(2 * count > js.len());
        }
    }

    #[test]
    fn permutation_p_is_a_probability(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..20),
        seed in any::<u64>(),
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let t = paired_permutation_test(&a, &b, 200, seed).unwrap();
        prop_assert!(t.p_value > 0.0 && t.p_value <= 1.0);
        prop_assert_eq!(t, paired_permutation_test(&a, &b, 200, seed).unwrap());
    }

    #[test]
    fn answer_parsing_recovers_the_marker(body in "[A-Za-z ,]{0,40}", yes in any::<bool>()) {
        let label = if yes { Label::Yes } else { Label::No };
        let raw = format!("here is my response. {body}. {}", label.marker_sentence());
        let (_, parsed) = parse_answer(&raw, TaskKind::YesNoQa).unwrap();
        prop_assert_eq!(parsed, label);
    }

    #[test]
    fn simulation_parsing_never_panics(raw in ".{0,200}") {
        let _ = parse_simulation(&raw, TaskKind::YesNoQa);
        let _ = parse_simulation(&raw, TaskKind::PairwisePreference);
    }
}
