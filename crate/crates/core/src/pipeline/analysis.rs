use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::scoring::{ExplanationScore, Mean};
use super::PipelineError;
use crate::domain::{ExplanationKey, SimulationJudgment};
use crate::stats::{avg_kappa_against, avg_pairwise_kappa, paired_permutation_test, pearson, spearman, AveragedKappa};
use crate::text::SimilarityMetricId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorAgreement {
    pub simulator: String,
    pub vs_humans: AveragedKappa,
    /// Agreement with humans divided by the human-human average.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaTable {
    pub items: usize,
    pub raters: usize,
    pub human_human: AveragedKappa,
    pub simulators: Vec<SimulatorAgreement>,
}

/// Inter-annotator agreement of human raters with each other and of LLM
/// simulators with the humans. All series are aligned on the same items.
pub fn iaa_table(
    humans: &[Vec<SimulationJudgment>],
    simulators: &[(String, Vec<SimulationJudgment>)],
) -> Result<IaaTable, PipelineError> {
    let human_refs: Vec<&[SimulationJudgment]> = humans.iter().map(Vec::as_slice).collect();
    let human_human = avg_pairwise_kappa(&human_refs)?;
    let simulators = simulators
        .iter()
        .map(|(name, series)| {
            let vs_humans = avg_kappa_against(series, &human_refs)?;
            Ok(SimulatorAgreement {
                simulator: name.clone(),
                ratio: (human_human.mean != 0.0).then(|| vs_humans.mean / human_human.mean),
                vs_humans,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(IaaTable {
        items: humans.first().map_or(0, Vec::len),
        raters: humans.len(),
        human_human,
        simulators,
    })
}

/// Turns per-item judgments (sorted by worker id) into rater series.
/// Only items with exactly `raters` judgments are kept; the returned ids
/// name the kept items in order.
pub fn align_raters(
    per_item: &BTreeMap<String, Vec<(String, SimulationJudgment)>>,
    raters: usize,
) -> (Vec<String>, Vec<Vec<SimulationJudgment>>) {
    let mut ids = Vec::new();
    let mut series = vec![Vec::new(); raters];
    for (item, judgments) in per_item {
        if judgments.len() != raters {
            continue;
        }
        ids.push(item.clone());
        for (slot, (_, j)) in judgments.iter().enumerate() {
            series[slot].push(*j);
        }
    }
    (ids, series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityCorrelation {
    pub inputs_used: usize,
    pub inputs_skipped: usize,
    pub mean_pearson: f64,
    pub mean_spearman: f64,
}

/// Per input, correlates precision with plausibility across systems, then
/// averages over inputs. Inputs with fewer than two rated systems, an
/// undefined precision, or a constant vector are skipped.
pub fn plausibility_correlation(
    scores: &[ExplanationScore],
    plausibility: &BTreeMap<ExplanationKey, f64>,
) -> Result<PlausibilityCorrelation, PipelineError> {
    let mut by_input: BTreeMap<&str, Vec<&ExplanationScore>> = BTreeMap::new();
    for s in scores {
        by_input.entry(&s.instance_id).or_default().push(s);
    }
    let mut pearsons = Vec::new();
    let mut spearmans = Vec::new();
    let mut skipped = 0;
    for group in by_input.values() {
        let rated: Vec<(Option<f64>, f64)> = group
            .iter()
            .filter_map(|s| plausibility.get(&s.key()).map(|p| (s.precision, *p)))
            .collect();
        if rated.len() < 2 || rated.iter().any(|(p, _)| p.is_none()) {
            skipped += 1;
            continue;
        }
        let precision: Vec<f64> = rated.iter().map(|(p, _)| p.unwrap_or_default()).collect();
        let ratings: Vec<f64> = rated.iter().map(|(_, r)| *r).collect();
        match (pearson(&precision, &ratings), spearman(&precision, &ratings)) {
            (Ok(p), Ok(s)) => {
                pearsons.push(p);
                spearmans.push(s);
            }
            _ => skipped += 1,
        }
    }
    if pearsons.is_empty() {
        return Err(PipelineError::InsufficientData(format!(
            "no input had two or more rated systems with varying precision and plausibility ({skipped} skipped)"
        )));
    }
    let n = pearsons.len() as f64;
    Ok(PlausibilityCorrelation {
        inputs_used: pearsons.len(),
        inputs_skipped: skipped,
        mean_pearson: pearsons.iter().sum::<f64>() / n,
        mean_spearman: spearmans.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledCorrelation {
    pub pearson: Option<f64>,
    /// Explanations with both a precision and a generality value.
    pub n: usize,
}

/// Pearson correlation between precision and generality pooled over all
/// given explanations, one entry per metric.
pub fn precision_generality(
    scores: &[&ExplanationScore],
    metrics: &[SimilarityMetricId],
) -> BTreeMap<SimilarityMetricId, PooledCorrelation> {
    metrics
        .iter()
        .map(|&metric| {
            let (x, y): (Vec<f64>, Vec<f64>) = scores
                .iter()
                .filter_map(|s| Some((s.precision?, s.generality.get(&metric).copied().flatten()?)))
                .unzip();
            let n = x.len();
            (
                metric,
                PooledCorrelation {
                    pearson: pearson(&x, &y).ok(),
                    n,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub comparison: String,
    pub metric: String,
    /// Paired explanations (same input, both precisions defined).
    pub n: usize,
    pub mean_difference: f64,
    pub p_value: f64,
    pub seed: u64,
    pub iterations: u32,
}

/// Paired permutation test on per-input precision of two systems.
pub fn compare_precision(
    a: &[&ExplanationScore],
    b: &[&ExplanationScore],
    label: &str,
    iterations: u32,
    seed: u64,
) -> Option<SignificanceEntry> {
    let b_by_input: BTreeMap<&str, f64> = b
        .iter()
        .filter_map(|s| Some((s.instance_id.as_str(), s.precision?)))
        .collect();
    let (xa, xb): (Vec<f64>, Vec<f64>) = a
        .iter()
        .filter_map(|s| Some((s.precision?, *b_by_input.get(s.instance_id.as_str())?)))
        .unzip();
    let test = paired_permutation_test(&xa, &xb, iterations, seed).ok()?;
    Some(SignificanceEntry {
        comparison: label.to_string(),
        metric: "precision".into(),
        n: xa.len(),
        mean_difference: test.mean_difference,
        p_value: test.p_value,
        seed,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedComparison {
    pub normal_system: String,
    pub forced_system: String,
    /// Inputs the normal system answered correctly.
    pub qualifying_instances: usize,
    /// Inputs left out because the normal system was wrong or unparseable.
    pub excluded_instances: usize,
    pub normal_precision: Mean,
    pub forced_precision: Mean,
    /// Normal minus forced mean precision over the paired inputs.
    pub delta: Option<f64>,
    pub significance: Option<SignificanceEntry>,
}

/// Normal-vs-forced precision over the inputs both were evaluated on.
pub fn forced_comparison(
    normal_system: &str,
    forced_system: &str,
    normal: &[&ExplanationScore],
    forced: &[&ExplanationScore],
    excluded_instances: usize,
    iterations: u32,
    seed: u64,
) -> ForcedComparison {
    let forced_inputs: BTreeMap<&str, &ExplanationScore> =
        forced.iter().map(|s| (s.instance_id.as_str(), *s)).collect();
    let normal_subset: Vec<&ExplanationScore> = normal
        .iter()
        .copied()
        .filter(|s| forced_inputs.contains_key(s.instance_id.as_str()))
        .collect();
    let significance = compare_precision(
        &normal_subset,
        forced,
        &format!("{normal_system} vs {forced_system}"),
        iterations,
        seed,
    );
    let normal_precision = Mean::of(normal_subset.iter().map(|s| s.precision));
    let forced_precision = Mean::of(forced.iter().map(|s| s.precision));
    ForcedComparison {
        normal_system: normal_system.to_string(),
        forced_system: forced_system.to_string(),
        qualifying_instances: forced.len(),
        excluded_instances,
        delta: significance.as_ref().map(|s| s.mean_difference),
        normal_precision,
        forced_precision,
        significance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Label;
    use crate::pipeline::scoring::ScoreCounts;

    const Y: SimulationJudgment = SimulationJudgment::EntailedOutput(Label::Yes);
    const N: SimulationJudgment = SimulationJudgment::EntailedOutput(Label::No);

    fn score(instance: &str, system: &str, precision: Option<f64>) -> ExplanationScore {
        ExplanationScore {
            instance_id: instance.into(),
            system_id: system.into(),
            precision,
            sim_rate: Some(1.0),
            generality: BTreeMap::new(),
            counts: ScoreCounts::default(),
        }
    }

    #[test]
    fn identical_raters_give_unit_table() {
        let a = vec![Y, N, Y, N, Y];
        let t = iaa_table(&[a.clone(), a.clone()], &[("llm".into(), a)]).unwrap();
        assert_eq!(t.human_human.mean, 1.0);
        assert_eq!(t.simulators[0].vs_humans.mean, 1.0);
        assert_eq!(t.simulators[0].ratio, Some(1.0));
    }

    #[test]
    fn kappa_hand_case_in_table() {
        // 10 items: 4 both-yes, 4 both-no, 2 disagreements -> p_o 0.8, p_e 0.5
        let a = vec![Y, Y, Y, Y, N, N, N, N, Y, N];
        let b = vec![Y, Y, Y, Y, N, N, N, N, N, Y];
        let t = iaa_table(&[a.clone(), b.clone()], &[("llm".into(), a.clone())]).unwrap();
        assert!((t.human_human.mean - 0.6).abs() < 1e-12);
        // llm == a: kappa 1 with a, 0.6 with b
        assert!((t.simulators[0].vs_humans.mean - 0.8).abs() < 1e-12);
        assert!((t.simulators[0].ratio.unwrap() - 0.8 / 0.6).abs() < 1e-12);
    }

    #[test]
    fn align_keeps_complete_items() {
        let mut per_item = BTreeMap::new();
        per_item.insert("a".to_string(), vec![("w1".to_string(), Y), ("w2".to_string(), N)]);
        per_item.insert("b".to_string(), vec![("w1".to_string(), Y)]);
        let (ids, series) = align_raters(&per_item, 2);
        assert_eq!(ids, ["a"]);
        assert_eq!(series, vec![vec![Y], vec![N]]);
    }

    #[test]
    fn plausibility_rank_equality() {
        let systems = ["a", "b", "c", "d"];
        let precision = [0.5, 1.0, 0.75, 0.25];
        let ratings = [2.0, 4.0, 3.0, 1.0];
        let scores: Vec<_> = systems
            .iter()
            .zip(precision)
            .map(|(s, p)| score("x", s, Some(p)))
            .collect();
        let plaus: BTreeMap<_, _> = scores.iter().zip(ratings).map(|(s, r)| (s.key(), r)).collect();
        let c = plausibility_correlation(&scores, &plaus).unwrap();
        assert!((c.mean_spearman - 1.0).abs() < 1e-12);
        assert_eq!(c.inputs_used, 1);

        let flat: BTreeMap<_, _> = scores.iter().map(|s| (s.key(), 3.0)).collect();
        assert!(matches!(
            plausibility_correlation(&scores, &flat),
            Err(PipelineError::InsufficientData(_))
        ));
    }

    #[test]
    fn forced_delta_and_subset() {
        let normal: Vec<_> = (0..9)
            .map(|i| score(&format!("q{i}"), "m/posthoc", Some(1.0)))
            .collect();
        let forced: Vec<_> = (0..8).map(|i| score(&format!("q{i}"), "m/forced", Some(0.5))).collect();
        let n: Vec<&ExplanationScore> = normal.iter().collect();
        let f: Vec<&ExplanationScore> = forced.iter().collect();
        let c = forced_comparison("m/posthoc", "m/forced", &n, &f, 1, 10_000, 0);
        assert_eq!(c.delta, Some(0.5));
        assert_eq!(c.normal_precision.n, 8);
        let p = c.significance.unwrap().p_value;
        assert!(p < 0.05, "p = {p}");

        let same = forced_comparison("m/posthoc", "m/forced", &n, &n[..8], 0, 1000, 0);
        assert_eq!(same.delta, Some(0.0));
        assert_eq!(same.significance.unwrap().p_value, 1.0);
    }
}
