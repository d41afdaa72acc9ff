use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{CounterfactualRecord, ExplanationKey};
use crate::text::{generality, GeneralityInputs, MetricError, SimilarityMetricId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    /// |C|: judged counterfactuals with a usable model output.
    pub counterfactuals: usize,
    /// |C*|
    pub simulatable: usize,
    pub matches: usize,
    /// No simulation judgment (e.g. missing human annotations).
    pub unjudged: usize,
    /// Simulatable, but the model's own output could not be parsed.
    pub unanswered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationScore {
    pub instance_id: String,
    pub system_id: String,
    pub precision: Option<f64>,
    /// `None` only when no counterfactual was judged.
    pub sim_rate: Option<f64>,
    pub generality: BTreeMap<SimilarityMetricId, Option<f64>>,
    pub counts: ScoreCounts,
}

impl ExplanationScore {
    pub fn key(&self) -> ExplanationKey {
        ExplanationKey {
            instance_id: self.instance_id.clone(),
            system_id: self.system_id.clone(),
        }
    }
}

/// Scores one explanation from its counterfactuals.
///
/// Unjudged counterfactuals and simulatable ones without a parsed model
/// output are left out of both C and C*.
pub async fn score_explanation(
    key: &ExplanationKey,
    counterfactuals: &[CounterfactualRecord],
    metrics: &[SimilarityMetricId],
    inputs: GeneralityInputs<'_>,
) -> Result<ExplanationScore, MetricError> {
    let mut counts = ScoreCounts::default();
    let mut simulatable_texts = Vec::new();
    for cf in counterfactuals {
        let Some(judgment) = cf.judgment else {
            counts.unjudged += 1;
            continue;
        };
        match judgment.entailed() {
            None => counts.counterfactuals += 1,
            Some(guess) => match cf.actual_output {
                None => counts.unanswered += 1,
                Some(actual) => {
                    counts.counterfactuals += 1;
                    counts.simulatable += 1;
                    if guess == actual {
                        counts.matches += 1;
                    }
                    simulatable_texts.push(cf.text());
                }
            },
        }
    }
    let precision = (counts.simulatable > 0).then(|| counts.matches as f64 / counts.simulatable as f64);
    let sim_rate = (counts.counterfactuals > 0).then(|| counts.simulatable as f64 / counts.counterfactuals as f64);
    let mut generality_scores = BTreeMap::new();
    for &metric in metrics {
        generality_scores.insert(metric, generality(&simulatable_texts, metric, inputs).await?);
    }
    Ok(ExplanationScore {
        instance_id: key.instance_id.clone(),
        system_id: key.system_id.clone(),
        precision,
        sim_rate,
        generality: generality_scores,
        counts,
    })
}

/// A macro average with its denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub mean: Option<f64>,
    /// Values that entered the mean.
    pub n: usize,
    /// Values that were undefined and left out.
    pub excluded: usize,
}

impl Mean {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut sum = 0.0;
        let mut n = 0;
        let mut excluded = 0;
        for v in values {
            match v {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None => excluded += 1,
            }
        }
        Self {
            mean: (n > 0).then(|| sum / n as f64),
            n,
            excluded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Label, SimulationJudgment, TaskInput};
    use crate::text::{LocalHashEmbedding, Stopwords};

    fn cf(i: usize, text: &str, judgment: Option<SimulationJudgment>, actual: Option<Label>) -> CounterfactualRecord {
        CounterfactualRecord {
            id: format!("cf{i}"),
            parent: key(),
            input: TaskInput::question(text),
            generator_id: "g".into(),
            judgment,
            judgment_source: None,
            actual_output: actual,
        }
    }

    fn key() -> ExplanationKey {
        ExplanationKey {
            instance_id: "x".into(),
            system_id: "m/cot".into(),
        }
    }

    const YES: Option<SimulationJudgment> = Some(SimulationJudgment::EntailedOutput(Label::Yes));
    const NO: Option<SimulationJudgment> = Some(SimulationJudgment::EntailedOutput(Label::No));
    const BOT: Option<SimulationJudgment> = Some(SimulationJudgment::Unsimulatable);

    async fn score(cfs: &[CounterfactualRecord], metrics: &[SimilarityMetricId]) -> ExplanationScore {
        let stop = Stopwords::default();
        let inputs = GeneralityInputs {
            stopwords: &stop,
            embedder: &LocalHashEmbedding,
            bleu_max_order: 4,
        };
        score_explanation(&key(), cfs, metrics, inputs).await.unwrap()
    }

    #[tokio::test]
    async fn five_record_hand_case() {
        let cfs = [
            cf(0, "a", YES, Some(Label::Yes)),
            cf(1, "b", YES, Some(Label::No)),
            cf(2, "c", BOT, None),
            cf(3, "d", NO, Some(Label::No)),
            cf(4, "e", YES, Some(Label::Yes)),
        ];
        let s = score(&cfs, &[]).await;
        assert_eq!(s.precision, Some(0.75));
        assert_eq!(s.sim_rate, Some(0.8));
        assert_eq!(
            (s.counts.counterfactuals, s.counts.simulatable, s.counts.matches),
            (5, 4, 3)
        );
    }

    #[tokio::test]
    async fn all_unsimulatable() {
        let cfs = [cf(0, "a", BOT, None), cf(1, "b", BOT, None)];
        let s = score(&cfs, &[SimilarityMetricId::Jaccard]).await;
        assert_eq!(s.precision, None);
        assert_eq!(s.sim_rate, Some(0.0));
        assert_eq!(s.generality[&SimilarityMetricId::Jaccard], None);
    }

    #[tokio::test]
    async fn generality_uses_simulatable_texts_only() {
        let cfs = [
            cf(0, "Eagles fly south", YES, Some(Label::Yes)),
            cf(1, "Eagles fly north", YES, Some(Label::Yes)),
            cf(2, "Penguins swim", YES, Some(Label::Yes)),
            cf(3, "Whales sing loudly", BOT, None),
        ];
        let s = score(&cfs, &[SimilarityMetricId::Jaccard]).await;
        // pair similarities 1/2, 0, 0 over three texts
        let expected = 1.0 - (2.0 * 0.5) / 6.0;
        assert!((s.generality[&SimilarityMetricId::Jaccard].unwrap() - expected).abs() < 1e-12);
    }

    #[tokio::test]
    async fn unjudged_and_unanswered_are_left_out() {
        let cfs = [
            cf(0, "a", None, None),
            cf(1, "b", YES, None),
            cf(2, "c", NO, Some(Label::Yes)),
        ];
        let s = score(&cfs, &[]).await;
        assert_eq!(s.counts.unjudged, 1);
        assert_eq!(s.counts.unanswered, 1);
        assert_eq!(s.precision, Some(0.0));
        assert_eq!(s.sim_rate, Some(1.0));
    }

    #[test]
    fn mean_reports_denominators() {
        let m = Mean::of([Some(1.0), None, Some(0.5)]);
        assert_eq!(m.mean, Some(0.75));
        assert_eq!((m.n, m.excluded), (2, 1));
        assert_eq!(Mean::of([None]).mean, None);
    }
}
