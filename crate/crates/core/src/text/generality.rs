use super::{bleu, cosine, jaccard, EmbeddingProvider, MetricError, SimilarityMetricId, Stopwords};

/// Everything the similarity functions need besides the texts.
#[derive(Clone, Copy)]
pub struct GeneralityInputs<'a> {
    pub stopwords: &'a Stopwords,
    pub embedder: &'a dyn EmbeddingProvider,
    pub bleu_max_order: usize,
}

/// One minus the mean similarity over all ordered pairs of distinct items.
///
/// Pair similarities are summed in sorted order, so the result is exactly
/// invariant to the order of the items. `None` when there are fewer than two.
pub fn generality_from(n: usize, mut similarity: impl FnMut(usize, usize) -> f64) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let mut sims = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sims.push(similarity(i, j));
            }
        }
    }
    sims.sort_by(f64::total_cmp);
    let mean = sims.iter().sum::<f64>() / sims.len() as f64;
    Some(1.0 - mean)
}

/// Generality of a set of simulatable counterfactual texts under one metric.
/// Cosine results are not clamped and lie in [0, 2].
pub async fn generality(
    texts: &[String],
    metric: SimilarityMetricId,
    inputs: GeneralityInputs<'_>,
) -> Result<Option<f64>, MetricError> {
    if texts.len() < 2 {
        return Ok(None);
    }
    Ok(match metric {
        SimilarityMetricId::Jaccard => {
            generality_from(texts.len(), |i, j| jaccard(&texts[i], &texts[j], inputs.stopwords))
        }
        SimilarityMetricId::Bleu => {
            generality_from(texts.len(), |i, j| bleu(&texts[i], &texts[j], inputs.bleu_max_order))
        }
        SimilarityMetricId::Cosine => {
            let vectors = inputs.embedder.embed(texts).await?;
            let n = vectors.len();
            let mut table = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        table[i * n + j] = cosine(&vectors[i], &vectors[j])?;
                    }
                }
            }
            generality_from(n, |i, j| table[i * n + j])
        }
    })
}
