//! Pairwise similarity of counterfactuals and the generality score built on it.

use cfsim::text::{
    bleu, cosine, generality, jaccard, GeneralityInputs, LocalHashEmbedding, SimilarityMetricId, Stopwords,
};

#[tokio::main(flavor = "current_thread")]
async fn main() {
    let texts: Vec<String> = [
        "Is it hard to buy pork in Rabat?",
        "Is pork easy to find in Tunis?",
        "Do most people in Morocco drink alcohol?",
        "Is lamb popular in Casablanca?",
    ]
    .map(String::from)
    .to_vec();

    let stopwords = Stopwords::default();
    let embedder = LocalHashEmbedding;
    let (a, b) = (&texts[0], &texts[1]);
    println!("jaccard {:.3}", jaccard(a, b, &stopwords));
    println!("bleu-4  {:.3}", bleu(a, b, 4));
    println!(
        "cosine  {:.3}",
        cosine(&embedder.embed_one(a), &embedder.embed_one(b)).unwrap()
    );

    let inputs = GeneralityInputs {
        stopwords: &stopwords,
        embedder: &embedder,
        bleu_max_order: 4,
    };
    for metric in [
        SimilarityMetricId::Jaccard,
        SimilarityMetricId::Bleu,
        SimilarityMetricId::Cosine,
    ] {
        let g = generality(&texts, metric, inputs).await.unwrap();
        println!("generality {metric:?}: {g:?}");
    }
}
