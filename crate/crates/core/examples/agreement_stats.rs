//! Agreement and significance statistics on small hand-made samples.

use cfsim::stats::{
    avg_pairwise_kappa, cohen_kappa, majority_vote, paired_permutation_test, pearson, spearman,
    DEFAULT_PERMUTATION_ITERATIONS,
};
use cfsim::{Label, SimulationJudgment};

fn main() {
    let a = ["yes", "yes", "no", "unk", "no", "yes"];
    let b = ["yes", "no", "no", "unk", "no", "yes"];
    let c = ["yes", "yes", "no", "no", "no", "unk"];
    println!("kappa(a, b) = {:.3}", cohen_kappa(&a, &b).unwrap());
    let avg = avg_pairwise_kappa(&[&a[..], &b[..], &c[..]]).unwrap();
    println!("average pairwise kappa = {avg:?}");

    let votes = [
        SimulationJudgment::EntailedOutput(Label::Yes),
        SimulationJudgment::EntailedOutput(Label::Yes),
        SimulationJudgment::Unsimulatable,
    ];
    println!("majority = {:?}", majority_vote(&votes, 3).unwrap());

    let precision = [0.9, 0.7, 1.0, 0.6, 0.8];
    let plausibility = [4.5, 3.0, 4.0, 2.5, 4.0];
    println!("pearson  = {:.3}", pearson(&precision, &plausibility).unwrap());
    println!("spearman = {:.3}", spearman(&precision, &plausibility).unwrap());

    let normal = [1.0, 1.0, 0.8, 1.0, 0.9, 1.0, 1.0, 0.7];
    let forced = [0.5, 0.4, 0.6, 0.5, 0.3, 0.6, 0.5, 0.4];
    let t = paired_permutation_test(&normal, &forced, DEFAULT_PERMUTATION_ITERATIONS, 7).unwrap();
    println!("normal - forced = {:.3}, p = {:.4}", t.mean_difference, t.p_value);
}
