//! Entropy-balanced non-IID data partitioning (FedSym) with Dirichlet and
//! quantity-based baselines, desk-scale federated training (FedAvg,
//! FedProx, SCAFFOLD), and linear CKA model comparison.
//!
//! The narrative guide lives in `book/`; its code snippets compile as
//! doc-tests of this crate.

pub mod cka;
pub mod dataset;
pub mod entropy;
pub mod error;
pub mod flsim;
pub mod partition;

pub use entropy::{
    counts_from_pmf, discrete_gaussian_pmf, entropy_balance, shannon_entropy, sigma_lower_bound,
    solve_sigma, ClassCounts, GaussianSpec, SolverResult,
};
pub use partition::{
    dirichlet_partition, fedsym_partition, heterogeneity_report, quantity_label_partition,
    PartitionPlan,
};

#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(introduction, "../../../book/src/introduction.md");
    chapter!(entropy_balance, "../../../book/src/entropy-balance.md");
    chapter!(sigma_solver, "../../../book/src/sigma-solver.md");
    chapter!(partitioning, "../../../book/src/partitioning.md");
    chapter!(federated_training, "../../../book/src/federated-training.md");
    chapter!(model_similarity, "../../../book/src/model-similarity.md");
}
