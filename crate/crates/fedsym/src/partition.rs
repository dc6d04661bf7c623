//! Partitioners: FedSym rotation-symmetric shards, Dirichlet label
//! imbalance, and quantity-based label imbalance, plus heterogeneity
//! reporting over the resulting plans.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::entropy::{counts_from_pmf, entropy_balance, solve_sigma, ClassCounts};
use crate::error::PartitionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "fedsym")]
    FedSym,
    #[serde(rename = "dirichlet")]
    Dirichlet,
    #[serde(rename = "quantity_label")]
    QuantityLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodParams {
    FedSym { beta: f64, eps: f64 },
    Dirichlet { alpha: f64 },
    QuantityLabel { labels_per_client: usize },
}

/// One client's shard: class counts plus the concrete sample indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientShard {
    #[serde(rename = "id")]
    pub client_id: usize,
    pub class_counts: ClassCounts,
    pub beta: f64,
    pub sample_indices: Vec<usize>,
}

impl ClientShard {
    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// Full partitioner output. Field order is part of the on-disk JSON
/// contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub method: Method,
    pub params: MethodParams,
    pub seed: u64,
    pub s_per_client: Option<u64>,
    pub clients: Vec<ClientShard>,
}

/// Per-client entropy-balance summary of a plan.
#[derive(Debug, Clone, Serialize)]
pub struct HeterogeneityReport {
    pub per_client_beta: Vec<f64>,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

/// Right rotation of a count vector: `out[i] = counts[(i - offset) mod l]`.
pub fn rotate_counts(counts: &ClassCounts, offset: usize) -> ClassCounts {
    let l = counts.num_classes();
    let offset = offset % l;
    let mut out = vec![0u64; l];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = counts.as_slice()[(i + l - offset) % l];
    }
    ClassCounts::new(out)
}

/// Total per-class demand of the full rotation cycle over `k` clients.
pub fn fedsym_demand(counts: &ClassCounts, k: usize) -> Vec<u64> {
    let l = counts.num_classes();
    let mut demand = vec![0u64; l];
    for j in 0..k {
        let rotated = rotate_counts(counts, j % l);
        for (d, &c) in demand.iter_mut().zip(rotated.as_slice()) {
            *d += c;
        }
    }
    demand
}

/// Entropy-symmetric partitioning: solve for the count vector hitting the
/// target balance, rotate it per client, and draw disjoint samples.
pub fn fedsym_partition(
    index: &DatasetIndex,
    k: usize,
    beta: f64,
    eps: f64,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    let l = index.l;
    // Largest S with k*S <= n and l | k*S.
    let mut s = (index.n / k) as u64;
    while s > 0 && !(s * k as u64).is_multiple_of(l as u64) {
        s -= 1;
    }
    let solved = solve_sigma(beta, l, s, eps, 100)?;
    let base = solved.counts;

    let demand = fedsym_demand(&base, k);
    for (class, &needed) in demand.iter().enumerate() {
        let available = index.by_class[class].len() as u64;
        if needed > available {
            return Err(PartitionError::Infeasible {
                class,
                needed,
                available,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools: Vec<Vec<usize>> = index
        .by_class
        .iter()
        .map(|class| {
            let mut pool = class.clone();
            pool.shuffle(&mut rng);
            pool
        })
        .collect();
    let mut cursors = vec![0usize; l];

    let mut clients = Vec::with_capacity(k);
    for j in 0..k {
        let class_counts = rotate_counts(&base, j % l);
        let mut sample_indices = Vec::with_capacity(s as usize);
        for (c, &count) in class_counts.as_slice().iter().enumerate() {
            let take = count as usize;
            sample_indices.extend_from_slice(&pools[c][cursors[c]..cursors[c] + take]);
            cursors[c] += take;
        }
        clients.push(ClientShard {
            client_id: j,
            class_counts,
            // One shared value: all shards are rotations of the same vector,
            // so their balances are identical by permutation invariance.
            beta: solved.achieved_beta,
            sample_indices,
        });
    }

    Ok(PartitionPlan {
        method: Method::FedSym,
        params: MethodParams::FedSym { beta, eps },
        seed,
        s_per_client: Some(s),
        clients,
    })
}

/// Distribution-based label imbalance: each class's samples are allocated
/// across clients by a Dirichlet(alpha) draw. Every sample is assigned.
pub fn dirichlet_partition(
    index: &DatasetIndex,
    k: usize,
    alpha: f64,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(PartitionError::BadAlpha(alpha));
    }
    let l = index.l;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");

    let mut per_client_counts = vec![vec![0u64; l]; k];
    let mut per_client_samples: Vec<Vec<usize>> = vec![Vec::new(); k];

    for (c, class_samples) in index.by_class.iter().enumerate() {
        // Dirichlet(alpha * 1_k) via normalized Gamma draws.
        let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum <= 0.0 {
            // All draws underflowed (tiny alpha); fall back to a point mass.
            let winner = (0..k).max_by(|&a, &b| draws[a].partial_cmp(&draws[b]).unwrap());
            draws = vec![0.0; k];
            draws[winner.unwrap_or(0)] = 1.0;
        } else {
            draws.iter_mut().for_each(|x| *x /= sum);
        }
        let alloc = counts_from_pmf(&draws, class_samples.len() as u64);

        let mut pool = class_samples.clone();
        pool.shuffle(&mut rng);
        let mut cursor = 0usize;
        for (j, &take) in alloc.as_slice().iter().enumerate() {
            let take = take as usize;
            per_client_counts[j][c] = take as u64;
            per_client_samples[j].extend_from_slice(&pool[cursor..cursor + take]);
            cursor += take;
        }
    }

    let clients = build_shards(per_client_counts, per_client_samples);
    Ok(PartitionPlan {
        method: Method::Dirichlet,
        params: MethodParams::Dirichlet { alpha },
        seed,
        s_per_client: None,
        clients,
    })
}

/// Quantity-based label imbalance: each client holds a fixed number of
/// distinct labels; a label's samples are split equally among its holders.
pub fn quantity_label_partition(
    index: &DatasetIndex,
    k: usize,
    labels_per_client: usize,
    seed: u64,
) -> Result<PartitionPlan, PartitionError> {
    if k == 0 {
        return Err(PartitionError::NoClients);
    }
    let l = index.l;
    if labels_per_client == 0 || labels_per_client > l {
        return Err(PartitionError::BadLabelsPerClient(labels_per_client, l));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label_order: Vec<usize> = (0..l).collect();
    label_order.shuffle(&mut rng);

    // Round-robin over the shuffled label cycle; a window of at most l
    // consecutive cycle positions never repeats a label.
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); l];
    for j in 0..k {
        for t in 0..labels_per_client {
            let label = label_order[(j * labels_per_client + t) % l];
            holders[label].push(j);
        }
    }

    let mut per_client_counts = vec![vec![0u64; l]; k];
    let mut per_client_samples: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, class_samples) in index.by_class.iter().enumerate() {
        let mut hs = holders[c].clone();
        hs.sort_unstable();
        if hs.is_empty() {
            continue;
        }
        let share = vec![1.0 / hs.len() as f64; hs.len()];
        let alloc = counts_from_pmf(&share, class_samples.len() as u64);
        let mut pool = class_samples.clone();
        pool.shuffle(&mut rng);
        let mut cursor = 0usize;
        for (slot, &j) in hs.iter().enumerate() {
            let take = alloc.as_slice()[slot] as usize;
            per_client_counts[j][c] += take as u64;
            per_client_samples[j].extend_from_slice(&pool[cursor..cursor + take]);
            cursor += take;
        }
    }

    let clients = build_shards(per_client_counts, per_client_samples);
    Ok(PartitionPlan {
        method: Method::QuantityLabel,
        params: MethodParams::QuantityLabel { labels_per_client },
        seed,
        s_per_client: None,
        clients,
    })
}

fn build_shards(counts: Vec<Vec<u64>>, samples: Vec<Vec<usize>>) -> Vec<ClientShard> {
    counts
        .into_iter()
        .zip(samples)
        .enumerate()
        .map(|(j, (c, s))| {
            let class_counts = ClassCounts::new(c);
            // Empty shards get beta 0; the balance is undefined there.
            let beta = entropy_balance(&class_counts).unwrap_or(0.0);
            ClientShard {
                client_id: j,
                class_counts,
                beta,
                sample_indices: s,
            }
        })
        .collect()
}

/// Min/max/mean/population-std of the per-client entropy balance.
pub fn heterogeneity_report(plan: &PartitionPlan) -> HeterogeneityReport {
    let betas: Vec<f64> = plan.clients.iter().map(|c| c.beta).collect();
    let n = betas.len() as f64;
    let mean = betas.iter().sum::<f64>() / n;
    let var = betas.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / n;
    HeterogeneityReport {
        min: betas.iter().cloned().fold(f64::INFINITY, f64::min),
        max: betas.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        mean,
        std: var.sqrt(),
        per_client_beta: betas,
    }
}

/// One Dirichlet partition per alpha; returns `(alpha, mean beta)` rows.
pub fn alpha_sweep(
    index: &DatasetIndex,
    k: usize,
    alphas: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>, PartitionError> {
    let mut rows = Vec::with_capacity(alphas.len());
    for (i, &alpha) in alphas.iter().enumerate() {
        let plan = dirichlet_partition(index, k, alpha, seed.wrapping_add(i as u64))?;
        rows.push((alpha, heterogeneity_report(&plan).mean));
    }
    Ok(rows)
}

/// Check a plan's structural invariants against the index it was built
/// from: shards are disjoint and class counts match the label histograms.
pub fn validate_plan(plan: &PartitionPlan, index: &DatasetIndex) -> Result<(), String> {
    let mut seen = vec![false; index.n];
    for shard in &plan.clients {
        let mut histogram = vec![0u64; index.l];
        for &i in &shard.sample_indices {
            if i >= index.n {
                return Err(format!("client {}: index {i} out of range", shard.client_id));
            }
            if seen[i] {
                return Err(format!("sample {i} assigned twice"));
            }
            seen[i] = true;
            histogram[index.labels[i] as usize] += 1;
        }
        if histogram != shard.class_counts.as_slice() {
            return Err(format!(
                "client {}: class_counts do not match sample labels",
                shard.client_id
            ));
        }
        if !shard.is_empty() {
            let recomputed = entropy_balance(&shard.class_counts).map_err(|e| e.to_string())?;
            if (recomputed - shard.beta).abs() > 1e-12 {
                return Err(format!("client {}: stale beta", shard.client_id));
            }
        }
    }
    Ok(())
}
