//! Desk-scale federated training: a two-layer ReLU perceptron with
//! hand-derived gradients, FedAvg / FedProx / SCAFFOLD local training, and
//! the round loop with server-side aggregation.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleStore;
use crate::error::FlError;
use crate::partition::PartitionPlan;

pub const MODEL_MAGIC: u32 = 0x4D59_5346; // "FSYM" as little-endian bytes

/// Shape of the 2-layer perceptron: input `d`, hidden `h`, `l` logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub d: usize,
    pub h: usize,
    pub l: usize,
}

impl ModelShape {
    pub fn param_count(&self) -> usize {
        self.d * self.h + self.h + self.h * self.l + self.l
    }
}

/// Flat parameter vector, laid out as (W1, b1, W2, b2).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        ModelParams {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    /// Glorot-uniform initialization, seeded.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(shape.param_count());
        let bound1 = (6.0 / (shape.d + shape.h) as f64).sqrt();
        for _ in 0..shape.d * shape.h {
            data.push(rng.random_range(-bound1..bound1));
        }
        data.extend(std::iter::repeat_n(0.0, shape.h));
        let bound2 = (6.0 / (shape.h + shape.l) as f64).sqrt();
        for _ in 0..shape.h * shape.l {
            data.push(rng.random_range(-bound2..bound2));
        }
        data.extend(std::iter::repeat_n(0.0, shape.l));
        ModelParams { shape, data }
    }

    fn w1(&self) -> &[f64] {
        &self.data[..self.shape.d * self.shape.h]
    }
    fn b1(&self) -> &[f64] {
        let o = self.shape.d * self.shape.h;
        &self.data[o..o + self.shape.h]
    }
    fn w2(&self) -> &[f64] {
        let o = self.shape.d * self.shape.h + self.shape.h;
        &self.data[o..o + self.shape.h * self.shape.l]
    }
    fn b2(&self) -> &[f64] {
        let o = self.shape.d * self.shape.h + self.shape.h + self.shape.h * self.shape.l;
        &self.data[o..]
    }
}

/// Training hyperparameters shared by all strategies.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    pub prox_mu: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.016,
            lr_decay: 0.95,
            momentum: 0.9,
            batch_size: 50,
            local_epochs: 10,
            rounds: 6,
            prox_mu: 0.01,
            hidden: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    FedAvg,
    FedProx,
    Scaffold,
}

/// Variant-specific inputs to one client's local training pass.
pub enum LocalMode<'a> {
    FedAvg,
    FedProx { global: &'a ModelParams, mu: f64 },
    Scaffold { c_global: &'a [f64], c_local: &'a [f64] },
}

/// SCAFFOLD server and client control variates.
#[derive(Debug, Clone)]
pub struct ControlState {
    pub c_global: Vec<f64>,
    pub c_local: Vec<Vec<f64>>,
}

impl ControlState {
    pub fn zeros(param_count: usize, clients: usize) -> Self {
        ControlState {
            c_global: vec![0.0; param_count],
            c_local: vec![vec![0.0; param_count]; clients],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub accuracy: f64,
    pub mean_train_loss: f64,
}

pub type RoundLog = Vec<RoundRecord>;

/// Forward pass: `ReLU(X W1 + b1) W2 + b2`, row-major logits.
pub fn forward(params: &ModelParams, batch: &[f64], n: usize) -> Vec<f64> {
    let ModelShape { d, h, l } = params.shape;
    debug_assert_eq!(batch.len(), n * d);
    let (w1, b1, w2, b2) = (params.w1(), params.b1(), params.w2(), params.b2());
    let mut logits = vec![0.0; n * l];
    let mut hidden = vec![0.0; h];
    for r in 0..n {
        let x = &batch[r * d..(r + 1) * d];
        for j in 0..h {
            let mut acc = b1[j];
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w1[i * h + j];
            }
            hidden[j] = acc.max(0.0);
        }
        let out = &mut logits[r * l..(r + 1) * l];
        out.copy_from_slice(b2);
        for (j, &a) in hidden.iter().enumerate() {
            if a > 0.0 {
                for (c, o) in out.iter_mut().enumerate() {
                    *o += a * w2[j * l + c];
                }
            }
        }
    }
    logits
}

/// Mean softmax cross-entropy and its gradient via backprop.
pub fn loss_and_grad(
    params: &ModelParams,
    batch: &[f64],
    labels: &[u32],
    n: usize,
) -> (f64, Vec<f64>) {
    let ModelShape { d, h, l } = params.shape;
    let (w1, b1, w2, _b2) = (params.w1(), params.b1(), params.w2(), params.b2());
    let inv_n = 1.0 / n as f64;

    let mut grad = vec![0.0; params.data.len()];
    let (gw1, rest) = grad.split_at_mut(d * h);
    let (gb1, rest) = rest.split_at_mut(h);
    let (gw2, gb2) = rest.split_at_mut(h * l);

    let mut loss = 0.0;
    let mut z1 = vec![0.0; h];
    let mut act = vec![0.0; h];
    let mut probs = vec![0.0; l];
    let mut dz1 = vec![0.0; h];
    for r in 0..n {
        let x = &batch[r * d..(r + 1) * d];
        for j in 0..h {
            let mut acc = b1[j];
            for (i, &xi) in x.iter().enumerate() {
                acc += xi * w1[i * h + j];
            }
            z1[j] = acc;
            act[j] = acc.max(0.0);
        }
        probs.copy_from_slice(params.b2());
        for (j, &a) in act.iter().enumerate() {
            if a > 0.0 {
                for (c, o) in probs.iter_mut().enumerate() {
                    *o += a * w2[j * l + c];
                }
            }
        }
        // log-sum-exp stabilized softmax
        let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for p in probs.iter_mut() {
            *p = (*p - max).exp();
            sum += *p;
        }
        let y = labels[r] as usize;
        loss += -(probs[y] / sum).ln();
        for (c, p) in probs.iter_mut().enumerate() {
            let mut dl = *p / sum;
            if c == y {
                dl -= 1.0;
            }
            *p = dl * inv_n; // dlogits
        }
        for (c, &dl) in probs.iter().enumerate() {
            gb2[c] += dl;
        }
        for j in 0..h {
            if act[j] > 0.0 {
                let mut acc = 0.0;
                for (c, &dl) in probs.iter().enumerate() {
                    gw2[j * l + c] += act[j] * dl;
                    acc += dl * w2[j * l + c];
                }
                dz1[j] = if z1[j] > 0.0 { acc } else { 0.0 };
            } else {
                for (c, &dl) in probs.iter().enumerate() {
                    gw2[j * l + c] += act[j] * dl;
                }
                dz1[j] = 0.0;
            }
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, &dj) in dz1.iter().enumerate() {
                    gw1[i * h + j] += xi * dj;
                }
            }
        }
        for (j, &dj) in dz1.iter().enumerate() {
            gb1[j] += dj;
        }
    }
    (loss * inv_n, grad)
}

/// Mix a per-(seed, round, client) RNG stream key; splitmix-style so nearby
/// inputs land far apart.
pub fn stream_seed(seed: u64, round: u64, client: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(round.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(client.wrapping_mul(0x94D0_49BB_1331_11EB))
        .wrapping_add(0x2545_F491_4F6C_DD1D);
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One client's local pass: `local_epochs` of seeded mini-batch SGD with
/// momentum. Returns the updated params, the new SCAFFOLD control variate
/// when applicable, and the mean batch loss.
pub fn local_train(
    start: &ModelParams,
    features: &[f64],
    labels: &[u32],
    cfg: &TrainConfig,
    mode: LocalMode<'_>,
    round_idx: usize,
    client_id: usize,
) -> Result<(ModelParams, Option<Vec<f64>>, f64), FlError> {
    let n = labels.len();
    if n == 0 {
        return Err(FlError::EmptyShard(client_id));
    }
    let d = start.shape.d;
    debug_assert_eq!(features.len(), n * d);

    let lr_eff = cfg.lr * cfg.lr_decay.powi(round_idx as i32);
    let mut params = start.clone();
    let mut velocity = vec![0.0; params.data.len()];
    let mut rng =
        ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, round_idx as u64, client_id as u64));

    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * d);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let mut steps = 0usize;

    for _epoch in 0..cfg.local_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&features[i * d..(i + 1) * d]);
                batch_y.push(labels[i]);
            }
            let (loss, mut grad) = loss_and_grad(&params, &batch_x, &batch_y, chunk.len());
            loss_sum += loss;
            batches += 1;

            match &mode {
                LocalMode::FedAvg => {}
                LocalMode::FedProx { global, mu } => {
                    if *mu != 0.0 {
                        for ((g, &w), &wg) in
                            grad.iter_mut().zip(&params.data).zip(&global.data)
                        {
                            *g += mu * (w - wg);
                        }
                    }
                }
                LocalMode::Scaffold { c_global, c_local } => {
                    for ((g, &cg), &cl) in grad.iter_mut().zip(*c_global).zip(*c_local) {
                        *g += cg - cl;
                    }
                }
            }

            for ((v, w), g) in velocity.iter_mut().zip(&mut params.data).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *w -= lr_eff * *v;
            }
            steps += 1;
        }
    }

    let new_c_local = if let LocalMode::Scaffold { c_global, c_local } = &mode {
        // Option II update: c_i' = c_i - c + (w_global - w_local) / (K * lr),
        // with the quotient compensated by (1 - momentum). The displacement of
        // momentum SGD is ~1/(1-m) times the mean applied direction, so the
        // uncompensated estimate overshoots the mean gradient by that factor
        // and the variate recursion diverges (gain > 1 in c-space). With the
        // factor, c_i' recovers the mean local gradient; momentum = 0 reduces
        // to the plain difference quotient.
        let scale = (1.0 - cfg.momentum) / (steps as f64 * lr_eff);
        Some(
            c_local
                .iter()
                .zip(*c_global)
                .zip(start.data.iter().zip(&params.data))
                .map(|((&cl, &cg), (&wg, &wl))| cl - cg + (wg - wl) * scale)
                .collect(),
        )
    } else {
        None
    };

    Ok((params, new_c_local, loss_sum / batches as f64))
}

/// Element-wise weighted mean of parameter vectors, weights normalized to
/// sum 1. Summation order follows the list order.
pub fn aggregate(client_params: &[ModelParams], weights: &[f64]) -> Result<ModelParams, FlError> {
    assert_eq!(client_params.len(), weights.len());
    let first = &client_params[0];
    for p in client_params {
        if p.data.len() != first.data.len() {
            return Err(FlError::ShapeMismatch(first.data.len(), p.data.len()));
        }
    }
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; first.data.len()];
    for (p, &w) in client_params.iter().zip(weights) {
        let w = w / total;
        for (o, &x) in out.iter_mut().zip(&p.data) {
            *o += w * x;
        }
    }
    Ok(ModelParams {
        shape: first.shape,
        data: out,
    })
}

/// Argmax-of-logits accuracy; ties go to the lowest class index.
pub fn evaluate(params: &ModelParams, testset: &SampleStore) -> f64 {
    let n = testset.len();
    let l = params.shape.l;
    let logits = forward(params, &testset.features, n);
    let mut hits = 0usize;
    for r in 0..n {
        let row = &logits[r * l..(r + 1) * l];
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best as u32 == testset.labels[r] {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

fn gather_shard(store: &SampleStore, indices: &[usize]) -> Result<(Vec<f64>, Vec<u32>), FlError> {
    let d = store.dims;
    let mut features = Vec::with_capacity(indices.len() * d);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= store.len() {
            return Err(FlError::BadSampleIndex {
                index: i,
                n: store.len(),
            });
        }
        features.extend_from_slice(store.row(i));
        labels.push(store.labels[i]);
    }
    Ok((features, labels))
}

/// Run the full federation: broadcast, local training on every non-empty
/// client, weighted aggregation, per-round evaluation.
pub fn run_federation(
    plan: &PartitionPlan,
    store: &SampleStore,
    testset: &SampleStore,
    strategy: Strategy,
    cfg: &TrainConfig,
) -> Result<(ModelParams, RoundLog), FlError> {
    let d = store.dims;
    if testset.dims != d {
        return Err(FlError::DimMismatch {
            expected: d,
            found: testset.dims,
        });
    }
    let l = store.num_classes().max(testset.num_classes());
    let shape = ModelShape {
        d,
        h: cfg.hidden,
        l,
    };

    let shards: Vec<(Vec<f64>, Vec<u32>)> = plan
        .clients
        .iter()
        .map(|s| gather_shard(store, &s.sample_indices))
        .collect::<Result<_, _>>()?;
    let weights: Vec<f64> = shards.iter().map(|(_, y)| y.len() as f64).collect();
    let active: Vec<usize> = (0..shards.len()).filter(|&j| !shards[j].1.is_empty()).collect();
    if active.is_empty() {
        return Err(FlError::EmptyShard(0));
    }
    let active_weight: f64 = active.iter().map(|&j| weights[j]).sum();

    let mut global = ModelParams::init(shape, stream_seed(cfg.seed, u64::MAX, u64::MAX));
    let mut control = ControlState::zeros(shape.param_count(), shards.len());
    let mut log = RoundLog::new();

    for round in 0..cfg.rounds {
        let mut updated: Vec<ModelParams> = Vec::with_capacity(active.len());
        let mut round_weights: Vec<f64> = Vec::with_capacity(active.len());
        let mut loss_sum = 0.0;
        let mut c_deltas: Vec<(usize, Vec<f64>)> = Vec::new();

        for &j in &active {
            let (features, labels) = &shards[j];
            let mode = match strategy {
                Strategy::FedAvg => LocalMode::FedAvg,
                Strategy::FedProx => LocalMode::FedProx {
                    global: &global,
                    mu: cfg.prox_mu,
                },
                Strategy::Scaffold => LocalMode::Scaffold {
                    c_global: &control.c_global,
                    c_local: &control.c_local[j],
                },
            };
            let (params, new_c, loss) =
                local_train(&global, features, labels, cfg, mode, round, j)?;
            loss_sum += loss;
            updated.push(params);
            round_weights.push(weights[j]);
            if let Some(new_c) = new_c {
                c_deltas.push((j, new_c));
            }
        }

        global = aggregate(&updated, &round_weights)?;

        // Server control variate: shard-weighted mean of the local deltas.
        for (j, new_c) in c_deltas {
            let w = weights[j] / active_weight;
            for ((cg, new), old) in control
                .c_global
                .iter_mut()
                .zip(&new_c)
                .zip(&control.c_local[j])
            {
                *cg += w * (new - old);
            }
            control.c_local[j] = new_c;
        }

        log.push(RoundRecord {
            round,
            accuracy: evaluate(&global, testset),
            mean_train_loss: loss_sum / active.len() as f64,
        });
    }
    Ok((global, log))
}

/// Write the round log as `round,accuracy,mean_train_loss` CSV.
pub fn write_round_log_csv<W: Write>(log: &RoundLog, mut out: W) -> std::io::Result<()> {
    writeln!(out, "round,accuracy,mean_train_loss")?;
    for r in log {
        writeln!(out, "{},{},{}", r.round, r.accuracy, r.mean_train_loss)?;
    }
    Ok(())
}

/// Save a model as a 16-byte header (magic, d, h, l as little-endian u32)
/// followed by the raw little-endian f64 parameter vector.
pub fn save_model(params: &ModelParams, path: &Path) -> Result<(), FlError> {
    let mut out = Vec::with_capacity(16 + params.data.len() * 8);
    out.extend_from_slice(&MODEL_MAGIC.to_le_bytes());
    out.extend_from_slice(&(params.shape.d as u32).to_le_bytes());
    out.extend_from_slice(&(params.shape.h as u32).to_le_bytes());
    out.extend_from_slice(&(params.shape.l as u32).to_le_bytes());
    for &x in &params.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelParams, FlError> {
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 16];
    file.read_exact(&mut header)?;
    let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != MODEL_MAGIC {
        return Err(FlError::BadModelMagic(magic));
    }
    let shape = ModelShape {
        d: u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize,
        h: u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize,
        l: u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize,
    };
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    let expected = shape.param_count() * 8;
    if raw.len() != expected {
        return Err(FlError::ShapeMismatch(expected, raw.len()));
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(ModelParams { shape, data })
}
