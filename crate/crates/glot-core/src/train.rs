//! Deterministic mini-batch training and evaluation of pooling heads.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetItem, HiddenStates, ItemSource, LabeledDataset, TaskKind};
use crate::diagnostic::ToyBackbone;
use crate::error::{GlotError, Result};
use crate::gnn::GnnConfig;
use crate::graph::{build_token_graphs, edge_density, GraphConfig};
use crate::heads::{
    classify_pair, classify_single, cross_entropy_loss, mse_loss, regression_output,
    symmetric_infonce, HeadParams,
};
use crate::metrics::{by_name, PredictionDump};
use crate::numeric::{AdamConfig, Matrix, ParamStore, Tape, TapeId};
use crate::pooling::{
    adapool_forward, boundary_token_pool, glot_forward_on_tape, max_pool, mean_pool, stack_valid,
    AdaPoolParams, Boundary, GlotPoolParams,
};

pub const DEFAULT_READOUT_HIDDEN: usize = 128;
pub const DEFAULT_ADAPOOL_HIDDEN: usize = 128;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PoolerSpec {
    Glot { graph: GraphConfig, gnn: GnnConfig, readout_hidden: usize },
    Mean,
    Max,
    Boundary(Boundary),
    AdaPool { hidden: usize },
}

impl PoolerSpec {
    pub fn glot_defaults(input_dim: usize) -> Self {
        Self::Glot {
            graph: GraphConfig::default(),
            gnn: GnnConfig::defaults(input_dim),
            readout_hidden: DEFAULT_READOUT_HIDDEN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Classifier { classes: usize },
    Regression,
    /// Retrieval training uses the embeddings directly.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
    InfoNce { temperature: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Backbone hidden dimension d.
    pub input_dim: usize,
    pub task: TaskKind,
    pub pooler: PoolerSpec,
    pub head: HeadKind,
    pub loss: LossKind,
}

impl ModelSpec {
    /// Sentence embedding width D produced by the pooler.
    pub fn embedding_dim(&self) -> usize {
        match &self.pooler {
            PoolerSpec::Glot { gnn, .. } => gnn.fused_dim(),
            _ => self.input_dim,
        }
    }

    pub fn head_in_dim(&self) -> usize {
        if self.task.is_pairwise() {
            2 * self.embedding_dim()
        } else {
            self.embedding_dim()
        }
    }

    /// Rejects incompatible task / head / loss combinations before any
    /// training starts.
    pub fn validate(&self) -> Result<()> {
        if let PoolerSpec::Glot { gnn, .. } = &self.pooler {
            if gnn.input_dim != self.input_dim {
                return Err(GlotError::InvalidConfig(format!(
                    "GNN input dim {} != model input dim {}",
                    gnn.input_dim, self.input_dim
                )));
            }
        }
        match (self.task, self.head, self.loss) {
            (TaskKind::Single | TaskKind::Pair, HeadKind::Classifier { classes }, LossKind::CrossEntropy) => {
                if classes < 2 {
                    return Err(GlotError::InvalidConfig("classifier needs >= 2 classes".into()));
                }
                Ok(())
            }
            (TaskKind::Regression, HeadKind::Regression, LossKind::Mse) => Ok(()),
            (TaskKind::RetrievalPairs, HeadKind::None, LossKind::InfoNce { temperature }) => {
                if temperature <= 0.0 {
                    return Err(GlotError::InvalidConfig("temperature must be positive".into()));
                }
                Ok(())
            }
            (task, head, loss) => Err(GlotError::InvalidConfig(format!(
                "incompatible combination: task {task:?}, head {head:?}, loss {loss:?}"
            ))),
        }
    }

    /// Allocates all trainable tensors, seeded.
    pub fn init_params(&self, seed: u64) -> Result<(ParamStore, ModelParams)> {
        self.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pooler = match &self.pooler {
            PoolerSpec::Glot { gnn, readout_hidden, .. } => PoolerParams::Glot(
                GlotPoolParams::init(gnn, *readout_hidden, &mut store, &mut rng),
            ),
            PoolerSpec::AdaPool { hidden } => PoolerParams::AdaPool(AdaPoolParams::init(
                self.input_dim,
                *hidden,
                &mut store,
                &mut rng,
            )),
            _ => PoolerParams::Static,
        };
        let head = match self.head {
            HeadKind::Classifier { classes } => {
                Some(HeadParams::init(self.head_in_dim(), classes, &mut store, &mut rng))
            }
            HeadKind::Regression => {
                Some(HeadParams::init(self.head_in_dim(), 1, &mut store, &mut rng))
            }
            HeadKind::None => None,
        };
        Ok((store, ModelParams { pooler, head }))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum PoolerParams {
    Glot(GlotPoolParams),
    AdaPool(AdaPoolParams),
    Static,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub pooler: PoolerParams,
    pub head: Option<HeadParams>,
}

/// Exact number of trainable scalars for a model spec.
pub fn count_trainable_params(spec: &ModelSpec) -> Result<usize> {
    let (store, _) = spec.init_params(0)?;
    Ok(store.n_scalars())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub train_batch: usize,
    pub eval_batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub max_seq_len: usize,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            train_batch: 32,
            eval_batch: 64,
            seed: 42,
            adam: AdamConfig::default(),
            max_seq_len: 128,
            shuffle: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLoss {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<StepLoss>,
    pub epoch_mean_losses: Vec<f64>,
    pub batch_ms_mean: f64,
    pub batch_ms_std: f64,
    pub optimizer_steps: usize,
    pub param_count: usize,
    pub final_metrics: BTreeMap<String, f64>,
}

/// Where sentences come from: an embedding-table backbone for token-id
/// datasets, a hidden-state cache for reference datasets, or in-memory
/// states.
pub enum Backing {
    Backbone(ToyBackbone),
    Cache(Vec<Matrix>),
    Memory(Vec<HiddenStates>),
}

pub struct DataProvider {
    backing: Backing,
    max_seq_len: usize,
}

impl DataProvider {
    pub fn new(backing: Backing, max_seq_len: usize) -> Self {
        Self { backing, max_seq_len }
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.backing {
            Backing::Backbone(b) => Some(b.dim()),
            Backing::Cache(s) => s.first().map(Matrix::cols),
            Backing::Memory(s) => s.first().map(HiddenStates::dim),
        }
    }

    fn fetch_tokens(&self, tokens: &[u32]) -> Result<HiddenStates> {
        let Backing::Backbone(b) = &self.backing else {
            return Err(GlotError::InvalidConfig(
                "token-id items need a backbone provider".into(),
            ));
        };
        let clipped = if tokens.len() > self.max_seq_len {
            &tokens[..self.max_seq_len]
        } else {
            tokens
        };
        b.embed(clipped)
    }

    fn fetch_ref(&self, r: usize) -> Result<HiddenStates> {
        let mut h = match &self.backing {
            Backing::Cache(s) => {
                let m = s.get(r).ok_or_else(|| {
                    GlotError::InvalidConfig(format!("ref {r} outside cache of {}", s.len()))
                })?;
                HiddenStates::all_valid(m.clone())
            }
            Backing::Memory(s) => s
                .get(r)
                .cloned()
                .ok_or_else(|| {
                    GlotError::InvalidConfig(format!("ref {r} outside memory of {}", s.len()))
                })?,
            Backing::Backbone(_) => {
                return Err(GlotError::InvalidConfig(
                    "ref items need a cache or memory provider".into(),
                ))
            }
        };
        h.truncate(self.max_seq_len);
        Ok(h)
    }

    pub fn fetch_single(&self, item: &DatasetItem) -> Result<HiddenStates> {
        match &item.source {
            ItemSource::Tokens(t) => self.fetch_tokens(t),
            ItemSource::Ref(r) => self.fetch_ref(*r),
            other => Err(GlotError::InvalidConfig(format!(
                "single-sentence fetch on pair item {other:?}"
            ))),
        }
    }

    pub fn fetch_pair(&self, item: &DatasetItem) -> Result<(HiddenStates, HiddenStates)> {
        match &item.source {
            ItemSource::TokenPair(a, b) => Ok((self.fetch_tokens(a)?, self.fetch_tokens(b)?)),
            ItemSource::PairRefs(a, b) => Ok((self.fetch_ref(*a)?, self.fetch_ref(*b)?)),
            other => Err(GlotError::InvalidConfig(format!(
                "pair fetch on single item {other:?}"
            ))),
        }
    }
}

/// Pools a batch of sentences into embedding rows on the tape.
fn pool_batch(
    tape: &mut Tape,
    store: &ParamStore,
    batch: &[HiddenStates],
    spec: &ModelSpec,
    params: &ModelParams,
) -> Result<TapeId> {
    match (&spec.pooler, &params.pooler) {
        (PoolerSpec::Glot { graph, gnn, .. }, PoolerParams::Glot(p)) => {
            let (z, _pi, _vb) = glot_forward_on_tape(tape, store, batch, graph, gnn, p)?;
            Ok(z)
        }
        (PoolerSpec::AdaPool { .. }, PoolerParams::AdaPool(p)) => {
            let vb = stack_valid(batch)?;
            let h = tape.constant(vb.stacked);
            let (z, _pi) = adapool_forward(tape, store, h, &vb.batch_index, vb.n_sentences, p)?;
            Ok(z)
        }
        (PoolerSpec::Mean, PoolerParams::Static) => {
            let rows: Result<Vec<Vec<f64>>> = batch.iter().map(mean_pool).collect();
            Ok(tape.constant(Matrix::from_rows(&rows?)?))
        }
        (PoolerSpec::Max, PoolerParams::Static) => {
            let rows: Result<Vec<Vec<f64>>> = batch.iter().map(max_pool).collect();
            Ok(tape.constant(Matrix::from_rows(&rows?)?))
        }
        (PoolerSpec::Boundary(which), PoolerParams::Static) => {
            let rows: Result<Vec<Vec<f64>>> =
                batch.iter().map(|h| boundary_token_pool(h, *which)).collect();
            Ok(tape.constant(Matrix::from_rows(&rows?)?))
        }
        _ => Err(GlotError::InvalidConfig("pooler spec / params mismatch".into())),
    }
}

/// Forward pass for one batch of dataset items; returns the loss node.
fn batch_loss(
    tape: &mut Tape,
    store: &ParamStore,
    items: &[&DatasetItem],
    spec: &ModelSpec,
    params: &ModelParams,
    provider: &DataProvider,
) -> Result<TapeId> {
    match spec.task {
        TaskKind::Single => {
            let batch: Result<Vec<HiddenStates>> =
                items.iter().map(|i| provider.fetch_single(i)).collect();
            let z = pool_batch(tape, store, &batch?, spec, params)?;
            let head = params.head.as_ref().expect("validated classifier head");
            let probs = classify_single(tape, store, z, head)?;
            let labels: Vec<usize> = items.iter().map(|i| i.label as usize).collect();
            cross_entropy_loss(tape, probs, &labels)
        }
        TaskKind::Pair => {
            let (lhs, rhs) = fetch_pair_sides(items, provider)?;
            let za = pool_batch(tape, store, &lhs, spec, params)?;
            let zb = pool_batch(tape, store, &rhs, spec, params)?;
            let head = params.head.as_ref().expect("validated classifier head");
            let probs = classify_pair(tape, store, za, zb, head)?;
            let labels: Vec<usize> = items.iter().map(|i| i.label as usize).collect();
            cross_entropy_loss(tape, probs, &labels)
        }
        TaskKind::Regression => {
            let (lhs, rhs) = fetch_pair_sides(items, provider)?;
            let za = pool_batch(tape, store, &lhs, spec, params)?;
            let zb = pool_batch(tape, store, &rhs, spec, params)?;
            let cat = tape.concat_cols(&[za, zb])?;
            let head = params.head.as_ref().expect("validated regression head");
            let pred = regression_output(tape, store, cat, head)?;
            let targets: Vec<f64> = items.iter().map(|i| i.label).collect();
            mse_loss(tape, pred, &targets)
        }
        TaskKind::RetrievalPairs => {
            let (lhs, rhs) = fetch_pair_sides(items, provider)?;
            let zq = pool_batch(tape, store, &lhs, spec, params)?;
            let zd = pool_batch(tape, store, &rhs, spec, params)?;
            let LossKind::InfoNce { temperature } = spec.loss else {
                return Err(GlotError::InvalidConfig("retrieval needs InfoNCE".into()));
            };
            symmetric_infonce(tape, zq, zd, temperature)
        }
    }
}

fn fetch_pair_sides(
    items: &[&DatasetItem],
    provider: &DataProvider,
) -> Result<(Vec<HiddenStates>, Vec<HiddenStates>)> {
    let mut lhs = Vec::with_capacity(items.len());
    let mut rhs = Vec::with_capacity(items.len());
    for item in items {
        let (a, b) = provider.fetch_pair(item)?;
        lhs.push(a);
        rhs.push(b);
    }
    Ok((lhs, rhs))
}

/// Epoch-keyed shuffle; the generator is seeded from (seed, epoch) so the
/// order is reproducible across platforms and independent of earlier
/// draws.
fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0xE0_0C + epoch as u64);
        for i in (1..n).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
    }
    order
}

/// Trains the model for `cfg.epochs` passes and returns the trained
/// parameters plus a report. Aborts with diagnostics if the loss turns
/// non-finite.
pub fn train(
    spec: &ModelSpec,
    dataset: &LabeledDataset,
    provider: &DataProvider,
    cfg: &TrainConfig,
) -> Result<(ParamStore, ModelParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(GlotError::EmptyDataset("training set".into()));
    }
    if dataset.task != spec.task {
        return Err(GlotError::InvalidConfig(format!(
            "dataset task {:?} != model task {:?}",
            dataset.task, spec.task
        )));
    }
    let (mut store, params) = spec.init_params(cfg.seed)?;

    let mut step_losses = Vec::new();
    let mut epoch_means = Vec::new();
    let mut batch_times = Vec::new();
    let mut steps = 0usize;

    for epoch in 0..cfg.epochs {
        let order = epoch_order(dataset.len(), cfg.seed, epoch, cfg.shuffle);
        let mut epoch_sum = 0.0;
        let mut n_batches = 0usize;
        for (batch_id, chunk) in order.chunks(cfg.train_batch).enumerate() {
            let items: Vec<&DatasetItem> = chunk.iter().map(|&i| &dataset.items[i]).collect();
            let start = Instant::now();

            let mut tape = Tape::new();
            let loss = batch_loss(&mut tape, &store, &items, spec, &params, provider)?;
            let loss_value = tape.value(loss).scalar();
            if !loss_value.is_finite() {
                let norms = store
                    .norms()
                    .iter()
                    .map(|(n, v)| format!("{n}={v:.3e}"))
                    .collect::<Vec<_>>()
                    .join(", ");
                return Err(GlotError::NonFiniteLoss { epoch, batch: batch_id, norms });
            }
            tape.backward(loss)?;
            tape.accumulate_param_grads(&mut store);
            store.adam_step(&cfg.adam);

            batch_times.push(start.elapsed().as_secs_f64() * 1e3);
            step_losses.push(StepLoss { epoch, batch: batch_id, loss: loss_value });
            epoch_sum += loss_value;
            n_batches += 1;
            steps += 1;
        }
        epoch_means.push(epoch_sum / n_batches as f64);
    }

    let mean = batch_times.iter().sum::<f64>() / batch_times.len() as f64;
    let var = batch_times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>()
        / batch_times.len() as f64;
    let report = TrainReport {
        step_losses,
        epoch_mean_losses: epoch_means,
        batch_ms_mean: mean,
        batch_ms_std: var.sqrt(),
        optimizer_steps: steps,
        param_count: store.n_scalars(),
        final_metrics: BTreeMap::new(),
    };
    Ok((store, params, report))
}

/// Deterministic evaluation: runs the model over the dataset in eval
/// batches and computes the named metrics. Parameters are not mutated.
pub fn evaluate(
    spec: &ModelSpec,
    store: &ParamStore,
    params: &ModelParams,
    dataset: &LabeledDataset,
    provider: &DataProvider,
    eval_batch: usize,
    metric_names: &[String],
) -> Result<(BTreeMap<String, f64>, PredictionDump)> {
    if dataset.is_empty() {
        return Err(GlotError::EmptyDataset("evaluation set".into()));
    }
    let mut predicted = Vec::with_capacity(dataset.len());
    let mut gold = Vec::with_capacity(dataset.len());

    for chunk in dataset.items.chunks(eval_batch.max(1)) {
        let items: Vec<&DatasetItem> = chunk.iter().collect();
        let mut tape = Tape::new();
        match spec.task {
            TaskKind::Single => {
                let batch: Result<Vec<HiddenStates>> =
                    items.iter().map(|i| provider.fetch_single(i)).collect();
                let z = pool_batch(&mut tape, store, &batch?, spec, params)?;
                let head = params.head.as_ref().expect("validated classifier head");
                let probs = classify_single(&mut tape, store, z, head)?;
                push_argmax(tape.value(probs), &items, &mut predicted, &mut gold);
            }
            TaskKind::Pair => {
                let (lhs, rhs) = fetch_pair_sides(&items, provider)?;
                let za = pool_batch(&mut tape, store, &lhs, spec, params)?;
                let zb = pool_batch(&mut tape, store, &rhs, spec, params)?;
                let head = params.head.as_ref().expect("validated classifier head");
                let probs = classify_pair(&mut tape, store, za, zb, head)?;
                push_argmax(tape.value(probs), &items, &mut predicted, &mut gold);
            }
            TaskKind::Regression => {
                let (lhs, rhs) = fetch_pair_sides(&items, provider)?;
                let za = pool_batch(&mut tape, store, &lhs, spec, params)?;
                let zb = pool_batch(&mut tape, store, &rhs, spec, params)?;
                let cat = tape.concat_cols(&[za, zb])?;
                let head = params.head.as_ref().expect("validated regression head");
                let pred = regression_output(&mut tape, store, cat, head)?;
                for (r, item) in items.iter().enumerate() {
                    predicted.push(tape.value(pred).get(r, 0));
                    gold.push(item.label);
                }
            }
            TaskKind::RetrievalPairs => {
                return Err(GlotError::InvalidConfig(
                    "retrieval evaluation is out of scope; evaluate a classification or \
                     regression head instead"
                        .into(),
                ))
            }
        }
    }

    let dump = PredictionDump::new(predicted, gold)?;
    let mut out = BTreeMap::new();
    for name in metric_names {
        out.insert(name.clone(), by_name(name, &dump)?);
    }
    Ok((out, dump))
}

fn push_argmax(
    probs: &Matrix,
    items: &[&DatasetItem],
    predicted: &mut Vec<f64>,
    gold: &mut Vec<f64>,
) {
    for (r, item) in items.iter().enumerate() {
        let row = probs.row(r);
        let arg = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probs"))
            .map(|(i, _)| i)
            .unwrap_or(0);
        predicted.push(arg as f64);
        gold.push(item.label);
    }
}

/// Mean non-loop edge density of the dataset's sentences at a threshold.
pub fn mean_edge_density(
    dataset: &LabeledDataset,
    provider: &DataProvider,
    graph_cfg: &GraphConfig,
) -> Result<f64> {
    let mut sentences = Vec::new();
    for item in &dataset.items {
        match &item.source {
            ItemSource::Tokens(_) | ItemSource::Ref(_) => {
                sentences.push(provider.fetch_single(item)?.valid_matrix()?);
            }
            _ => {
                let (a, b) = provider.fetch_pair(item)?;
                sentences.push(a.valid_matrix()?);
                sentences.push(b.valid_matrix()?);
            }
        }
    }
    let graphs = build_token_graphs(&sentences, graph_cfg)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for g in &graphs {
        for d in edge_density(g) {
            total += d;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub tau: f64,
    pub metric: String,
    pub value: f64,
    pub edge_density: f64,
}

/// Retrains the model per threshold in the grid (fixed seed) and reports
/// the chosen metric plus the mean edge density at that threshold.
pub fn sweep_tau(
    spec: &ModelSpec,
    grid: &[f64],
    train_set: &LabeledDataset,
    eval_set: &LabeledDataset,
    provider: &DataProvider,
    cfg: &TrainConfig,
    metric: &str,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(GlotError::InvalidConfig("empty tau grid".into()));
    }
    let PoolerSpec::Glot { graph, gnn, readout_hidden } = &spec.pooler else {
        return Err(GlotError::InvalidConfig("tau sweep needs the graph pooler".into()));
    };
    let mut rows = Vec::with_capacity(grid.len());
    for &tau in grid {
        let swept = ModelSpec {
            pooler: PoolerSpec::Glot {
                graph: GraphConfig { tau, ..*graph },
                gnn: *gnn,
                readout_hidden: *readout_hidden,
            },
            ..spec.clone()
        };
        let (store, params, _report) = train(&swept, train_set, provider, cfg)?;
        let (metrics, _) =
            evaluate(&swept, &store, &params, eval_set, provider, cfg.eval_batch, &[metric.to_string()])?;
        let density =
            mean_edge_density(eval_set, provider, &GraphConfig { tau, ..*graph })?;
        rows.push(SweepRow {
            tau,
            metric: metric.to_string(),
            value: metrics[metric],
            edge_density: density,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------
// Model persistence.

#[derive(Serialize, Deserialize)]
struct ModelFile {
    spec: ModelSpec,
    params: ModelParams,
    store: ParamStore,
}

/// Serializes spec + parameters. Deterministic byte-for-byte for
/// identical training runs.
pub fn save_model(
    path: &Path,
    spec: &ModelSpec,
    store: &ParamStore,
    params: &ModelParams,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer(
        std::io::BufWriter::new(file),
        &ModelFile { spec: spec.clone(), params: params.clone(), store: store.clone() },
    )?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelSpec, ParamStore, ModelParams)> {
    let file = std::fs::File::open(path)?;
    let model: ModelFile = serde_json::from_reader(std::io::BufReader::new(file))?;
    Ok((model.spec, model.store, model.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TaskKind;
    use crate::gnn::{Aggregate, GnnVariant, JkMode};

    /// Two linearly separable 2-d clusters with margin, as token lists
    /// over a 2-token-per-class vocabulary is overkill; memory backing
    /// with one token per sentence keeps the oracle obvious.
    fn separable_dataset() -> (LabeledDataset, DataProvider) {
        let mut sentences = Vec::new();
        let mut items = Vec::new();
        for i in 0..20 {
            let side = i % 2;
            let offset = (i / 2) as f64 * 0.05;
            let x = if side == 0 { 1.0 + offset } else { -1.0 - offset };
            let y = if side == 0 { 0.5 - offset } else { -0.5 + offset };
            sentences.push(HiddenStates::all_valid(
                Matrix::from_vec(1, 2, vec![x, y]).unwrap(),
            ));
            items.push(DatasetItem { source: ItemSource::Ref(i), label: side as f64 });
        }
        let ds = LabeledDataset { task: TaskKind::Single, items, truncated_count: 0 };
        let provider = DataProvider::new(Backing::Memory(sentences), 128);
        (ds, provider)
    }

    fn mean_classifier_spec() -> ModelSpec {
        ModelSpec {
            input_dim: 2,
            task: TaskKind::Single,
            pooler: PoolerSpec::Mean,
            head: HeadKind::Classifier { classes: 2 },
            loss: LossKind::CrossEntropy,
        }
    }

    /// Independent oracle: plain logistic regression by gradient descent
    /// reaches accuracy 1.0 on the same points, confirming separability.
    fn logistic_regression_fits(points: &[(f64, f64, usize)]) -> bool {
        let (mut w0, mut w1, mut b) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..2000 {
            let (mut g0, mut g1, mut gb) = (0.0, 0.0, 0.0);
            for &(x, y, label) in points {
                let p = 1.0 / (1.0 + (-(w0 * x + w1 * y + b)).exp());
                let err = p - label as f64;
                g0 += err * x;
                g1 += err * y;
                gb += err;
            }
            w0 -= 0.5 * g0;
            w1 -= 0.5 * g1;
            b -= 0.5 * gb;
        }
        points.iter().all(|&(x, y, label)| {
            let p = 1.0 / (1.0 + (-(w0 * x + w1 * y + b)).exp());
            (p > 0.5) == (label == 1)
        })
    }

    #[test]
    fn separable_toy_set_reaches_full_accuracy() {
        let (ds, provider) = separable_dataset();
        let points: Vec<(f64, f64, usize)> = ds
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| {
                let h = provider.fetch_single(&ds.items[i]).unwrap();
                (h.states().get(0, 0), h.states().get(0, 1), item.label as usize)
            })
            .collect();
        assert!(logistic_regression_fits(&points), "oracle says not separable");

        let spec = mean_classifier_spec();
        let cfg = TrainConfig {
            adam: AdamConfig { learning_rate: 0.05, ..AdamConfig::default() },
            train_batch: 4,
            ..TrainConfig::default()
        };
        let (store, params, report) = train(&spec, &ds, &provider, &cfg).unwrap();
        assert_eq!(report.optimizer_steps, 2 * 5);
        let (metrics, _) = evaluate(
            &spec,
            &store,
            &params,
            &ds,
            &provider,
            cfg.eval_batch,
            &["accuracy".to_string()],
        )
        .unwrap();
        assert_eq!(metrics["accuracy"], 1.0);
    }

    #[test]
    fn zero_learning_rate_leaves_params_bitwise() {
        let (ds, provider) = separable_dataset();
        let spec = mean_classifier_spec();
        let cfg = TrainConfig {
            adam: AdamConfig { learning_rate: 0.0, ..AdamConfig::default() },
            ..TrainConfig::default()
        };
        let (store, _, _) = train(&spec, &ds, &provider, &cfg).unwrap();
        let (fresh, _) = spec.init_params(cfg.seed).unwrap();
        for (trained, init) in store.params().iter().zip(fresh.params()) {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&trained.value), bits(&init.value));
        }
    }

    #[test]
    fn same_seed_gives_bitwise_identical_loss_curves() {
        let (ds, provider) = separable_dataset();
        let spec = mean_classifier_spec();
        let cfg = TrainConfig::default();
        let (_, _, r1) = train(&spec, &ds, &provider, &cfg).unwrap();
        let (_, _, r2) = train(&spec, &ds, &provider, &cfg).unwrap();
        let bits = |r: &TrainReport| {
            r.step_losses.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(bits(&r1), bits(&r2));
    }

    #[test]
    fn corrupting_masked_tokens_changes_nothing() {
        // Same dataset twice, second copy has a padded row filled with
        // garbage; loss curves must match bitwise.
        let build = |corrupt: bool| {
            let mut sentences = Vec::new();
            let mut items = Vec::new();
            for i in 0..8 {
                let side = i % 2;
                let x = if side == 0 { 1.0 } else { -1.0 };
                let pad = if corrupt { 1e12 } else { 0.0 };
                let m = Matrix::from_vec(2, 2, vec![x, 0.3, pad, -pad]).unwrap();
                sentences.push(HiddenStates::new(m, vec![true, false]).unwrap());
                items.push(DatasetItem { source: ItemSource::Ref(i), label: side as f64 });
            }
            let ds = LabeledDataset { task: TaskKind::Single, items, truncated_count: 0 };
            (ds, DataProvider::new(Backing::Memory(sentences), 128))
        };
        let spec = mean_classifier_spec();
        let cfg = TrainConfig::default();
        let (ds_a, prov_a) = build(false);
        let (ds_b, prov_b) = build(true);
        let (_, _, ra) = train(&spec, &ds_a, &prov_a, &cfg).unwrap();
        let (_, _, rb) = train(&spec, &ds_b, &prov_b, &cfg).unwrap();
        let bits = |r: &TrainReport| {
            r.step_losses.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(bits(&ra), bits(&rb));
    }

    #[test]
    fn optimizer_step_count_law() {
        let (ds, provider) = separable_dataset();
        let spec = mean_classifier_spec();
        for batch in [3usize, 7, 20, 32] {
            let cfg = TrainConfig { train_batch: batch, ..TrainConfig::default() };
            let (_, _, report) = train(&spec, &ds, &provider, &cfg).unwrap();
            let expected = 2 * ds.len().div_ceil(batch);
            assert_eq!(report.optimizer_steps, expected, "batch {batch}");
        }
    }

    #[test]
    fn evaluate_is_idempotent() {
        let (ds, provider) = separable_dataset();
        let spec = mean_classifier_spec();
        let (store, params, _) = train(&spec, &ds, &provider, &TrainConfig::default()).unwrap();
        let names = ["accuracy".to_string(), "f1".to_string(), "mcc".to_string()];
        let (m1, d1) =
            evaluate(&spec, &store, &params, &ds, &provider, 64, &names).unwrap();
        let (m2, d2) =
            evaluate(&spec, &store, &params, &ds, &provider, 64, &names).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(d1.predicted(), d2.predicted());

        // Cross-module agreement on the same dump.
        let dump = PredictionDump::new(d1.predicted().to_vec(), d1.gold().to_vec()).unwrap();
        assert_eq!(m1["accuracy"], crate::metrics::accuracy(&dump));
        assert_eq!(m1["f1"], crate::metrics::f1_binary(&dump).unwrap());
        assert_eq!(m1["mcc"], crate::metrics::mcc(&dump).unwrap());
    }

    #[test]
    fn unknown_metric_is_an_error() {
        let (ds, provider) = separable_dataset();
        let spec = mean_classifier_spec();
        let (store, params, _) = train(&spec, &ds, &provider, &TrainConfig::default()).unwrap();
        assert!(matches!(
            evaluate(&spec, &store, &params, &ds, &provider, 64, &["vmeasure".to_string()]),
            Err(GlotError::UnknownMetric(_))
        ));
    }

    #[test]
    fn incompatible_combinations_rejected_before_training() {
        let spec = ModelSpec {
            input_dim: 2,
            task: TaskKind::Single,
            pooler: PoolerSpec::Mean,
            head: HeadKind::Regression,
            loss: LossKind::CrossEntropy,
        };
        assert!(spec.validate().is_err());

        let spec = ModelSpec {
            input_dim: 2,
            task: TaskKind::RetrievalPairs,
            pooler: PoolerSpec::Mean,
            head: HeadKind::None,
            loss: LossKind::InfoNce { temperature: -1.0 },
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn param_counts_match_hand_tallies() {
        // K = 0 graph pooler with no head: W_in (d*p) + readout
        // (p*r + r + r).
        let (d, p, r) = (6, 6, 4);
        let spec = ModelSpec {
            input_dim: d,
            task: TaskKind::RetrievalPairs,
            pooler: PoolerSpec::Glot {
                graph: GraphConfig::default(),
                gnn: GnnConfig {
                    variant: GnnVariant::Gat,
                    num_layers: 0,
                    hidden_dim: p,
                    input_dim: d,
                    jk_mode: JkMode::Cat,
                    aggregate: Aggregate::Mean,
                },
                readout_hidden: r,
            },
            head: HeadKind::None,
            loss: LossKind::InfoNce { temperature: 0.07 },
        };
        assert_eq!(count_trainable_params(&spec).unwrap(), d * p + p * r + r + r);

        // Paper-shaped default: d=768, p=128, K=2 GAT, cat fusion, r=128,
        // binary head. Hand tally:
        //   w_in            768*128 = 98304
        //   2 GAT layers    2*(128*128 + 2*128) = 33280
        //   readout         384*128 + 128 + 128 = 49408
        //   head            384*2 + 2 = 770
        let spec = ModelSpec {
            input_dim: 768,
            task: TaskKind::Single,
            pooler: PoolerSpec::glot_defaults(768),
            head: HeadKind::Classifier { classes: 2 },
            loss: LossKind::CrossEntropy,
        };
        assert_eq!(
            count_trainable_params(&spec).unwrap(),
            98304 + 33280 + 49408 + 770
        );

        // Doubling p more than doubles the GNN layer cost (quadratic
        // terms).
        let layer_scalars = |p: usize| {
            let spec = ModelSpec {
                input_dim: 8,
                task: TaskKind::Single,
                pooler: PoolerSpec::Glot {
                    graph: GraphConfig::default(),
                    gnn: GnnConfig {
                        variant: GnnVariant::Gat,
                        num_layers: 1,
                        hidden_dim: p,
                        input_dim: 8,
                        jk_mode: JkMode::None,
                        aggregate: Aggregate::Mean,
                    },
                    readout_hidden: 4,
                },
                head: HeadKind::Classifier { classes: 2 },
                loss: LossKind::CrossEntropy,
            };
            count_trainable_params(&spec).unwrap()
        };
        assert!(layer_scalars(16) > 2 * layer_scalars(8));
    }

    #[test]
    fn model_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let (ds, provider) = separable_dataset();
        let spec = mean_classifier_spec();
        let (store, params, _) = train(&spec, &ds, &provider, &TrainConfig::default()).unwrap();
        save_model(&path, &spec, &store, &params).unwrap();
        let (spec2, store2, params2) = load_model(&path).unwrap();

        let (m1, _) =
            evaluate(&spec, &store, &params, &ds, &provider, 64, &["accuracy".to_string()])
                .unwrap();
        let (m2, _) =
            evaluate(&spec2, &store2, &params2, &ds, &provider, 64, &["accuracy".to_string()])
                .unwrap();
        assert_eq!(m1, m2);
    }
}
