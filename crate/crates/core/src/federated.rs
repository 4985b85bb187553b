//! Synchronous federated training of the categorizer.
//!
//! Each round broadcasts the global parameters, lets every participating
//! client take local gradient steps on its private dataset, and replaces the
//! global parameters with the mean of the returned client parameters. Only
//! [`ClientUpdate`] values (parameters plus scalar telemetry) leave a client.

use std::hash::Hasher;
use std::time::{Duration, Instant};

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Example, ModelError, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum FederatedError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("client {0} has an empty dataset")]
    EmptyClient(String),
    #[error("no client with a nonempty dataset participated")]
    NoActiveClients,
    #[error("nothing to aggregate")]
    NoUpdates,
    #[error("client {client_id} returned incompatible parameters ({detail})")]
    IncompatibleUpdate { client_id: String, detail: String },
    #[error("client {0} produced non-finite parameters")]
    Diverged(String),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Local mini-batch size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Fixed(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Str(String),
            Num(usize),
        }
        match Raw::deserialize(d)? {
            Raw::Str(s) if s == "full" => Ok(BatchSize::Full),
            Raw::Str(s) => s
                .parse()
                .map(BatchSize::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("invalid batch size {s:?}"))),
            Raw::Num(n) => Ok(BatchSize::Fixed(n)),
        }
    }
}

impl std::str::FromStr for BatchSize {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "full" {
            return Ok(BatchSize::Full);
        }
        s.parse().map(BatchSize::Fixed).map_err(|_| format!("expected \"full\" or a positive integer, got {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: BatchSize,
    pub rounds: usize,
    pub num_clients: usize,
    pub seed: u64,
    /// Weight client parameters by dataset size instead of uniformly.
    pub size_weighted: bool,
    /// Fraction of clients sampled per round.
    pub participation: f64,
    /// Fraction of the corpus held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            local_epochs: 1,
            batch_size: BatchSize::Full,
            rounds: 20,
            num_clients: 4,
            seed: 42,
            size_weighted: false,
            participation: 1.0,
            eval_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FederatedError> {
        let bad = |m: &str| Err(FederatedError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a positive finite number");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1");
        }
        if self.batch_size == BatchSize::Fixed(0) {
            return bad("batch_size must be positive");
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1");
        }
        if self.num_clients == 0 {
            return bad("num_clients must be at least 1");
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return bad("participation must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return bad("eval_fraction must be in [0, 1)");
        }
        Ok(())
    }
}

/// A simulated client. Its dataset never leaves this value.
#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: String,
    dataset: Vec<Example>,
    local_params: Option<ModelParams>,
}

impl ClientState {
    pub fn new(client_id: impl Into<String>, dataset: Vec<Example>) -> Self {
        Self { client_id: client_id.into(), dataset, local_params: None }
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn num_examples(&self) -> usize {
        self.dataset.len()
    }

    /// Parameters produced by this client's most recent local update.
    pub fn local_params(&self) -> Option<&ModelParams> {
        self.local_params.as_ref()
    }
}

/// What a client sends back to the server after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ModelParams,
    pub train_loss: f64,
    pub num_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u64,
    /// Local training loss per participating client, ordered by client id.
    pub client_losses: Vec<f64>,
    pub eval_loss: f64,
    pub eval_acc: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_clients: Vec<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

fn derive_seed(seed: u64, round: u64, client_id: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(&round.to_le_bytes());
    h.write(client_id.as_bytes());
    h.finish()
}

/// Local training: `local_epochs` passes of mini-batch gradient descent from `global`.
///
/// With one epoch and a full batch this is exactly one step
/// `global - learning_rate * grad(global, dataset)`.
pub fn client_update(
    global: &ModelParams,
    client: &ClientState,
    cfg: &TrainConfig,
    round: u64,
) -> Result<ClientUpdate, FederatedError> {
    if client.dataset.is_empty() {
        return Err(FederatedError::EmptyClient(client.client_id.clone()));
    }
    let mut params = global.clone();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    match cfg.batch_size {
        BatchSize::Full => {
            for _ in 0..cfg.local_epochs {
                let (loss, grad) = model::loss_and_gradient(&params, &client.dataset)?;
                params = params.step(&grad, cfg.learning_rate).map_err(|e| match e {
                    ModelError::NonFinite(_) => FederatedError::Diverged(client.client_id.clone()),
                    other => other.into(),
                })?;
                loss_sum += loss;
                steps += 1;
            }
        }
        BatchSize::Fixed(size) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, round, &client.client_id));
            let mut order: Vec<usize> = (0..client.dataset.len()).collect();
            for _ in 0..cfg.local_epochs {
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    let batch: Vec<Example> = chunk.iter().map(|&i| client.dataset[i].clone()).collect();
                    let (loss, grad) = model::loss_and_gradient(&params, &batch)?;
                    params = params.step(&grad, cfg.learning_rate).map_err(|e| match e {
                        ModelError::NonFinite(_) => FederatedError::Diverged(client.client_id.clone()),
                        other => other.into(),
                    })?;
                    loss_sum += loss;
                    steps += 1;
                }
            }
        }
    }
    Ok(ClientUpdate {
        client_id: client.client_id.clone(),
        params,
        train_loss: loss_sum / steps as f64,
        num_examples: client.dataset.len(),
    })
}

/// Coordinate-wise mean of client parameters.
///
/// Updates are summed in `client_id` order so the result is bit-identical for
/// any permutation of the input. The running-mean form keeps every coordinate
/// within the `[min, max]` of the inputs and returns `P` exactly for copies of `P`.
pub fn aggregate(updates: &[ClientUpdate], size_weighted: bool) -> Result<ModelParams, FederatedError> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    let first = sorted.first().ok_or(FederatedError::NoUpdates)?;
    for u in &sorted {
        if !u.params.is_compatible(&first.params) {
            let (k, d) = u.params.shape();
            let (k0, d0) = first.params.shape();
            return Err(FederatedError::IncompatibleUpdate {
                client_id: u.client_id.clone(),
                detail: format!("{k}x{d}, expected {k0}x{d0}"),
            });
        }
    }
    let (k, d) = first.params.shape();
    let mut mean = first.params.weights().to_vec();
    let mut seen_weight = if size_weighted { first.num_examples as f64 } else { 1.0 };
    for u in &sorted[1..] {
        let w = if size_weighted { u.num_examples as f64 } else { 1.0 };
        if w == 0.0 {
            continue;
        }
        seen_weight += w;
        let frac = w / seen_weight;
        for (m, x) in mean.iter_mut().zip(u.params.weights()) {
            *m += (x - *m) * frac;
        }
    }
    Ok(ModelParams::from_weights(k, d, mean)?)
}

fn select_participants(n: usize, cfg: &TrainConfig, round: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    if cfg.participation >= 1.0 {
        return all;
    }
    let take = ((cfg.participation * n as f64).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, round, "__participants__"));
    all.shuffle(&mut rng);
    let mut chosen = all[..take].to_vec();
    chosen.sort_unstable();
    chosen
}

/// One synchronous round: broadcast, local updates (in parallel), aggregate.
pub fn run_round(
    global: &ModelParams,
    clients: &mut [ClientState],
    cfg: &TrainConfig,
    round: u64,
    eval: &[Example],
) -> Result<(ModelParams, RoundReport), FederatedError> {
    let started = Instant::now();
    let chosen = select_participants(clients.len(), cfg, round);
    let results: Vec<(usize, Result<ClientUpdate, FederatedError>)> = chosen
        .par_iter()
        .map(|&i| (i, client_update(global, &clients[i], cfg, round)))
        .collect();

    let mut updates = Vec::new();
    let mut skipped = Vec::new();
    for (i, res) in results {
        match res {
            Ok(u) => {
                clients[i].local_params = Some(u.params.clone());
                updates.push(u);
            }
            Err(FederatedError::EmptyClient(id)) => {
                tracing::warn!(client = %id, round, "skipping client with empty dataset");
                skipped.push(id);
            }
            Err(e) => return Err(e),
        }
    }
    if updates.is_empty() {
        return Err(FederatedError::NoActiveClients);
    }
    let next = aggregate(&updates, cfg.size_weighted)?;
    updates.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    skipped.sort();
    let (eval_loss, eval_acc) = model::evaluate(&next, eval)?;
    Ok((
        next,
        RoundReport {
            round,
            client_losses: updates.iter().map(|u| u.train_loss).collect(),
            eval_loss,
            eval_acc,
            skipped_clients: skipped,
            wall_time: started.elapsed(),
        },
    ))
}

/// How training examples are spread over clients.
#[derive(Debug, Clone, PartialEq)]
pub enum Partition {
    /// Seeded shuffle, then round-robin.
    Iid,
    /// Sorted by label, then cut into contiguous blocks.
    LabelSkew,
    /// `assignment[i]` is the client index of corpus example `i`.
    Explicit(Vec<usize>),
}

impl std::str::FromStr for Partition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iid" => Ok(Partition::Iid),
            "skew" => Ok(Partition::LabelSkew),
            other => Err(format!("unknown partition {other:?} (expected iid or skew)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub params: ModelParams,
    pub reports: Vec<RoundReport>,
}

/// Splits `corpus` into held-out evaluation examples and per-client datasets.
pub fn split_corpus(
    corpus: &[Example],
    partition: &Partition,
    cfg: &TrainConfig,
) -> Result<(Vec<ClientState>, Vec<Example>), FederatedError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(FederatedError::InvalidPartition("corpus is empty".into()));
    }
    let n = cfg.num_clients;
    if let Partition::Explicit(assign) = partition {
        if assign.len() != corpus.len() {
            return Err(FederatedError::InvalidPartition(format!(
                "assignment covers {} examples, corpus has {}",
                assign.len(),
                corpus.len()
            )));
        }
        if let Some((i, c)) = assign.iter().enumerate().find(|(_, &c)| c >= n) {
            return Err(FederatedError::InvalidPartition(format!(
                "example {i} assigned to client {c}, only {n} clients"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0, "__split__"));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_eval = (cfg.eval_fraction * corpus.len() as f64).floor() as usize;
    let n_eval = n_eval.min(corpus.len() - 1);
    let mut eval_idx = order[..n_eval].to_vec();
    eval_idx.sort_unstable();
    let mut train_idx = order[n_eval..].to_vec();

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n];
    match partition {
        Partition::Iid => {
            for (j, &i) in train_idx.iter().enumerate() {
                buckets[j % n].push(i);
            }
        }
        Partition::LabelSkew => {
            train_idx.sort_by_key(|&i| (corpus[i].label, i));
            let per = train_idx.len().div_ceil(n);
            for (j, &i) in train_idx.iter().enumerate() {
                buckets[j / per.max(1)].push(i);
            }
        }
        Partition::Explicit(assign) => {
            train_idx.sort_unstable();
            for &i in &train_idx {
                buckets[assign[i]].push(i);
            }
        }
    }
    let clients = buckets
        .into_iter()
        .enumerate()
        .map(|(c, idx)| {
            ClientState::new(format!("client-{c}"), idx.into_iter().map(|i| corpus[i].clone()).collect())
        })
        .collect();
    let mut eval: Vec<Example> = eval_idx.into_iter().map(|i| corpus[i].clone()).collect();
    if eval.is_empty() {
        // Corpus too small to hold anything out; score on the training data.
        eval = corpus.to_vec();
    }
    Ok((clients, eval))
}

/// Runs `cfg.rounds` rounds starting from `init`, numbering rounds from `first_round`.
pub fn run_simulation(
    init: &ModelParams,
    first_round: u64,
    corpus: &[Example],
    partition: &Partition,
    cfg: &TrainConfig,
) -> Result<SimulationOutcome, FederatedError> {
    let (mut clients, eval) = split_corpus(corpus, partition, cfg)?;
    let mut params = init.clone();
    let mut reports = Vec::with_capacity(cfg.rounds);
    for r in 0..cfg.rounds as u64 {
        let (next, report) = run_round(&params, &mut clients, cfg, first_round + r, &eval)?;
        params = next;
        reports.push(report);
    }
    Ok(SimulationOutcome { params, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::featurize;

    fn update(id: &str, k: usize, d: usize, w: Vec<f64>) -> ClientUpdate {
        ClientUpdate {
            client_id: id.into(),
            params: ModelParams::from_weights(k, d, w).unwrap(),
            train_loss: 0.0,
            num_examples: 1,
        }
    }

    fn toy_dataset() -> Vec<Example> {
        vec![
            Example::new(featurize("goal team match", 64).unwrap(), 0),
            Example::new(featurize("vote senate bill", 64).unwrap(), 1),
            Example::new(featurize("team coach", 64).unwrap(), 0),
        ]
    }

    #[test]
    fn aggregate_single_is_identity() {
        let u = update("a", 1, 2, vec![0.1, -7.3]);
        assert_eq!(aggregate(std::slice::from_ref(&u), false).unwrap(), u.params);
    }

    #[test]
    fn aggregate_is_arithmetic_mean() {
        let a = update("a", 1, 2, vec![1.0, 2.0]);
        let b = update("b", 1, 2, vec![3.0, 4.0]);
        assert_eq!(aggregate(&[a, b], false).unwrap().weights(), &[2.0, 3.0]);
    }

    #[test]
    fn aggregate_empty_and_mismatch() {
        assert_eq!(aggregate(&[], false).unwrap_err(), FederatedError::NoUpdates);
        let a = update("a", 1, 2, vec![1.0, 2.0]);
        let b = update("b", 2, 2, vec![3.0, 4.0, 5.0, 6.0]);
        match aggregate(&[a, b], false).unwrap_err() {
            FederatedError::IncompatibleUpdate { client_id, .. } => assert_eq!(client_id, "b"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn size_weighted_aggregation() {
        let mut a = update("a", 1, 2, vec![0.0, 0.0]);
        let mut b = update("b", 1, 2, vec![4.0, 8.0]);
        a.num_examples = 3;
        b.num_examples = 1;
        assert_eq!(aggregate(&[a, b], true).unwrap().weights(), &[1.0, 2.0]);
    }

    #[test]
    fn empty_client_is_reported_not_zeroed() {
        let g = ModelParams::zeros(2, 64).unwrap();
        let c = ClientState::new("empty", vec![]);
        assert_eq!(
            client_update(&g, &c, &TrainConfig::default(), 1).unwrap_err(),
            FederatedError::EmptyClient("empty".into())
        );
        let mut clients = vec![ClientState::new("empty", vec![]), ClientState::new("full", toy_dataset())];
        let (_, report) = run_round(&g, &mut clients, &TrainConfig::default(), 1, &toy_dataset()).unwrap();
        assert_eq!(report.skipped_clients, vec!["empty".to_string()]);
        assert_eq!(report.client_losses.len(), 1);
        assert!(clients[1].local_params().is_some());
    }

    #[test]
    fn all_empty_clients_is_an_error() {
        let g = ModelParams::zeros(2, 64).unwrap();
        let mut clients = vec![ClientState::new("a", vec![])];
        assert_eq!(
            run_round(&g, &mut clients, &TrainConfig::default(), 1, &toy_dataset()).unwrap_err(),
            FederatedError::NoActiveClients
        );
    }

    #[test]
    fn vanishing_learning_rate_leaves_params_unchanged() {
        let w: Vec<f64> = (0..2 * 64).map(|i| (i as f64).sin()).collect();
        let g = ModelParams::from_weights(2, 64, w).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-300, ..TrainConfig::default() };
        let u = client_update(&g, &ClientState::new("c", toy_dataset()), &cfg, 1).unwrap();
        for (a, b) in u.params.weights().iter().zip(g.weights()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn minibatch_updates_are_seeded() {
        let g = ModelParams::zeros(2, 64).unwrap();
        let cfg = TrainConfig { batch_size: BatchSize::Fixed(1), local_epochs: 3, ..TrainConfig::default() };
        let c = ClientState::new("c", toy_dataset());
        let a = client_update(&g, &c, &cfg, 7).unwrap();
        let b = client_update(&g, &c, &cfg, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        assert!(TrainConfig { rounds: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { num_clients: 0, ..ok.clone() }.validate().is_err());
        assert!(TrainConfig { participation: 0.0, ..ok }.validate().is_err());
    }

    #[test]
    fn explicit_partition_is_validated() {
        let corpus = toy_dataset();
        let cfg = TrainConfig { num_clients: 2, ..TrainConfig::default() };
        assert!(matches!(
            split_corpus(&corpus, &Partition::Explicit(vec![0, 1]), &cfg),
            Err(FederatedError::InvalidPartition(_))
        ));
        assert!(matches!(
            split_corpus(&corpus, &Partition::Explicit(vec![0, 1, 2]), &cfg),
            Err(FederatedError::InvalidPartition(_))
        ));
        assert!(split_corpus(&corpus, &Partition::Explicit(vec![0, 1, 1]), &cfg).is_ok());
        assert!(matches!(
            split_corpus(&[], &Partition::Iid, &cfg),
            Err(FederatedError::InvalidPartition(_))
        ));
    }

    #[test]
    fn partial_participation_samples_a_subset() {
        let cfg = TrainConfig { participation: 0.5, ..TrainConfig::default() };
        let chosen = select_participants(4, &cfg, 3);
        assert_eq!(chosen.len(), 2);
        assert_eq!(chosen, select_participants(4, &cfg, 3));
    }

    #[test]
    fn batch_size_parsing() {
        assert_eq!("full".parse::<BatchSize>().unwrap(), BatchSize::Full);
        assert_eq!("32".parse::<BatchSize>().unwrap(), BatchSize::Fixed(32));
        assert_eq!(serde_json::to_string(&BatchSize::Full).unwrap(), "\"full\"");
        let b: BatchSize = serde_json::from_str("8").unwrap();
        assert_eq!(b, BatchSize::Fixed(8));
    }
}
