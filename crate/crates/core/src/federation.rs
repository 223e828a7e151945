//! FedAvg: client selection, local SGD, size-weighted aggregation.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{subset_ratio, ActiveView, ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::fisher::{self, FimClients, FimConfig, FimData};
use crate::nn::{self, ModelParams};
use crate::rng::{self, purpose};
use crate::schedules::{self, DataSchedule, ParticipationSchedule};

/// Which dataset sizes weight the aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationWeights {
    /// Sizes of the data each client actually trained on this round.
    #[default]
    Active,
    /// Full local partition sizes, regardless of the data schedule.
    Full,
}

fn default_threads() -> usize {
    1
}

/// Run hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub n_clients: usize,
    pub clients_per_round: usize,
    /// Local mini-batch SGD steps per round.
    pub local_steps: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Per-round learning-rate multiplier; 1 keeps it constant.
    pub lr_decay: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub rounds: usize,
    pub master_seed: u64,
    /// Layer widths: input dimension, hidden widths..., class count.
    pub arch: Vec<usize>,
    #[serde(default)]
    pub aggregation_weights: AggregationWeights,
    /// Worker threads for per-client work; 1 runs sequentially, 0 uses all cores.
    /// Results do not depend on this value.
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Record measured per-round wall time. Off by default because timings
    /// are the only nondeterministic output.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        nn::validate_arch(&self.arch)?;
        if self.n_clients == 0 {
            return Err(Error::config("n_clients must be at least 1"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.n_clients {
            return Err(Error::config(format!(
                "clients_per_round must be in 1..={}, got {}",
                self.n_clients, self.clients_per_round
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::config("local_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        Ok(())
    }
}

/// Observables recorded after each round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub lr: f64,
    pub selected: Vec<usize>,
    /// Size-weighted mean of the selected clients' mini-batch losses.
    pub train_loss: f64,
    pub test_accuracy: f64,
    /// `None` on rounds without a Fisher measurement.
    pub fedfim_trace: Option<f64>,
    pub cum_trace: f64,
    pub active_ratio: f64,
    pub pool_size: usize,
    pub wall_ms: f64,
}

impl RoundMetrics {
    pub fn n_selected(&self) -> usize {
        self.selected.len()
    }
}

/// `m` distinct ids drawn uniformly from `0..n`, ascending.
pub fn select_clients<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::config(format!("cannot select {m} of {n} clients")));
    }
    let mut ids = index::sample(rng, n, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// `lr0 · decay^t`, by repeated multiplication so every platform agrees bit for bit.
pub fn lr_at_round(lr0: f64, decay: f64, t: usize) -> f64 {
    (0..t).fold(lr0, |lr, _| lr * decay)
}

/// Output of one client's local training.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub model: ModelParams,
    /// Mean of the mini-batch losses seen during the `K` steps.
    pub mean_loss: f64,
}

/// `K` mini-batch SGD steps on the view's active examples.
///
/// Batches walk a shuffle of the active set without replacement, reshuffling
/// when it is exhausted; the last batch of a pass may be short. Each batch is
/// evaluated in ascending dataset order, so a batch covering the whole active
/// set is exactly the full-batch gradient.
#[allow(clippy::too_many_arguments)]
pub fn local_train<R: Rng + ?Sized>(
    model: &ModelParams,
    dataset: &Dataset,
    view: &ActiveView<'_>,
    local_steps: usize,
    lr: f64,
    batch_size: usize,
    weight_decay: f64,
    rng: &mut R,
) -> Result<LocalUpdate> {
    if view.is_empty() {
        return Err(Error::input(format!(
            "client {} has no active examples",
            view.partition().client_id()
        )));
    }
    if local_steps == 0 || batch_size == 0 {
        return Err(Error::config("local_steps and batch_size must be at least 1"));
    }
    let examples = dataset.examples();
    let mut order = view.indices().to_vec();
    order.shuffle(rng);
    let mut cursor = 0;
    let mut current = model.clone();
    let mut loss_sum = 0.0;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..local_steps {
        if cursor == order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let end = (cursor + batch_size).min(order.len());
        batch.clear();
        batch.extend_from_slice(&order[cursor..end]);
        batch.sort_unstable();
        cursor = end;
        let (loss, g) = nn::batch_loss_grad(&current, batch.iter().map(|&i| &examples[i]))?;
        loss_sum += loss;
        current = nn::sgd_step(&current, &g, lr, weight_decay)?;
    }
    Ok(LocalUpdate {
        model: current,
        mean_loss: loss_sum / local_steps as f64,
    })
}

/// Weighted average of models, weights proportional to `sizes`, folded in list order.
///
/// Uses the running-mean update `m ← m + (s_j / S_j)(w_j − m)`, where `S_j`
/// is the size total so far. Identical inputs are a fixed point bit for bit
/// and every output coordinate is a convex combination of the inputs.
pub fn aggregate(models: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let Some(first) = models.first() else {
        return Err(Error::input("nothing to aggregate"));
    };
    if models.len() != sizes.len() {
        return Err(Error::input(format!(
            "{} models but {} sizes",
            models.len(),
            sizes.len()
        )));
    }
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::input(format!("model {i} has weight 0")));
    }
    if let Some(i) = models.iter().position(|m| m.arch() != first.arch()) {
        return Err(Error::input(format!("model {i} has a different architecture")));
    }
    let mut mean = first.values().to_vec();
    let mut seen = sizes[0] as f64;
    for (model, &size) in models.iter().zip(sizes).skip(1) {
        seen += size as f64;
        let w = size as f64 / seen;
        for (m, v) in mean.iter_mut().zip(model.values()) {
            *m += w * (v - *m);
        }
    }
    ModelParams::from_values(first.arch(), mean)
}

/// [`aggregate`] over `(client_id, model, size)` triples in any arrival
/// order; sums in ascending client id.
pub fn aggregate_updates(mut updates: Vec<(usize, ModelParams, usize)>) -> Result<ModelParams> {
    updates.sort_by_key(|u| u.0);
    let sizes: Vec<usize> = updates.iter().map(|u| u.2).collect();
    let models: Vec<ModelParams> = updates.into_iter().map(|u| u.1).collect();
    aggregate(&models, &sizes)
}

/// Starting global model for a run.
pub fn initial_model(config: &FedConfig) -> Result<ModelParams> {
    nn::init_model(&config.arch, rng::derive_seed(config.master_seed, &[purpose::INIT]))
}

/// A FedAvg run in progress.
pub struct Simulation<'a> {
    config: FedConfig,
    data_schedule: DataSchedule,
    participation: ParticipationSchedule,
    fim: FimConfig,
    train: &'a Dataset,
    test: &'a Dataset,
    partitions: Vec<ClientPartition>,
    global: ModelParams,
    cum_trace: f64,
    next_round: usize,
    workers: Option<rayon::ThreadPool>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        config: FedConfig,
        data_schedule: DataSchedule,
        participation: ParticipationSchedule,
        fim: FimConfig,
        train: &'a Dataset,
        test: &'a Dataset,
        partitions: Vec<ClientPartition>,
    ) -> Result<Self> {
        config.validate()?;
        data_schedule.validate()?;
        participation.validate(config.n_clients, config.clients_per_round)?;
        fim.validate()?;
        let classes = *config.arch.last().unwrap();
        for (name, d) in [("training", train), ("test", test)] {
            if d.dim() != config.arch[0] {
                return Err(Error::config(format!(
                    "{name} data has dimension {}, architecture expects {}",
                    d.dim(),
                    config.arch[0]
                )));
            }
            if d.num_classes() > classes {
                return Err(Error::config(format!(
                    "{name} data has {} classes, architecture has {classes}",
                    d.num_classes()
                )));
            }
        }
        if partitions.len() != config.n_clients {
            return Err(Error::config(format!(
                "{} partitions for {} clients",
                partitions.len(),
                config.n_clients
            )));
        }
        if let Some((i, p)) = partitions.iter().enumerate().find(|(i, p)| p.client_id() != *i) {
            return Err(Error::config(format!("partition {i} belongs to client {}", p.client_id())));
        }
        let workers = match config.threads {
            1 => None,
            n => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| Error::config(format!("cannot start worker threads: {e}")))?,
            ),
        };
        let global = initial_model(&config)?;
        Ok(Simulation {
            config,
            data_schedule,
            participation,
            fim,
            train,
            test,
            partitions,
            global,
            cum_trace: 0.0,
            next_round: 0,
            workers,
        })
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    pub fn partitions(&self) -> &[ClientPartition] {
        &self.partitions
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    fn parallel(&self) -> bool {
        self.workers.is_some()
    }

    fn in_workers<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.workers {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    /// Runs round `t = next_round()`: select, train locally, aggregate,
    /// evaluate and (on measurement rounds) record the FedFIM trace of the
    /// new global model.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let t = self.next_round;
        if t >= self.config.rounds {
            return Err(Error::config(format!("all {} rounds already run", self.config.rounds)));
        }
        let started = Instant::now();
        let cfg = &self.config;
        let seed = cfg.master_seed;
        let lr = lr_at_round(cfg.lr0, cfg.lr_decay, t);
        let pool = schedules::participation_pool(&self.participation, t, cfg.n_clients, cfg.clients_per_round, seed)?;
        let picks = select_clients(
            pool.len(),
            cfg.clients_per_round,
            &mut rng::derived(seed, &[purpose::SELECT, t as u64]),
        )?;
        let selected: Vec<usize> = picks.iter().map(|&i| pool[i]).collect();
        let ratio = schedules::active_ratio(&self.data_schedule, t);

        let views: Vec<ActiveView<'_>> = selected
            .iter()
            .map(|&id| subset_ratio(&self.partitions[id], ratio))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|v| !v.is_empty())
            .collect();
        if views.is_empty() {
            return Err(Error::config(format!("round {t}: no selected client has data")));
        }
        let global = &self.global;
        let train = self.train;
        let train_one = |view: &ActiveView<'_>| -> Result<LocalUpdate> {
            let id = view.partition().client_id() as u64;
            let mut stream = rng::derived(seed, &[purpose::TRAIN, t as u64, id]);
            local_train(global, train, view, cfg.local_steps, lr, cfg.batch_size, cfg.weight_decay, &mut stream)
        };
        let updates: Vec<LocalUpdate> = if self.parallel() {
            self.in_workers(|| views.par_iter().map(train_one).collect::<Result<_>>())?
        } else {
            views.iter().map(train_one).collect::<Result<_>>()?
        };
        let sizes: Vec<usize> = views
            .iter()
            .map(|v| match cfg.aggregation_weights {
                AggregationWeights::Active => v.len(),
                AggregationWeights::Full => v.partition().len(),
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let train_loss = updates
            .iter()
            .zip(&sizes)
            .map(|(u, &s)| (s as f64 / total as f64) * u.mean_loss)
            .sum();
        let models: Vec<ModelParams> = updates.into_iter().map(|u| u.model).collect();
        let new_global = aggregate(&models, &sizes)?;
        let test_accuracy = nn::evaluate(&new_global, self.test.examples())?.accuracy;

        let fedfim_trace = if self.fim.measures(t) {
            let fim_ratio = match self.fim.data {
                FimData::Active => ratio,
                FimData::Full => 1.0,
            };
            let ids: Vec<usize> = match self.fim.clients {
                FimClients::All => (0..cfg.n_clients).collect(),
                FimClients::Selected => selected.clone(),
            };
            let fim_views: Vec<ActiveView<'_>> = ids
                .iter()
                .map(|&id| subset_ratio(&self.partitions[id], fim_ratio))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .filter(|v| !v.is_empty())
                .collect();
            let parallel = self.parallel();
            let fim = &self.fim;
            let estimate = self.in_workers(|| {
                fisher::estimate_fedfim(&new_global, train, &fim_views, fim, seed, t, parallel)
            })?;
            Some(estimate.fedfim_trace)
        } else {
            None
        };
        if let Some(tr) = fedfim_trace {
            self.cum_trace += lr * tr;
        }
        let wall_ms = if self.config.record_wall_time {
            started.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        self.global = new_global;
        self.next_round += 1;
        Ok(RoundMetrics {
            round: t,
            lr,
            selected,
            train_loss,
            test_accuracy,
            fedfim_trace,
            cum_trace: self.cum_trace,
            active_ratio: ratio,
            pool_size: pool.len(),
            wall_ms,
        })
    }

    /// Runs every remaining round.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        let mut out = Vec::with_capacity(self.config.rounds - self.next_round);
        while self.next_round < self.config.rounds {
            out.push(self.run_round()?);
        }
        Ok(out)
    }
}
