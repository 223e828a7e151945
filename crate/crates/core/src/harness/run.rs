use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, PartitionSpec};
use crate::data::{self, ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::federation::{RoundMetrics, Simulation};
use crate::rng::{self, purpose};
use crate::schedules::{self, SwitchRound};

/// Everything a single run produced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub metrics: Vec<RoundMetrics>,
    /// Test accuracy after the last round.
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub target_accuracy: f64,
    /// First round index whose test accuracy reached `target_accuracy`.
    pub rounds_to_target: Option<usize>,
    pub final_cum_trace: f64,
    /// Advisory only: see [`schedules::critical_period_end`].
    pub critical_period_end: Option<usize>,
}

impl RunRecord {
    pub fn seed(&self) -> u64 {
        self.config.federation.master_seed
    }

    pub fn recover_round(&self) -> SwitchRound {
        self.config.data_schedule.recover_round
    }
}

/// Client partitions for `config`, seeded from its master seed.
pub fn build_partitions(config: &ExperimentConfig, train: &Dataset) -> Result<Vec<ClientPartition>> {
    let fed = &config.federation;
    let seed = rng::derive_seed(fed.master_seed, &[purpose::PARTITION]);
    match config.partition {
        PartitionSpec::Iid => data::partition_iid(train, fed.n_clients, seed),
        PartitionSpec::Shards { shards_per_client } => {
            data::partition_noniid_shards(train, fed.n_clients, shards_per_client, seed)
        }
    }
}

/// First round whose accuracy reaches `target`.
fn first_reaching(metrics: &[RoundMetrics], target: f64) -> Option<usize> {
    metrics.iter().find(|m| m.test_accuracy >= target).map(|m| m.round)
}

/// Runs `config` on already loaded data.
pub fn run_experiment_with_data(config: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunRecord> {
    config.validate()?;
    let partitions = build_partitions(config, train)?;
    let mut sim = Simulation::new(
        config.federation.clone(),
        config.data_schedule,
        config.participation,
        config.fisher,
        train,
        test,
        partitions,
    )?;
    let metrics = sim.run()?;
    let last = metrics.last().expect("at least one round");
    let final_accuracy = last.test_accuracy;
    let final_cum_trace = last.cum_trace;
    let best_accuracy = metrics.iter().map(|m| m.test_accuracy).fold(0.0, f64::max);
    let target_accuracy = config
        .target_accuracy
        .unwrap_or(config.target_fraction * final_accuracy);
    let cum: Vec<f64> = metrics.iter().map(|m| m.cum_trace).collect();
    Ok(RunRecord {
        config: config.clone(),
        rounds_to_target: first_reaching(&metrics, target_accuracy),
        critical_period_end: schedules::critical_period_end(&cum, config.critical_fraction),
        metrics,
        final_accuracy,
        best_accuracy,
        target_accuracy,
        final_cum_trace,
    })
}

/// Validates `config`, loads its data and runs every round.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    let (train, test) = config.dataset.load()?;
    run_experiment_with_data(config, &train, &test)
}

/// Aggregates over seeds for one recover round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub recover_round: SwitchRound,
    pub n_seeds: usize,
    pub mean_final_accuracy: f64,
    /// Sample standard deviation (n − 1); 0 for a single seed.
    pub std_final_accuracy: f64,
    /// Mean over runs that reached their target; `None` if none did.
    pub mean_rounds_to_target: Option<f64>,
    pub mean_final_cum_trace: f64,
    pub std_final_cum_trace: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub seeds: Vec<u64>,
    /// Ascending by recover round.
    pub rows: Vec<SweepRow>,
}

/// A sweep's summary plus its constituent runs (ordered by recover round,
/// then by seed as given).
#[derive(Debug, Clone)]
pub struct Sweep {
    pub summary: SweepSummary,
    pub runs: Vec<RunRecord>,
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn summarize(recover_round: SwitchRound, runs: &[RunRecord]) -> SweepRow {
    let acc: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
    let cum: Vec<f64> = runs.iter().map(|r| r.final_cum_trace).collect();
    let reached: Vec<f64> = runs
        .iter()
        .filter_map(|r| r.rounds_to_target.map(|t| t as f64))
        .collect();
    SweepRow {
        recover_round,
        n_seeds: runs.len(),
        mean_final_accuracy: mean(&acc),
        std_final_accuracy: sample_std(&acc),
        mean_rounds_to_target: (!reached.is_empty()).then(|| mean(&reached)),
        mean_final_cum_trace: mean(&cum),
        std_final_cum_trace: sample_std(&cum),
    }
}

/// Runs `config` once per `(recover round, seed)` pair and aggregates final
/// accuracy and cumulative trace per recover round. Runs execute
/// concurrently when `parallel` is set; results do not depend on it.
pub fn sweep_recover_rounds(
    config: &ExperimentConfig,
    recover_rounds: &[SwitchRound],
    seeds: &[u64],
    parallel: bool,
) -> Result<Sweep> {
    if recover_rounds.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep needs at least one recover round and one seed"));
    }
    let rounds: BTreeSet<SwitchRound> = recover_rounds.iter().copied().collect();
    if rounds.len() != recover_rounds.len() {
        return Err(Error::config(format!("duplicate recover rounds in {recover_rounds:?}")));
    }
    if seeds.iter().collect::<BTreeSet<_>>().len() != seeds.len() {
        return Err(Error::config(format!("duplicate seeds in {seeds:?}")));
    }
    let jobs: Vec<ExperimentConfig> = rounds
        .iter()
        .flat_map(|&m| {
            seeds.iter().map(move |&seed| {
                let mut c = config.clone();
                c.data_schedule.recover_round = m;
                c.federation.master_seed = seed;
                c
            })
        })
        .collect();
    for job in &jobs {
        job.validate()?;
    }
    let (train, test) = config.dataset.load()?;
    let runs: Vec<RunRecord> = if parallel {
        jobs.par_iter()
            .map(|c| run_experiment_with_data(c, &train, &test))
            .collect::<Result<_>>()?
    } else {
        jobs.iter()
            .map(|c| run_experiment_with_data(c, &train, &test))
            .collect::<Result<_>>()?
    };
    let rows = rounds
        .iter()
        .zip(runs.chunks(seeds.len()))
        .map(|(&m, chunk)| summarize(m, chunk))
        .collect();
    Ok(Sweep {
        summary: SweepSummary {
            seeds: seeds.to_vec(),
            rows,
        },
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_helpers() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(sample_std(&[5.0]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    fn row(round: usize, acc: f64) -> RoundMetrics {
        RoundMetrics {
            round,
            lr: 0.1,
            selected: vec![0],
            train_loss: 1.0,
            test_accuracy: acc,
            fedfim_trace: Some(1.0),
            cum_trace: 0.1 * (round + 1) as f64,
            active_ratio: 1.0,
            pool_size: 1,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn rounds_to_target_is_monotone_in_target() {
        let metrics: Vec<RoundMetrics> = [0.2, 0.5, 0.4, 0.7, 0.9, 0.85]
            .iter()
            .enumerate()
            .map(|(t, &a)| row(t, a))
            .collect();
        assert_eq!(first_reaching(&metrics, 0.5), Some(1));
        assert_eq!(first_reaching(&metrics, 0.6), Some(3));
        assert_eq!(first_reaching(&metrics, 0.95), None);
        let mut prev = 0;
        for k in 0..=90 {
            if let Some(t) = first_reaching(&metrics, k as f64 / 100.0) {
                assert!(t >= prev);
                prev = t;
            }
        }
    }
}
