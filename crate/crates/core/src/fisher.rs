//! Trace of the Fisher information, per client and federated.
//!
//! Only traces are computed. For one example the trace contribution is the
//! squared norm of the per-example gradient evaluated at a label drawn from
//! the model's own predictive distribution, so no `d × d` matrix is formed.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ActiveView, Dataset};
use crate::error::{Error, Result};
use crate::nn::{self, ModelParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimMode {
    /// Exact expectation over the model's label distribution.
    Exact,
    /// Monte Carlo over uniformly drawn examples and sampled labels.
    Sampled,
}

/// Which clients enter the federated average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimClients {
    All,
    Selected,
}

/// Which local data a client's trace is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimData {
    Active,
    Full,
}

fn default_n_mc() -> usize {
    256
}

fn default_every() -> usize {
    1
}

fn default_clients() -> FimClients {
    FimClients::All
}

fn default_data() -> FimData {
    FimData::Active
}

fn default_mode() -> FimMode {
    FimMode::Exact
}

/// How and when the FedFIM trace is measured during a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FimConfig {
    #[serde(default = "default_mode")]
    pub mode: FimMode,
    /// Draws per client in sampled mode.
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    /// Measure every `every` rounds (round 0 always measured); 0 disables.
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default = "default_clients")]
    pub clients: FimClients,
    #[serde(default = "default_data")]
    pub data: FimData,
}

impl Default for FimConfig {
    fn default() -> Self {
        FimConfig {
            mode: FimMode::Exact,
            n_mc: default_n_mc(),
            every: 1,
            clients: FimClients::All,
            data: FimData::Active,
        }
    }
}

impl FimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == FimMode::Sampled && self.n_mc == 0 {
            return Err(Error::config("sampled Fisher mode needs n_mc >= 1"));
        }
        Ok(())
    }

    pub fn measures(&self, t: usize) -> bool {
        self.every > 0 && t.is_multiple_of(self.every)
    }
}

/// One round's Fisher measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FimEstimate {
    pub round: usize,
    pub local_traces: BTreeMap<usize, f64>,
    pub fedfim_trace: f64,
    pub mode: FimMode,
    pub samples_used: usize,
}

/// `Tr(F_j)` for one client at `model`, over the view's active examples.
///
/// Exact mode averages `Σ_y p(y|x) ‖g(x, y)‖²` over the active set. Sampled
/// mode averages `‖g(x, ŷ)‖²` over `n_mc` draws of `x` uniform from the
/// active set and `ŷ ~ p(·|x)`.
pub fn local_fim_trace<R: Rng + ?Sized>(
    model: &ModelParams,
    dataset: &Dataset,
    view: &ActiveView<'_>,
    mode: FimMode,
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    let active = view.indices();
    if active.is_empty() {
        return Err(Error::input(format!(
            "client {} has no active examples",
            view.partition().client_id()
        )));
    }
    let examples = dataset.examples();
    match mode {
        FimMode::Exact => {
            let mut total = 0.0;
            for &i in active {
                let (probs, norms) = nn::label_grad_sq_norms(model, &examples[i].x)?;
                total += probs.iter().zip(&norms).map(|(p, n)| p * n).sum::<f64>();
            }
            Ok(total / active.len() as f64)
        }
        FimMode::Sampled => {
            if n_mc == 0 {
                return Err(Error::config("sampled Fisher mode needs n_mc >= 1"));
            }
            let mut total = 0.0;
            for _ in 0..n_mc {
                let i = active[rng.random_range(0..active.len())];
                let (probs, norms) = nn::label_grad_sq_norms(model, &examples[i].x)?;
                total += norms[nn::sample_from(&probs, rng)];
            }
            Ok(total / n_mc as f64)
        }
    }
}

fn check_keys<V>(a: &BTreeMap<usize, f64>, b: &BTreeMap<usize, V>) -> Result<()> {
    if a.is_empty() {
        return Err(Error::input("no client traces to aggregate"));
    }
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::input("trace and size maps have different clients"));
    }
    Ok(())
}

/// Size-weighted average of local traces, `Σ_j (|D_j| / |D|) Tr(F_j)`,
/// summed in ascending client order.
pub fn fedfim_trace(local_traces: &BTreeMap<usize, f64>, sizes: &BTreeMap<usize, usize>) -> Result<f64> {
    check_keys(local_traces, sizes)?;
    if let Some((id, _)) = sizes.iter().find(|(_, &s)| s == 0) {
        return Err(Error::input(format!("client {id} has size 0")));
    }
    let total: usize = sizes.values().sum();
    let total = total as f64;
    Ok(local_traces
        .iter()
        .zip(sizes.values())
        .map(|((_, &tr), &s)| (s as f64 / total) * tr)
        .sum())
}

/// `Σ_i η_i · Tr_i` over `(learning rate, trace)` pairs.
pub fn cum_trace(history: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &(lr, tr)) in history.iter().enumerate() {
        if !(lr > 0.0) {
            return Err(Error::input(format!("history entry {i}: learning rate {lr} is not positive")));
        }
        if !(tr >= 0.0) {
            return Err(Error::input(format!("history entry {i}: trace {tr} is negative")));
        }
        total += lr * tr;
    }
    Ok(total)
}

/// Measures every listed client's trace at `model` and aggregates them.
///
/// `views` must be ascending by client id. Each client draws from its own
/// stream derived from `(seed, round, client)`, so the result does not depend
/// on whether clients are processed in parallel.
pub fn estimate_fedfim(
    model: &ModelParams,
    dataset: &Dataset,
    views: &[ActiveView<'_>],
    config: &FimConfig,
    seed: u64,
    round: usize,
    parallel: bool,
) -> Result<FimEstimate> {
    let measure = |view: &ActiveView<'_>| -> Result<(usize, f64, usize)> {
        let id = view.partition().client_id();
        let mut stream = rng::derived(seed, &[rng::purpose::FIM, round as u64, id as u64]);
        let tr = local_fim_trace(model, dataset, view, config.mode, config.n_mc, &mut stream)?;
        let used = match config.mode {
            FimMode::Exact => view.len(),
            FimMode::Sampled => config.n_mc,
        };
        Ok((id, tr, used))
    };
    let results: Vec<(usize, f64, usize)> = if parallel {
        views.par_iter().map(measure).collect::<Result<_>>()?
    } else {
        views.iter().map(measure).collect::<Result<_>>()?
    };
    let local_traces: BTreeMap<usize, f64> = results.iter().map(|&(id, tr, _)| (id, tr)).collect();
    let sizes: BTreeMap<usize, usize> = views.iter().map(|v| (v.partition().client_id(), v.len())).collect();
    let fedfim = fedfim_trace(&local_traces, &sizes)?;
    Ok(FimEstimate {
        round,
        local_traces,
        fedfim_trace: fedfim,
        mode: config.mode,
        samples_used: results.iter().map(|r| r.2).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{subset_ratio, ClientPartition};
    use crate::nn::{init_model, Example};

    fn single(examples: Vec<Example>, classes: usize) -> (Dataset, ClientPartition) {
        let n = examples.len();
        let d = Dataset::new(examples, classes).unwrap();
        (d, ClientPartition::new(0, (0..n).collect(), 1).unwrap())
    }

    #[test]
    fn exact_trace_at_zero_weights_closed_form() {
        let (d, p) = single(vec![Example::new(vec![2.0], 0)], 2);
        let model = ModelParams::zeros(&[1, 2]).unwrap();
        let view = subset_ratio(&p, 1.0).unwrap();
        let tr = local_fim_trace(&model, &d, &view, FimMode::Exact, 0, &mut rng::seeded(0)).unwrap();
        // p = (½, ½); for either label ∂W = (∓1, ±1), ∂b = (∓½, ±½): 1 + 1 + ¼ + ¼
        assert!((tr - 2.5).abs() < 1e-10, "{tr}");
    }

    #[test]
    fn exact_trace_is_duplication_invariant() {
        let model = init_model(&[3, 6, 3], 4).unwrap();
        let base: Vec<Example> = (0..5)
            .map(|i| Example::new(vec![i as f64 * 0.3, -0.2 * i as f64, 1.0], i % 3))
            .collect();
        let twice: Vec<Example> = base.iter().chain(base.iter()).cloned().collect();
        let (d1, p1) = single(base, 3);
        let (d2, p2) = single(twice, 3);
        let a = local_fim_trace(&model, &d1, &subset_ratio(&p1, 1.0).unwrap(), FimMode::Exact, 0, &mut rng::seeded(0)).unwrap();
        let b = local_fim_trace(&model, &d2, &subset_ratio(&p2, 1.0).unwrap(), FimMode::Exact, 0, &mut rng::seeded(0)).unwrap();
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn sampled_is_reproducible_and_requires_draws() {
        let model = init_model(&[2, 4, 3], 1).unwrap();
        let (d, p) = single((0..10).map(|i| Example::new(vec![i as f64 / 10.0, 1.0], i % 3)).collect(), 3);
        let view = subset_ratio(&p, 1.0).unwrap();
        let a = local_fim_trace(&model, &d, &view, FimMode::Sampled, 50, &mut rng::seeded(8)).unwrap();
        let b = local_fim_trace(&model, &d, &view, FimMode::Sampled, 50, &mut rng::seeded(8)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a >= 0.0);
        assert!(matches!(
            local_fim_trace(&model, &d, &view, FimMode::Sampled, 0, &mut rng::seeded(8)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fedfim_weighted_average() {
        let traces: BTreeMap<usize, f64> = [(0, 0.0), (1, 4.0)].into();
        let sizes: BTreeMap<usize, usize> = [(0, 1), (1, 3)].into();
        assert_eq!(fedfim_trace(&traces, &sizes).unwrap(), 3.0);
        let one: BTreeMap<usize, f64> = [(5, 1.25)].into();
        assert_eq!(fedfim_trace(&one, &[(5, 9)].into()).unwrap(), 1.25);
        let equal: BTreeMap<usize, f64> = [(0, 0.7), (1, 0.7), (2, 0.7)].into();
        let v = fedfim_trace(&equal, &[(0, 3), (1, 5), (2, 11)].into()).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn fedfim_rejects_mismatch() {
        let traces: BTreeMap<usize, f64> = [(0, 1.0), (1, 2.0)].into();
        assert!(fedfim_trace(&traces, &[(0, 1), (2, 1)].into()).is_err());
        assert!(fedfim_trace(&traces, &[(0, 1)].into()).is_err());
        assert!(fedfim_trace(&BTreeMap::new(), &BTreeMap::new()).is_err());
    }

    #[test]
    fn cum_trace_arithmetic() {
        assert_eq!(cum_trace(&[]).unwrap(), 0.0);
        assert!((cum_trace(&[(0.01, 2.0)]).unwrap() - 0.02).abs() < 1e-15);
        assert!((cum_trace(&[(0.01, 2.0), (0.0097, 1.0)]).unwrap() - 0.0297).abs() < 1e-15);
        assert!(cum_trace(&[(0.0, 1.0)]).is_err());
        assert!(cum_trace(&[(0.1, -1.0)]).is_err());
    }
}
