#![allow(dead_code)]

use fedcrit::harness::ExperimentConfig;

/// The 16-client Gaussian-mixture task used by the end-to-end checks.
pub fn desk_config(ratio: f64, recover_round: &str, fim_every: usize) -> ExperimentConfig {
    let recover = match recover_round {
        "never" => "\"never\"".to_string(),
        m => m.to_string(),
    };
    let text = format!(
        r#"{{
            "federation": {{
                "n_clients": 16, "clients_per_round": 4, "local_steps": 5, "batch_size": 16,
                "lr0": 0.05, "lr_decay": 0.99, "weight_decay": 0.0005, "rounds": 200,
                "master_seed": 1, "arch": [16, 32, 4]
            }},
            "dataset": {{"kind": "synthetic", "classes": 4, "dim": 16, "n_train": 4096, "n_test": 1024, "spread": 0.6, "seed": 7}},
            "data_schedule": {{"ratio": {ratio}, "recover_round": {recover}}},
            "fisher": {{"mode": "exact", "every": {fim_every}}}
        }}"#
    );
    ExperimentConfig::from_json(&text).expect("desk config parses")
}

/// A small, quick configuration for plumbing tests.
pub fn tiny_config(rounds: usize, seed: u64) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "federation": {{
                "n_clients": 4, "clients_per_round": 2, "local_steps": 3, "batch_size": 8,
                "lr0": 0.1, "lr_decay": 0.98, "weight_decay": 0.0001, "rounds": {rounds},
                "master_seed": {seed}, "arch": [4, 8, 3]
            }},
            "dataset": {{"kind": "synthetic", "classes": 3, "dim": 4, "n_train": 240, "n_test": 60, "spread": 0.4, "seed": 11}},
            "data_schedule": {{"ratio": 0.5, "recover_round": 2}}
        }}"#
    );
    ExperimentConfig::from_json(&text).expect("tiny config parses")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Counts adjacent steps that go the wrong way; each one must be within its
/// tolerance `tol(i)` or the sequence fails outright.
pub fn monotone_with_inversions(
    values: &[f64],
    increasing: bool,
    tol: impl Fn(usize) -> f64,
) -> (usize, bool) {
    let mut inversions = 0;
    let mut within = true;
    for i in 1..values.len() {
        let step = values[i] - values[i - 1];
        let wrong = if increasing { step < 0.0 } else { step > 0.0 };
        if wrong {
            inversions += 1;
            if step.abs() > tol(i) {
                within = false;
            }
        }
    }
    (inversions, within)
}
