//! Round-indexed policies for how much local data each client trains on and
//! which clients are eligible for selection.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::check_ratio;
use crate::error::{Error, Result};
use crate::{ceil_fraction, rng};

/// A round at which a schedule switches phase, or `Never`.
///
/// Serialized as a nonnegative integer or the string `"never"`. `Never`
/// orders after every finite round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SwitchRound {
    At(usize),
    Never,
}

impl SwitchRound {
    /// True once round `t` has reached the switch.
    pub fn reached(self, t: usize) -> bool {
        match self {
            SwitchRound::At(s) => t >= s,
            SwitchRound::Never => false,
        }
    }
}

impl fmt::Display for SwitchRound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwitchRound::At(s) => write!(f, "{s}"),
            SwitchRound::Never => f.write_str("never"),
        }
    }
}

impl std::str::FromStr for SwitchRound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("never") {
            return Ok(SwitchRound::Never);
        }
        s.parse()
            .map(SwitchRound::At)
            .map_err(|_| Error::config(format!("invalid round {s:?} (expected integer or \"never\")")))
    }
}

impl Serialize for SwitchRound {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SwitchRound::At(s) => serializer.serialize_u64(*s as u64),
            SwitchRound::Never => serializer.serialize_str("never"),
        }
    }
}

impl<'de> Deserialize<'de> for SwitchRound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            At(usize),
            Word(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::At(s) => Ok(SwitchRound::At(s)),
            Repr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Data-ratio schedule: clients train on ratio `ratio` of their data before
/// `recover_round` and on `late_ratio` (normally 1) from then on.
///
/// Setting `ratio = 1` and `late_ratio < 1` expresses the reverse heuristic
/// (all data first, partial data afterwards).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchedule {
    pub ratio: f64,
    pub recover_round: SwitchRound,
    #[serde(default = "one")]
    pub late_ratio: f64,
}

impl DataSchedule {
    /// Partial data at `ratio` until `recover_round`, then everything.
    pub fn recover(ratio: f64, recover_round: SwitchRound) -> Self {
        DataSchedule {
            ratio,
            recover_round,
            late_ratio: 1.0,
        }
    }

    /// All data until `switch_round`, then `ratio` of it.
    pub fn shrink(switch_round: SwitchRound, ratio: f64) -> Self {
        DataSchedule {
            ratio: 1.0,
            recover_round: switch_round,
            late_ratio: ratio,
        }
    }

    pub fn full() -> Self {
        DataSchedule::recover(1.0, SwitchRound::At(0))
    }

    pub fn validate(&self) -> Result<()> {
        check_ratio(self.ratio)?;
        check_ratio(self.late_ratio)
    }
}

impl Default for DataSchedule {
    fn default() -> Self {
        DataSchedule::full()
    }
}

/// Ratio of local data in use at round `t`.
pub fn active_ratio(schedule: &DataSchedule, t: usize) -> f64 {
    if schedule.recover_round.reached(t) {
        schedule.late_ratio
    } else {
        schedule.ratio
    }
}

/// Participation schedule: the pool of selectable clients is the first
/// `⌈f·N⌉` ids of a fixed seeded permutation, with `f = early_fraction`
/// before `switch_round` and `late_fraction` from then on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipationSchedule {
    pub switch_round: SwitchRound,
    pub early_fraction: f64,
    pub late_fraction: f64,
}

impl ParticipationSchedule {
    pub fn all_clients() -> Self {
        ParticipationSchedule {
            switch_round: SwitchRound::Never,
            early_fraction: 1.0,
            late_fraction: 1.0,
        }
    }

    pub fn fraction_at(&self, t: usize) -> f64 {
        if self.switch_round.reached(t) {
            self.late_fraction
        } else {
            self.early_fraction
        }
    }

    /// Checks both fractions and that both pools can hold `clients_per_round`.
    pub fn validate(&self, n_clients: usize, clients_per_round: usize) -> Result<()> {
        for f in [self.early_fraction, self.late_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("pool fraction must lie in (0, 1], got {f}")));
            }
            let pool = ceil_fraction(f, n_clients);
            if pool < clients_per_round {
                return Err(Error::config(format!(
                    "pool of {pool} clients (fraction {f} of {n_clients}) is smaller than {clients_per_round} clients per round"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ParticipationSchedule {
    fn default() -> Self {
        ParticipationSchedule::all_clients()
    }
}

/// Client ids eligible at round `t`, ascending.
pub fn participation_pool(
    schedule: &ParticipationSchedule,
    t: usize,
    n_clients: usize,
    clients_per_round: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let f = schedule.fraction_at(t);
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::config(format!("pool fraction must lie in (0, 1], got {f}")));
    }
    let size = ceil_fraction(f, n_clients);
    if size == 0 || size < clients_per_round {
        return Err(Error::config(format!(
            "participation pool of {size} clients at round {t} is smaller than {clients_per_round} clients per round"
        )));
    }
    let mut perm: Vec<usize> = (0..n_clients).collect();
    perm.shuffle(&mut rng::derived(seed, &[rng::purpose::POOL]));
    let mut pool = perm[..size].to_vec();
    pool.sort_unstable();
    Ok(pool)
}

/// Advisory end of the critical period: the first round after the peak
/// per-round cumulative-trace increment at which the increment falls below
/// `fraction` of that peak. Reported only; never feeds back into a run.
pub fn critical_period_end(cum_traces: &[f64], fraction: f64) -> Option<usize> {
    let increments: Vec<f64> = cum_traces
        .iter()
        .scan(0.0, |prev, &c| {
            let d = c - *prev;
            *prev = c;
            Some(d)
        })
        .collect();
    let (peak, max) = increments
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    if !(max > 0.0) {
        return None;
    }
    increments
        .iter()
        .enumerate()
        .skip(peak + 1)
        .find(|(_, &d)| d < fraction * max)
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recover_schedule_steps_at_m() {
        let s = DataSchedule::recover(0.3, SwitchRound::At(20));
        assert_eq!(active_ratio(&s, 0), 0.3);
        assert_eq!(active_ratio(&s, 19), 0.3);
        assert_eq!(active_ratio(&s, 20), 1.0);
        assert_eq!(active_ratio(&s, 500), 1.0);
        let immediate = DataSchedule::recover(0.3, SwitchRound::At(0));
        assert!((0..100).all(|t| active_ratio(&immediate, t) == 1.0));
        let never = DataSchedule::recover(0.3, SwitchRound::Never);
        assert!((0..100).all(|t| active_ratio(&never, t) == 0.3));
    }

    #[test]
    fn shrink_schedule_is_reverse() {
        let s = DataSchedule::shrink(SwitchRound::At(50), 0.25);
        assert_eq!(active_ratio(&s, 49), 1.0);
        assert_eq!(active_ratio(&s, 50), 0.25);
    }

    #[test]
    fn data_schedule_validation() {
        assert!(DataSchedule::recover(0.0, SwitchRound::At(1)).validate().is_err());
        assert!(DataSchedule::recover(1.2, SwitchRound::At(1)).validate().is_err());
        assert!(DataSchedule::recover(0.5, SwitchRound::Never).validate().is_ok());
    }

    #[test]
    fn switch_round_serde() {
        let s: DataSchedule = serde_json::from_str(r#"{"ratio":0.1,"recover_round":"never"}"#).unwrap();
        assert_eq!(s.recover_round, SwitchRound::Never);
        assert_eq!(s.late_ratio, 1.0);
        let s: DataSchedule = serde_json::from_str(r#"{"ratio":0.1,"recover_round":40}"#).unwrap();
        assert_eq!(s.recover_round, SwitchRound::At(40));
        assert!(serde_json::from_str::<DataSchedule>(r#"{"ratio":0.1,"recover_round":"soon"}"#).is_err());
        assert!(serde_json::from_str::<DataSchedule>(r#"{"ratio":0.1,"recover_round":4,"x":1}"#).is_err());
        assert_eq!(serde_json::to_string(&SwitchRound::Never).unwrap(), "\"never\"");
        assert!(SwitchRound::At(1_000_000) < SwitchRound::Never);
    }

    #[test]
    fn pool_switches_to_prefix() {
        let s = ParticipationSchedule {
            switch_round: SwitchRound::At(50),
            early_fraction: 1.0,
            late_fraction: 0.6,
        };
        let early = participation_pool(&s, 49, 64, 12, 5).unwrap();
        assert_eq!(early, (0..64).collect::<Vec<_>>());
        let late = participation_pool(&s, 50, 64, 12, 5).unwrap();
        assert_eq!(late.len(), 39);
        assert_eq!(late, participation_pool(&s, 120, 64, 12, 5).unwrap());

        let half = ParticipationSchedule {
            switch_round: SwitchRound::At(3),
            early_fraction: 0.8,
            late_fraction: 0.5,
        };
        let a = participation_pool(&half, 0, 20, 2, 9).unwrap();
        let b = participation_pool(&half, 3, 20, 2, 9).unwrap();
        assert!(b.iter().all(|id| a.contains(id)));
    }

    #[test]
    fn pool_immediate_switch_and_full() {
        let s = ParticipationSchedule {
            switch_round: SwitchRound::At(0),
            early_fraction: 1.0,
            late_fraction: 0.5,
        };
        assert_eq!(participation_pool(&s, 0, 10, 1, 1).unwrap().len(), 5);
        let all = ParticipationSchedule::all_clients();
        assert!((0..10).all(|t| participation_pool(&all, t, 8, 8, 1).unwrap() == (0..8).collect::<Vec<_>>()));
    }

    #[test]
    fn pool_too_small_is_rejected() {
        let s = ParticipationSchedule {
            switch_round: SwitchRound::At(5),
            early_fraction: 1.0,
            late_fraction: 0.1,
        };
        assert!(matches!(participation_pool(&s, 5, 64, 12, 1), Err(Error::Config(_))));
        assert!(s.validate(64, 12).is_err());
        assert!(s.validate(64, 7).is_ok());
    }

    #[test]
    fn detector_finds_flattening() {
        // increments 1, 3, 2, 0.2, 0.1
        let cum = [1.0, 4.0, 6.0, 6.2, 6.3];
        assert_eq!(critical_period_end(&cum, 0.05), Some(4));
        assert_eq!(critical_period_end(&cum, 0.5), Some(3));
        assert_eq!(critical_period_end(&[], 0.5), None);
        assert_eq!(critical_period_end(&[0.0, 0.0], 0.5), None);
    }
}
