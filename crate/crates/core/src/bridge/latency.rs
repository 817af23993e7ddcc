//! Seeded latency model for the simulated plug-in. Delays only move
//! timestamps; they never change an outcome.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::UnitId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Delay {
    Fixed {
        ms: u64,
    },
    Uniform {
        #[serde(rename = "minMs")]
        min_ms: u64,
        #[serde(rename = "maxMs")]
        max_ms: u64,
    },
}

impl Delay {
    pub const ZERO: Delay = Delay::Fixed { ms: 0 };

    fn sample(self, rng: &mut ChaCha8Rng) -> u64 {
        match self {
            Delay::Fixed { ms } => ms,
            Delay::Uniform { min_ms, max_ms } if max_ms > min_ms => rng.random_range(min_ms..=max_ms),
            Delay::Uniform { min_ms, .. } => min_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Prepare,
    Apply,
    Clean,
    Dismiss,
    ApiCall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Vm,
    Container,
    Zero,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vm" => Ok(Profile::Vm),
            "container" => Ok(Profile::Container),
            "zero" => Ok(Profile::Zero),
            other => Err(format!("unknown latency profile `{other}` (vm|container|zero)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub prepare: Delay,
    pub apply: Delay,
    pub clean: Delay,
    pub dismiss: Delay,
    /// One store or gateway round trip, used to time controller stages.
    #[serde(rename = "apiCall")]
    pub api_call: Delay,
    pub seed: u64,
    /// Real time slept per simulated millisecond; 0 disables sleeping.
    #[serde(rename = "realtimeScale", default)]
    pub realtime_scale: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::profile(Profile::Zero, 0)
    }
}

impl LatencyModel {
    /// Container deployments take well under a second per probe, VM
    /// deployments tens of seconds.
    pub fn profile(profile: Profile, seed: u64) -> Self {
        let u = |min_ms, max_ms| Delay::Uniform { min_ms, max_ms };
        let (prepare, apply, clean, dismiss) = match profile {
            Profile::Container => (u(50, 200), u(100, 1_000), u(500, 2_000), u(100, 500)),
            Profile::Vm => (u(1_000, 5_000), u(15_000, 50_000), u(20_000, 60_000), u(5_000, 20_000)),
            Profile::Zero => (Delay::ZERO, Delay::ZERO, Delay::ZERO, Delay::ZERO),
        };
        let api_call = match profile {
            Profile::Zero => Delay::ZERO,
            _ => Delay::Fixed { ms: 5 },
        };
        Self {
            prepare,
            apply,
            clean,
            dismiss,
            api_call,
            seed,
            realtime_scale: 0.0,
        }
    }

    pub fn delay(&self, phase: Phase) -> Delay {
        match phase {
            Phase::Prepare => self.prepare,
            Phase::Apply => self.apply,
            Phase::Clean => self.clean,
            Phase::Dismiss => self.dismiss,
            Phase::ApiCall => self.api_call,
        }
    }

    /// Delay of the `nth` sample of `phase` within call `call_seq` on
    /// `unit`. A pure function of its arguments and the seed.
    pub fn sample(&self, unit: &UnitId, call_seq: u64, phase: Phase, nth: u32) -> u64 {
        let mut h = DefaultHasher::new();
        (self.seed, unit.as_str(), call_seq, phase, nth).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        self.delay(phase).sample(&mut rng)
    }

    /// Mean of one sample of `phase`, for analytic stage estimates.
    pub fn mean_ms(&self, phase: Phase) -> f64 {
        match self.delay(phase) {
            Delay::Fixed { ms } => ms as f64,
            Delay::Uniform { min_ms, max_ms } => (min_ms + max_ms.max(min_ms)) as f64 / 2.0,
        }
    }

    pub fn realtime(&self, sim_ms: u64) -> Duration {
        if self.realtime_scale <= 0.0 {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(sim_ms as f64 * self.realtime_scale / 1_000.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_and_in_range() {
        let m = LatencyModel::profile(Profile::Vm, 42);
        let u = UnitId::new("mu-0001");
        for call in 0..50 {
            let a = m.sample(&u, call, Phase::Apply, 0);
            assert_eq!(a, m.sample(&u, call, Phase::Apply, 0));
            assert!((15_000..=50_000).contains(&a));
        }
        let other_seed = LatencyModel::profile(Profile::Vm, 43);
        let differs = (0..20).any(|c| m.sample(&u, c, Phase::Apply, 0) != other_seed.sample(&u, c, Phase::Apply, 0));
        assert!(differs);
    }

    #[test]
    fn zero_profile_never_delays() {
        let m = LatencyModel::default();
        assert_eq!(m.sample(&UnitId::new("u"), 3, Phase::Clean, 1), 0);
        assert_eq!(m.realtime(10_000), Duration::ZERO);
    }

    #[test]
    fn profile_parses() {
        assert_eq!("VM".parse::<Profile>().unwrap(), Profile::Vm);
        assert!("cloud".parse::<Profile>().is_err());
    }
}
