//! Batch uncertainty harness: Gaussian parameter replicas and scalar grids,
//! with a portable seedable RNG so results are reproducible anywhere.

use crate::deck::{assign_target, resolve_target, target_bounds, SimulationDeck, SweepMode, SweepSpec};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep target `{0}` does not resolve in the deck")]
    TargetNotFound(String),
    #[error("sweep target `{0}`: 1000 redraws all violated physical bounds")]
    RedrawExhausted(String),
    #[error("ensemble runs do not share report times")]
    MismatchedTimes,
}

/// SplitMix64: tiny, seedable, portable. Used for all sweep draws.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in (0, 1): never returns 0, so Box-Muller's log is safe.
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 1.0) / (9007199254740992.0 + 1.0)
    }

    /// Standard normal via Box-Muller (first of the pair only, for a fixed
    /// draws-per-value accounting that is order-independent).
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Per-replica derived seed, so replicas can be generated or executed in any
/// order without changing their draws.
pub fn replica_seed(seed: u64, replica: usize) -> u64 {
    let mut mix = SplitMix64::new(seed ^ (replica as u64).wrapping_mul(0x9e3779b97f4a7c15));
    mix.next_u64()
}

/// Expand a deck into its sweep replicas. Gaussian mode perturbs every target
/// around its deck value; grid mode assigns each listed value to the target.
pub fn generate_replicas(deck: &SimulationDeck, spec: &SweepSpec) -> Result<Vec<SimulationDeck>, SweepError> {
    for t in &spec.targets {
        if resolve_target(deck, t).is_none() {
            return Err(SweepError::TargetNotFound(t.clone()));
        }
    }
    match spec.mode {
        SweepMode::Grid => {
            let mut out = Vec::with_capacity(spec.values.len());
            for &v in &spec.values {
                let mut d = deck.clone();
                d.sweep = None;
                for t in &spec.targets {
                    if !assign_target(&mut d, t, v) {
                        return Err(SweepError::TargetNotFound(t.clone()));
                    }
                }
                out.push(d);
            }
            Ok(out)
        }
        SweepMode::Gaussian => {
            let mut out = Vec::with_capacity(spec.replicas);
            for r in 0..spec.replicas {
                let mut rng = SplitMix64::new(replica_seed(spec.seed, r));
                let mut d = deck.clone();
                d.sweep = None;
                for t in &spec.targets {
                    let mean = resolve_target(deck, t).expect("checked above");
                    let std = spec.rel_std * mean.abs();
                    let (lo, hi) = target_bounds(t);
                    let mut value = mean;
                    if std > 0.0 {
                        let mut ok = false;
                        for _ in 0..1000 {
                            let draw = mean + std * rng.next_gaussian();
                            if draw > lo && draw < hi {
                                value = draw;
                                ok = true;
                                break;
                            }
                        }
                        if !ok {
                            return Err(SweepError::RedrawExhausted(t.clone()));
                        }
                    }
                    if !assign_target(&mut d, t, value) {
                        return Err(SweepError::TargetNotFound(t.clone()));
                    }
                }
                out.push(d);
            }
            Ok(out)
        }
    }
}

/// Pointwise mean and population standard deviation over replica series.
/// Every series must share the same sample times.
pub fn summarize_ensemble(
    series: &[Vec<(f64, f64)>],
) -> Result<Vec<(f64, f64, f64)>, SweepError> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    for s in series.iter().skip(1) {
        if s.len() != first.len() || s.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(SweepError::MismatchedTimes);
        }
    }
    let n = series.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for k in 0..first.len() {
        let t = first[k].0;
        let mean = series.iter().map(|s| s[k].1).sum::<f64>() / n;
        let var = series.iter().map(|s| (s[k].1 - mean).powi(2)).sum::<f64>() / n;
        out.push((t, mean, var.sqrt()));
    }
    Ok(out)
}
