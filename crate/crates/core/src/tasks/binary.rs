use rand::seq::index;
use rand::Rng as _;

use super::{build_schedule, Degradation, TaskConfig};
use crate::error::{Error, Result};
use crate::plastic::EpisodeSpec;
use crate::rng::Rng;

/// Random `±1` patterns, presented in shuffled blocks, then one of them with
/// `floor(n/2)` positions zeroed. The target is the intact pattern.
pub fn gen_binary_episode(cfg: &TaskConfig, rng: &mut Rng) -> Result<EpisodeSpec> {
    cfg.validate()?;
    if cfg.degradation != Degradation::HalfBitsZeroRandom {
        return Err(Error::Config("binary episodes use half-bits degradation".into()));
    }
    let n = cfg.n_elements;
    let patterns: Vec<Vec<f64>> = (0..cfg.n_patterns)
        .map(|_| (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect())
        .collect();
    let pick = rng.random_range(0..cfg.n_patterns);
    let mut mask = vec![true; n];
    for k in index::sample(rng, n, n / 2) {
        mask[k] = false;
    }
    let probe: Vec<f64> = patterns[pick]
        .iter()
        .zip(&mask)
        .map(|(&v, &m)| if m { v } else { 0.0 })
        .collect();
    let target = patterns[pick].clone();
    Ok(build_schedule(cfg, &patterns, &probe, &mask, &target, rng))
}
