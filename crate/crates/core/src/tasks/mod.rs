//! Pattern-memorisation episodes: random binary patterns and grayscale
//! image completion.
//!
//! A network for a task with `n_elements` pattern positions has
//! `n_elements + 1` neurons. The last one is the bias neuron, clamped to 1
//! at every step and excluded from the error metric.

mod binary;
mod images;
mod pgm;

pub use binary::gen_binary_episode;
pub use images::{
    gen_image_episode, gen_synthetic_images, load_images, neighbour_correlation, normalize_image, ImageStore, Split,
};
pub use pgm::{read_pgm, write_pgm};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plastic::{EpisodeSpec, StepInput};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Degradation {
    /// Zero a uniformly chosen `floor(n/2)` positions.
    HalfBitsZeroRandom,
    /// Zero the top or the bottom half of a square image.
    HalfFieldTopOrBottom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub n_elements: usize,
    pub n_patterns: usize,
    pub presentations: usize,
    pub show_steps: usize,
    pub gap_steps: usize,
    pub test_steps: usize,
    pub degradation: Degradation,
    pub rng_seed: u64,
}

impl TaskConfig {
    /// 1000 bits, 5 patterns shown 3 times for 10 steps with 3-step gaps.
    /// The probe is shown for 3 steps: neurons that are not clamped by the
    /// probe only see it from the second probe step on.
    pub fn binary_full() -> Self {
        TaskConfig {
            n_elements: 1000,
            n_patterns: 5,
            presentations: 3,
            show_steps: 10,
            gap_steps: 3,
            test_steps: 3,
            degradation: Degradation::HalfBitsZeroRandom,
            rng_seed: 0,
        }
    }

    /// 50 bits, 2 patterns, 3-step presentations.
    pub fn binary_small() -> Self {
        TaskConfig {
            n_elements: 50,
            n_patterns: 2,
            show_steps: 3,
            ..TaskConfig::binary_full()
        }
    }

    /// 3 images of `side x side` pixels shown 3 times for 20 steps, 3-step
    /// gaps, 3-step test.
    pub fn images(side: usize) -> Self {
        TaskConfig {
            n_elements: side * side,
            n_patterns: 3,
            presentations: 3,
            show_steps: 20,
            gap_steps: 3,
            test_steps: 3,
            degradation: Degradation::HalfFieldTopOrBottom,
            rng_seed: 0,
        }
    }

    /// Neurons needed, bias included.
    pub fn network_size(&self) -> usize {
        self.n_elements + 1
    }

    pub fn bias_index(&self) -> usize {
        self.n_elements
    }

    pub fn episode_len(&self) -> usize {
        self.presentations * self.n_patterns * (self.show_steps + self.gap_steps) + self.test_steps
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_elements", self.n_elements),
            ("n_patterns", self.n_patterns),
            ("presentations", self.presentations),
            ("show_steps", self.show_steps),
            ("test_steps", self.test_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("task.{name} must be positive")));
            }
        }
        if self.n_elements < 2 {
            return Err(Error::Config("task.n_elements must be at least 2".into()));
        }
        if self.degradation == Degradation::HalfFieldTopOrBottom {
            let side = self.image_side().ok_or_else(|| {
                Error::Config(format!(
                    "task.n_elements = {} is not the square of an even side",
                    self.n_elements
                ))
            })?;
            debug_assert_eq!(side * side, self.n_elements);
        }
        Ok(())
    }

    /// Side of the square image implied by `n_elements`, if it is an even
    /// perfect square.
    pub fn image_side(&self) -> Option<usize> {
        let side = (self.n_elements as f64).sqrt().round() as usize;
        (side * side == self.n_elements && side.is_multiple_of(2)).then_some(side)
    }
}

/// Builds the presentation schedule shared by both tasks: each block shows
/// every pattern once in a fresh random order for `show_steps`, each
/// followed by `gap_steps` steps with no pattern input; then the degraded
/// probe for `test_steps`. `probe_mask[k]` says which probe positions are
/// clamped. The bias neuron is clamped throughout.
pub(crate) fn build_schedule(
    cfg: &TaskConfig,
    patterns: &[Vec<f64>],
    probe: &[f64],
    probe_mask: &[bool],
    target: &[f64],
    rng: &mut Rng,
) -> EpisodeSpec {
    let n = cfg.network_size();
    let bias = cfg.bias_index();
    let shown = |p: &[f64], mask: Option<&[bool]>| {
        let mut s = StepInput::free(n);
        for k in 0..cfg.n_elements {
            if mask.is_none_or(|m| m[k]) {
                s.clamp_mask[k] = true;
                s.clamp_values[k] = p[k];
            }
        }
        s.with_bias(bias)
    };
    let gap = StepInput::free(n).with_bias(bias);
    let mut steps = Vec::with_capacity(cfg.episode_len());
    let mut order: Vec<usize> = (0..patterns.len()).collect();
    for _ in 0..cfg.presentations {
        order.shuffle(rng);
        for &i in &order {
            let s = shown(&patterns[i], None);
            steps.extend(std::iter::repeat_n(s, cfg.show_steps));
            steps.extend(std::iter::repeat_n(gap.clone(), cfg.gap_steps));
        }
    }
    let p = shown(probe, Some(probe_mask));
    steps.extend(std::iter::repeat_n(p, cfg.test_steps));
    let mut full_target = target.to_vec();
    full_target.push(1.0);
    EpisodeSpec {
        steps,
        target: full_target,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_lengths() {
        assert_eq!(TaskConfig::binary_full().episode_len(), 3 * 5 * 13 + 3);
        assert_eq!(TaskConfig::binary_small().episode_len(), 3 * 2 * 6 + 3);
        assert_eq!(TaskConfig::images(32).episode_len(), 210);
        assert_eq!(TaskConfig::binary_full().network_size(), 1001);
    }

    #[test]
    fn validation() {
        assert!(TaskConfig::images(32).validate().is_ok());
        let mut c = TaskConfig::images(32);
        c.n_elements = 1000;
        assert!(c.validate().is_err());
        let mut c = TaskConfig::binary_small();
        c.n_patterns = 0;
        assert!(c.validate().is_err());
        c = TaskConfig::binary_small();
        c.n_elements = 1;
        assert!(c.validate().is_err());
    }
}
