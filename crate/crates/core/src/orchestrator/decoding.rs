use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::generator::DecodingProfile;
use crate::error::{Error, Result};

pub fn default_profiles() -> Vec<DecodingProfile> {
    let p = |name: &str, temperature, top_p| DecodingProfile {
        name: name.into(),
        temperature,
        top_p,
    };
    vec![
        p("conservative", 0.2, 0.9),
        p("default", 0.7, 0.95),
        p("exploratory", 1.0, 1.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta: f64,
}

/// Thompson sampling over decoding profiles with Beta posteriors fed by
/// pseudo-success values.
#[derive(Debug, Clone)]
pub struct DecodingBandit {
    profiles: Vec<DecodingProfile>,
    posteriors: Vec<BetaPosterior>,
    rng: ChaCha8Rng,
}

impl DecodingBandit {
    pub fn new(profiles: Vec<DecodingProfile>, seed: u64) -> Self {
        let posteriors = profiles
            .iter()
            .map(|_| BetaPosterior { alpha: 1.0, beta: 1.0 })
            .collect();
        Self {
            profiles,
            posteriors,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn profiles(&self) -> &[DecodingProfile] {
        &self.profiles
    }

    pub fn posteriors(&self) -> &[BetaPosterior] {
        &self.posteriors
    }

    /// Index of the profile with the largest posterior draw.
    pub fn select(&mut self) -> Result<usize> {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, post) in self.posteriors.iter().enumerate() {
            let draw = Beta::new(post.alpha, post.beta)
                .map_err(|e| Error::NumericalFailure(e.to_string()))?
                .sample(&mut self.rng);
            if draw > best.1 {
                best = (i, draw);
            }
        }
        Ok(best.0)
    }

    /// Fractional pseudo-counts `w * s` and `w * (1 - s)`.
    pub fn update(&mut self, profile: usize, pseudo_success: f64, weight: f64) -> Result<()> {
        if weight < 0.0 || weight.is_nan() {
            return Err(Error::NegativeWeight(weight));
        }
        if !(0.0..=1.0).contains(&pseudo_success) {
            return Err(Error::OutOfRange(pseudo_success * 2.0 - 1.0));
        }
        let post = self
            .posteriors
            .get_mut(profile)
            .ok_or_else(|| Error::InvalidConfig(format!("no decoding profile {profile}")))?;
        post.alpha += weight * pseudo_success;
        post.beta += weight * (1.0 - pseudo_success);
        Ok(())
    }
}
