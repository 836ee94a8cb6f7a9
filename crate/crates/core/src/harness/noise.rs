//! A grounder wrapper that perturbs scores, for robustness experiments.

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grounding::{Grounder, GroundingError, GroundingRequest, GroundingResponse};

/// Moves every score `u ~ U[0, eps]` toward 0.5 (down if the score is at
/// least 0.5, up otherwise). The noise is a deterministic function of the
/// seed and the request, so repeated calls agree.
#[derive(Debug, Clone)]
pub struct NoisyGrounder<G> {
    inner: G,
    eps: f64,
    seed: u64,
}

impl<G: Grounder> NoisyGrounder<G> {
    pub fn new(inner: G, eps: f64, seed: u64) -> Self {
        NoisyGrounder {
            inner,
            eps: eps.clamp(0.0, 0.5),
            seed,
        }
    }

    fn rng_for(&self, request: &GroundingRequest) -> ChaCha8Rng {
        let mut h = DefaultHasher::new();
        self.seed.hash(&mut h);
        serde_json::to_string(request)
            .unwrap_or_default()
            .hash(&mut h);
        ChaCha8Rng::seed_from_u64(h.finish())
    }
}

impl<G: Grounder> Grounder for NoisyGrounder<G> {
    fn object_count(&self) -> usize {
        self.inner.object_count()
    }

    fn ground(&self, request: &GroundingRequest) -> Result<GroundingResponse, GroundingError> {
        match self.inner.ground(request)? {
            GroundingResponse::Scores(scores) => {
                let mut rng = self.rng_for(request);
                Ok(GroundingResponse::Scores(
                    scores
                        .into_iter()
                        .map(|s| {
                            let u = rng.gen_range(0.0..=self.eps);
                            if s >= 0.5 {
                                s - u
                            } else {
                                s + u
                            }
                        })
                        .collect(),
                ))
            }
            other => Ok(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grounding::{Arity, OracleGrounder};

    #[test]
    fn perturbs_within_bounds_and_repeats() {
        let scene = crate::harness::gen_scene(2, 6).unwrap();
        let g = NoisyGrounder::new(OracleGrounder::new(scene.clone()), 0.2, 9);
        let clean = OracleGrounder::new(scene)
            .score("red", Arity::Object)
            .unwrap();
        let noisy = g.score("red", Arity::Object).unwrap();
        assert_eq!(noisy, g.score("red", Arity::Object).unwrap());
        for (c, n) in clean.iter().zip(&noisy) {
            assert!((c - n).abs() <= 0.2);
            assert_eq!(*c >= 0.5, *n >= 0.5);
        }
    }
}
