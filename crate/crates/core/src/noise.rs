//! Seeded i.i.d. innovation draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NoiseFamily, NoiseSpec};

/// Innovations `Z_1, ..., Z_len`; `values[k - 1]` holds `Z_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraw {
    pub values: Vec<f64>,
    pub seed: u64,
    pub spec: NoiseSpec,
}

impl NoiseDraw {
    /// `Z_k` for `k >= 1`.
    pub fn z(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn rng_from_seed(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn generate_noise(spec: &NoiseSpec, length: usize, seed: u64) -> Result<NoiseDraw> {
    spec.validate()?;
    if length == 0 {
        return Err(Error::BadSpec("noise length must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let values = sample_into(spec, length, &mut rng)?;
    Ok(NoiseDraw {
        values,
        seed,
        spec: *spec,
    })
}

pub(crate) fn sample_into<R: Rng>(spec: &NoiseSpec, length: usize, rng: &mut R) -> Result<Vec<f64>> {
    let sigma = spec.sigma();
    let values = match spec.family {
        NoiseFamily::Gaussian => (0..length)
            .map(|_| {
                let s: f64 = StandardNormal.sample(rng);
                sigma * s
            })
            .collect::<Vec<f64>>(),
        NoiseFamily::Rademacher => (0..length)
            .map(|_| if rng.random::<bool>() { sigma } else { -sigma })
            .collect(),
        NoiseFamily::UniformCentered => {
            // U(-a, a) has variance a^2 / 3
            let a = sigma * 3f64.sqrt();
            (0..length).map(|_| rng.random_range(-a..a)).collect()
        }
        NoiseFamily::StudentT { nu } => {
            let t = StudentT::new(nu).map_err(|e| Error::BadSpec(e.to_string()))?;
            let scale = sigma * ((nu - 2.0) / nu).sqrt();
            (0..length).map(|_| scale * t.sample(rng)).collect()
        }
    };
    Ok(values)
}
