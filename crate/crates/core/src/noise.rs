//! Additive noise models normalized to unit second moment.
//!
//! Every model carries its kurtosis parameter `xi = E[Z^4]`, computed
//! analytically from the normalized distribution. Sampling takes an
//! explicit RNG so parallel trials never share mutable state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Uniform,
    Laplace,
    CustomDiscrete,
}

/// Noise as written in configuration files: `{kind, params}`.
///
/// `custom-discrete` takes `(value, probability)` pairs; they are
/// mean-centered and scaled to unit second moment on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum NoiseSpec {
    Gaussian,
    Uniform,
    Laplace,
    CustomDiscrete(Vec<(f64, f64)>),
}

impl NoiseSpec {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseSpec::Gaussian => NoiseKind::Gaussian,
            NoiseSpec::Uniform => NoiseKind::Uniform,
            NoiseSpec::Laplace => NoiseKind::Laplace,
            NoiseSpec::CustomDiscrete(_) => NoiseKind::CustomDiscrete,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sampler {
    Gaussian,
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// Laplace with scale `b`.
    Laplace { b: f64 },
    Discrete { values: Vec<f64>, cumulative: Vec<f64>, probs: Vec<f64> },
}

/// An immutable, unit-power noise distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    xi: f64,
    sampler: Sampler,
}

/// Build a normalized noise model from its configuration.
pub fn make_noise(spec: &NoiseSpec) -> Result<NoiseModel> {
    let (sampler, xi) = match spec {
        NoiseSpec::Gaussian => (Sampler::Gaussian, 3.0),
        NoiseSpec::Uniform => (Sampler::Uniform { half_width: 3f64.sqrt() }, 9.0 / 5.0),
        NoiseSpec::Laplace => (Sampler::Laplace { b: std::f64::consts::FRAC_1_SQRT_2 }, 6.0),
        NoiseSpec::CustomDiscrete(support) => discrete(support)?,
    };
    Ok(NoiseModel { kind: spec.kind(), xi, sampler })
}

fn discrete(support: &[(f64, f64)]) -> Result<(Sampler, f64)> {
    if support.is_empty() {
        return Err(Error::invalid("params", "custom-discrete needs at least one (value, probability) pair"));
    }
    if support.iter().any(|&(v, p)| !v.is_finite() || !p.is_finite() || p < 0.0) {
        return Err(Error::invalid("params", "values must be finite and probabilities non-negative"));
    }
    let total: f64 = support.iter().map(|&(_, p)| p).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("params", format!("probabilities sum to {total}, expected 1")));
    }
    let mean: f64 = support.iter().map(|&(v, p)| v * p).sum();
    let var: f64 = support.iter().map(|&(v, p)| p * (v - mean).powi(2)).sum();
    if var <= 1e-300 {
        return Err(Error::DegenerateNoise);
    }
    let scale = var.sqrt();
    let values: Vec<f64> = support.iter().map(|&(v, _)| (v - mean) / scale).collect();
    let probs: Vec<f64> = support.iter().map(|&(_, p)| p / total).collect();
    let xi: f64 = values.iter().zip(&probs).map(|(v, p)| p * v.powi(4)).sum();
    let mut acc = 0.0;
    let cumulative = probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    Ok((Sampler::Discrete { values, cumulative, probs }, xi))
}

impl NoiseModel {
    pub fn gaussian() -> Self {
        make_noise(&NoiseSpec::Gaussian).expect("gaussian is always valid")
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// Fourth moment `E[Z^4]` of the normalized distribution.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Exact raw moment `E[Z^order]` of the normalized distribution.
    pub fn moment(&self, order: u32) -> f64 {
        let k = order as i32;
        match &self.sampler {
            Sampler::Gaussian => {
                if order % 2 == 1 {
                    0.0
                } else {
                    // (k-1)!!
                    (1..order).step_by(2).map(f64::from).product()
                }
            }
            Sampler::Uniform { half_width } => {
                if order % 2 == 1 {
                    0.0
                } else {
                    half_width.powi(k) / f64::from(order + 1)
                }
            }
            Sampler::Laplace { b } => {
                if order % 2 == 1 {
                    0.0
                } else {
                    b.powi(k) * (1..=order).map(f64::from).product::<f64>()
                }
            }
            Sampler::Discrete { values, probs, .. } => {
                values.iter().zip(probs).map(|(v, p)| p * v.powi(k)).sum()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            Sampler::Gaussian => StandardNormal.sample(rng),
            Sampler::Uniform { half_width } => rng.random_range(-*half_width..*half_width),
            Sampler::Laplace { b } => {
                let e: f64 = Exp1.sample(rng);
                if rng.random::<bool>() {
                    b * e
                } else {
                    -b * e
                }
            }
            Sampler::Discrete { values, cumulative, .. } => {
                let u: f64 = rng.random();
                let idx = cumulative.partition_point(|&c| c <= u).min(values.len() - 1);
                values[idx]
            }
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.sample(rng);
        }
    }
}

/// Monte Carlo estimates of `E[Z^2]`, `E[Z^4]`, `E[Z^6]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub m2: f64,
    pub m4: f64,
    pub m6: f64,
}

pub fn empirical_moments(model: &NoiseModel, n_samples: usize, seed: u64) -> Result<Moments> {
    if n_samples < 1000 {
        return Err(Error::invalid("n_samples", "at least 1000 samples are required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s2, mut s4, mut s6) = (0.0, 0.0, 0.0);
    for _ in 0..n_samples {
        let z2 = model.sample(&mut rng).powi(2);
        s2 += z2;
        s4 += z2 * z2;
        s6 += z2 * z2 * z2;
    }
    let n = n_samples as f64;
    Ok(Moments { m2: s2 / n, m4: s4 / n, m6: s6 / n })
}
