//! Quasi-static charge noise.
//!
//! Every realisation has its own generator keyed on `(seed, iteration, index)`,
//! so any subset of an ensemble can be drawn on any thread in any order.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ExchangePair;

/// Fractional offsets `(δ12, δ23)` for one device realisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExchangeNoise {
    pub delta12: f64,
    pub delta23: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// One three-spin qubit.
    Single,
    /// Two independently driven qubits.
    TwoQubit,
    /// One offset per √SWAP of the CX sequence.
    Cx,
}

impl NoiseMode {
    pub fn offsets_per_realisation(self) -> usize {
        match self {
            NoiseMode::Single | NoiseMode::Cx => 2,
            NoiseMode::TwoQubit => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseRealisation {
    Single(ExchangeNoise),
    Pair(ExchangeNoise, ExchangeNoise),
    Swap([f64; 2]),
}

impl NoiseRealisation {
    pub fn zero(mode: NoiseMode) -> Self {
        match mode {
            NoiseMode::Single => NoiseRealisation::Single(ExchangeNoise::default()),
            NoiseMode::TwoQubit => NoiseRealisation::Pair(ExchangeNoise::default(), ExchangeNoise::default()),
            NoiseMode::Cx => NoiseRealisation::Swap([0.0; 2]),
        }
    }

    pub fn offsets(&self) -> Vec<f64> {
        match self {
            NoiseRealisation::Single(n) => vec![n.delta12, n.delta23],
            NoiseRealisation::Pair(a, b) => vec![a.delta12, a.delta23, b.delta12, b.delta23],
            NoiseRealisation::Swap(d) => d.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub sigma: f64,
    pub n_real: usize,
    pub seed: u64,
    pub iteration: u64,
}

impl EnsembleSpec {
    pub fn new(sigma: f64, n_real: usize, seed: u64, iteration: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("noise amplitude must be a finite value >= 0, got {sigma}")));
        }
        if n_real == 0 {
            return Err(Error::Domain("ensemble needs at least one realisation".into()));
        }
        Ok(Self { sigma, n_real, seed, iteration })
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_key(seed: u64, iteration: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ iteration) ^ index)
}

/// The `index`-th member of the ensemble described by `spec`.
pub fn draw_realisation(spec: &EnsembleSpec, mode: NoiseMode, index: usize) -> NoiseRealisation {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(spec.seed, spec.iteration, index as u64));
    let sigma = spec.sigma;
    let mut next = || {
        let z: f64 = StandardNormal.sample(&mut rng);
        if sigma == 0.0 {
            0.0
        } else {
            sigma * z
        }
    };
    match mode {
        NoiseMode::Single => NoiseRealisation::Single(ExchangeNoise { delta12: next(), delta23: next() }),
        NoiseMode::TwoQubit => {
            let a = ExchangeNoise { delta12: next(), delta23: next() };
            let b = ExchangeNoise { delta12: next(), delta23: next() };
            NoiseRealisation::Pair(a, b)
        }
        NoiseMode::Cx => {
            let d0 = next();
            NoiseRealisation::Swap([d0, next()])
        }
    }
}

pub fn draw_ensemble(spec: &EnsembleSpec, mode: NoiseMode) -> Vec<NoiseRealisation> {
    (0..spec.n_real).map(|i| draw_realisation(spec, mode, i)).collect()
}

/// `J → J·(1+δ)`, clamped at zero.
pub fn apply_noise(j: ExchangePair, r: &ExchangeNoise) -> ExchangePair {
    ExchangePair { j12: scale_coupling(j.j12, r.delta12), j23: scale_coupling(j.j23, r.delta23) }
}

pub(crate) fn noise_factor(delta: f64) -> f64 {
    (1.0 + delta).max(0.0)
}

fn scale_coupling(j: f64, delta: f64) -> f64 {
    (j * noise_factor(delta)).max(0.0)
}
