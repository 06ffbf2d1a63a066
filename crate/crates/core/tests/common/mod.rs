#![allow(dead_code)]

use chanauth::detector::{estimate_channel, test_statistic, NoiseModel, RadioConfig};
use chanauth::experiment::ScenarioGrid;
use chanauth::raychannel::{ChannelResponse, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(mut sample: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Fraction of `draws` sums of `dof` squared unit normals (the first one
/// shifted by `sqrt(mu)`) that fall at or below `x`.
pub fn noncentral_chi2_mc(x: f64, dof: u32, mu: f64, draws: u64, seed: u64) -> f64 {
    const CHUNK: u64 = 100_000;
    let shift = mu.sqrt();
    let chunks = draws.div_ceil(CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
            let n = CHUNK.min(draws - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let mut s = (z + shift) * (z + shift);
                for _ in 1..dof {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s += z * z;
                }
                hits += (s <= x) as u64;
            }
            hits
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    hits as f64 / draws as f64
}

/// A desk-scale channel for `cfg` at a fixed interior point.
pub fn desk_channel(cfg: &RadioConfig, point: Vec3) -> ChannelResponse {
    ScenarioGrid::desk_scale().channel(point, cfg).unwrap()
}

/// Test statistics of `trials` same-transmitter frame pairs, each frame
/// with its own uniform phase and noise draw.
pub fn h0_statistics(h: &ChannelResponse, noise: &NoiseModel, trials: u64, seed: u64) -> Vec<f64> {
    (0..trials)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t));
            let p1 = rng.random::<f64>() * std::f64::consts::TAU;
            let p2 = rng.random::<f64>() * std::f64::consts::TAU;
            let e1 = estimate_channel(h, p1, noise, rng.random());
            let e2 = estimate_channel(h, p2, noise, rng.random());
            test_statistic(&e1, &e2, noise).unwrap()
        })
        .collect()
}
