//! Channel estimation model and the pairwise spoofing test.
//!
//! Two frames claiming the same identity are compared after removing the
//! unknown common phase rotation between them. Under the same-transmitter
//! hypothesis the normalized distance is (approximately) central
//! chi-square with `S = 2 N_T N_R M` degrees of freedom; a different
//! transmitter makes it noncentral.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, NumericsError, Probability};
use crate::raychannel::{ChannelError, ChannelResponse, ToneGrid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("invalid radio config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("noise variance is zero; the test statistic is undefined")]
    ZeroNoise,
    #[error("response lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("ensemble is empty")]
    EmptyEnsemble,
    #[error("gain unbounded: multi-antenna miss rate is zero")]
    GainUnbounded,
    #[error("false alarm target must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

type Result<T> = std::result::Result<T, DetectorError>;

/// Thermal noise density at 290 K in mW/Hz (about -174 dBm/Hz).
pub const THERMAL_NOISE_DENSITY_290K: f64 = 4.004e-18;

/// All link and test parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub num_tones: usize,
    pub system_bandwidth_hz: f64,
    pub subband_bandwidth_hz: f64,
    pub center_freq_hz: f64,
    pub tx_power_per_tone_mw: f64,
    pub noise_figure_linear: f64,
    pub thermal_noise_density_mw_per_hz: f64,
    pub false_alarm_target: f64,
}

impl Default for RadioConfig {
    /// SISO, 5 tones over 20 MHz at 5 GHz, b = 0.25 MHz, P_T = 1 mW,
    /// N_F = 10, alpha = 0.01.
    fn default() -> Self {
        RadioConfig {
            n_tx: 1,
            n_rx: 1,
            num_tones: 5,
            system_bandwidth_hz: 20e6,
            subband_bandwidth_hz: 0.25e6,
            center_freq_hz: 5e9,
            tx_power_per_tone_mw: 1.0,
            noise_figure_linear: 10.0,
            thermal_noise_density_mw_per_hz: THERMAL_NOISE_DENSITY_290K,
            false_alarm_target: 0.01,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(DetectorError::InvalidConfig { field, reason });
        for (field, v) in [("n_tx", self.n_tx), ("n_rx", self.n_rx), ("num_tones", self.num_tones)] {
            if v == 0 {
                return bad(field, "must be at least 1".into());
            }
        }
        for (field, v) in [
            ("system_bandwidth_hz", self.system_bandwidth_hz),
            ("subband_bandwidth_hz", self.subband_bandwidth_hz),
            ("center_freq_hz", self.center_freq_hz),
            ("tx_power_per_tone_mw", self.tx_power_per_tone_mw),
            ("noise_figure_linear", self.noise_figure_linear),
            ("thermal_noise_density_mw_per_hz", self.thermal_noise_density_mw_per_hz),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(field, format!("must be positive and finite, got {v}"));
            }
        }
        if !(self.false_alarm_target > 0.0 && self.false_alarm_target < 1.0) {
            return bad(
                "false_alarm_target",
                format!("must lie in (0, 1), got {}", self.false_alarm_target),
            );
        }
        // b <= W/M, with a few ulps of slack so W = M b survives rounding.
        let per_tone = self.system_bandwidth_hz / self.num_tones as f64;
        if self.subband_bandwidth_hz > per_tone * (1.0 + 1e-12) {
            return bad(
                "subband_bandwidth_hz",
                format!(
                    "b = {} Hz exceeds W/M = {} Hz (W = {}, M = {})",
                    self.subband_bandwidth_hz, per_tone, self.system_bandwidth_hz, self.num_tones
                ),
            );
        }
        self.tone_grid()?;
        Ok(())
    }

    pub fn tone_grid(&self) -> Result<ToneGrid> {
        Ok(ToneGrid::new(
            self.center_freq_hz,
            self.system_bandwidth_hz,
            self.num_tones,
        )?)
    }

    /// Number of complex entries in one channel response.
    pub fn response_len(&self) -> usize {
        self.n_tx * self.n_rx * self.num_tones
    }

    pub fn alpha(&self) -> Result<Probability> {
        Probability::new(self.false_alarm_target).map_err(|_| DetectorError::InvalidAlpha(self.false_alarm_target))
    }
}

/// Receiver noise level for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Variance of each complex noise entry, normalized to the per-antenna
    /// transmit power.
    pub sigma_sq: f64,
    /// `P_N = kT N_F b`, in mW.
    pub noise_power_per_tone_mw: f64,
}

/// `P_N = kT N_F b` and `sigma^2 = N_T P_N / P_T`.
pub fn noise_variance(config: &RadioConfig) -> Result<NoiseModel> {
    config.validate()?;
    let p_n = config.thermal_noise_density_mw_per_hz * config.noise_figure_linear * config.subband_bandwidth_hz;
    Ok(NoiseModel {
        sigma_sq: config.n_tx as f64 * p_n / config.tx_power_per_tone_mw,
        noise_power_per_tone_mw: p_n,
    })
}

/// Per-tone estimation SNR over an ensemble of responses:
/// `P_T mean(|H|^2) / (P_N N_T^2 N_R M)`.
pub fn per_tone_snr(config: &RadioConfig, ensemble: &[ChannelResponse]) -> Result<f64> {
    let noise = noise_variance(config)?;
    if ensemble.is_empty() {
        return Err(DetectorError::EmptyEnsemble);
    }
    let expected = config.response_len();
    let mut total = 0.0;
    for h in ensemble {
        if h.len() != expected {
            return Err(DetectorError::LengthMismatch(h.len(), expected));
        }
        total += h.norm_sqr();
    }
    let mean = total / ensemble.len() as f64;
    let nt = config.n_tx as f64;
    Ok(config.tx_power_per_tone_mw * mean
        / (noise.noise_power_per_tone_mw * nt * nt * config.n_rx as f64 * config.num_tones as f64))
}

/// A noisy, phase-rotated channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatedResponse {
    pub gains: Vec<Complex64>,
    /// Rotation applied when the estimate was drawn; tests only.
    pub true_phase_used: f64,
}

impl EstimatedResponse {
    pub fn from_gains(gains: Vec<Complex64>) -> Self {
        EstimatedResponse {
            gains,
            true_phase_used: 0.0,
        }
    }

    /// Multiplies every entry by `exp(j psi)`.
    pub fn rotated(&self, psi: f64) -> Self {
        let r = Complex64::from_polar(1.0, psi);
        EstimatedResponse {
            gains: self.gains.iter().map(|g| g * r).collect(),
            true_phase_used: self.true_phase_used + psi,
        }
    }
}

/// Draws `h exp(j phase) + n` with `n` i.i.d. CN(0, sigma^2), i.e. each real
/// and imaginary part N(0, sigma^2 / 2). Deterministic in `rng_seed`.
pub fn estimate_channel(h: &ChannelResponse, phase: f64, noise: &NoiseModel, rng_seed: u64) -> EstimatedResponse {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    estimate_with_rng(h.gains(), phase, noise.sigma_sq, &mut rng)
}

pub(crate) fn estimate_with_rng<R: rand::Rng>(
    h: &[Complex64],
    phase: f64,
    sigma_sq: f64,
    rng: &mut R,
) -> EstimatedResponse {
    let rot = Complex64::from_polar(1.0, phase);
    let scale = (sigma_sq / 2.0).sqrt();
    let gains = h
        .iter()
        .map(|&g| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            g * rot + Complex64::new(scale * re, scale * im)
        })
        .collect();
    EstimatedResponse {
        gains,
        true_phase_used: phase,
    }
}

/// Result of the phase alignment between two responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    pub angle: f64,
    /// Set when the inner product is exactly zero and every angle is optimal.
    pub undefined: bool,
}

fn inner(h1: &[Complex64], h2: &[Complex64]) -> Complex64 {
    h1.iter().zip(h2).map(|(a, b)| a * b.conj()).sum()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(DetectorError::LengthMismatch(a, b));
    }
    Ok(())
}

/// `Arg(sum_k h1_k conj(h2_k))`, the minimizer of `|h1 - h2 exp(jx)|` over x.
pub fn rotation_between(h1: &[Complex64], h2: &[Complex64]) -> Result<Rotation> {
    check_lengths(h1.len(), h2.len())?;
    let ip = inner(h1, h2);
    if ip == Complex64::new(0.0, 0.0) {
        return Ok(Rotation {
            angle: 0.0,
            undefined: true,
        });
    }
    Ok(Rotation {
        angle: ip.arg(),
        undefined: false,
    })
}

pub fn optimal_rotation(h1: &EstimatedResponse, h2: &EstimatedResponse) -> Result<Rotation> {
    rotation_between(&h1.gains, &h2.gains)
}

/// `|h1 - h2 exp(j phi)|^2`.
pub fn rotated_distance_sqr(h1: &[Complex64], h2: &[Complex64], phi: f64) -> f64 {
    let r = Complex64::from_polar(1.0, phi);
    h1.iter().zip(h2).map(|(a, b)| (a - b * r).norm_sqr()).sum()
}

fn aligned_distance(h1: &[Complex64], h2: &[Complex64], noise: &NoiseModel) -> Result<f64> {
    if !(noise.sigma_sq > 0.0) {
        return Err(DetectorError::ZeroNoise);
    }
    let rot = rotation_between(h1, h2)?;
    Ok(rotated_distance_sqr(h1, h2, rot.angle) / noise.sigma_sq)
}

/// `L = |h1 - h2 exp(j phi)|^2 / sigma^2` at the optimal rotation.
pub fn test_statistic(h1: &EstimatedResponse, h2: &EstimatedResponse, noise: &NoiseModel) -> Result<f64> {
    aligned_distance(&h1.gains, &h2.gains, noise)
}

/// `S = 2 N_T N_R M`.
pub fn degrees_of_freedom(config: &RadioConfig) -> u32 {
    (2 * config.n_tx * config.n_rx * config.num_tones) as u32
}

/// Threshold `k` with `Pr(L > k | H0) = alpha`.
pub fn threshold_for_alpha(alpha: Probability, dof: u32) -> Result<f64> {
    let a = alpha.value();
    if !(a > 0.0 && a < 1.0) {
        return Err(DetectorError::InvalidAlpha(a));
    }
    Ok(numerics::chi2_inv_cdf(alpha.complement(), dof)?)
}

/// Noncentrality of the test statistic between two true (noiseless) channels.
///
/// The arguments are put in a fixed order first, so swapping them gives a
/// bit-identical result.
pub fn noncentrality(h1: &ChannelResponse, h2: &ChannelResponse, noise: &NoiseModel) -> Result<f64> {
    let (a, b) = (h1.gains(), h2.gains());
    let key = |g: &Complex64| (g.re.to_bits(), g.im.to_bits());
    if a.iter().map(key).lt(b.iter().map(key)) {
        aligned_distance(b, a, noise)
    } else {
        aligned_distance(a, b, noise)
    }
}

/// Miss rate at false-alarm rate `alpha`: noncentral CDF at the H0 threshold.
pub fn analytic_miss_rate(alpha: Probability, dof: u32, mu: f64) -> Result<Probability> {
    let k = threshold_for_alpha(alpha, dof)?;
    Ok(numerics::noncentral_chi2_cdf(k, dof, mu)?)
}

/// Relative miss-rate reduction of a multi-antenna setup over SISO.
/// Negative when the multi-antenna setup is worse.
pub fn security_gain(beta_siso: Probability, beta_mimo: Probability) -> Result<f64> {
    if beta_mimo.value() == 0.0 {
        return Err(DetectorError::GainUnbounded);
    }
    Ok((beta_siso.value() - beta_mimo.value()) / beta_mimo.value())
}

/// Outcome of one pairwise test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub threshold: f64,
    pub spoof_flagged: bool,
}

/// A configured test with its noise level and threshold precomputed.
#[derive(Debug, Clone, Copy)]
pub struct Detector {
    pub config: RadioConfig,
    pub noise: NoiseModel,
    pub dof: u32,
    pub threshold: f64,
}

impl Detector {
    pub fn new(config: &RadioConfig) -> Result<Self> {
        let noise = noise_variance(config)?;
        let dof = degrees_of_freedom(config);
        let threshold = threshold_for_alpha(config.alpha()?, dof)?;
        Ok(Detector {
            config: *config,
            noise,
            dof,
            threshold,
        })
    }

    /// Flags a spoof when `L > k`.
    pub fn decide(&self, h1: &EstimatedResponse, h2: &EstimatedResponse) -> Result<TestOutcome> {
        let expected = self.config.response_len();
        check_lengths(h1.gains.len(), expected)?;
        check_lengths(h2.gains.len(), expected)?;
        let statistic = test_statistic(h1, h2, &self.noise)?;
        Ok(TestOutcome {
            statistic,
            threshold: self.threshold,
            spoof_flagged: statistic > self.threshold,
        })
    }

    pub fn miss_rate(&self, mu: f64) -> Result<Probability> {
        Ok(numerics::noncentral_chi2_cdf(self.threshold, self.dof, mu)?)
    }
}

pub fn decide(h1: &EstimatedResponse, h2: &EstimatedResponse, config: &RadioConfig) -> Result<TestOutcome> {
    Detector::new(config)?.decide(h1, h2)
}

/// Uniform phase on `[0, 2 pi)`.
pub(crate) fn uniform_phase<R: rand::Rng>(rng: &mut R) -> f64 {
    rng.random::<f64>() * 2.0 * PI
}
