//! Grid placement, pair enumeration, miss-rate averaging and sweeps.
//!
//! Every grid point is a candidate transmitter talking to one access point.
//! For each unordered pair of points the analytic miss rate is computed
//! from the noncentrality between their channels; averaging over all pairs
//! gives one point on a miss-rate curve. Pair work runs on the ambient
//! rayon pool and is reduced in pair order, so results do not depend on
//! the number of workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{self, Detector, DetectorError, RadioConfig};
use crate::numerics::Probability;
use crate::raychannel::{self, AntennaArray, BuildingBox, ChannelError, ChannelResponse, Vec3};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("need at least 2 points to form a pair, got {0}")]
    TooFewPoints(usize),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("sweep point {parameter} = {value}: {source}")]
    InvalidPoint {
        parameter: SweepParameter,
        value: f64,
        #[source]
        source: DetectorError,
    },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// Building, access point and the horizontal grid of candidate transmitters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGrid {
    pub building: BuildingBox,
    pub ap_position: Vec3,
    /// Corner of the transmitter region; only x and y are used.
    pub region_origin: Vec3,
    /// Region size along x and y, in meters.
    pub region_extent_m: (f64, f64),
    pub grid_spacing_m: f64,
    pub tx_height_m: f64,
    /// Highest total reflection count traced per path.
    pub max_order: u32,
    pub array_spacing_m: f64,
    pub array_axis: Vec3,
}

/// Excess loss used by the shipped scenarios. Puts the median per-tone SNR
/// of the full-size grid (P_T = 0.1 mW, b = 0.25 MHz, SISO) close to 16 dB.
pub const CALIBRATED_EXCESS_LOSS_DB: f64 = 18.5;

impl ScenarioGrid {
    /// 30 m x 14 m x 4 m box with a 9 x 9 grid at 1.5 m (81 points).
    pub fn desk_scale() -> Self {
        ScenarioGrid {
            building: BuildingBox {
                length_m: 30.0,
                width_m: 14.0,
                height_m: 4.0,
                reflection_coeff: BuildingBox::DEFAULT_REFLECTION,
                excess_loss_db: CALIBRATED_EXCESS_LOSS_DB,
            },
            ap_position: Vec3::new(12.3, 6.2, 3.0),
            region_origin: Vec3::new(9.0, 1.0, 0.0),
            region_extent_m: (12.0, 12.0),
            grid_spacing_m: 1.5,
            tx_height_m: 2.0,
            max_order: 3,
            array_spacing_m: AntennaArray::DEFAULT_SPACING_M,
            array_axis: AntennaArray::DEFAULT_AXIS,
        }
    }

    /// 120 m x 14 m x 4 m floor, AP at [45.6, 6.2, 3.0], 45 x 9 grid at
    /// 1.5 m (405 points) over a 67 m x 12 m region.
    pub fn full_floor() -> Self {
        ScenarioGrid {
            building: BuildingBox {
                length_m: 120.0,
                ..Self::desk_scale().building
            },
            ap_position: Vec3::new(45.6, 6.2, 3.0),
            region_origin: Vec3::new(12.0, 1.0, 0.0),
            region_extent_m: (67.0, 12.0),
            ..Self::desk_scale()
        }
    }

    /// Points per axis: `floor(extent / spacing) + 1`.
    pub fn grid_shape(&self) -> (usize, usize) {
        // A tiny slack keeps e.g. 0.3 / 0.1 from flooring to 2.
        let n = |extent: f64| (extent / self.grid_spacing_m + 1e-9).floor() as usize + 1;
        (n(self.region_extent_m.0), n(self.region_extent_m.1))
    }

    pub fn validate(&self) -> Result<()> {
        self.building.validate()?;
        let bad = |m: String| Err(ExperimentError::InvalidScenario(m));
        if !(self.grid_spacing_m > 0.0 && self.grid_spacing_m.is_finite()) {
            return bad(format!("grid_spacing_m must be positive, got {}", self.grid_spacing_m));
        }
        let (ex, ey) = self.region_extent_m;
        if !(ex >= 0.0 && ey >= 0.0 && ex.is_finite() && ey.is_finite()) {
            return bad(format!("region extent must be nonnegative, got ({ex}, {ey})"));
        }
        if !(self.tx_height_m > 0.0) {
            return bad(format!("tx_height_m must be positive, got {}", self.tx_height_m));
        }
        if !self.building.contains_strictly(self.ap_position) {
            return bad(format!("access point {} is outside the building", self.ap_position));
        }
        Ok(())
    }

    fn array_at(&self, position: Vec3, elements: usize) -> Result<AntennaArray> {
        Ok(AntennaArray::new(
            position,
            elements,
            self.array_spacing_m,
            self.array_axis,
        )?)
    }

    /// Response from a transmitter at `point` to the access point.
    pub fn channel(&self, point: Vec3, config: &RadioConfig) -> Result<ChannelResponse> {
        let tx = self.array_at(point, config.n_tx)?;
        let rx = self.array_at(self.ap_position, config.n_rx)?;
        Ok(raychannel::channel_matrix(
            &self.building,
            &tx,
            &rx,
            &config.tone_grid()?,
            self.max_order,
        )?)
    }
}

/// Row-major grid (x fastest) at the transmitter height.
pub fn grid_points(scenario: &ScenarioGrid) -> Result<Vec<Vec3>> {
    scenario.validate()?;
    let (nx, ny) = scenario.grid_shape();
    let s = scenario.grid_spacing_m;
    let o = scenario.region_origin;
    let mut pts = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let p = Vec3::new(o.x + ix as f64 * s, o.y + iy as f64 * s, scenario.tx_height_m);
            if !scenario.building.contains_strictly(p) {
                return Err(ExperimentError::InvalidScenario(format!(
                    "grid point {p} is outside the building"
                )));
            }
            pts.push(p);
        }
    }
    Ok(pts)
}

/// All unordered index pairs `(i, j)` with `i < j`, lexicographic.
pub fn enumerate_pairs(num_points: usize) -> Result<Vec<(usize, usize)>> {
    if num_points < 2 {
        return Err(ExperimentError::TooFewPoints(num_points));
    }
    let mut pairs = Vec::with_capacity(num_points * (num_points - 1) / 2);
    for i in 0..num_points {
        for j in i + 1..num_points {
            pairs.push((i, j));
        }
    }
    Ok(pairs)
}

/// Analytic miss rate for transmitters at `a` (legitimate) and `b` (spoofer).
pub fn pair_miss_rate(a: Vec3, b: Vec3, scenario: &ScenarioGrid, config: &RadioConfig) -> Result<Probability> {
    let det = Detector::new(config)?;
    let ha = scenario.channel(a, config)?;
    let hb = scenario.channel(b, config)?;
    let mu = detector::noncentrality(&ha, &hb, &det.noise)?;
    Ok(det.miss_rate(mu)?)
}

/// Unweighted mean of the pair miss rates over every pair of grid points.
pub fn average_miss_rate(scenario: &ScenarioGrid, config: &RadioConfig) -> Result<Probability> {
    let points = grid_points(scenario)?;
    average_over_points(scenario, &points, config)
}

pub(crate) fn average_over_points(
    scenario: &ScenarioGrid,
    points: &[Vec3],
    config: &RadioConfig,
) -> Result<Probability> {
    let pairs = enumerate_pairs(points.len())?;
    let det = Detector::new(config)?;
    let channels: Vec<ChannelResponse> = points
        .par_iter()
        .map(|&p| scenario.channel(p, config))
        .collect::<Result<_>>()?;
    let rates: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mu = detector::noncentrality(&channels[i], &channels[j], &det.noise)?;
            Ok(det.miss_rate(mu)?.value())
        })
        .collect::<Result<_>>()?;
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(Probability::saturating(mean))
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed from the global seed, pair index and trial index.
pub fn derive_seed(global: u64, pair_index: u64, trial_index: u64) -> u64 {
    mix(mix(mix(global) ^ pair_index) ^ trial_index)
}

/// Empirical error rates from repeated noisy frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloRates {
    pub trials: u64,
    pub false_alarms: u64,
    pub misses: u64,
    pub empirical_alpha: f64,
    pub empirical_beta: f64,
}

/// Runs `trials` independent frame pairs for both hypotheses.
///
/// Same-location (H0) trials estimate the channel at `a` twice; spoofing
/// (H1) trials estimate `a` then `b`. Each frame gets its own uniform phase
/// rotation and noise draw.
pub fn monte_carlo_rates(
    a: Vec3,
    b: Vec3,
    scenario: &ScenarioGrid,
    config: &RadioConfig,
    trials: u64,
    seed: u64,
) -> Result<MonteCarloRates> {
    monte_carlo_pair(a, b, scenario, config, trials, seed, 0)
}

pub fn monte_carlo_pair(
    a: Vec3,
    b: Vec3,
    scenario: &ScenarioGrid,
    config: &RadioConfig,
    trials: u64,
    seed: u64,
    pair_index: u64,
) -> Result<MonteCarloRates> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    let det = Detector::new(config)?;
    let ha = scenario.channel(a, config)?;
    let hb = scenario.channel(b, config)?;
    let (false_alarms, misses) = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(u64, u64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, pair_index, t));
            let sigma_sq = det.noise.sigma_sq;
            let mut frame = |h: &ChannelResponse| {
                let phase = detector::uniform_phase(&mut rng);
                detector::estimate_with_rng(h.gains(), phase, sigma_sq, &mut rng)
            };
            let f0 = frame(&ha);
            let f1 = frame(&ha);
            let g0 = frame(&ha);
            let g1 = frame(&hb);
            let h0 = det.decide(&f0, &f1)?;
            let h1 = det.decide(&g0, &g1)?;
            Ok((h0.spoof_flagged as u64, (!h1.spoof_flagged) as u64))
        })
        .try_reduce(|| (0, 0), |x, y| Ok((x.0 + y.0, x.1 + y.1)))?;
    Ok(MonteCarloRates {
        trials,
        false_alarms,
        misses,
        empirical_alpha: false_alarms as f64 / trials as f64,
        empirical_beta: misses as f64 / trials as f64,
    })
}

/// Which system parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParameter {
    #[serde(rename = "M")]
    NumTones,
    #[serde(rename = "W")]
    SystemBandwidth,
    #[serde(rename = "b")]
    SubbandBandwidth,
    #[serde(rename = "P_T")]
    TxPower,
    #[serde(rename = "N_T")]
    NumTx,
    #[serde(rename = "N_R")]
    NumRx,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 6] = [
        SweepParameter::NumTones,
        SweepParameter::SystemBandwidth,
        SweepParameter::SubbandBandwidth,
        SweepParameter::TxPower,
        SweepParameter::NumTx,
        SweepParameter::NumRx,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            SweepParameter::NumTones => "M",
            SweepParameter::SystemBandwidth => "W",
            SweepParameter::SubbandBandwidth => "b",
            SweepParameter::TxPower => "P_T",
            SweepParameter::NumTx => "N_T",
            SweepParameter::NumRx => "N_R",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.symbol() == s)
    }

    fn is_integer(self) -> bool {
        matches!(
            self,
            SweepParameter::NumTones | SweepParameter::NumTx | SweepParameter::NumRx
        )
    }
}

impl std::fmt::Display for SweepParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Antenna counts for one curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntennaConfig {
    pub n_tx: usize,
    pub n_rx: usize,
}

impl AntennaConfig {
    pub const SISO: AntennaConfig = AntennaConfig { n_tx: 1, n_rx: 1 };

    pub fn new(n_tx: usize, n_rx: usize) -> Self {
        AntennaConfig { n_tx, n_rx }
    }

    /// `"2x1"` is two transmit antennas, one receive antenna.
    pub fn label(&self) -> String {
        format!("{}x{}", self.n_tx, self.n_rx)
    }

    pub fn parse(label: &str) -> Option<Self> {
        let (t, r) = label.trim().split_once(['x', 'X'])?;
        let n_tx = t.trim().parse().ok()?;
        let n_rx = r.trim().parse().ok()?;
        (n_tx >= 1 && n_rx >= 1).then_some(AntennaConfig { n_tx, n_rx })
    }

    /// The four configurations compared throughout: SISO, MISO, SIMO, MIMO.
    pub fn standard_set() -> Vec<AntennaConfig> {
        vec![
            AntennaConfig::new(1, 1),
            AntennaConfig::new(2, 1),
            AntennaConfig::new(1, 2),
            AntennaConfig::new(2, 2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub base_config: RadioConfig,
    /// Ties the system bandwidth to the subband (`W = b`) at every point.
    pub narrowband: bool,
}

impl SweepSpec {
    /// Configuration at one swept value for one antenna setup.
    ///
    /// For `N_T`/`N_R` sweeps the swept value overrides the corresponding
    /// antenna count of `antennas`.
    pub fn config_at(&self, value: f64, antennas: AntennaConfig) -> Result<RadioConfig> {
        let p = self.parameter;
        let invalid = |reason: String| ExperimentError::InvalidPoint {
            parameter: p,
            value,
            source: DetectorError::InvalidConfig {
                field: "sweep value",
                reason,
            },
        };
        if !value.is_finite() {
            return Err(invalid("value is not finite".into()));
        }
        if p.is_integer() && (value < 1.0 || value.fract() != 0.0) {
            return Err(invalid("must be a positive integer".into()));
        }
        let mut c = RadioConfig {
            n_tx: antennas.n_tx,
            n_rx: antennas.n_rx,
            ..self.base_config
        };
        match p {
            SweepParameter::NumTones => c.num_tones = value as usize,
            SweepParameter::SystemBandwidth => c.system_bandwidth_hz = value,
            SweepParameter::SubbandBandwidth => c.subband_bandwidth_hz = value,
            SweepParameter::TxPower => c.tx_power_per_tone_mw = value,
            SweepParameter::NumTx => c.n_tx = value as usize,
            SweepParameter::NumRx => c.n_rx = value as usize,
        }
        if self.narrowband {
            c.system_bandwidth_hz = c.subband_bandwidth_hz;
        }
        c.validate().map_err(|source| ExperimentError::InvalidPoint {
            parameter: p,
            value,
            source,
        })?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub parameter_value: f64,
    pub configuration_label: String,
    pub average_miss_rate: f64,
    /// `None` when the configuration's miss rate is zero (gain unbounded).
    pub security_gain_vs_siso: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveResult {
    pub parameter: SweepParameter,
    pub rows: Vec<CurveRow>,
}

impl CurveResult {
    pub fn row(&self, value: f64, label: &str) -> Option<&CurveRow> {
        self.rows
            .iter()
            .find(|r| r.parameter_value == value && r.configuration_label == label)
    }

    /// Miss rates of one configuration in sweep order.
    pub fn series(&self, label: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.configuration_label == label)
            .map(|r| r.average_miss_rate)
            .collect()
    }
}

/// Average miss rate and SISO-relative gain for every swept value and
/// antenna configuration, in `(value, configuration)` order.
pub fn run_sweep(scenario: &ScenarioGrid, sweep: &SweepSpec, configurations: &[AntennaConfig]) -> Result<CurveResult> {
    if sweep.values.is_empty() {
        return Err(ExperimentError::InvalidSweep("no sweep values".into()));
    }
    if configurations.is_empty() {
        return Err(ExperimentError::InvalidSweep("no antenna configurations".into()));
    }
    // Validate every point before doing any expensive work.
    for &v in &sweep.values {
        sweep.config_at(v, AntennaConfig::SISO)?;
        for &a in configurations {
            sweep.config_at(v, a)?;
        }
    }
    let points = grid_points(scenario)?;
    let mut rows = Vec::with_capacity(sweep.values.len() * configurations.len());
    for &v in &sweep.values {
        let siso_cfg = siso_baseline(sweep, v)?;
        let beta_siso = average_over_points(scenario, &points, &siso_cfg)?;
        for &a in configurations {
            let cfg = sweep.config_at(v, a)?;
            let beta = if cfg == siso_cfg {
                beta_siso
            } else {
                average_over_points(scenario, &points, &cfg)?
            };
            let gain = match detector::security_gain(beta_siso, beta) {
                Ok(g) => Some(g),
                Err(DetectorError::GainUnbounded) => None,
                Err(e) => return Err(e.into()),
            };
            rows.push(CurveRow {
                parameter_value: v,
                configuration_label: AntennaConfig::new(cfg.n_tx, cfg.n_rx).label(),
                average_miss_rate: beta.value(),
                security_gain_vs_siso: gain,
            });
        }
    }
    Ok(CurveResult {
        parameter: sweep.parameter,
        rows,
    })
}

fn siso_baseline(sweep: &SweepSpec, value: f64) -> Result<RadioConfig> {
    let mut c = sweep.config_at(value, AntennaConfig::SISO)?;
    c.n_tx = 1;
    c.n_rx = 1;
    Ok(c)
}
