//! Scenario/radio/sweep configuration files (TOML).
//!
//! ```toml
//! [building]
//! length_m = 30.0
//! width_m = 14.0
//! height_m = 4.0
//! reflection_coeff = -0.7   # optional
//! excess_loss_db = 18.5     # optional, default 0
//! max_order = 3             # optional
//!
//! [grid]
//! ap_position = [12.3, 6.2, 3.0]
//! region_origin = [9.0, 1.0]
//! region_extent_m = [12.0, 12.0]
//! spacing_m = 1.5
//! tx_height_m = 2.0
//! array_spacing_m = 0.03    # optional
//! array_axis = [1, 0, 0]    # optional
//!
//! [radio]
//! n_tx = 1
//! n_rx = 1
//! num_tones = 5
//! bandwidth_hz = 20e6
//! subband_hz = 0.25e6
//! f0_hz = 5e9
//! tx_power_mw = 1.0
//! noise_figure = 10.0
//! alpha = 0.01
//! thermal_noise_mw_per_hz = 4.004e-18   # optional
//!
//! [sweep]
//! parameter = "M"           # one of M, W, b, P_T, N_T, N_R
//! values = [1, 2, 3]
//! configurations = ["1x1", "2x1", "1x2", "2x2"]   # optional
//! narrowband = false        # optional; true forces W = b
//!
//! [validate]                # optional
//! pair = [0, 80]            # grid indices
//! ```

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::detector::{DetectorError, RadioConfig, THERMAL_NOISE_DENSITY_290K};
use crate::experiment::{self, AntennaConfig, ScenarioGrid, SweepParameter, SweepSpec};
use crate::raychannel::{AntennaArray, BuildingBox, Vec3};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("{key} (line {line}): {reason}")]
    Invalid { key: String, line: usize, reason: String },
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    building: Option<Spanned<RawBuilding>>,
    grid: Option<Spanned<RawGrid>>,
    radio: Option<Spanned<RawRadio>>,
    sweep: Option<Spanned<RawSweep>>,
    validate: Option<Spanned<RawValidate>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBuilding {
    length_m: Option<Spanned<f64>>,
    width_m: Option<Spanned<f64>>,
    height_m: Option<Spanned<f64>>,
    reflection_coeff: Option<Spanned<f64>>,
    excess_loss_db: Option<Spanned<f64>>,
    max_order: Option<Spanned<u32>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    ap_position: Option<Spanned<[f64; 3]>>,
    region_origin: Option<Spanned<[f64; 2]>>,
    region_extent_m: Option<Spanned<[f64; 2]>>,
    spacing_m: Option<Spanned<f64>>,
    tx_height_m: Option<Spanned<f64>>,
    array_spacing_m: Option<Spanned<f64>>,
    array_axis: Option<Spanned<[f64; 3]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRadio {
    n_tx: Option<Spanned<usize>>,
    n_rx: Option<Spanned<usize>>,
    num_tones: Option<Spanned<usize>>,
    bandwidth_hz: Option<Spanned<f64>>,
    subband_hz: Option<Spanned<f64>>,
    f0_hz: Option<Spanned<f64>>,
    tx_power_mw: Option<Spanned<f64>>,
    noise_figure: Option<Spanned<f64>>,
    alpha: Option<Spanned<f64>>,
    thermal_noise_mw_per_hz: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: Option<Spanned<String>>,
    values: Option<Spanned<Vec<f64>>>,
    configurations: Option<Spanned<Vec<String>>>,
    narrowband: Option<Spanned<bool>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidate {
    pair: Option<Spanned<[usize; 2]>>,
}

/// Everything a run needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: ScenarioGrid,
    pub radio: RadioConfig,
    pub sweep: SweepSpec,
    pub configurations: Vec<AntennaConfig>,
    /// Grid indices of the pair used by `validate`.
    pub validate_pair: (usize, usize),
    /// The file text as read, kept for the run manifest.
    pub source_text: String,
}

struct Ctx<'a> {
    text: &'a str,
    missing: Vec<String>,
}

impl Ctx<'_> {
    fn line(&self, span: Range<usize>) -> usize {
        let end = span.start.min(self.text.len());
        self.text[..end].bytes().filter(|&b| b == b'\n').count() + 1
    }

    fn req<T: Clone>(&mut self, section: &str, key: &str, v: &Option<Spanned<T>>) -> Option<(T, usize)> {
        match v {
            Some(s) => Some((s.get_ref().clone(), self.line(s.span()))),
            None => {
                self.missing.push(format!("{section}.{key}"));
                None
            }
        }
    }

    fn opt<T: Clone>(&self, v: &Option<Spanned<T>>, default: T) -> (T, usize) {
        match v {
            Some(s) => (s.get_ref().clone(), self.line(s.span())),
            None => (default, 0),
        }
    }
}

fn invalid(key: &str, line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        line,
        reason: reason.into(),
    }
}

fn positive(key: &str, (v, line): (f64, usize)) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(key, line, format!("must be positive, got {v}")))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RawFile = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut cx = Ctx {
        text,
        missing: Vec::new(),
    };

    let empty_b = RawBuilding::default();
    let empty_g = RawGrid::default();
    let empty_r = RawRadio::default();
    let empty_s = RawSweep::default();
    let b = raw.building.as_ref().map(|s| s.get_ref()).unwrap_or(&empty_b);
    let g = raw.grid.as_ref().map(|s| s.get_ref()).unwrap_or(&empty_g);
    let r = raw.radio.as_ref().map(|s| s.get_ref()).unwrap_or(&empty_r);
    let s = raw.sweep.as_ref().map(|s| s.get_ref()).unwrap_or(&empty_s);

    let length = cx.req("building", "length_m", &b.length_m);
    let width = cx.req("building", "width_m", &b.width_m);
    let height = cx.req("building", "height_m", &b.height_m);

    let ap = cx.req("grid", "ap_position", &g.ap_position);
    let origin = cx.req("grid", "region_origin", &g.region_origin);
    let extent = cx.req("grid", "region_extent_m", &g.region_extent_m);
    let spacing = cx.req("grid", "spacing_m", &g.spacing_m);
    let tx_height = cx.req("grid", "tx_height_m", &g.tx_height_m);

    let n_tx = cx.req("radio", "n_tx", &r.n_tx);
    let n_rx = cx.req("radio", "n_rx", &r.n_rx);
    let num_tones = cx.req("radio", "num_tones", &r.num_tones);
    let bandwidth = cx.req("radio", "bandwidth_hz", &r.bandwidth_hz);
    let subband = cx.req("radio", "subband_hz", &r.subband_hz);
    let f0 = cx.req("radio", "f0_hz", &r.f0_hz);
    let power = cx.req("radio", "tx_power_mw", &r.tx_power_mw);
    let nf = cx.req("radio", "noise_figure", &r.noise_figure);
    let alpha = cx.req("radio", "alpha", &r.alpha);

    let parameter = cx.req("sweep", "parameter", &s.parameter);
    let values = cx.req("sweep", "values", &s.values);

    if !cx.missing.is_empty() {
        return Err(ConfigError::Missing(cx.missing));
    }
    // All required keys are present past this point.
    let (length, width, height) = (length.unwrap(), width.unwrap(), height.unwrap());
    let (ap, origin, extent) = (ap.unwrap(), origin.unwrap(), extent.unwrap());
    let (spacing, tx_height) = (spacing.unwrap(), tx_height.unwrap());

    let reflection = cx.opt(&b.reflection_coeff, BuildingBox::DEFAULT_REFLECTION);
    let excess = cx.opt(&b.excess_loss_db, 0.0);
    let (max_order, _) = cx.opt(&b.max_order, 3);
    let building = BuildingBox {
        length_m: positive("building.length_m", length)?,
        width_m: positive("building.width_m", width)?,
        height_m: positive("building.height_m", height)?,
        reflection_coeff: reflection.0,
        excess_loss_db: excess.0,
    };
    if !(reflection.0.abs() < 1.0) {
        return Err(invalid(
            "building.reflection_coeff",
            reflection.1,
            format!("|reflection_coeff| must be < 1, got {}", reflection.0),
        ));
    }
    if !excess.0.is_finite() {
        return Err(invalid("building.excess_loss_db", excess.1, "must be finite"));
    }

    let ap_pos = Vec3::from_array(ap.0);
    if !building.contains_strictly(ap_pos) {
        return Err(invalid(
            "grid.ap_position",
            ap.1,
            format!("{ap_pos} is not inside the building"),
        ));
    }
    let [ex, ey] = extent.0;
    if !(ex >= 0.0 && ey >= 0.0 && ex.is_finite() && ey.is_finite()) {
        return Err(invalid("grid.region_extent_m", extent.1, "extents must be nonnegative"));
    }
    let array_spacing = cx.opt(&g.array_spacing_m, AntennaArray::DEFAULT_SPACING_M);
    let axis = cx.opt(&g.array_axis, AntennaArray::DEFAULT_AXIS.to_array());
    let axis_v = Vec3::from_array(axis.0);
    if !(axis_v.norm() > 0.0) {
        return Err(invalid("grid.array_axis", axis.1, "axis must be nonzero"));
    }
    let scenario = ScenarioGrid {
        building,
        ap_position: ap_pos,
        region_origin: Vec3::new(origin.0[0], origin.0[1], 0.0),
        region_extent_m: (ex, ey),
        grid_spacing_m: positive("grid.spacing_m", spacing)?,
        tx_height_m: positive("grid.tx_height_m", tx_height)?,
        max_order,
        array_spacing_m: positive("grid.array_spacing_m", array_spacing)?,
        array_axis: axis_v * (1.0 / axis_v.norm()),
    };
    let points =
        experiment::grid_points(&scenario).map_err(|e| invalid("grid.region_origin", origin.1, e.to_string()))?;

    let radio_lines = [
        ("n_tx", n_tx.as_ref().map(|v| v.1)),
        ("n_rx", n_rx.as_ref().map(|v| v.1)),
        ("num_tones", num_tones.as_ref().map(|v| v.1)),
        ("system_bandwidth_hz", bandwidth.as_ref().map(|v| v.1)),
        ("subband_bandwidth_hz", subband.as_ref().map(|v| v.1)),
        ("center_freq_hz", f0.as_ref().map(|v| v.1)),
        ("tx_power_per_tone_mw", power.as_ref().map(|v| v.1)),
        ("noise_figure_linear", nf.as_ref().map(|v| v.1)),
        ("false_alarm_target", alpha.as_ref().map(|v| v.1)),
    ];
    let thermal = cx.opt(&r.thermal_noise_mw_per_hz, THERMAL_NOISE_DENSITY_290K);
    let radio = RadioConfig {
        n_tx: n_tx.unwrap().0,
        n_rx: n_rx.unwrap().0,
        num_tones: num_tones.unwrap().0,
        system_bandwidth_hz: bandwidth.unwrap().0,
        subband_bandwidth_hz: subband.unwrap().0,
        center_freq_hz: f0.unwrap().0,
        tx_power_per_tone_mw: power.unwrap().0,
        noise_figure_linear: nf.unwrap().0,
        thermal_noise_density_mw_per_hz: thermal.0,
        false_alarm_target: alpha.unwrap().0,
    };
    radio.validate().map_err(|e| match e {
        DetectorError::InvalidConfig { field, reason } => {
            let line = radio_lines
                .iter()
                .find(|(f, _)| *f == field)
                .and_then(|(_, l)| *l)
                .unwrap_or(thermal.1);
            invalid(&format!("radio.{}", config_key(field)), line, reason)
        }
        other => invalid("radio", 0, other.to_string()),
    })?;

    let (param_name, param_line) = parameter.unwrap();
    let parameter = SweepParameter::from_symbol(param_name.trim()).ok_or_else(|| {
        invalid(
            "sweep.parameter",
            param_line,
            format!("unknown parameter {param_name:?}; expected one of M, W, b, P_T, N_T, N_R"),
        )
    })?;
    let (values, values_line) = values.unwrap();
    if values.is_empty() {
        return Err(invalid("sweep.values", values_line, "at least one value is required"));
    }
    let (narrowband, _) = cx.opt(&s.narrowband, false);
    let configurations = match &s.configurations {
        None => AntennaConfig::standard_set(),
        Some(list) => {
            let line = cx.line(list.span());
            let parsed = list
                .get_ref()
                .iter()
                .map(|l| {
                    AntennaConfig::parse(l).ok_or_else(|| {
                        invalid(
                            "sweep.configurations",
                            line,
                            format!("bad label {l:?}, expected e.g. \"2x1\""),
                        )
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if parsed.is_empty() {
                return Err(invalid(
                    "sweep.configurations",
                    line,
                    "at least one configuration is required",
                ));
            }
            parsed
        }
    };
    let sweep = SweepSpec {
        parameter,
        values,
        base_config: radio,
        narrowband,
    };
    for &v in &sweep.values {
        for &a in &configurations {
            sweep
                .config_at(v, a)
                .map_err(|e| invalid("sweep.values", values_line, e.to_string()))?;
        }
    }

    let validate_pair = match raw.validate.as_ref().and_then(|v| v.get_ref().pair.as_ref()) {
        None => (0, points.len().saturating_sub(1)),
        Some(p) => {
            let line = cx.line(p.span());
            let [i, j] = *p.get_ref();
            if i >= points.len() || j >= points.len() {
                return Err(invalid(
                    "validate.pair",
                    line,
                    format!("indices must be below the grid size {}", points.len()),
                ));
            }
            (i, j)
        }
    };

    Ok(RunConfig {
        scenario,
        radio,
        sweep,
        configurations,
        validate_pair,
        source_text: text.to_string(),
    })
}

/// Config-file key for a `RadioConfig` field name.
fn config_key(field: &str) -> &str {
    match field {
        "system_bandwidth_hz" => "bandwidth_hz",
        "subband_bandwidth_hz" => "subband_hz",
        "center_freq_hz" => "f0_hz",
        "tx_power_per_tone_mw" => "tx_power_mw",
        "noise_figure_linear" => "noise_figure",
        "false_alarm_target" => "alpha",
        "thermal_noise_density_mw_per_hz" => "thermal_noise_mw_per_hz",
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PAPER_DEFAULTS: &str = r#"
[building]
length_m = 30.0
width_m = 14.0
height_m = 4.0

[grid]
ap_position = [12.3, 6.2, 3.0]
region_origin = [9.0, 1.0]
region_extent_m = [12.0, 12.0]
spacing_m = 1.5
tx_height_m = 2.0

[radio]
n_tx = 1
n_rx = 1
num_tones = 5
bandwidth_hz = 20e6
subband_hz = 0.25e6
f0_hz = 5e9
tx_power_mw = 1.0
noise_figure = 10.0
alpha = 0.01

[sweep]
parameter = "M"
values = [1, 2, 3]
"#;

    #[test]
    fn paper_defaults_parse() {
        let c = parse_config_str(PAPER_DEFAULTS).unwrap();
        assert_eq!(c.radio.false_alarm_target, 0.01);
        assert_eq!(c.radio.center_freq_hz, 5e9);
        assert_eq!(c.radio.noise_figure_linear, 10.0);
        assert_eq!(c.radio.subband_bandwidth_hz, 0.25e6);
        assert_eq!(c.radio.thermal_noise_density_mw_per_hz, 4.004e-18);
        assert_eq!(c.scenario.building.reflection_coeff, -0.7);
        assert_eq!(c.scenario.max_order, 3);
        assert_eq!(c.sweep.parameter, SweepParameter::NumTones);
        assert_eq!(c.configurations, AntennaConfig::standard_set());
        assert_eq!(c.validate_pair, (0, 80));
    }

    #[test]
    fn wide_subband_rejected_with_line() {
        let text = PAPER_DEFAULTS
            .replace("subband_hz = 0.25e6", "subband_hz = 10e6")
            .replace("num_tones = 5", "num_tones = 4");
        match parse_config_str(&text) {
            Err(ConfigError::Invalid { key, line, .. }) => {
                assert_eq!(key, "radio.subband_hz");
                assert_eq!(text.lines().nth(line - 1).unwrap().trim(), "subband_hz = 10e6");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_lists_every_required_key() {
        match parse_config_str("") {
            Err(ConfigError::Missing(keys)) => {
                assert_eq!(keys.len(), 19);
                for k in [
                    "building.length_m",
                    "grid.spacing_m",
                    "radio.alpha",
                    "radio.noise_figure",
                    "sweep.values",
                ] {
                    assert!(keys.iter().any(|x| x == k), "{k} not reported");
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn type_mismatch_reports_location() {
        let text = PAPER_DEFAULTS.replace("n_tx = 1", "n_tx = \"two\"");
        match parse_config_str(&text) {
            Err(ConfigError::Syntax(msg)) => assert!(msg.contains("line") || msg.contains("n_tx"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_sweep_parameter_rejected() {
        let text = PAPER_DEFAULTS.replace("parameter = \"M\"", "parameter = \"Q\"");
        assert!(matches!(
            parse_config_str(&text),
            Err(ConfigError::Invalid { key, .. }) if key == "sweep.parameter"
        ));
    }

    #[test]
    fn unknown_key_rejected() {
        let text = PAPER_DEFAULTS.replace("alpha = 0.01", "alpha = 0.01\nalfa = 0.02");
        assert!(matches!(parse_config_str(&text), Err(ConfigError::Syntax(_))));
    }
}
