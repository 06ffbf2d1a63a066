//! Image-source multipath model for a rectangular building.
//!
//! Every wall, the floor and the ceiling are treated as flat mirrors with a
//! common real reflection coefficient. A path with `r` bounces is replaced by
//! a straight line from a mirrored copy of the transmitter, so tracing
//! reduces to enumerating image lattice points per axis.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("invalid building: {0}")]
    InvalidBuilding(String),
    #[error("invalid antenna array: {0}")]
    InvalidArray(String),
    #[error("invalid tone grid: {0}")]
    InvalidToneGrid(String),
    #[error("point {0} is not strictly inside the building")]
    OutsideBuilding(Vec3),
    #[error("transmitter and receiver coincide at {0}")]
    DegenerateGeometry(Vec3),
    #[error("no rays to synthesize a response from")]
    EmptyRaySet,
    #[error("channel response has {actual} gains, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("channel response contains a non-finite gain at index {0}")]
    NonFinite(usize),
}

type Result<T> = std::result::Result<T, ChannelError>;

/// A point or direction in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Vec3) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::fmt::Display for Vec3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}]", self.x, self.y, self.z)
    }
}

/// Axis-aligned building occupying `[0, length] x [0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingBox {
    pub length_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    /// Real field reflection coefficient applied at every bounce.
    pub reflection_coeff: f64,
    /// Uniform extra attenuation applied to every ray, in dB.
    ///
    /// Stands in for the interior partitions an empty box does not have.
    /// Scaling all rays by one constant is equivalent to rescaling the
    /// transmit power, so it only shifts the SNR operating point.
    pub excess_loss_db: f64,
}

impl BuildingBox {
    pub const DEFAULT_REFLECTION: f64 = -0.7;

    pub fn new(length_m: f64, width_m: f64, height_m: f64, reflection_coeff: f64) -> Result<Self> {
        Self::with_excess_loss(length_m, width_m, height_m, reflection_coeff, 0.0)
    }

    pub fn with_excess_loss(
        length_m: f64,
        width_m: f64,
        height_m: f64,
        reflection_coeff: f64,
        excess_loss_db: f64,
    ) -> Result<Self> {
        let b = BuildingBox {
            length_m,
            width_m,
            height_m,
            reflection_coeff,
            excess_loss_db,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length_m", self.length_m),
            ("width_m", self.width_m),
            ("height_m", self.height_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ChannelError::InvalidBuilding(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.reflection_coeff.abs() < 1.0) {
            return Err(ChannelError::InvalidBuilding(format!(
                "|reflection_coeff| must be < 1, got {}",
                self.reflection_coeff
            )));
        }
        if !self.excess_loss_db.is_finite() {
            return Err(ChannelError::InvalidBuilding(format!(
                "excess_loss_db must be finite, got {}",
                self.excess_loss_db
            )));
        }
        Ok(())
    }

    pub fn dimensions(&self) -> [f64; 3] {
        [self.length_m, self.width_m, self.height_m]
    }

    pub fn contains_strictly(&self, p: Vec3) -> bool {
        p.x > 0.0 && p.x < self.length_m && p.y > 0.0 && p.y < self.width_m && p.z > 0.0 && p.z < self.height_m
    }

    fn check_inside(&self, p: Vec3) -> Result<()> {
        if self.contains_strictly(p) {
            Ok(())
        } else {
            Err(ChannelError::OutsideBuilding(p))
        }
    }
}

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    /// Linear field gain.
    pub amplitude: f64,
    /// Accumulated reflection phase in radians.
    pub phase: f64,
    pub delay_s: f64,
    pub reflections: u32,
}

/// Uniform linear array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    pub reference_position: Vec3,
    pub num_elements: usize,
    pub spacing_m: f64,
    /// Unit vector along which elements are laid out.
    pub axis: Vec3,
}

impl AntennaArray {
    /// Default element spacing: half a wavelength at 5 GHz.
    pub const DEFAULT_SPACING_M: f64 = 0.03;
    /// Default orientation: the building's long axis.
    pub const DEFAULT_AXIS: Vec3 = Vec3::new(1.0, 0.0, 0.0);

    /// Builds an array; `axis` is normalized.
    pub fn new(reference_position: Vec3, num_elements: usize, spacing_m: f64, axis: Vec3) -> Result<Self> {
        if num_elements == 0 {
            return Err(ChannelError::InvalidArray("num_elements must be >= 1".into()));
        }
        if !(spacing_m > 0.0 && spacing_m.is_finite()) {
            return Err(ChannelError::InvalidArray(format!(
                "spacing_m must be positive, got {spacing_m}"
            )));
        }
        let len = axis.norm();
        if !(len > 0.0 && len.is_finite()) {
            return Err(ChannelError::InvalidArray(format!("axis {axis} has no direction")));
        }
        if !reference_position.is_finite() {
            return Err(ChannelError::InvalidArray(format!(
                "reference position {reference_position} is not finite"
            )));
        }
        Ok(AntennaArray {
            reference_position,
            num_elements,
            spacing_m,
            axis: axis * (1.0 / len),
        })
    }

    pub fn linear(reference_position: Vec3, num_elements: usize) -> Result<Self> {
        Self::new(
            reference_position,
            num_elements,
            Self::DEFAULT_SPACING_M,
            Self::DEFAULT_AXIS,
        )
    }

    /// Element `j` (0-based) sits at `reference + j * spacing * axis`.
    pub fn element_positions(&self) -> Vec<Vec3> {
        (0..self.num_elements)
            .map(|j| self.reference_position + self.axis * (j as f64 * self.spacing_m))
            .collect()
    }

    /// Element positions, failing if any of them leaves the building.
    pub fn positions_in(&self, building: &BuildingBox) -> Result<Vec<Vec3>> {
        let pos = self.element_positions();
        for &p in &pos {
            building.check_inside(p)?;
        }
        Ok(pos)
    }
}

/// `M` tones spread over bandwidth `W` around `f0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneGrid {
    pub f0_hz: f64,
    pub bandwidth_hz: f64,
    pub num_tones: usize,
}

impl ToneGrid {
    pub fn new(f0_hz: f64, bandwidth_hz: f64, num_tones: usize) -> Result<Self> {
        let g = ToneGrid {
            f0_hz,
            bandwidth_hz,
            num_tones,
        };
        if num_tones == 0 {
            return Err(ChannelError::InvalidToneGrid("num_tones must be >= 1".into()));
        }
        if !(f0_hz > 0.0 && f0_hz.is_finite()) || !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
            return Err(ChannelError::InvalidToneGrid(format!(
                "f0 and bandwidth must be positive, got f0={f0_hz}, W={bandwidth_hz}"
            )));
        }
        if !(g.frequency(1) > 0.0) {
            return Err(ChannelError::InvalidToneGrid(format!(
                "lowest tone {} Hz is not positive",
                g.frequency(1)
            )));
        }
        Ok(g)
    }

    /// Frequency of tone `m`, 1-based: `f0 + W (m/M - 0.5)`.
    pub fn frequency(&self, m: usize) -> f64 {
        self.f0_hz + self.bandwidth_hz * (m as f64 / self.num_tones as f64 - 0.5)
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (1..=self.num_tones).map(|m| self.frequency(m)).collect()
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f0_hz
    }
}

/// Flattened complex gains over (Tx antenna, Rx antenna, tone).
///
/// Tx index outermost, Rx index next, tone index innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    gains: Vec<Complex64>,
    dims: (usize, usize, usize),
}

impl ChannelResponse {
    pub fn new(gains: Vec<Complex64>, dims: (usize, usize, usize)) -> Result<Self> {
        let expected = dims.0 * dims.1 * dims.2;
        if gains.len() != expected || expected == 0 {
            return Err(ChannelError::DimensionMismatch {
                expected,
                actual: gains.len(),
            });
        }
        if let Some(i) = gains.iter().position(|g| !g.is_finite()) {
            return Err(ChannelError::NonFinite(i));
        }
        Ok(ChannelResponse { gains, dims })
    }

    pub fn gains(&self) -> &[Complex64] {
        &self.gains
    }

    pub fn into_gains(self) -> Vec<Complex64> {
        self.gains
    }

    /// `(N_T, N_R, M)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Flat index of `(j_t, j_r, m)`, all 0-based.
    pub fn index(&self, jt: usize, jr: usize, m: usize) -> usize {
        (jt * self.dims.1 + jr) * self.dims.2 + m
    }

    pub fn get(&self, jt: usize, jr: usize, m: usize) -> Complex64 {
        self.gains[self.index(jt, jr, m)]
    }

    /// Squared Euclidean norm of the flattened vector.
    pub fn norm_sqr(&self) -> f64 {
        self.gains.iter().map(|g| g.norm_sqr()).sum()
    }

    /// The same link viewed from the other end: Tx and Rx indices swapped.
    pub fn transposed(&self) -> ChannelResponse {
        let (nt, nr, m) = self.dims;
        let mut gains = Vec::with_capacity(self.gains.len());
        for jr in 0..nr {
            for jt in 0..nt {
                for k in 0..m {
                    gains.push(self.get(jt, jr, k));
                }
            }
        }
        ChannelResponse {
            gains,
            dims: (nr, nt, m),
        }
    }
}

/// Image coordinates along one axis with their bounce counts.
///
/// For a wall pair at 0 and `len`, images sit at `2 n len + p` (even
/// bounce count `|2n|`) and `2 n len - p` (odd bounce count `|2n - 1|`).
fn axis_images(len: f64, p: f64, max_order: u32) -> Vec<(f64, u32)> {
    let max = max_order as i64;
    let mut out = Vec::new();
    for n in -max..=max {
        let even = (2 * n).unsigned_abs() as u32;
        if even <= max_order {
            out.push((2.0 * n as f64 * len + p, even));
        }
        let odd = (2 * n - 1).unsigned_abs() as u32;
        if odd <= max_order {
            out.push((2.0 * n as f64 * len - p, odd));
        }
    }
    out
}

/// Traces every image-source path from `tx` to `rx` with at most
/// `max_order` total reflections, sorted by delay.
///
/// Amplitudes follow the free-space factor `(c/f0) / (4 pi d)` times
/// `|gamma|^r`, with the carrier wavelength used for the whole band.
pub fn trace_rays(building: &BuildingBox, tx: Vec3, rx: Vec3, max_order: u32, f0_hz: f64) -> Result<Vec<Ray>> {
    building.validate()?;
    building.check_inside(tx)?;
    building.check_inside(rx)?;
    if tx == rx {
        return Err(ChannelError::DegenerateGeometry(tx));
    }
    let ix = axis_images(building.length_m, tx.x, max_order);
    let iy = axis_images(building.width_m, tx.y, max_order);
    let iz = axis_images(building.height_m, tx.z, max_order);

    let gamma_mag = building.reflection_coeff.abs();
    let gamma_arg = if building.reflection_coeff < 0.0 { PI } else { 0.0 };
    let scale = 10f64.powf(-building.excess_loss_db / 20.0) * SPEED_OF_LIGHT / f0_hz;

    let mut rays = Vec::new();
    for &(x, rx_) in &ix {
        for &(y, ry) in &iy {
            if rx_ + ry > max_order {
                continue;
            }
            for &(z, rz) in &iz {
                let r = rx_ + ry + rz;
                if r > max_order {
                    continue;
                }
                let d = Vec3::new(x, y, z).distance(rx);
                rays.push(Ray {
                    amplitude: scale * gamma_mag.powi(r as i32) / (4.0 * PI * d),
                    phase: r as f64 * gamma_arg,
                    delay_s: d / SPEED_OF_LIGHT,
                    reflections: r,
                });
            }
        }
    }
    rays.sort_by(|a, b| {
        a.delay_s
            .total_cmp(&b.delay_s)
            .then(b.amplitude.total_cmp(&a.amplitude))
    });
    Ok(rays)
}

/// `H(f_m) = sum_k a_k exp(j phase_k) exp(-j 2 pi f_m tau_k)` for every tone.
pub fn frequency_response(rays: &[Ray], tones: &ToneGrid) -> Result<Vec<Complex64>> {
    if rays.is_empty() {
        return Err(ChannelError::EmptyRaySet);
    }
    Ok(tones
        .frequencies()
        .into_iter()
        .map(|f| {
            rays.iter()
                .map(|r| Complex64::from_polar(r.amplitude, r.phase - 2.0 * PI * f * r.delay_s))
                .sum()
        })
        .collect())
}

/// Full MIMO response between two arrays, each antenna pair traced
/// independently.
pub fn channel_matrix(
    building: &BuildingBox,
    tx_array: &AntennaArray,
    rx_array: &AntennaArray,
    tones: &ToneGrid,
    max_order: u32,
) -> Result<ChannelResponse> {
    let tx = tx_array.positions_in(building)?;
    let rx = rx_array.positions_in(building)?;
    let mut gains = Vec::with_capacity(tx.len() * rx.len() * tones.num_tones);
    for &t in &tx {
        for &r in &rx {
            let rays = trace_rays(building, t, r, max_order, tones.f0_hz)?;
            gains.extend(frequency_response(&rays, tones)?);
        }
    }
    ChannelResponse::new(gains, (tx.len(), rx.len(), tones.num_tones))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn building() -> BuildingBox {
        BuildingBox::new(30.0, 14.0, 4.0, -0.7).unwrap()
    }

    #[test]
    fn element_positions_examples() {
        let a = AntennaArray::new(Vec3::new(0.0, 0.0, 0.0), 1, 0.03, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(a.element_positions(), vec![Vec3::new(0.0, 0.0, 0.0)]);

        let a = AntennaArray::new(Vec3::new(1.0, 2.0, 2.0), 2, 0.03, Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let p = a.element_positions();
        assert_eq!(p[0], Vec3::new(1.0, 2.0, 2.0));
        assert!((p[1].x - 1.03).abs() < 1e-15 && p[1].y == 2.0 && p[1].z == 2.0);

        let a = AntennaArray::linear(Vec3::new(45.6, 6.2, 3.0), 4).unwrap();
        let p = a.element_positions();
        assert_eq!(p.len(), 4);
        assert!((p[0].distance(p[3]) - 0.09).abs() < 1e-12);
    }

    #[test]
    fn array_outside_building_is_rejected() {
        let b = building();
        let a = AntennaArray::linear(Vec3::new(29.99, 5.0, 2.0), 2).unwrap();
        assert!(matches!(a.positions_in(&b), Err(ChannelError::OutsideBuilding(_))));
        assert!(AntennaArray::linear(Vec3::new(1.0, 1.0, 1.0), 0).is_err());
        assert!(AntennaArray::new(Vec3::new(1.0, 1.0, 1.0), 2, 0.0, Vec3::new(1.0, 0.0, 0.0)).is_err());
        assert!(AntennaArray::new(Vec3::new(1.0, 1.0, 1.0), 2, 0.03, Vec3::default()).is_err());
    }

    #[test]
    fn building_validation() {
        assert!(BuildingBox::new(0.0, 1.0, 1.0, 0.5).is_err());
        assert!(BuildingBox::new(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(BuildingBox::new(1.0, 1.0, 1.0, -1.0).is_err());
        assert!(BuildingBox::new(1.0, 1.0, 1.0, -0.99).is_ok());
    }

    #[test]
    fn los_only_at_order_zero() {
        let b = building();
        let tx = Vec3::new(3.0, 4.0, 2.0);
        let rx = Vec3::new(12.3, 6.2, 3.0);
        let rays = trace_rays(&b, tx, rx, 0, 5e9).unwrap();
        assert_eq!(rays.len(), 1);
        assert_eq!(rays[0].delay_s, tx.distance(rx) / SPEED_OF_LIGHT);
        assert_eq!(rays[0].reflections, 0);
    }

    #[test]
    fn first_order_matches_explicit_mirrors() {
        let b = building();
        let tx = Vec3::new(3.0, 4.0, 2.5);
        let rx = Vec3::new(12.3, 6.2, 1.0);
        let rays = trace_rays(&b, tx, rx, 1, 5e9).unwrap();
        assert_eq!(rays.len(), 7);
        let los = tx.distance(rx);
        let mirrors = [
            Vec3::new(-tx.x, tx.y, tx.z),
            Vec3::new(2.0 * 30.0 - tx.x, tx.y, tx.z),
            Vec3::new(tx.x, -tx.y, tx.z),
            Vec3::new(tx.x, 2.0 * 14.0 - tx.y, tx.z),
            Vec3::new(tx.x, tx.y, -tx.z),
            Vec3::new(tx.x, tx.y, 2.0 * 4.0 - tx.z),
        ];
        let mut want: Vec<f64> = mirrors.iter().map(|m| m.distance(rx)).collect();
        want.sort_by(f64::total_cmp);
        let got: Vec<f64> = rays
            .iter()
            .filter(|r| r.reflections == 1)
            .map(|r| r.delay_s * SPEED_OF_LIGHT)
            .collect();
        assert_eq!(got.len(), 6);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
            assert!(*g > los);
        }
        for r in rays.iter().filter(|r| r.reflections == 1) {
            assert_eq!(r.phase, PI);
        }
    }

    #[test]
    fn ray_count_by_order() {
        let b = building();
        let tx = Vec3::new(3.0, 4.0, 2.0);
        let rx = Vec3::new(12.3, 6.2, 3.0);
        let counts: Vec<usize> = (0..=4).map(|o| trace_rays(&b, tx, rx, o, 5e9).unwrap().len()).collect();
        // 1, +6 single bounces, +18 double, +38 triple, +66 quadruple.
        assert_eq!(counts, vec![1, 7, 25, 63, 129]);
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let b = building();
        let p = Vec3::new(3.0, 4.0, 2.0);
        assert!(matches!(
            trace_rays(&b, p, p, 2, 5e9),
            Err(ChannelError::DegenerateGeometry(_))
        ));
        assert!(matches!(
            trace_rays(&b, p, Vec3::new(31.0, 1.0, 1.0), 2, 5e9),
            Err(ChannelError::OutsideBuilding(_))
        ));
    }

    #[test]
    fn flat_response_examples() {
        let tones = ToneGrid::new(5e9, 20e6, 5).unwrap();
        let unit = [Ray {
            amplitude: 1.0,
            phase: 0.0,
            delay_s: 0.0,
            reflections: 0,
        }];
        for h in frequency_response(&unit, &tones).unwrap() {
            assert_eq!(h, Complex64::new(1.0, 0.0));
        }
        let one = [Ray {
            amplitude: 0.37,
            phase: 1.1,
            delay_s: 83e-9,
            reflections: 2,
        }];
        for h in frequency_response(&one, &tones).unwrap() {
            assert!((h.norm() - 0.37).abs() < 1e-14);
        }
        assert_eq!(frequency_response(&[], &tones), Err(ChannelError::EmptyRaySet));
    }

    #[test]
    fn two_ray_interference() {
        let tones = ToneGrid::new(5e9, 20e6, 7).unwrap();
        let (a, tau, dtau) = (0.2, 40e-9, 13.7e-9);
        let rays = [
            Ray {
                amplitude: a,
                phase: 0.0,
                delay_s: tau,
                reflections: 0,
            },
            Ray {
                amplitude: a,
                phase: 0.0,
                delay_s: tau + dtau,
                reflections: 1,
            },
        ];
        let h = frequency_response(&rays, &tones).unwrap();
        for (f, hm) in tones.frequencies().into_iter().zip(h) {
            let want = 2.0 * a * a * (1.0 + (2.0 * PI * f * dtau).cos());
            assert!((hm.norm_sqr() - want).abs() < 1e-12, "{} vs {want}", hm.norm_sqr());
        }
    }

    #[test]
    fn tone_formula_exact() {
        let g = ToneGrid::new(5e9, 20e6, 4).unwrap();
        for m in 1..=4 {
            assert_eq!(g.frequency(m), 5e9 + 20e6 * (m as f64 / 4.0 - 0.5));
        }
        assert_eq!(ToneGrid::new(5e9, 2e6, 1).unwrap().frequency(1), 5e9 + 1e6);
        assert!(ToneGrid::new(5e9, 20e6, 0).is_err());
        assert!(ToneGrid::new(1e6, 10e6, 4).is_err());
    }

    #[test]
    fn channel_matrix_dimensions() {
        let b = building();
        let tones = ToneGrid::new(5e9, 20e6, 1).unwrap();
        let tx = AntennaArray::linear(Vec3::new(3.0, 4.0, 2.0), 1).unwrap();
        let rx = AntennaArray::linear(Vec3::new(12.3, 6.2, 3.0), 1).unwrap();
        let h = channel_matrix(&b, &tx, &rx, &tones, 3).unwrap();
        assert_eq!(h.len(), 1);
        let rays = trace_rays(&b, tx.reference_position, rx.reference_position, 3, 5e9).unwrap();
        assert_eq!(h.gains()[0], frequency_response(&rays, &tones).unwrap()[0]);

        let tones = ToneGrid::new(5e9, 20e6, 5).unwrap();
        let tx = AntennaArray::linear(Vec3::new(3.0, 4.0, 2.0), 2).unwrap();
        let rx = AntennaArray::linear(Vec3::new(12.3, 6.2, 3.0), 2).unwrap();
        let h = channel_matrix(&b, &tx, &rx, &tones, 3).unwrap();
        assert_eq!(h.len(), 20);
        assert_eq!(h.dims(), (2, 2, 5));
    }

    #[test]
    fn flattening_order_tx_outer_rx_middle_tone_inner() {
        let b = building();
        let tones = ToneGrid::new(5e9, 20e6, 3).unwrap();
        let tx = AntennaArray::linear(Vec3::new(3.0, 4.0, 2.0), 2).unwrap();
        let rx = AntennaArray::linear(Vec3::new(12.3, 6.2, 3.0), 2).unwrap();
        let h = channel_matrix(&b, &tx, &rx, &tones, 2).unwrap();
        let t = tx.element_positions();
        let r = rx.element_positions();
        for (jt, &pt) in t.iter().enumerate() {
            for (jr, &pr) in r.iter().enumerate() {
                let rays = trace_rays(&b, pt, pr, 2, 5e9).unwrap();
                let siso = frequency_response(&rays, &tones).unwrap();
                for (m, g) in siso.iter().enumerate() {
                    assert_eq!(h.gains()[jt * 6 + jr * 3 + m], *g);
                }
            }
        }
    }

    #[test]
    fn distant_transmitters_decorrelate() {
        let b = building();
        let tones = ToneGrid::new(5e9, 20e6, 5).unwrap();
        let ap = AntennaArray::linear(Vec3::new(12.3, 6.2, 3.0), 2).unwrap();
        let t1 = AntennaArray::linear(Vec3::new(5.0, 3.0, 2.0), 2).unwrap();
        let t2 = AntennaArray::linear(Vec3::new(5.5, 3.4, 2.0), 2).unwrap();
        let h1 = channel_matrix(&b, &t1, &ap, &tones, 3).unwrap();
        let h2 = channel_matrix(&b, &t2, &ap, &tones, 3).unwrap();
        let inner: Complex64 = h1.gains().iter().zip(h2.gains()).map(|(a, b)| a * b.conj()).sum();
        let rho = inner.norm() / (h1.norm_sqr() * h2.norm_sqr()).sqrt();
        assert!(rho < 1.0 - 1e-6, "rho = {rho}");
    }

    #[test]
    fn excess_loss_scales_every_ray() {
        let plain = building();
        let lossy = BuildingBox::with_excess_loss(30.0, 14.0, 4.0, -0.7, 20.0).unwrap();
        let tx = Vec3::new(3.0, 4.0, 2.0);
        let rx = Vec3::new(12.3, 6.2, 3.0);
        let a = trace_rays(&plain, tx, rx, 2, 5e9).unwrap();
        let b = trace_rays(&lossy, tx, rx, 2, 5e9).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert!((rb.amplitude / ra.amplitude - 0.1).abs() < 1e-14);
            assert_eq!(ra.delay_s, rb.delay_s);
        }
    }
}
