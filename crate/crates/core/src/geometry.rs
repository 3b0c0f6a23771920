//! Microphone array geometries, plane-wave steering and the
//! geometry-dissimilarity measure used for mismatch analysis.
//!
//! Sign convention: a direction maps to the unit vector `u` pointing from the
//! array toward the (far-field) source. Sensor `m` at `p_m` receives the wave
//! with relative delay `tau_m = -(p_m . u) / c`, so sensors closer to the
//! source get more negative delays. The manifold element is
//! `exp(-j omega tau_m)`, which matches the spectrum of `s(t - tau_m)` under a
//! forward DFT with an `exp(-j ...)` kernel.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Position = [f64; 3];

/// Minimum allowed distance between two sensors, in meters.
pub const MIN_SENSOR_SPACING: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub speed_of_sound: f64,
    pub sample_rate: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            speed_of_sound: 343.0,
            sample_rate: 16000.0,
        }
    }
}

impl PhysicalConstants {
    pub fn new(speed_of_sound: f64, sample_rate: f64) -> Result<Self> {
        if !(speed_of_sound > 0.0 && speed_of_sound.is_finite()) {
            return Err(Error::Config(format!("speed of sound {speed_of_sound}")));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::Config(format!("sample rate {sample_rate}")));
        }
        Ok(Self {
            speed_of_sound,
            sample_rate,
        })
    }
}

/// A named set of sensor positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    id: String,
    positions: Vec<Position>,
}

#[derive(Serialize, Deserialize)]
struct GeometryFile {
    id: String,
    positions_m: Vec<[f64; 3]>,
}

impl ArrayGeometry {
    pub fn new(id: impl Into<String>, positions: Vec<Position>) -> Result<Self> {
        let id = id.into();
        if positions.is_empty() {
            return Err(Error::Geometry(format!("'{id}' has no sensors")));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Geometry(format!("'{id}' has non-finite coordinates")));
        }
        for m in 0..positions.len() {
            for n in m + 1..positions.len() {
                let d = distance(&positions[m], &positions[n]);
                if d < MIN_SENSOR_SPACING {
                    return Err(Error::Geometry(format!(
                        "'{id}': sensors {m} and {n} are {d:.2e} m apart (min {MIN_SENSOR_SPACING} m)"
                    )));
                }
            }
        }
        Ok(Self { id, positions })
    }

    /// Single-sensor "array" at the origin.
    pub fn single(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            positions: vec![[0.0; 3]],
        }
    }

    /// Two sensors on the x axis, centered on the origin.
    pub fn pair(id: impl Into<String>, spacing: f64) -> Result<Self> {
        let h = spacing / 2.0;
        Self::new(id, vec![[-h, 0.0, 0.0], [h, 0.0, 0.0]])
    }

    /// Horizontal circular array: `rim` equi-spaced sensors on a circle of the
    /// given diameter, the first at azimuth 0, optionally preceded by one
    /// sensor at the center.
    pub fn circular(
        id: impl Into<String>,
        rim: usize,
        diameter: f64,
        with_center: bool,
    ) -> Result<Self> {
        let r = diameter / 2.0;
        let mut positions = Vec::with_capacity(rim + 1);
        if with_center {
            positions.push([0.0; 3]);
        }
        for i in 0..rim {
            let a = TAU * i as f64 / rim as f64;
            positions.push([r * a.cos(), r * a.sin(), 0.0]);
        }
        Self::new(id, positions)
    }

    /// The 7-microphone device layout: six sensors on a 72 mm circle plus one
    /// at the center (channel 0).
    pub fn seven_mic_circular() -> Self {
        Self::circular("circ7", 6, 0.072, true).expect("static geometry is valid")
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn num_sensors(&self) -> usize {
        self.positions.len()
    }

    /// Same layout shifted by a constant offset.
    pub fn translated(&self, offset: Position) -> Self {
        let positions = self
            .positions
            .iter()
            .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
            .collect();
        Self {
            id: self.id.clone(),
            positions,
        }
    }

    /// Keep only the listed channels, in the given order.
    pub fn subset(&self, id: impl Into<String>, channels: &[usize]) -> Result<Self> {
        let mut positions = Vec::with_capacity(channels.len());
        for &c in channels {
            let p = self.positions.get(c).ok_or_else(|| {
                Error::Geometry(format!("channel {c} not in '{}'", self.id))
            })?;
            positions.push(*p);
        }
        Self::new(id, positions)
    }

    pub fn pairwise_distances(&self) -> Vec<Vec<f64>> {
        let m = self.positions.len();
        let mut d = vec![vec![0.0; m]; m];
        for i in 0..m {
            for j in i + 1..m {
                let v = distance(&self.positions[i], &self.positions[j]);
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        d
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GeometryFile = serde_json::from_str(text)?;
        Self::new(file.id, file.positions_m)
    }

    pub fn to_json_string(&self) -> String {
        let file = GeometryFile {
            id: self.id.clone(),
            positions_m: self.positions.clone(),
        };
        serde_json::to_string_pretty(&file).expect("geometry serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }
}

fn distance(a: &Position, b: &Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Far-field direction of arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    azimuth: f64,
    elevation: f64,
}

impl Direction {
    /// Azimuth is wrapped into `[0, 2pi)`; elevation must lie in `[-pi/2, pi/2]`.
    pub fn new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !azimuth.is_finite() || !elevation.is_finite() {
            return Err(Error::Direction("non-finite angle".into()));
        }
        if !(-PI / 2.0..=PI / 2.0).contains(&elevation) {
            return Err(Error::Direction(format!("elevation {elevation} rad")));
        }
        let mut az = azimuth.rem_euclid(TAU);
        if az >= TAU {
            az = 0.0;
        }
        Ok(Self {
            azimuth: az,
            elevation,
        })
    }

    pub fn horizontal(azimuth: f64) -> Self {
        Self::new(azimuth, 0.0).expect("finite azimuth")
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    /// Unit vector from the array toward the source.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        [ce * ca, ce * sa, se]
    }
}

/// `n` horizontal look directions at azimuths `0, 360/n, ...` degrees.
pub fn look_directions(n: usize) -> Vec<Direction> {
    (0..n)
        .map(|i| Direction::horizontal(TAU * i as f64 / n as f64))
        .collect()
}

pub fn steering_delays(
    geom: &ArrayGeometry,
    dir: &Direction,
    consts: &PhysicalConstants,
) -> Vec<f64> {
    let u = dir.unit_vector();
    geom.positions
        .iter()
        .map(|p| -(p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / consts.speed_of_sound)
        .collect()
}

/// Plane-wave manifold `v_m = exp(-j omega tau_m)` at angular frequency `omega` (rad/s).
pub fn array_manifold(
    geom: &ArrayGeometry,
    dir: &Direction,
    omega: f64,
    consts: &PhysicalConstants,
) -> Vec<Complex64> {
    steering_delays(geom, dir, consts)
        .into_iter()
        .map(|tau| Complex64::from_polar(1.0, -omega * tau))
        .collect()
}

/// Sum over sensor pairs of the absolute difference of inter-sensor distances.
pub fn geometry_dissimilarity(reference: &ArrayGeometry, test: &ArrayGeometry) -> Result<f64> {
    if reference.num_sensors() != test.num_sensors() {
        return Err(Error::Dimension {
            context: "geometry dissimilarity channel count",
            expected: reference.num_sensors(),
            actual: test.num_sensors(),
        });
    }
    let a = reference.pairwise_distances();
    let b = test.pairwise_distances();
    let m = a.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += (a[i][j] - b[i][j]).abs();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pair_distance() {
        let g = ArrayGeometry::new("p", vec![[0.0; 3], [0.073, 0.0, 0.0]]).unwrap();
        let d = g.pairwise_distances();
        assert_abs_diff_eq!(d[0][1], 0.073, epsilon = 1e-15);
        assert_eq!(d[0][0], 0.0);
        assert_eq!(d[1][0], d[0][1]);
    }

    #[test]
    fn circular_center_to_rim() {
        let g = ArrayGeometry::seven_mic_circular();
        assert_eq!(g.num_sensors(), 7);
        let d = g.pairwise_distances();
        for m in 1..7 {
            assert_abs_diff_eq!(d[0][m], 0.036, epsilon = 1e-12);
            assert_eq!(d[m][m], 0.0);
        }
        // adjacent rim sensors of a hexagon are one radius apart
        assert_abs_diff_eq!(d[1][2], 0.036, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_geometries() {
        assert!(ArrayGeometry::new("e", vec![]).is_err());
        assert!(ArrayGeometry::new("n", vec![[f64::NAN, 0.0, 0.0]]).is_err());
        assert!(ArrayGeometry::new("c", vec![[0.0; 3], [0.0005, 0.0, 0.0]]).is_err());
    }

    #[test]
    fn coincident_sensors_have_zero_delay() {
        // only constructible as a single sensor; check that and the origin case
        let g = ArrayGeometry::single("s");
        let tau = steering_delays(&g, &Direction::horizontal(1.0), &Default::default());
        assert_eq!(tau, vec![0.0]);
        let v = array_manifold(&g, &Direction::horizontal(1.0), 5000.0, &Default::default());
        assert_eq!(v[0], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn endfire_delay_difference() {
        let g = ArrayGeometry::new("p", vec![[0.0; 3], [0.073, 0.0, 0.0]]).unwrap();
        let tau = steering_delays(&g, &Direction::horizontal(0.0), &Default::default());
        assert_abs_diff_eq!((tau[1] - tau[0]).abs(), 0.073 / 343.0, epsilon = 1e-15);
        assert_abs_diff_eq!((tau[1] - tau[0]).abs(), 2.128e-4, epsilon = 1e-7);
        // the sensor nearer the source (at +x) hears it first
        assert!(tau[1] < tau[0]);
    }

    #[test]
    fn broadside_has_equal_delays() {
        let g = ArrayGeometry::pair("p", 0.073).unwrap();
        let tau = steering_delays(&g, &Direction::horizontal(PI / 2.0), &Default::default());
        assert_abs_diff_eq!(tau[0], tau[1], epsilon = 1e-18);
    }

    #[test]
    fn manifold_at_dc_is_ones() {
        let g = ArrayGeometry::seven_mic_circular();
        let v = array_manifold(&g, &Direction::horizontal(0.3), 0.0, &Default::default());
        assert!(v.iter().all(|x| *x == Complex64::new(1.0, 0.0)));
    }

    #[test]
    fn endfire_phase_difference_at_1khz() {
        let g = ArrayGeometry::new("p", vec![[0.0; 3], [0.073, 0.0, 0.0]]).unwrap();
        let v = array_manifold(&g, &Direction::horizontal(0.0), TAU * 1000.0, &Default::default());
        let dphi = (v[0] * v[1].conj()).arg().abs();
        assert_abs_diff_eq!(dphi, TAU * 1000.0 * 0.073 / 343.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dphi, 1.3372, epsilon = 1e-4);
    }

    #[test]
    fn dissimilarity_examples() {
        let a = ArrayGeometry::pair("a", 0.073).unwrap();
        let b = ArrayGeometry::pair("b", 0.063).unwrap();
        let c = ArrayGeometry::pair("c", 0.036).unwrap();
        assert_eq!(geometry_dissimilarity(&a, &a).unwrap(), 0.0);
        assert_abs_diff_eq!(geometry_dissimilarity(&a, &b).unwrap(), 0.010, epsilon = 1e-12);
        assert_abs_diff_eq!(geometry_dissimilarity(&a, &c).unwrap(), 0.037, epsilon = 1e-12);
        let seven = ArrayGeometry::seven_mic_circular();
        assert!(geometry_dissimilarity(&a, &seven).is_err());
    }

    #[test]
    fn direction_wraps_and_validates() {
        let d = Direction::new(-PI / 2.0, 0.0).unwrap();
        assert_abs_diff_eq!(d.azimuth(), 1.5 * PI, epsilon = 1e-12);
        assert!(Direction::new(0.0, 2.0).is_err());
        let dirs = look_directions(12);
        assert_eq!(dirs.len(), 12);
        assert_abs_diff_eq!(dirs[3].azimuth(), PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let g = ArrayGeometry::seven_mic_circular();
        let back = ArrayGeometry::from_json_str(&g.to_json_string()).unwrap();
        assert_eq!(g, back);
        let text = r#"{"id": "x", "positions_m": [[0,0,0],[0.05,0,0]]}"#;
        assert_eq!(ArrayGeometry::from_json_str(text).unwrap().num_sensors(), 2);
        assert!(ArrayGeometry::from_json_str(r#"{"id": "x"}"#).is_err());
    }

    fn arb_geometry(m: usize) -> impl Strategy<Value = ArrayGeometry> {
        proptest::collection::vec(
            (-0.1f64..0.1, -0.1f64..0.1, -0.05f64..0.05).prop_map(|(x, y, z)| [x, y, z]),
            m,
        )
        .prop_filter_map("sensors too close", |p| ArrayGeometry::new("r", p).ok())
    }

    proptest! {
        #[test]
        fn manifold_norm_is_sensor_count(
            g in arb_geometry(5),
            az in 0.0f64..TAU,
            el in -1.5f64..1.5,
            f in 0.0f64..8000.0,
        ) {
            let dir = Direction::new(az, el).unwrap();
            let v = array_manifold(&g, &dir, TAU * f, &Default::default());
            let norm: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            prop_assert!((norm - 5.0).abs() < 1e-12);
        }

        #[test]
        fn translation_shifts_delays_uniformly(
            g in arb_geometry(4),
            off in proptest::array::uniform3(-1.0f64..1.0),
            az in 0.0f64..TAU,
            f in 100.0f64..8000.0,
        ) {
            let c = PhysicalConstants::default();
            let dir = Direction::horizontal(az);
            let t0 = steering_delays(&g, &dir, &c);
            let t1 = steering_delays(&g.translated(off), &dir, &c);
            let shift = t1[0] - t0[0];
            for m in 1..4 {
                prop_assert!((t1[m] - t0[m] - shift).abs() < 1e-15);
            }
            let v0 = array_manifold(&g, &dir, TAU * f, &c);
            let v1 = array_manifold(&g.translated(off), &dir, TAU * f, &c);
            for m in 1..4 {
                let p0 = v0[m] * v0[0].conj();
                let p1 = v1[m] * v1[0].conj();
                prop_assert!((p0 - p1).norm() < 1e-9);
            }
        }

        #[test]
        fn dissimilarity_is_pseudometric(
            a in arb_geometry(3),
            b in arb_geometry(3),
            c in arb_geometry(3),
        ) {
            let ab = geometry_dissimilarity(&a, &b).unwrap();
            let ba = geometry_dissimilarity(&b, &a).unwrap();
            let bc = geometry_dissimilarity(&b, &c).unwrap();
            let ac = geometry_dissimilarity(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-15);
            prop_assert_eq!(geometry_dissimilarity(&a, &a).unwrap(), 0.0);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
