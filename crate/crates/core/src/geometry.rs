//! Array geometry, propagation medium and the closed-form relations between
//! delays, angles and sampling resolution.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound used when nothing else is configured, m/s.
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn rotated(self, radians: f64) -> Point2 {
        let (s, c) = radians.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

/// Three microphones in the plane.
///
/// `spacing` is the nominal side length the estimators assume. Placement
/// jitter moves `mics` but leaves `spacing` alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    mics: [Point2; 3],
    spacing: f64,
    reference: usize,
}

impl ArrayGeometry {
    /// Equilateral triangle with the reference microphone at the origin and the
    /// others at `(d, 0)` and `(d/2, d·√3/2)`.
    pub fn equilateral(spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::domain(format!("spacing must be > 0, got {spacing}")));
        }
        let h = spacing * 3f64.sqrt() / 2.0;
        Self::new(
            [
                Point2::new(0.0, 0.0),
                Point2::new(spacing, 0.0),
                Point2::new(spacing / 2.0, h),
            ],
            spacing,
            0,
        )
    }

    pub fn new(mics: [Point2; 3], spacing: f64, reference: usize) -> Result<Self> {
        if reference > 2 {
            return Err(Error::domain(format!("reference index {reference} not in 0..3")));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::domain(format!("spacing must be > 0, got {spacing}")));
        }
        if mics.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::domain("microphone coordinates must be finite"));
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            if !(mics[i].distance(mics[j]) > 0.0) {
                return Err(Error::domain(format!("microphones {i} and {j} coincide")));
            }
        }
        Ok(ArrayGeometry {
            mics,
            spacing,
            reference,
        })
    }

    pub fn mics(&self) -> &[Point2; 3] {
        &self.mics
    }

    pub fn mic(&self, i: usize) -> Point2 {
        self.mics[i]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn reference_index(&self) -> usize {
        self.reference
    }

    pub fn reference(&self) -> Point2 {
        self.mics[self.reference]
    }

    pub fn centroid(&self) -> Point2 {
        let (sx, sy) = self
            .mics
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / 3.0, sy / 3.0)
    }

    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        self.mics[i].distance(self.mics[j])
    }

    pub fn max_pair_distance(&self) -> f64 {
        [(0, 1), (0, 2), (1, 2)]
            .iter()
            .map(|&(i, j)| self.pair_distance(i, j))
            .fold(0.0, f64::max)
    }

    /// Rigid rotation of every microphone about the origin.
    pub fn rotated(&self, radians: f64) -> Self {
        ArrayGeometry {
            mics: self.mics.map(|p| p.rotated(radians)),
            ..*self
        }
    }

    /// The same array with microphones 1 and 2 swapped (reference stays 0).
    pub fn with_swapped_non_reference(&self) -> Self {
        let mut mics = self.mics;
        mics.swap(1, 2);
        ArrayGeometry { mics, ..*self }
    }

    /// Moves each microphone by an independent offset drawn uniformly from the
    /// disk of radius `tolerance`.
    pub fn with_placement_jitter<R: Rng + ?Sized>(&self, tolerance: f64, rng: &mut R) -> Result<Self> {
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::domain(format!("tolerance must be >= 0, got {tolerance}")));
        }
        if tolerance == 0.0 {
            return Ok(*self);
        }
        let mut mics = self.mics;
        for p in &mut mics {
            let r = tolerance * rng.random::<f64>().sqrt();
            let a = 2.0 * PI * rng.random::<f64>();
            p.x += r * a.cos();
            p.y += r * a.sin();
        }
        Ok(ArrayGeometry { mics, ..*self })
    }
}

/// Seeded form of [`ArrayGeometry::with_placement_jitter`].
pub fn apply_placement_jitter(geometry: &ArrayGeometry, tolerance: f64, rng_seed: u64) -> Result<ArrayGeometry> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed);
    geometry.with_placement_jitter(tolerance, &mut rng)
}

/// Propagation medium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    speed_of_sound: f64,
    temperature_c: Option<f64>,
}

impl Medium {
    pub fn new(speed_of_sound: f64) -> Result<Self> {
        if !(speed_of_sound.is_finite() && speed_of_sound > 0.0) {
            return Err(Error::domain(format!(
                "speed of sound must be > 0, got {speed_of_sound}"
            )));
        }
        Ok(Medium {
            speed_of_sound,
            temperature_c: None,
        })
    }

    /// Dry air, linear model `c = 331.3 + 0.606·T`.
    pub fn from_temperature(celsius: f64) -> Result<Self> {
        let mut m = Medium::new(331.3 + 0.606 * celsius)?;
        m.temperature_c = Some(celsius);
        Ok(m)
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn temperature_c(&self) -> Option<f64> {
        self.temperature_c
    }
}

impl Default for Medium {
    fn default() -> Self {
        Medium {
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            temperature_c: None,
        }
    }
}

/// Sample rate plus the per-microphone sampling phase offsets, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    sample_rate: f64,
    phase_offsets: [f64; 3],
}

impl SamplingSpec {
    pub fn new(sample_rate: f64) -> Result<Self> {
        Self::with_offsets(sample_rate, [0.0; 3])
    }

    /// Each offset must lie in `[0, 1/fs)`.
    pub fn with_offsets(sample_rate: f64, phase_offsets: [f64; 3]) -> Result<Self> {
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::domain(format!("sample rate must be > 0, got {sample_rate}")));
        }
        let period = 1.0 / sample_rate;
        for (i, &o) in phase_offsets.iter().enumerate() {
            if !(o >= 0.0 && o < period) {
                return Err(Error::domain(format!(
                    "phase offset {i} = {o} s outside [0, {period})"
                )));
            }
        }
        Ok(SamplingSpec {
            sample_rate,
            phase_offsets,
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn phase_offsets(&self) -> [f64; 3] {
        self.phase_offsets
    }
}

/// Emitter location in metres, in the array's coordinate frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePosition {
    pub x: f64,
    pub y: f64,
}

impl SourcePosition {
    pub const fn new(x: f64, y: f64) -> Self {
        SourcePosition { x, y }
    }

    /// Point at `radius` metres and `azimuth_deg` degrees from `origin`.
    pub fn from_polar(origin: Point2, radius: f64, azimuth_deg: f64) -> Self {
        let a = azimuth_deg.to_radians();
        SourcePosition::new(origin.x + radius * a.cos(), origin.y + radius * a.sin())
    }

    pub fn point(self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    /// Degrees in `[0, 360)` from the reference microphone's horizontal.
    pub fn azimuth(self, geometry: &ArrayGeometry) -> f64 {
        let r = geometry.reference();
        azimuth_deg(self.y - r.y, self.x - r.x)
    }
}

/// `atan2(dy, dx)` in degrees, wrapped into `[0, 360)`.
pub fn azimuth_deg(dy: f64, dx: f64) -> f64 {
    wrap_degrees(dy.atan2(dx).to_degrees())
}

pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Absolute angular difference on the circle, in `[0, 180]`.
pub fn angular_distance_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Arrival time of a wavefront from `source` at each microphone.
pub fn true_toa(geometry: &ArrayGeometry, medium: &Medium, source: SourcePosition) -> Result<[f64; 3]> {
    let c = medium.speed_of_sound();
    let p = source.point();
    let mut out = [0.0; 3];
    for (i, mic) in geometry.mics().iter().enumerate() {
        let d = p.distance(*mic);
        if !(d > 0.0) {
            return Err(Error::domain(format!("source coincides with microphone {i}")));
        }
        out[i] = d / c;
    }
    Ok(out)
}

/// Single-pair direction of arrival `arcsin(c·τ/d)` in degrees.
pub fn doa_from_tdoa(tau: f64, spacing: f64, speed_of_sound: f64) -> Result<f64> {
    if !(spacing > 0.0 && speed_of_sound > 0.0) {
        return Err(Error::domain("spacing and speed of sound must be > 0"));
    }
    let ratio = speed_of_sound * tau / spacing;
    if !(ratio.abs() <= 1.0) {
        return Err(Error::OutOfRange { ratio });
    }
    Ok(ratio.asin().to_degrees())
}

/// Smallest resolvable path-length difference, `c / fs` metres.
pub fn quantization_floor(speed_of_sound: f64, sample_rate: f64) -> Result<f64> {
    if !(sample_rate > 0.0) {
        return Err(Error::domain(format!("sample rate must be > 0, got {sample_rate}")));
    }
    Ok(speed_of_sound / sample_rate)
}

/// Number of distinct microphone pairs, `n(n-1)/2`.
pub fn pair_count(n_mics: usize) -> Result<usize> {
    if n_mics < 2 {
        return Err(Error::domain(format!("need at least 2 microphones, got {n_mics}")));
    }
    Ok(n_mics * (n_mics - 1) / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equilateral_sides_are_equal() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((g.pair_distance(i, j) - 0.1).abs() < 1e-12);
        }
        assert_eq!(g.reference(), Point2::new(0.0, 0.0));
    }

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(ArrayGeometry::equilateral(0.0).is_err());
        let p = Point2::new(1.0, 1.0);
        assert!(ArrayGeometry::new([p, p, Point2::new(0.0, 0.0)], 0.1, 0).is_err());
        assert!(ArrayGeometry::new([p, Point2::new(2.0, 0.0), Point2::new(0.0, 0.0)], 0.1, 3).is_err());
    }

    #[test]
    fn toa_symmetry_at_circumcenter() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        let c = g.centroid();
        let t = true_toa(&g, &Medium::default(), SourcePosition::new(c.x, c.y)).unwrap();
        assert!((t[0] - t[1]).abs() < 1e-15 && (t[0] - t[2]).abs() < 1e-15);
    }

    #[test]
    fn toa_unit_ratio() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        let t = true_toa(&g, &Medium::new(343.0).unwrap(), SourcePosition::new(343.0, 0.0)).unwrap();
        assert_eq!(t[0], 1.0);
    }

    #[test]
    fn toa_coincident_source_is_error() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        assert!(true_toa(&g, &Medium::default(), SourcePosition::new(0.1, 0.0)).is_err());
    }

    // Difference of distances via (a² - b²) / (a + b), which avoids the
    // cancellation in a - b.
    fn distance_difference_oracle(p: Point2, a: Point2, b: Point2) -> f64 {
        let sa = (p.x - a.x).powi(2) + (p.y - a.y).powi(2);
        let sb = (p.x - b.x).powi(2) + (p.y - b.y).powi(2);
        ((p.x - a.x) * (p.x - a.x) - (p.x - b.x) * (p.x - b.x) + (p.y - a.y) * (p.y - a.y)
            - (p.y - b.y) * (p.y - b.y))
            / (sa.sqrt() + sb.sqrt())
    }

    #[test]
    fn toa_differences_match_distance_oracle() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        let m = Medium::new(343.0).unwrap();
        let src = SourcePosition::new(100.0, 0.0);
        let t = true_toa(&g, &m, src).unwrap();
        for (i, j) in [(1, 0), (2, 0), (2, 1)] {
            let oracle = distance_difference_oracle(src.point(), g.mic(i), g.mic(j)) / 343.0;
            assert!((t[i] - t[j] - oracle).abs() < 1e-12, "pair {i}{j}");
        }
    }

    #[test]
    fn doa_examples() {
        assert_eq!(doa_from_tdoa(0.0, 0.1, 343.0).unwrap(), 0.0);
        let thirty = doa_from_tdoa(0.05 / 343.0, 0.1, 343.0).unwrap();
        assert!((thirty - 30.0).abs() < 1e-9, "{thirty}");
        let ninety = doa_from_tdoa(0.1 / 343.0, 0.1, 343.0).unwrap();
        assert!((ninety - 90.0).abs() < 1e-6);
        assert!(matches!(
            doa_from_tdoa(0.2 / 343.0, 0.1, 343.0),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn quantization_floor_examples() {
        let mm = quantization_floor(343.0, 48_000.0).unwrap() * 1e3;
        assert!((7.1..7.2).contains(&mm), "{mm}");
        assert!((quantization_floor(343.0, 10_000.0).unwrap() - 0.0343).abs() < 1e-15);
        assert_eq!(
            quantization_floor(343.0, 20_000.0).unwrap() * 2.0,
            quantization_floor(343.0, 10_000.0).unwrap()
        );
        assert!(quantization_floor(343.0, 0.0).is_err());
    }

    #[test]
    fn pair_count_examples() {
        assert_eq!(pair_count(3).unwrap(), 3);
        assert_eq!(pair_count(2).unwrap(), 1);
        assert_eq!(pair_count(10).unwrap(), 45);
        assert!(pair_count(1).is_err());
    }

    #[test]
    fn temperature_model() {
        let m = Medium::from_temperature(20.0).unwrap();
        assert!((m.speed_of_sound() - 343.42).abs() < 1e-9);
        assert!(Medium::new(-1.0).is_err());
    }

    #[test]
    fn sampling_offsets_validated() {
        assert!(SamplingSpec::with_offsets(10_000.0, [0.0, 0.5e-4, 0.99e-4]).is_ok());
        assert!(SamplingSpec::with_offsets(10_000.0, [0.0, 1e-4, 0.0]).is_err());
        assert!(SamplingSpec::with_offsets(10_000.0, [-1e-9, 0.0, 0.0]).is_err());
    }

    #[test]
    fn jitter_zero_is_identity_and_seeded() {
        let g = ArrayGeometry::equilateral(0.1).unwrap();
        assert_eq!(apply_placement_jitter(&g, 0.0, 3).unwrap(), g);
        let a = apply_placement_jitter(&g, 0.001, 3).unwrap();
        let b = apply_placement_jitter(&g, 0.001, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.spacing(), g.spacing());
        assert_ne!(a, g);
    }

    proptest! {
        #[test]
        fn jitter_within_tolerance(seed in any::<u64>(), tol in 0.0f64..0.01) {
            let g = ArrayGeometry::equilateral(0.1).unwrap();
            let j = apply_placement_jitter(&g, tol, seed).unwrap();
            for i in 0..3 {
                prop_assert!(j.mic(i).distance(g.mic(i)) <= tol);
            }
        }

        #[test]
        fn tdoa_bounded_by_pair_distance(x in -200.0f64..200.0, y in -200.0f64..200.0) {
            let g = ArrayGeometry::equilateral(0.1).unwrap();
            let m = Medium::default();
            prop_assume!(g.mics().iter().all(|p| p.distance(Point2::new(x, y)) > 1e-6));
            let t = true_toa(&g, &m, SourcePosition::new(x, y)).unwrap();
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                prop_assert!((t[i] - t[j]).abs() <= g.pair_distance(i, j) / m.speed_of_sound() * (1.0 + 1e-12));
            }
        }

        #[test]
        fn doa_is_odd(tau in -2.9e-4f64..2.9e-4) {
            let a = doa_from_tdoa(tau, 0.1, 343.0).unwrap();
            let b = doa_from_tdoa(-tau, 0.1, 343.0).unwrap();
            prop_assert_eq!(a, -b);
        }

        #[test]
        fn floor_times_rate_is_speed(c in 1.0f64..2000.0, fs in 1.0f64..1e6) {
            let f = quantization_floor(c, fs).unwrap();
            prop_assert!(((f * fs) - c).abs() <= c * f64::EPSILON);
        }

        #[test]
        fn azimuth_round_trip(r in 0.5f64..500.0, theta in 0.0f64..360.0) {
            let g = ArrayGeometry::equilateral(0.1).unwrap();
            let s = SourcePosition::from_polar(g.reference(), r, theta);
            prop_assert!(angular_distance_deg(s.azimuth(&g), theta) < 1e-9);
        }
    }
}
