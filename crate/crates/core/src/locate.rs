//! Source localization from two TDOAs.
//!
//! The fit minimises
//!
//! ```text
//! E(x, y) = (d2 - d1 - c·τ21)² + (d3 - d1 - c·τ31)²
//! ```
//!
//! where `d_i` is the distance from `(x, y)` to microphone `i` (1 = reference).
//! The surface has several basins (each residual is zero on one branch of a
//! hyperbola), so a coarse polar grid over `1 m <= r <= bound` supplies
//! starting cells and a damped Gauss-Newton descent with a sufficient-decrease
//! test polishes them inside the disk `r <= bound`. The two hyperbolas may
//! cross twice; algebraic crossing points in the grid's range are added as
//! extra seeds, and when two fits are equally exact the farther one wins.

use serde::{Deserialize, Serialize};

use crate::dsp::{self, Interpolation, Waveform};
use crate::error::{Error, Result};
use crate::geometry::{azimuth_deg, ArrayGeometry, Medium, Point2};
use crate::models::TrainedModel;
use crate::simulate::{default_max_lag, TdoaPair};

pub const DEFAULT_RADIUS_BOUND: f64 = 150.0;
pub const GRID_ANGLES: usize = 360;
pub const GRID_RADII: usize = 24;
const GRID_MIN_RADIUS: f64 = 1.0;
const MAX_ITERATIONS: usize = 500;
const GRADIENT_TOLERANCE: f64 = 1e-9;
const STEP_TOLERANCE: f64 = 1e-10;
/// Radial curvature of `E` below which range is reported as unreliable.
const FLAT_CURVATURE: f64 = 1e-12;
/// Grid local minima refined per problem.
const MAX_STARTS: usize = 4;
/// Residuals closer than this (m²) count as equally good fits.
const TIE_RESIDUAL: f64 = 1e-24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultilaterationProblem {
    pub geometry: ArrayGeometry,
    pub medium: Medium,
    pub tdoa: TdoaPair,
    /// Search radius around the array centroid, metres.
    pub radius_bound: f64,
}

impl MultilaterationProblem {
    pub fn new(geometry: ArrayGeometry, medium: Medium, tdoa: TdoaPair, radius_bound: f64) -> Result<Self> {
        if !(radius_bound > GRID_MIN_RADIUS && radius_bound.is_finite()) {
            return Err(Error::domain(format!(
                "radius bound must exceed {GRID_MIN_RADIUS} m, got {radius_bound}"
            )));
        }
        Ok(MultilaterationProblem {
            geometry,
            medium,
            tdoa,
            radius_bound,
        })
    }

    fn path_differences(&self) -> [f64; 2] {
        let c = self.medium.speed_of_sound();
        [c * self.tdoa.tau21, c * self.tdoa.tau31]
    }

    fn residuals(&self, p: Point2) -> [f64; 2] {
        let m = self.geometry.mics();
        let d0 = p.distance(m[0]);
        let dd = self.path_differences();
        [
            range_difference(p, m[1], m[0], d0) - dd[0],
            range_difference(p, m[2], m[0], d0) - dd[1],
        ]
    }

    /// Residuals and their Jacobian rows. The unit vector toward a microphone
    /// the point sits exactly on is taken as zero.
    fn residuals_and_jacobian(&self, p: Point2) -> ([f64; 2], [[f64; 2]; 2]) {
        let m = self.geometry.mics();
        let unit = |q: Point2| {
            let (dx, dy) = (p.x - q.x, p.y - q.y);
            let d = dx.hypot(dy);
            if d > 0.0 {
                (d, [dx / d, dy / d])
            } else {
                (0.0, [0.0, 0.0])
            }
        };
        let (d0, u0) = unit(m[0]);
        let (_, u1) = unit(m[1]);
        let (_, u2) = unit(m[2]);
        let dd = self.path_differences();
        (
            [
                range_difference(p, m[1], m[0], d0) - dd[0],
                range_difference(p, m[2], m[0], d0) - dd[1],
            ],
            [[u1[0] - u0[0], u1[1] - u0[1]], [u2[0] - u0[0], u2[1] - u0[1]]],
        )
    }
}

/// `|p - a| - |p - b|` without the cancellation of subtracting two large
/// distances: `(|p-a|² - |p-b|²) / (|p-a| + |p-b|)`.
fn range_difference(p: Point2, a: Point2, b: Point2, db: f64) -> f64 {
    let da = p.distance(a);
    let sum = da + db;
    if sum == 0.0 {
        return 0.0;
    }
    let num = (b.x - a.x) * (2.0 * p.x - a.x - b.x) + (b.y - a.y) * (2.0 * p.y - a.y - b.y);
    num / sum
}

/// `E(x, y)` in square metres.
pub fn objective(problem: &MultilaterationProblem, x: f64, y: f64) -> f64 {
    let r = problem.residuals(Point2::new(x, y));
    r[0] * r[0] + r[1] * r[1]
}

/// `∇E(x, y)`.
pub fn objective_gradient(problem: &MultilaterationProblem, x: f64, y: f64) -> [f64; 2] {
    let (r, j) = problem.residuals_and_jacobian(Point2::new(x, y));
    [
        2.0 * (r[0] * j[0][0] + r[1] * j[1][0]),
        2.0 * (r[0] * j[0][1] + r[1] * j[1][1]),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationEstimate {
    pub position: Point2,
    /// Degrees in `[0, 360)` from the reference microphone.
    pub azimuth_deg: f64,
    /// Final objective value, m².
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// The objective is nearly flat along the range direction, so only the
    /// azimuth is meaningful.
    pub range_unreliable: bool,
}

/// Centres of the coarse search grid, row-major over radius then angle.
pub fn grid_points(geometry: &ArrayGeometry, radius_bound: f64) -> Vec<Point2> {
    let c = geometry.centroid();
    let ratio = (radius_bound / GRID_MIN_RADIUS).ln() / (GRID_RADII - 1) as f64;
    let mut pts = Vec::with_capacity(GRID_ANGLES * GRID_RADII);
    for ri in 0..GRID_RADII {
        let r = GRID_MIN_RADIUS * (ratio * ri as f64).exp();
        for ai in 0..GRID_ANGLES {
            let a = ((ai as f64 + 0.5) * 360.0 / GRID_ANGLES as f64).to_radians();
            pts.push(Point2::new(c.x + r * a.cos(), c.y + r * a.sin()));
        }
    }
    pts
}

fn project(p: Point2, centre: Point2, bound: f64) -> Point2 {
    let d = p.distance(centre);
    if d <= bound {
        p
    } else {
        let s = bound / d;
        Point2::new(centre.x + (p.x - centre.x) * s, centre.y + (p.y - centre.y) * s)
    }
}

pub fn multilaterate(problem: &MultilaterationProblem) -> Result<LocationEstimate> {
    if !problem.tdoa.is_finite() {
        return Err(Error::domain("TDOAs must be finite"));
    }
    let grid = grid_points(&problem.geometry, problem.radius_bound);
    let values: Vec<f64> = grid.iter().map(|q| objective(problem, q.x, q.y)).collect();
    let grid_min = values.iter().copied().fold(f64::INFINITY, f64::min);

    let mut minima = grid_local_minima(&values);
    minima.truncate(MAX_STARTS);
    let centre = problem.geometry.centroid();
    let starts: Vec<Point2> = minima
        .iter()
        .map(|&k| grid[k])
        .chain(
            exact_roots(problem)
                .into_iter()
                .filter(|q| q.distance(centre) >= GRID_MIN_RADIUS)
                .map(|q| project(q, centre, problem.radius_bound)),
        )
        .collect();
    let mut best: Option<Refined> = None;
    for q in starts {
        let r = refine(problem, q, objective(problem, q.x, q.y));
        if r.residual > grid_min {
            continue;
        }
        best = Some(match best {
            None => r,
            Some(b) => prefer(problem, b, r),
        });
    }
    let r = best.expect("the grid minimum is always a start");
    let p = r.position;
    let reference = problem.geometry.reference();
    Ok(LocationEstimate {
        position: p,
        azimuth_deg: azimuth_deg(p.y - reference.y, p.x - reference.x),
        residual: r.residual,
        converged: r.converged,
        iterations: r.iterations,
        range_unreliable: radial_curvature(problem, p) < FLAT_CURVATURE,
    })
}

/// Points where both range differences match exactly, from the
/// spherical-intersection quadratic in the reference range `d0`. Used only
/// as extra seeds; inconsistent delays usually have none.
fn exact_roots(problem: &MultilaterationProblem) -> Vec<Point2> {
    let m = problem.geometry.mics();
    let dd = problem.path_differences();
    let a = [
        [m[1].x - m[0].x, m[1].y - m[0].y],
        [m[2].x - m[0].x, m[2].y - m[0].y],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-300 {
        return Vec::new();
    }
    let solve = |b: [f64; 2]| {
        [
            (a[1][1] * b[0] - a[0][1] * b[1]) / det,
            (a[0][0] * b[1] - a[1][0] * b[0]) / det,
        ]
    };
    // a_i·q = (|a_i|² - Δ_i²)/2 - d0·Δ_i with q = p - m0
    let norm2 = |v: [f64; 2]| v[0] * v[0] + v[1] * v[1];
    let u = solve([(norm2(a[0]) - dd[0] * dd[0]) / 2.0, (norm2(a[1]) - dd[1] * dd[1]) / 2.0]);
    let v = solve([-dd[0], -dd[1]]);
    let (qa, qb, qc) = (norm2(v) - 1.0, 2.0 * (u[0] * v[0] + u[1] * v[1]), norm2(u));
    let mut roots = Vec::new();
    if qa.abs() < 1e-12 {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let s = disc.sqrt();
            roots.push((-qb + s) / (2.0 * qa));
            roots.push((-qb - s) / (2.0 * qa));
        }
    }
    roots
        .into_iter()
        .filter(|&d0| d0 > 0.0 && d0 + dd[0] >= 0.0 && d0 + dd[1] >= 0.0 && d0.is_finite())
        .map(|d0| Point2::new(m[0].x + u[0] + d0 * v[0], m[0].y + u[1] + d0 * v[1]))
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Refined {
    position: Point2,
    residual: f64,
    converged: bool,
    iterations: usize,
}

/// Lower residual wins. Two exact fits (the hyperbolas can cross twice)
/// are resolved toward the farther one.
fn prefer(problem: &MultilaterationProblem, a: Refined, b: Refined) -> Refined {
    if (a.residual - b.residual).abs() <= TIE_RESIDUAL {
        let c = problem.geometry.centroid();
        if b.position.distance(c) > a.position.distance(c) {
            return b;
        }
        return a;
    }
    if b.residual < a.residual {
        b
    } else {
        a
    }
}

/// Grid cells no larger than their eight neighbours (angle wraps), sorted by
/// value then index.
fn grid_local_minima(values: &[f64]) -> Vec<usize> {
    let at = |ri: usize, ai: usize| values[ri * GRID_ANGLES + ai];
    let mut out = Vec::new();
    for ri in 0..GRID_RADII {
        for ai in 0..GRID_ANGLES {
            let v = at(ri, ai);
            let mut is_min = true;
            'scan: for dr in -1i64..=1 {
                let r2 = ri as i64 + dr;
                if r2 < 0 || r2 >= GRID_RADII as i64 {
                    continue;
                }
                for da in -1i64..=1 {
                    if dr == 0 && da == 0 {
                        continue;
                    }
                    let a2 = (ai as i64 + da).rem_euclid(GRID_ANGLES as i64) as usize;
                    if at(r2 as usize, a2) < v {
                        is_min = false;
                        break 'scan;
                    }
                }
            }
            if is_min {
                out.push(ri * GRID_ANGLES + ai);
            }
        }
    }
    out.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    out
}

fn refine(problem: &MultilaterationProblem, start: Point2, f_start: f64) -> Refined {
    let centre = problem.geometry.centroid();
    let bound = problem.radius_bound;
    let (mut p, mut f) = (start, f_start);
    // Levenberg-Marquardt damping on the 2x2 normal equations. Along the
    // far-field valley E is nearly flat, so a small gradient alone is not a
    // stopping signal; iteration ends once steps shrink below the tolerance.
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        let (r, j) = problem.residuals_and_jacobian(p);
        let jtr = [
            r[0] * j[0][0] + r[1] * j[1][0],
            r[0] * j[0][1] + r[1] * j[1][1],
        ];
        let grad_norm = 2.0 * jtr[0].hypot(jtr[1]);
        if grad_norm == 0.0 {
            converged = true;
            break;
        }
        let a00 = j[0][0] * j[0][0] + j[1][0] * j[1][0];
        let a01 = j[0][0] * j[0][1] + j[1][0] * j[1][1];
        let a11 = j[0][1] * j[0][1] + j[1][1] * j[1][1];
        let scale = a00.max(a11).max(1e-300);

        iterations += 1;
        let mut accepted = None;
        while lambda < 1e20 {
            let (m00, m11) = (a00 + lambda * scale, a11 + lambda * scale);
            let det = m00 * m11 - a01 * a01;
            let step = [
                -(m11 * jtr[0] - a01 * jtr[1]) / det,
                -(m00 * jtr[1] - a01 * jtr[0]) / det,
            ];
            let q = project(Point2::new(p.x + step[0], p.y + step[1]), centre, bound);
            let fq = objective(problem, q.x, q.y);
            // Armijo condition on the realised displacement
            let predicted = 2.0 * (jtr[0] * (q.x - p.x) + jtr[1] * (q.y - p.y));
            if fq.is_finite() && fq <= f + 1e-4 * predicted && fq <= f {
                accepted = Some((q, fq));
                break;
            }
            lambda *= 10.0;
        }
        let Some((q, fq)) = accepted else {
            // No decrease at any damping: p is stationary to working precision.
            converged = grad_norm < GRADIENT_TOLERANCE;
            break;
        };
        let moved = q.distance(p);
        p = q;
        f = fq;
        lambda = (lambda / 3.0).max(1e-20);
        if moved < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }

    Refined {
        position: p,
        residual: f,
        converged,
        iterations,
    }
}

/// Gauss-Newton curvature of `E` along the ray from the array centroid.
fn radial_curvature(problem: &MultilaterationProblem, p: Point2) -> f64 {
    let c = problem.geometry.centroid();
    let d = p.distance(c);
    if d == 0.0 {
        return f64::INFINITY;
    }
    let u = [(p.x - c.x) / d, (p.y - c.y) / d];
    let (_, j) = problem.residuals_and_jacobian(p);
    let a = j[0][0] * u[0] + j[0][1] * u[1];
    let b = j[1][0] * u[0] + j[1][1] * u[1];
    2.0 * (a * a + b * b)
}

/// Input to [`localize_pipeline`].
#[derive(Debug, Clone, Copy)]
pub enum PipelineInput<'a> {
    /// Synchronised channels in geometry order.
    Waveforms(&'a [Waveform]),
    Tdoa(TdoaPair),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub radius_bound: f64,
    pub interpolation: Interpolation,
    /// Lag window for GCC-PHAT; derived from the geometry when `None`.
    pub max_lag: Option<usize>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            radius_bound: DEFAULT_RADIUS_BOUND,
            interpolation: Interpolation::Parabolic,
            max_lag: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineEstimate {
    pub tdoa: TdoaPair,
    pub location: LocationEstimate,
    /// Model azimuth when a model was supplied, else the geometric one.
    pub azimuth_deg: f64,
    pub model_applied: bool,
}

/// TDOAs (GCC-PHAT for waveforms), geometric fit, then optional learned
/// azimuth correction.
pub fn localize_pipeline(
    geometry: &ArrayGeometry,
    medium: &Medium,
    input: PipelineInput<'_>,
    model: Option<&TrainedModel>,
    options: &PipelineOptions,
) -> Result<PipelineEstimate> {
    let tdoa = match input {
        PipelineInput::Tdoa(t) => t,
        PipelineInput::Waveforms(ch) => {
            if ch.len() != 3 {
                return Err(Error::domain(format!("expected 3 channels, got {}", ch.len())));
            }
            let fs = ch[0].sample_rate();
            let max_lag = options
                .max_lag
                .unwrap_or_else(|| default_max_lag(geometry, medium, fs))
                .min(ch.iter().map(Waveform::len).min().unwrap_or(1).saturating_sub(1));
            let d21 = dsp::gcc_phat(&ch[0], &ch[1], max_lag, options.interpolation)?;
            let d31 = dsp::gcc_phat(&ch[0], &ch[2], max_lag, options.interpolation)?;
            TdoaPair::new(d21.tau_hat, d31.tau_hat)
        }
    };
    let problem = MultilaterationProblem::new(*geometry, *medium, tdoa, options.radius_bound)?;
    let location = multilaterate(&problem)?;
    let (azimuth_deg, model_applied) = match model {
        Some(m) => (m.predict_azimuth(&tdoa)?, true),
        None => (location.azimuth_deg, false),
    };
    Ok(PipelineEstimate {
        tdoa,
        location,
        azimuth_deg,
        model_applied,
    })
}
