//! Conjugate heat kernel columns, the integral representations of the Ricci
//! tensor and the metric, the round-sphere normalization and the exact oracles.
//!
//! A column is the solution of the conjugate linearized flow started from a
//! mollified delta at `y` in the slot `(i', k')`. The width `σ` corresponds to
//! heat time `σ²/2` in every oracle comparison.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{Chart, UNIT_S3_VOLUME};
use crate::conservation::{pairing_series, DriftReport, PairingTarget};
use crate::error::{LabError, Result};
use crate::field::{ContraForm, Mat3, ScalarField, SYM};
use crate::flows::{integrate_conjugate_h, BackwardView, FlowTrajectory, Track};
use crate::milnor::MilnorMetric;
use crate::random::FieldSampler;
use crate::torus::{min_image, mollified_delta, GridChart, TrigInterpolant};

#[derive(Clone, Debug)]
pub struct KernelColumn {
    pub y: [f64; 3],
    pub pair: (usize, usize),
    pub sigma: f64,
    pub track: Track<ContraForm>,
}

fn grid_of(chart: &Chart) -> Result<&GridChart> {
    chart.grid().ok_or_else(|| LabError::BackendMismatch("kernel columns live on the torus".into()))
}

pub fn evolve_kernel_column(
    back: &BackwardView<'_>,
    y: [f64; 3],
    pair: (usize, usize),
    sigma: f64,
) -> Result<KernelColumn> {
    let chart = &back.trajectory().chart;
    grid_of(chart)?;
    let init = mollified_delta(chart, back.metric(0), y, sigma, pair)?;
    let track = integrate_conjugate_h(back, &init)?;
    Ok(KernelColumn { y, pair, sigma, track })
}

/// All six columns `(i' ≤ k')`, evolved concurrently, in [`SYM`] order.
pub fn evolve_kernel_slot(back: &BackwardView<'_>, y: [f64; 3], sigma: f64) -> Result<Vec<KernelColumn>> {
    SYM.par_iter().map(|&pair| evolve_kernel_column(back, y, pair, sigma)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnRepresentation {
    pub pair: (usize, usize),
    pub drift: DriftReport,
    /// Pairing at `η = β*`, i.e. against the data of `β = 0`.
    pub endpoint: f64,
    pub target: f64,
    pub endpoint_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepresentationReport {
    pub kind: String,
    pub sigma: f64,
    pub columns: Vec<ColumnRepresentation>,
    /// Largest `|v_k − v_0|` over the columns, divided by the largest `|v_0|`.
    pub max_rel_drift: f64,
    pub max_endpoint_error: f64,
}

/// Value of a grid field at an arbitrary point via its trigonometric interpolant.
pub fn point_value(grid: &GridChart, f: &[f64], y: [f64; 3]) -> f64 {
    TrigInterpolant::new(grid, f).eval(y)
}

fn representation(
    kind: &str,
    back: &BackwardView<'_>,
    columns: &[KernelColumn],
    target_of: impl Fn(&KernelColumn) -> Result<f64>,
) -> Result<RepresentationReport> {
    let mut out = vec![];
    for col in columns {
        let drift = match kind {
            "ricci" => pairing_series("ricci_representation", back, &col.track, PairingTarget::Ricci)?,
            _ => pairing_series("metric_representation", back, &col.track, PairingTarget::MetricMinusRicci)?,
        };
        let endpoint = drift.series.last().map_or(0.0, |s| s.1);
        let target = target_of(col)?;
        out.push(ColumnRepresentation {
            pair: col.pair,
            endpoint,
            target,
            endpoint_error: (endpoint - target).abs(),
            drift,
        });
    }
    let scale = out.iter().fold(0.0f64, |m, c| m.max(c.drift.reference.abs()));
    let worst = out.iter().fold(0.0f64, |m, c| m.max(c.drift.abs_drift));
    let max_rel_drift = if scale > 1e-300 { worst / scale } else { worst };
    let max_endpoint_error = out.iter().fold(0.0f64, |m, c| m.max(c.endpoint_error));
    let sigma = columns.first().map_or(0.0, |c| c.sigma);
    Ok(RepresentationReport { kind: kind.into(), sigma, columns: out, max_rel_drift, max_endpoint_error })
}

/// `∫K·Ric dμ` is η-constant and its `η = β*` value recovers `R_{i'k'}(y, β*)`.
pub fn ricci_representation_check(back: &BackwardView<'_>, columns: &[KernelColumn]) -> Result<RepresentationReport> {
    let pack = back.pack(0)?;
    let grid = grid_of(&pack.chart)?;
    representation("ricci", back, columns, |c| Ok(point_value(grid, pack.ricci.comp(c.pair.0, c.pair.1), c.y)))
}

/// `∫K·(g − 2ηRic) dμ` is η-constant and its `η = β*` value recovers `g_{i'k'}(y, β*)`.
pub fn metric_representation_check(back: &BackwardView<'_>, columns: &[KernelColumn]) -> Result<RepresentationReport> {
    let g = back.metric(0).as_form();
    let grid = grid_of(&back.trajectory().chart)?;
    representation("metric", back, columns, |c| Ok(point_value(grid, g.comp(c.pair.0, c.pair.1), c.y)))
}

/// Lattice-sum heat kernel of the flat torus with identity metric:
/// a product of three one-dimensional theta sums, truncated once terms drop
/// below `1e-18` of the leading one.
pub fn torus_theta_kernel(chart: &Chart, y: [f64; 3], t: f64) -> Result<ScalarField> {
    let grid = grid_of(chart)?;
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("heat time must be positive, got {t}")));
    }
    let l = grid.l();
    let shells = ((4.0 * t * 41.5).sqrt() / l + 0.5).ceil() as i32 + 1;
    let theta = |d: f64| -> f64 {
        (-shells..=shells).map(|n| (-(d + n as f64 * l).powi(2) / (4.0 * t)).exp()).sum::<f64>() / (4.0 * PI * t).sqrt()
    };
    Ok(ScalarField {
        tag: chart.tag(),
        c: [grid.sample(|x| {
            let d = min_image(x, y, l);
            theta(d[0]) * theta(d[1]) * theta(d[2])
        })],
    })
}

/// Smallest `k_max` with `e^{−k(k+2)t}(k+1)³ < 1e-12`.
pub fn spectral_kmax(t: f64) -> usize {
    let mut k = 1usize;
    while (-((k * (k + 2)) as f64) * t).exp() * ((k + 1) as f64).powi(3) >= 1e-12 {
        k += 1;
    }
    k
}

/// Heat kernel of the unit round `S³` at geodesic distance `d`:
/// `(1/2π²) Σ_k (k+1)² e^{−k(k+2)t} sin((k+1)d)/((k+1) sin d)`.
pub fn sphere_spectral_kernel(d: f64, t: f64, kmax: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(LabError::Domain(format!("heat time must be positive, got {t}")));
    }
    let tail = (-((kmax * (kmax + 2)) as f64) * t).exp() * ((kmax + 1) as f64).powi(3);
    if tail >= 1e-12 {
        return Err(LabError::TailBound(format!("k_max = {kmax} at t = {t} leaves tail {tail:.3e}")));
    }
    let s = d.sin();
    let sum: f64 = (0..=kmax)
        .map(|k| {
            let m = (k + 1) as f64;
            let zonal = if s.abs() < 1e-12 { m } else { (m * d).sin() / s };
            m * zonal * (-((k * (k + 2)) as f64) * t).exp()
        })
        .sum();
    Ok(sum / UNIT_S3_VOLUME)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PositivityReport {
    pub vectors: usize,
    /// Smallest `K^{ab}_{i'k'} v^{i'}v^{k'} w_a w_b` over vectors, points and samples.
    pub min_value: f64,
    pub max_value: f64,
    /// Smallest value of the diagonal form `w = v` (coordinate components).
    pub min_diagonal: f64,
    /// Roundoff floor, `1e-12 · max_value`.
    pub floor: f64,
    pub positive: bool,
}

/// Evaluates the kernel quadratic form on seeded random `v` (slot vectors) and
/// `w` (covectors at `x`), at every stored sample of the six columns.
pub fn kernel_positivity(
    columns: &[KernelColumn],
    back: &BackwardView<'_>,
    nvec: usize,
    seed: u64,
) -> Result<PositivityReport> {
    if columns.len() != 6 {
        return Err(LabError::MissingTrack("positivity needs all six columns".into()));
    }
    let mut s = FieldSampler::new(seed);
    let pairs: Vec<([f64; 3], [f64; 3])> = (0..nvec).map(|_| (s.vector(), s.vector())).collect();
    let k = back.steps();
    let stats: Vec<(f64, f64, f64)> = (0..=k)
        .into_par_iter()
        .map(|m| {
            let npts = back.metric(m).npts();
            let (mut lo, mut hi, mut diag) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
            for p in 0..npts {
                let slot: Vec<Mat3> = columns.iter().map(|c| c.track.states[m].at(p)).collect();
                for (v, w) in &pairs {
                    // Σ_{i'k'} K_{i'k'} v^{i'} v^{k'}, with off-diagonal columns counted twice.
                    let mut q = Mat3::zeros();
                    for (c, col) in columns.iter().enumerate() {
                        let (i, j) = col.pair;
                        let f = if i == j { 1.0 } else { 2.0 };
                        q += f * v[i] * v[j] * slot[c];
                    }
                    let wv = nalgebra::Vector3::from(*w);
                    let val = (wv.transpose() * q * wv)[(0, 0)];
                    let vv = nalgebra::Vector3::from(*v);
                    let d = (vv.transpose() * q * vv)[(0, 0)];
                    lo = lo.min(val);
                    hi = hi.max(val);
                    diag = diag.min(d);
                }
            }
            (lo, hi, diag)
        })
        .collect();
    let min_value = stats.iter().fold(f64::INFINITY, |a, s| a.min(s.0));
    let max_value = stats.iter().fold(f64::NEG_INFINITY, |a, s| a.max(s.1));
    let min_diagonal = stats.iter().fold(f64::INFINITY, |a, s| a.min(s.2));
    let floor = 1e-12 * max_value.abs();
    Ok(PositivityReport {
        vectors: nvec,
        min_value,
        max_value,
        min_diagonal,
        floor,
        positive: min_value >= -floor && min_diagonal >= -floor,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    /// `(η, η + σ²/2, sup|K − model| / sup|model|)`.
    pub samples: Vec<(f64, f64, f64)>,
    /// Log-log slope of the relative error against the effective time.
    pub slope: f64,
}

/// Leading Euclidean model `(4πη)^{−3/2} exp(−d₀²/4η) τ` with the metric frozen
/// at `y`, `d₀² = g_ab(y) Δx^a Δx^b` (minimum image) and `τ` the coordinate
/// identity, evaluated at the effective time `η + σ²/2`.
pub fn leading_model(grid: &GridChart, gy: &Mat3, y: [f64; 3], t: f64) -> Vec<f64> {
    let l = grid.l();
    let norm = (4.0 * PI * t).powf(-1.5);
    let shells = ((4.0 * t * 41.5).sqrt() / l + 0.5).ceil() as i32 + 1;
    grid.sample(|x| {
        let d = min_image(x, y, l);
        let mut s = 0.0;
        for a in -shells..=shells {
            for b in -shells..=shells {
                for c in -shells..=shells {
                    let v = nalgebra::Vector3::new(d[0] + a as f64 * l, d[1] + b as f64 * l, d[2] + c as f64 * l);
                    s += (-(v.transpose() * gy * v)[(0, 0)] / (4.0 * t)).exp();
                }
            }
        }
        norm * s
    })
}

pub fn leading_asymptotics_check(
    back: &BackwardView<'_>,
    column: &KernelColumn,
    etas: &[f64],
) -> Result<AsymptoticsReport> {
    let chart = &back.trajectory().chart;
    let grid = grid_of(chart)?;
    let g0 = back.metric(0);
    let gy = Mat3::from_fn(|a, b| point_value(grid, g0.comp(a, b), column.y));
    let (i, k) = column.pair;
    let mut samples = vec![];
    for &eta in etas {
        let m = ((eta / back.trajectory().dt).round() as usize).min(back.steps());
        let eta_m = back.eta(m);
        let teff = eta_m + 0.5 * column.sigma * column.sigma;
        let model = leading_model(grid, &gy, column.y, teff);
        let kf = column.track.states[m].comp(i, k);
        let w = if i == k { 1.0 } else { 0.5 };
        let err = kf.iter().zip(&model).fold(0.0f64, |a, (x, y)| a.max((x - w * y).abs()));
        let sup = model.iter().fold(0.0f64, |a, v| a.max(w * v.abs()));
        samples.push((eta_m, teff, err / sup));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let e: Vec<f64> = samples.iter().map(|s| s.2.max(1e-300)).collect();
    let slope = if samples.len() > 1 { crate::conservation::loglog_slope(&x, &e) } else { f64::NAN };
    Ok(AsymptoticsReport { samples, slope })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphereNormalizationReport {
    pub t0: f64,
    pub beta_star: f64,
    /// `(η, (r³/3) ∫ ḡ_ab K^{ab} dμ̄)`.
    pub values: Vec<(f64, f64)>,
    pub max_deviation: f64,
    /// `max |r²(η) − 4η − r²(0)|`.
    pub radius_algebra: f64,
    /// `∫ ḡ_ab H^{ab} dμ_{g}` at `η = 0`.
    pub trace_mass: f64,
}

/// Round-sphere normalization along the expanding back-trajectory, using the
/// homogeneous reduction of the `ḡ^{i'k'}`-traced kernel:
/// `H(0) = ḡ^{-1} / Vol(g(η = 0))`, which has the delta-limit trace mass 3.
pub fn sphere_normalization_check(traj: &FlowTrajectory) -> Result<SphereNormalizationReport> {
    if !matches!(traj.chart, Chart::Milnor) {
        return Err(LabError::BackendMismatch("sphere normalization runs on the Milnor backend".into()));
    }
    let round = |g: &crate::field::MetricField| -> Result<f64> {
        let m = MilnorMetric::from_field(g, 1e-12)
            .ok_or_else(|| LabError::Domain("trajectory is not left-invariant diagonal".into()))?;
        let [a, b, c] = m.diag();
        if (a - b).abs() > 1e-10 * a || (a - c).abs() > 1e-10 * a {
            return Err(LabError::Domain(format!("trajectory is not round: ({a}, {b}, {c})")));
        }
        Ok(a)
    };
    let back = traj.backward();
    let k = back.steps();
    let r0_sq = round(back.metric(0))?;
    let t0 = round(&traj.metrics[0])? / 4.0;
    let vol0 = r0_sq.powf(1.5) * UNIT_S3_VOLUME;
    let h_star = ContraForm::from_fn(&Chart::Milnor, |_| Mat3::identity() / vol0);
    let track = integrate_conjugate_h(&back, &h_star)?;
    let mut values = vec![];
    let mut radius_algebra = 0.0f64;
    for m in 0..=k {
        let r2 = round(back.metric(m))?;
        radius_algebra = radius_algebra.max((r2 - 4.0 * back.eta(m) - r0_sq).abs());
        let v = r2.powf(1.5) / 3.0 * track.states[m].at(0).trace() * UNIT_S3_VOLUME;
        values.push((back.eta(m), v));
    }
    let max_deviation = values.iter().fold(0.0f64, |a, v| a.max((v.1 - 1.0).abs()));
    let trace_mass = h_star.at(0).trace() * vol0;
    Ok(SphereNormalizationReport { t0, beta_star: traj.beta_star(), values, max_deviation, radius_algebra, trace_mass })
}
