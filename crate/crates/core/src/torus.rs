//! Periodic grid on the flat 3-torus `[0, L)³`.
//!
//! Points are stored row-major in `(x¹, x², x³)`: `p = (i₀ N + i₁) N + i₂`.
//! Two derivative schemes are available. `Fd4` is the 4th-order central
//! stencil; `Fourier` differentiates exactly on the trigonometric interpolant
//! (Nyquist mode dropped for odd derivatives, so both schemes are exactly
//! skew-adjoint under the uniform cell sum).

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::chart::Chart;
use crate::error::{LabError, Result};
use crate::field::{ensure_same, ContraForm, Mat3, MetricField, ScalarField};
use crate::sum::pairwise_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Fd4,
    Fourier,
}

impl Scheme {
    /// Largest admissible `dt / h²` for explicit RK4 on the diffusion part.
    pub fn cfl_constant(self) -> f64 {
        match self {
            Scheme::Fd4 => 0.15,
            Scheme::Fourier => 0.08,
        }
    }
}

/// Forward and inverse FFT plans of length `n`.
type FftPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

#[derive(Clone)]
pub struct GridChart {
    n: usize,
    l: f64,
    scheme: Scheme,
    plans: Option<FftPair>,
}

impl fmt::Debug for GridChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridChart").field("n", &self.n).field("l", &self.l).field("scheme", &self.scheme).finish()
    }
}

impl GridChart {
    pub fn new(n: usize, l: f64, scheme: Scheme) -> Result<Self> {
        if n < 8 || !n.is_multiple_of(2) {
            return Err(LabError::Config(format!("grid size N = {n} must be even and at least 8")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(LabError::Config(format!("period L = {l} must be positive")));
        }
        let plans = match scheme {
            Scheme::Fd4 => None,
            Scheme::Fourier => {
                let mut planner = FftPlanner::new();
                Some((planner.plan_fft_forward(n), planner.plan_fft_inverse(n)))
            }
        };
        Ok(Self { n, l, scheme, plans })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn h(&self) -> f64 {
        self.l / self.n as f64
    }
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }
    pub fn npts(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn coords(&self, p: usize) -> [f64; 3] {
        let n = self.n;
        let h = self.h();
        [(p / (n * n)) as f64 * h, ((p / n) % n) as f64 * h, (p % n) as f64 * h]
    }

    pub fn cfl_bound(&self) -> f64 {
        self.scheme.cfl_constant() * self.h() * self.h()
    }

    /// `h³ Σ f` with the fixed pairwise tree.
    pub fn cell_sum(&self, f: &[f64]) -> f64 {
        let h = self.h();
        pairwise_sum(f) * h * h * h
    }

    fn line_start_stride(&self, axis: usize, q: usize) -> (usize, usize) {
        let n = self.n;
        match axis {
            0 => (q, n * n),
            1 => ((q / n) * n * n + q % n, n),
            _ => (q * n, 1),
        }
    }

    fn map_lines<F>(&self, f: &[f64], axis: usize, op: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let n = self.n;
        assert_eq!(f.len(), self.npts(), "field does not live on this grid");
        let lines: Vec<Vec<f64>> = (0..n * n)
            .into_par_iter()
            .map(|q| {
                let (s, st) = self.line_start_stride(axis, q);
                let src: Vec<f64> = (0..n).map(|i| f[s + i * st]).collect();
                let mut dst = vec![0.0; n];
                op(&src, &mut dst);
                dst
            })
            .collect();
        let mut out = vec![0.0; f.len()];
        for (q, line) in lines.iter().enumerate() {
            let (s, st) = self.line_start_stride(axis, q);
            for (i, v) in line.iter().enumerate() {
                out[s + i * st] = *v;
            }
        }
        out
    }

    /// Derivative of order 1 or 2 along `axis`.
    pub fn derivative(&self, f: &[f64], axis: usize, order: usize) -> Vec<f64> {
        assert!(axis < 3 && (order == 1 || order == 2));
        let n = self.n;
        let h = self.h();
        match self.scheme {
            Scheme::Fd4 => {
                let w = |i: isize| ((i + n as isize) % n as isize) as usize;
                if order == 1 {
                    let c = 1.0 / (12.0 * h);
                    self.map_lines(f, axis, |s, d| {
                        for i in 0..n {
                            let ii = i as isize;
                            d[i] = c * (s[w(ii - 2)] - 8.0 * s[w(ii - 1)] + 8.0 * s[w(ii + 1)] - s[w(ii + 2)]);
                        }
                    })
                } else {
                    let c = 1.0 / (12.0 * h * h);
                    self.map_lines(f, axis, |s, d| {
                        for i in 0..n {
                            let ii = i as isize;
                            d[i] = c
                                * (-s[w(ii - 2)] + 16.0 * s[w(ii - 1)] - 30.0 * s[i] + 16.0 * s[w(ii + 1)]
                                    - s[w(ii + 2)]);
                        }
                    })
                }
            }
            Scheme::Fourier => {
                let (fwd, inv) = self.plans.as_ref().expect("fourier plans");
                let k0 = 2.0 * std::f64::consts::PI / self.l;
                let mult: Vec<Complex64> = (0..n)
                    .map(|m| {
                        let half = n / 2;
                        let k = if m < half { m as f64 } else { m as f64 - n as f64 } * k0;
                        if order == 1 {
                            if m == half {
                                Complex64::new(0.0, 0.0)
                            } else {
                                Complex64::new(0.0, k)
                            }
                        } else {
                            let k = if m == half { half as f64 * k0 } else { k };
                            Complex64::new(-k * k, 0.0)
                        }
                    })
                    .collect();
                let scale = 1.0 / n as f64;
                self.map_lines(f, axis, |s, d| {
                    let mut buf: Vec<Complex64> = s.iter().map(|&x| Complex64::new(x, 0.0)).collect();
                    fwd.process(&mut buf);
                    for (b, m) in buf.iter_mut().zip(&mult) {
                        *b *= m;
                    }
                    inv.process(&mut buf);
                    for (o, b) in d.iter_mut().zip(&buf) {
                        *o = b.re * scale;
                    }
                })
            }
        }
    }

    /// `∂_a ∂_b f`: the direct second-derivative stencil on the diagonal,
    /// composed first derivatives otherwise.
    pub fn mixed(&self, f: &[f64], a: usize, b: usize) -> Vec<f64> {
        if a == b {
            self.derivative(f, a, 2)
        } else {
            self.derivative(&self.derivative(f, b, 1), a, 1)
        }
    }

    /// Applies the Fourier multiplier `m(k)` (signed wavenumbers) to a real field.
    /// The multiplier must be even in `k` for the result to stay real.
    pub fn spectral_filter<M: Fn([f64; 3]) -> f64>(&self, f: &[f64], m: M) -> Vec<f64> {
        let n = self.n;
        assert_eq!(f.len(), self.npts(), "field does not live on this grid");
        let mut planner = FftPlanner::new();
        let (fwd, inv) = (planner.plan_fft_forward(n), planner.plan_fft_inverse(n));
        let mut data: Vec<Complex64> = f.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let sweep = |data: &mut Vec<Complex64>, line: &mut Vec<Complex64>, plan: &Arc<dyn Fft<f64>>| {
            for axis in 0..3 {
                for q in 0..n * n {
                    let (st, stride) = self.line_start_stride(axis, q);
                    for i in 0..n {
                        line[i] = data[st + i * stride];
                    }
                    plan.process(line);
                    for i in 0..n {
                        data[st + i * stride] = line[i];
                    }
                }
            }
        };
        sweep(&mut data, &mut line, &fwd);
        let k0 = 2.0 * std::f64::consts::PI / self.l;
        let wave = |i: usize| if i <= n / 2 { i as f64 * k0 } else { (i as f64 - n as f64) * k0 };
        for (p, d) in data.iter_mut().enumerate() {
            *d *= m([wave(p / (n * n)), wave((p / n) % n), wave(p % n)]);
        }
        sweep(&mut data, &mut line, &inv);
        let scale = 1.0 / self.npts() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    pub fn sample<F: Fn([f64; 3]) -> f64 + Sync + Send>(&self, f: F) -> Vec<f64> {
        (0..self.npts()).into_par_iter().map(|p| f(self.coords(p))).collect()
    }
}

/// Coefficients of the perturbed scenario metric
/// `g = δ + ε P` with
/// `P_11 = sin k x²`, `P_22 = sin k x³`, `P_33 = sin k x¹`,
/// `P_12 = ½ cos k x³`, `P_23 = ½ cos k x¹`, `P_13 = ½ cos k x²`, `k = 2π/L`.
/// Every mode has zero mean, so the volume deviates from flat at `O(ε²)`.
pub fn perturbation(x: [f64; 3], l: f64) -> Mat3 {
    let k = 2.0 * std::f64::consts::PI / l;
    let (s1, s2, s3) = ((k * x[0]).sin(), (k * x[1]).sin(), (k * x[2]).sin());
    let (c1, c2, c3) = ((k * x[0]).cos(), (k * x[1]).cos(), (k * x[2]).cos());
    Mat3::new(s2, 0.5 * c3, 0.5 * c2, 0.5 * c3, s3, 0.5 * c1, 0.5 * c2, 0.5 * c1, s1)
}

pub fn torus_chart(n: usize, l: f64, scheme: Scheme) -> Result<Chart> {
    Ok(Chart::Torus(GridChart::new(n, l, scheme)?))
}

/// `δ + ε P` on the grid; `ε = 0` is the flat torus.
pub fn perturbed_metric(chart: &Chart, eps: f64) -> Result<MetricField> {
    let grid = chart.grid().ok_or_else(|| LabError::BackendMismatch("perturbed metric lives on the torus".into()))?;
    let g = MetricField::from_fn(chart, |p| Mat3::identity() + eps * perturbation(grid.coords(p), grid.l()));
    g.check_admissible()?;
    Ok(g)
}

/// Lattice shells used when periodizing Gaussians.
pub const GAUSSIAN_SHELLS: i32 = 2;

/// Minimum-image displacement `x − y` on the torus.
pub fn min_image(x: [f64; 3], y: [f64; 3], l: f64) -> [f64; 3] {
    std::array::from_fn(|a| {
        let mut d = x[a] - y[a];
        d -= l * (d / l).round();
        d
    })
}

/// Periodized Gaussian `Σ_n (2πσ²)^{-3/2} exp(−|x − y + nL|² / 2σ²)` over
/// `|n_a| ≤ shells`. The first omitted image sits at distance `≥ (shells + ½)L`,
/// so the truncation error is below `(2πσ²)^{-3/2} · 26 (2·shells + 3)² ·
/// exp(−(shells + ½)² L² / 2σ²)`.
pub fn periodized_gaussian(x: [f64; 3], y: [f64; 3], sigma: f64, l: f64, shells: i32) -> f64 {
    let d = min_image(x, y, l);
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-1.5);
    let mut acc = 0.0;
    for i in -shells..=shells {
        for j in -shells..=shells {
            for k in -shells..=shells {
                let r2 = (d[0] + i as f64 * l).powi(2) + (d[1] + j as f64 * l).powi(2) + (d[2] + k as f64 * l).powi(2);
                acc += (-r2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    norm * acc
}

/// Mollified Dirac bitensor at `y` for the primed pair `(i', k')`:
/// components `e_σ(x, y) · ½(δ^a_i' δ^b_k' + δ^a_k' δ^b_i')`, with `e_σ` the
/// periodized Gaussian rescaled so that `∫ e_σ dμ_g = 1` in the discrete
/// quadrature of `g`. Heat-time calibration: a Gaussian of width `σ` is the
/// flat heat kernel at `t = σ²/2`.
pub fn mollified_delta(
    chart: &Chart,
    g: &MetricField,
    y: [f64; 3],
    sigma: f64,
    pair: (usize, usize),
) -> Result<ContraForm> {
    let e = mollified_scalar(chart, g, y, sigma)?;
    let (i, k) = pair;
    let mut basis = Mat3::zeros();
    basis[(i, k)] += 0.5;
    basis[(k, i)] += 0.5;
    Ok(ContraForm::from_fn(chart, |p| e.c[0][p] * basis))
}

/// The normalized scalar Gaussian used by [`mollified_delta`].
pub fn mollified_scalar(chart: &Chart, g: &MetricField, y: [f64; 3], sigma: f64) -> Result<ScalarField> {
    let grid = chart.grid().ok_or_else(|| LabError::BackendMismatch("mollified delta lives on the torus".into()))?;
    ensure_same(chart.tag(), g.tag, "mollified_delta")?;
    let min = 2.0 * grid.h();
    if sigma < min - 1e-14 {
        return Err(LabError::UnderResolved { sigma, min });
    }
    let raw = grid.sample(|x| periodized_gaussian(x, y, sigma, grid.l(), GAUSSIAN_SHELLS));
    let w: Vec<f64> = (0..grid.npts()).map(|p| raw[p] * g.at(p).determinant().sqrt()).collect();
    let mass = grid.cell_sum(&w);
    Ok(ScalarField { tag: chart.tag(), c: [raw.iter().map(|v| v / mass).collect()] })
}

/// Trigonometric interpolant of a grid field, for point values and Taylor
/// coefficients away from grid points. The Nyquist coefficient is split evenly
/// between `±N/2`, so the interpolant is real.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    n: usize,
    l: f64,
    coef: Vec<Complex64>,
}

impl TrigInterpolant {
    pub fn new(grid: &GridChart, f: &[f64]) -> Self {
        let n = grid.n();
        assert_eq!(f.len(), grid.npts(), "field does not live on this grid");
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut data: Vec<Complex64> = f.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for axis in 0..3 {
            for q in 0..n * n {
                let (st, stride) = grid.line_start_stride(axis, q);
                for i in 0..n {
                    line[i] = data[st + i * stride];
                }
                fft.process(&mut line);
                for i in 0..n {
                    data[st + i * stride] = line[i];
                }
            }
        }
        let scale = 1.0 / grid.npts() as f64;
        for c in &mut data {
            *c *= scale;
        }
        Self { n, l: grid.l(), coef: data }
    }

    /// Signed modes per axis as `(dft index, wavenumber, weight)`.
    fn modes(&self) -> Vec<(usize, f64, f64)> {
        let n = self.n;
        let k0 = 2.0 * std::f64::consts::PI / self.l;
        let mut out = Vec::with_capacity(n + 1);
        for i in 0..n {
            let half = n / 2;
            if i < half {
                out.push((i, k0 * i as f64, 1.0));
            } else if i == half {
                out.push((i, k0 * half as f64, 0.5));
                out.push((i, -k0 * half as f64, 0.5));
            } else {
                out.push((i, k0 * (i as f64 - n as f64), 1.0));
            }
        }
        out
    }

    pub fn eval(&self, x: [f64; 3]) -> f64 {
        let exps = [[0usize, 0, 0]];
        self.taylor(x, &exps)[0]
    }

    /// Coefficients of `s^a s^b s^c` in the expansion about `y`, for each
    /// exponent triple in `exps`.
    pub fn taylor(&self, y: [f64; 3], exps: &[[usize; 3]]) -> Vec<f64> {
        let n = self.n;
        let modes = self.modes();
        let dmax = exps.iter().map(|e| e[0].max(e[1]).max(e[2])).max().unwrap_or(0);
        let mut fact = vec![1.0f64; dmax + 1];
        for i in 1..=dmax {
            fact[i] = fact[i - 1] * i as f64;
        }
        // A[axis][mode][power] = w e^{iκy} (iκ)^p / p!
        let table: Vec<Vec<Vec<Complex64>>> = (0..3)
            .map(|ax| {
                modes
                    .iter()
                    .map(|&(_, kappa, w)| {
                        let base = Complex64::from_polar(w, kappa * y[ax]);
                        let ik = Complex64::new(0.0, kappa);
                        let mut pw = Complex64::new(1.0, 0.0);
                        (0..=dmax)
                            .map(|p| {
                                let v = base * pw / fact[p];
                                pw *= ik;
                                v
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let d1 = dmax + 1;
        // Contract axis 0: t1[i1][i2][a]
        let t1: Vec<Complex64> = (0..n * n)
            .into_par_iter()
            .flat_map_iter(|q| {
                let (i1, i2) = (q / n, q % n);
                let mut acc = vec![Complex64::new(0.0, 0.0); d1];
                for (mi, &(i0, _, _)) in modes.iter().enumerate() {
                    let c = self.coef[(i0 * n + i1) * n + i2];
                    if c.norm_sqr() == 0.0 {
                        continue;
                    }
                    for a in 0..d1 {
                        acc[a] += c * table[0][mi][a];
                    }
                }
                acc
            })
            .collect();
        // Contract axis 1: t2[i2][a][b]
        let mut t2 = vec![Complex64::new(0.0, 0.0); n * d1 * d1];
        for i2 in 0..n {
            for (mj, &(i1, _, _)) in modes.iter().enumerate() {
                for a in 0..d1 {
                    let c = t1[(i1 * n + i2) * d1 + a];
                    for b in 0..d1 {
                        t2[(i2 * d1 + a) * d1 + b] += c * table[1][mj][b];
                    }
                }
            }
        }
        exps.iter()
            .map(|e| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (mk, &(i2, _, _)) in modes.iter().enumerate() {
                    acc += t2[(i2 * d1 + e[0]) * d1 + e[1]] * table[2][mk][e[2]];
                }
                acc.re
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SnapshotHeader {
    pub n: usize,
    pub l: f64,
    pub components: Vec<String>,
    pub layout: String,
    pub dtype: String,
}

/// Writes `<stem>.json` (header) and `<stem>.bin` (little-endian f64, row-major
/// over `(x¹, x², x³, component)`).
pub fn write_snapshot(dir: &Path, stem: &str, grid: &GridChart, comps: &[(&str, &[f64])]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let header = SnapshotHeader {
        n: grid.n(),
        l: grid.l(),
        components: comps.iter().map(|(name, _)| name.to_string()).collect(),
        layout: "row-major x1,x2,x3,component".into(),
        dtype: "f64-le".into(),
    };
    std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&header)?)?;
    let mut bytes = Vec::with_capacity(grid.npts() * comps.len() * 8);
    for p in 0..grid.npts() {
        for (_, data) in comps {
            bytes.extend_from_slice(&data[p].to_le_bytes());
        }
    }
    std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    Ok(())
}

pub fn read_snapshot(dir: &Path, stem: &str) -> Result<(SnapshotHeader, Vec<Vec<f64>>)> {
    let header: SnapshotHeader = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
    let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
    let k = header.components.len();
    let npts = header.n.pow(3);
    if bytes.len() != npts * k * 8 {
        return Err(LabError::Config(format!("snapshot {stem} has {} bytes, expected {}", bytes.len(), npts * k * 8)));
    }
    let mut out = vec![vec![0.0; npts]; k];
    for (q, chunk) in bytes.chunks_exact(8).enumerate() {
        out[q % k][q / k] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok((header, out))
}
