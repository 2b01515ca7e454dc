//! Scalar parametrix of the conjugate heat operator `∂_t − Δ_{g(t)} + R(t)`
//! along the backward metric track (`t = η`, so `∂_t g = 2 Ric`).
//!
//! Ansatz: `p_t = e_t Σ_{α ≤ K} t^α φ_α`, `e_t = (4πt)^{-3/2} exp(−σ/2t)` with
//! `σ` the world function (half squared distance) of `g(0)`.
//!
//! Two independent constructions are provided:
//!
//! * radial ODEs on space forms with a conformal rate, `g(t) = (1 + ct) g(0)`,
//!   with closed forms for `J` and the transport coefficients;
//! * Taylor jets about the base point on the torus, where the transport
//!   equations are solved degree by degree and the ray ODEs become a cross-check
//!   via geodesic shooting.
//!
//! Multiplying `e_t^{-1}(∂_t − Δ_t + R) p_t` by `t` and writing
//! `g^{ij}(t) = Σ t^m k_m^{ij}`, `Γ^k(t) = g^{ij}Γ^k_ij = Σ t^m Γ^k_m`:
//!
//! ```text
//! V_m = k_m^{ij} σ_i ∂_j,   D_m = ½(k_m^{ij} σ_ij − Γ^k_m σ_k) − (3/2)[m = 0],
//! A_m = ¼ k_{m+1}^{ij} σ_i σ_j,   L_m = k_m^{ij} ∂_i∂_j − Γ^k_m ∂_k,
//! (V_0 + D_0 − A_0 + α) φ_α = −Σ_{m=1..α} (V_m + D_m − A_m) φ_{α−m}
//!                             + Σ_{m=0..α−1} (L_m − F_m) φ_{α−1−m}
//! ```
//!
//! with `F_m` the Taylor coefficients of `R(t)` and `φ_0(y) = 1`. On a space
//! form these reduce to `φ_0' = −½ z₋₁ φ_0`, `z₋₁ = (log J)' + cr/2`, and
//! `(r φ_1/φ_0)' = 3c/2 − F(0) + Δφ_0/φ_0`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::conservation::loglog_slope;
use crate::error::{LabError, Result};
use crate::field::{Mat3, MetricField, ScalarField, SYM};
use crate::flows::{integrate_conjugate_density, BackwardView, FlowTrajectory};
use crate::geom::{compute_curvature_lite, lichnerowicz_endo};
use crate::jet::{Jet, JetMat, JetSpace};
use crate::torus::{min_image, GridChart, TrigInterpolant};

/// Parametrix order `K`: the smallest integer above `n/2` for `n = 3`.
pub const PARAMETRIX_ORDER: usize = 2;
pub const DEFAULT_JET_DEGREE: usize = 14;

// ---------------------------------------------------------------- radial ----

/// Constant-curvature metric `g(0)` with conformal evolution `g(t) = (1 + ct) g(0)`
/// and constant-in-space potential.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct SpaceForm {
    /// Sectional curvature `κ² ≥ 0` of `g(0)`.
    pub curvature: f64,
    pub rate: f64,
    /// `F` at `t = 0`.
    pub potential: f64,
}

impl SpaceForm {
    pub fn flat() -> Self {
        Self { curvature: 0.0, rate: 0.0, potential: 0.0 }
    }

    /// Plain Laplace–Beltrami heat operator on the static round sphere.
    pub fn static_sphere(radius: f64) -> Self {
        Self { curvature: 1.0 / (radius * radius), rate: 0.0, potential: 0.0 }
    }

    /// Conjugate operator along the expanding back-trajectory `r² + 4t`.
    pub fn flowing_sphere(radius: f64) -> Self {
        let k = 1.0 / (radius * radius);
        Self { curvature: k, rate: 4.0 * k, potential: 6.0 * k }
    }

    pub fn injectivity_radius(&self) -> f64 {
        if self.curvature > 0.0 {
            PI / self.curvature.sqrt()
        } else {
            f64::INFINITY
        }
    }

    /// `J(r) = (sin κr / κr)²`.
    pub fn j(&self, r: f64) -> f64 {
        let x = self.curvature.sqrt() * r;
        if x < 1e-4 {
            let x2 = x * x;
            (1.0 - x2 / 6.0 + x2 * x2 / 120.0).powi(2)
        } else {
            (x.sin() / x).powi(2)
        }
    }

    /// `(log J)'/r` and `(log J)''`, both regular at `r = 0`.
    fn log_j_terms(&self, r: f64) -> (f64, f64) {
        let k2 = self.curvature;
        let x = k2.sqrt() * r;
        if x < 1e-2 {
            let (k4, k6) = (k2 * k2, k2 * k2 * k2);
            let r2 = r * r;
            let over_r = 2.0 * (-k2 / 3.0 - k4 * r2 / 45.0 - 2.0 * k6 * r2 * r2 / 945.0);
            let second = 2.0 * (-k2 / 3.0 - k4 * r2 / 15.0 - 2.0 * k6 * r2 * r2 / 189.0);
            (over_r, second)
        } else {
            let k = k2.sqrt();
            let lj = 2.0 * (k / x.tan() - 1.0 / r);
            let second = 2.0 * (1.0 / (r * r) - k2 / x.sin().powi(2));
            (lj / r, second)
        }
    }

    /// `w = −(log φ_0)'`, `w'` and `Δφ_0/φ_0`.
    fn transport(&self, r: f64) -> (f64, f64, f64) {
        let c = self.rate;
        let (lj_r, ljp) = self.log_j_terms(r);
        let w_over_r = 0.5 * lj_r + 0.25 * c;
        let w = w_over_r * r;
        let wp = 0.5 * ljp + 0.25 * c;
        let lap = w * w - wp - 2.0 * w_over_r - lj_r * r * w;
        (w, wp, lap)
    }

    /// Closed form `φ_0 = J^{-1/2} exp(−cr²/8)`.
    pub fn phi0_closed(&self, r: f64) -> f64 {
        self.j(r).powf(-0.5) * (-self.rate * r * r / 8.0).exp()
    }

    /// `φ_1(y, y) = κ² + 3c/4 − F(0)` (the `κ²` being `R/6`).
    pub fn phi1_at_origin(&self) -> f64 {
        self.curvature + 0.75 * self.rate - self.potential
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametrixCoefficients {
    pub r: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub j: Vec<f64>,
    pub z_m1: Vec<f64>,
    /// `z₀ + 3c/r`: `z₀` has a simple pole at the origin when `c ≠ 0`.
    pub z0_regular: Vec<f64>,
    pub cutoff: f64,
    /// The requested range reached the cutoff radius and was shortened.
    pub truncated: bool,
}

/// Integrates the radial transport equations for `φ_0` and `φ_1` with RK4 from
/// the base point. The range stops short of the injectivity radius (flagged).
pub fn radial_parametrix(model: &SpaceForm, r_max: f64, steps: usize) -> Result<ParametrixCoefficients> {
    if !(r_max > 0.0) || steps == 0 {
        return Err(LabError::Domain("radial range and step count must be positive".into()));
    }
    if model.curvature < 0.0 {
        return Err(LabError::Domain("negative curvature space forms are not supported".into()));
    }
    let cutoff = model.injectivity_radius();
    let truncated = r_max >= cutoff;
    let end = if truncated { cutoff * (1.0 - 1.0 / steps as f64) } else { r_max };
    let h = end / steps as f64;
    let c = model.rate;
    // y = (log φ_0, q) with q = r φ_1 / φ_0.
    let rhs = |r: f64| {
        let (w, _, lap) = model.transport(r);
        [-w, 1.5 * c - model.potential + lap]
    };
    let mut state = [0.0f64, 0.0];
    let mut out = ParametrixCoefficients {
        r: vec![],
        phi0: vec![],
        phi1: vec![],
        j: vec![],
        z_m1: vec![],
        z0_regular: vec![],
        cutoff,
        truncated,
    };
    let q0_prime = rhs(0.0)[1];
    for k in 0..=steps {
        let r = k as f64 * h;
        let phi0 = state[0].exp();
        let phi1 = if k == 0 { q0_prime } else { state[1] * phi0 / r };
        let (lj_r, _) = model.log_j_terms(r);
        out.r.push(r);
        out.phi0.push(phi0);
        out.phi1.push(phi1);
        out.j.push(model.j(r));
        out.z_m1.push(lj_r * r + 0.5 * c * r);
        out.z0_regular.push(-0.5 * c * c * r - c * lj_r * r);
        if k == steps {
            break;
        }
        let k1 = rhs(r);
        let k2 = rhs(r + 0.5 * h);
        let k4 = rhs(r + h);
        for i in 0..2 {
            state[i] += h / 6.0 * (k1[i] + 4.0 * k2[i] + k4[i]);
        }
    }
    Ok(out)
}

/// Least-squares estimate of the `t¹` coefficient of `(4πt)^{3/2} K(t, y, y)` for
/// the round unit sphere from its spectral sum, optionally along the expanding
/// back-trajectory (`K = e^{−6s} K_spec(s)`, `s = ln(1 + 4t)/4`).
pub fn spectral_subleading_fit(flowing: bool, times: &[f64]) -> Result<f64> {
    let mut rows = vec![];
    for &t in times {
        let (s, damp) = if flowing { ((1.0 + 4.0 * t).ln() / 4.0, 1.0) } else { (t, 0.0) };
        let k = crate::kernel::sphere_spectral_kernel(0.0, s, crate::kernel::spectral_kmax(s))?;
        let v = (4.0 * PI * t).powf(1.5) * (-6.0 * s * damp).exp() * k;
        rows.push((t, v - 1.0));
    }
    // fit v − 1 = a t + b t² + c t³
    let m = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, j| rows[i].0.powi(j as i32 + 1));
    let b = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let sol = m.svd(true, true).solve(&b, 1e-14).map_err(|e| LabError::Domain(format!("least squares failed: {e}")))?;
    Ok(sol[0])
}

// ------------------------------------------------------------------- jets ----

/// Taylor jet of a grid field about `y`.
pub fn scalar_jet(grid: &GridChart, f: &[f64], y: [f64; 3], space: &Arc<JetSpace>) -> Jet {
    let coef = TrigInterpolant::new(grid, f).taylor(y, space.exponents());
    Jet::from_coefficients(space, coef)
}

/// Jets of the six components of a symmetric grid tensor.
pub fn form_jets<'a>(
    grid: &GridChart,
    comp: impl Fn(usize, usize) -> &'a [f64],
    y: [f64; 3],
    space: &Arc<JetSpace>,
) -> JetMat {
    let mut m = JetMat::zero(space);
    for &(a, b) in SYM.iter() {
        let j = scalar_jet(grid, comp(a, b), y, space);
        m.0[3 * b + a] = j.clone();
        m.0[3 * a + b] = j;
    }
    m
}

/// Christoffel symbols of the first kind `Γ_{l,ij}` of each matrix in `gs`,
/// stored at `9l + 3i + j`.
fn lowered_christoffel(g: &JetMat) -> Vec<Jet> {
    let sp = g.0[0].space().clone();
    let dg: Vec<JetMat> = (0..3).map(|m| JetMat(g.0.iter().map(|j| j.deriv(m)).collect())).collect();
    let mut out = vec![Jet::zero(&sp); 27];
    for l in 0..3 {
        for i in 0..3 {
            for j in i..3 {
                let mut v = dg[i].get(j, l).clone();
                v.axpy(1.0, dg[j].get(i, l));
                v.axpy(-1.0, dg[l].get(i, j));
                let v = v.scaled(0.5);
                out[9 * l + 3 * j + i] = v.clone();
                out[9 * l + 3 * i + j] = v;
            }
        }
    }
    out
}

fn raise_christoffel(ginv: &JetMat, low: &[Jet]) -> Vec<Jet> {
    let sp = ginv.0[0].space().clone();
    let mut out = vec![Jet::zero(&sp); 27];
    for k in 0..3 {
        for i in 0..3 {
            for j in i..3 {
                let mut v = Jet::zero(&sp);
                for l in 0..3 {
                    v.axpy(1.0, &(ginv.get(k, l) * &low[9 * l + 3 * i + j]));
                }
                out[9 * k + 3 * j + i] = v.clone();
                out[9 * k + 3 * i + j] = v;
            }
        }
    }
    out
}

fn contract(ginv: &JetMat, gamma: &[Jet]) -> [Jet; 3] {
    std::array::from_fn(|k| {
        let mut v = Jet::zero(ginv.0[0].space());
        for i in 0..3 {
            for j in 0..3 {
                v.axpy(1.0, &(ginv.get(i, j) * &gamma[9 * k + 3 * i + j]));
            }
        }
        v
    })
}

/// Metric jets with inverse and connection.
#[derive(Clone, Debug)]
pub struct MetricJets {
    pub g: JetMat,
    pub ginv: JetMat,
    /// `Γ^k_ij` at `9k + 3i + j`.
    pub gamma: Vec<Jet>,
}

impl MetricJets {
    pub fn new(g: JetMat) -> Self {
        let ginv = g.inverse();
        let gamma = raise_christoffel(&ginv, &lowered_christoffel(&g));
        Self { g, ginv, gamma }
    }

    /// `Γ^k = g^{ij} Γ^k_ij`.
    pub fn contracted(&self) -> [Jet; 3] {
        contract(&self.ginv, &self.gamma)
    }

    pub fn laplacian(&self, f: &Jet) -> Jet {
        let gk = self.contracted();
        laplacian_with(&self.ginv, &gk, f)
    }
}

fn laplacian_with(ginv: &JetMat, gk: &[Jet; 3], f: &Jet) -> Jet {
    let df: [Jet; 3] = std::array::from_fn(|i| f.deriv(i));
    let mut out = Jet::zero(f.space());
    for i in 0..3 {
        for j in 0..3 {
            out.axpy(1.0, &(ginv.get(i, j) * &df[i].deriv(j)));
        }
        out.axpy(-1.0, &(&gk[i] * &df[i]));
    }
    out
}

/// World function of the metric with inverse `ginv` (jets about the origin),
/// solved degree by degree from `g^{ij} σ_i σ_j = 2σ`, `σ = ½ g_ij(0) s^i s^j + O(s³)`.
pub fn world_function(ginv: &JetMat, g0: &Mat3) -> Jet {
    let sp = ginv.0[0].space().clone();
    let s: [Jet; 3] = std::array::from_fn(|i| Jet::coord(&sp, i));
    let mut sigma = Jet::zero(&sp);
    for i in 0..3 {
        for j in 0..3 {
            sigma.axpy(0.5 * g0[(i, j)], &(&s[i] * &s[j]));
        }
    }
    for d in 3..=sp.degree() {
        let q = eikonal_defect(ginv, &sigma);
        sigma.axpy(-1.0 / (2.0 * (d as f64 - 1.0)), &q.part(d));
    }
    sigma
}

/// `g^{ij} σ_i σ_j − 2σ`.
fn eikonal_defect(ginv: &JetMat, sigma: &Jet) -> Jet {
    let ds: [Jet; 3] = std::array::from_fn(|i| sigma.deriv(i));
    let mut q = sigma.scaled(-2.0);
    for i in 0..3 {
        for j in 0..3 {
            q.axpy(1.0, &(&(ginv.get(i, j) * &ds[i]) * &ds[j]));
        }
    }
    q
}

fn quadratic(m: &JetMat, v: &[Jet; 3]) -> Jet {
    let mut out = Jet::zero(v[0].space());
    for i in 0..3 {
        for j in 0..3 {
            out.axpy(1.0, &(&(m.get(i, j) * &v[i]) * &v[j]));
        }
    }
    out
}

fn apply_vector(c: &[Jet; 3], f: &Jet) -> Jet {
    let mut out = Jet::zero(f.space());
    for j in 0..3 {
        out.axpy(1.0, &(&c[j] * &f.deriv(j)));
    }
    out
}

/// Parametrix coefficients `φ_0 … φ_K` as jets about `y`, for the model metric
/// `g(t) = Σ_m t^m g_m` and potential `F(t) = Σ_m t^m F_m`.
#[derive(Clone, Debug)]
pub struct JetParametrix {
    pub y: [f64; 3],
    pub order: usize,
    pub space: Arc<JetSpace>,
    pub model: Vec<JetMat>,
    pub potential: Vec<Jet>,
    pub sigma: Jet,
    pub phi: Vec<Jet>,
}

impl JetParametrix {
    /// Solves the transport recursion. `model` needs `g_0`; missing higher
    /// coefficients are zero. `potential` likewise.
    pub fn from_model(y: [f64; 3], model: Vec<JetMat>, potential: Vec<Jet>, order: usize) -> Result<Self> {
        if model.is_empty() {
            return Err(LabError::Domain("model metric needs at least g_0".into()));
        }
        if order > PARAMETRIX_ORDER {
            return Err(LabError::Domain(format!(
                "parametrix order {order} above {PARAMETRIX_ORDER} is not supported"
            )));
        }
        let sp = model[0].0[0].space().clone();
        let zero_m = JetMat::zero(&sp);
        let gm = |m: usize| model.get(m).unwrap_or(&zero_m);
        let fm = |m: usize| potential.get(m).cloned().unwrap_or_else(|| Jet::zero(&sp));
        let g0y = model[0].at_origin();

        // g^{ij}(t) coefficients k_0 … k_{K+1}
        let k0 = model[0].inverse();
        let mut k = vec![k0.clone()];
        for m in 1..=order + 1 {
            let mut acc = JetMat::zero(&sp);
            for j in 1..=m {
                acc.axpy(1.0, &gm(j).mul(&k[m - j]));
            }
            k.push(k0.mul(&acc).scaled(-1.0));
        }
        // Γ^k(t) coefficients Γ_0 … Γ_K
        let low: Vec<Vec<Jet>> = (0..=order).map(|b| lowered_christoffel(gm(b))).collect();
        let mut gam_full: Vec<Vec<Jet>> = vec![];
        for m in 0..=order {
            let mut acc = vec![Jet::zero(&sp); 27];
            for a in 0..=m {
                let r = raise_christoffel(&k[a], &low[m - a]);
                for (x, v) in acc.iter_mut().zip(&r) {
                    x.axpy(1.0, v);
                }
            }
            gam_full.push(acc);
        }
        let gam: Vec<[Jet; 3]> = (0..=order)
            .map(|m| {
                let mut acc: [Jet; 3] = std::array::from_fn(|_| Jet::zero(&sp));
                for a in 0..=m {
                    let c = contract(&k[a], &gam_full[m - a]);
                    for i in 0..3 {
                        acc[i].axpy(1.0, &c[i]);
                    }
                }
                acc
            })
            .collect();

        let sigma = world_function(&k0, &g0y);
        let ds: [Jet; 3] = std::array::from_fn(|i| sigma.deriv(i));
        let dds: Vec<Jet> = (0..9).map(|q| ds[q / 3].deriv(q % 3)).collect();
        let cvec = |m: usize| -> [Jet; 3] {
            std::array::from_fn(|j| {
                let mut v = Jet::zero(&sp);
                for i in 0..3 {
                    v.axpy(1.0, &(k[m].get(i, j) * &ds[i]));
                }
                v
            })
        };
        let c: Vec<[Jet; 3]> = (0..=order).map(cvec).collect();
        let d: Vec<Jet> = (0..=order)
            .map(|m| {
                let mut v = Jet::zero(&sp);
                for q in 0..9 {
                    v.axpy(0.5, &(k[m].get(q / 3, q % 3) * &dds[q]));
                }
                for i in 0..3 {
                    v.axpy(-0.5, &(&gam[m][i] * &ds[i]));
                }
                if m == 0 {
                    v.c[0] -= 1.5;
                }
                v
            })
            .collect();
        let a: Vec<Jet> = (0..=order).map(|m| quadratic(&k[m + 1], &ds).scaled(0.25)).collect();
        let transport = |m: usize, f: &Jet| -> Jet {
            let mut v = apply_vector(&c[m], f);
            v.axpy(1.0, &(&(&d[m] - &a[m]) * f));
            v
        };
        let lm = |m: usize, f: &Jet| laplacian_with(&k[m], &gam[m], f);
        // N_0 = V_0 − Euler + D_0 − A_0 raises the degree.
        let c0_shift: [Jet; 3] = std::array::from_fn(|j| &c[0][j] - &Jet::coord(&sp, j));
        let d0a0 = &d[0] - &a[0];
        let n0 = |f: &Jet| {
            let mut v = apply_vector(&c0_shift, f);
            v.axpy(1.0, &(&d0a0 * f));
            v
        };

        let mut phi: Vec<Jet> = vec![];
        for alpha in 0..=order {
            let mut rhs = Jet::zero(&sp);
            for m in 1..=alpha {
                rhs.axpy(-1.0, &transport(m, &phi[alpha - m]));
            }
            for m in 0..alpha {
                let f = &phi[alpha - 1 - m];
                rhs.axpy(1.0, &lm(m, f));
                rhs.axpy(-1.0, &(&fm(m) * f));
            }
            let mut p = Jet::zero(&sp);
            for deg in 0..=sp.degree() {
                if alpha == 0 && deg == 0 {
                    p.c[0] = 1.0;
                    continue;
                }
                let lower = n0(&p);
                let div = (deg + alpha) as f64;
                for i in sp.degree_range(deg) {
                    p.c[i] = (rhs.c[i] - lower.c[i]) / div;
                }
            }
            phi.push(p);
        }
        Ok(Self { y, order, space: sp, model, potential, sigma, phi })
    }

    /// Builds the model from the start of a backward track on the torus:
    /// `g_0 = g(η = 0)`, `g_1 = 2 Ric`, `g_2 = −Δ_L Ric`, `F_0 = R`,
    /// `F_1 = −(ΔR + 2|Ric|²)`.
    pub fn from_track(back: &BackwardView<'_>, y: [f64; 3], degree: usize) -> Result<Self> {
        let chart = &back.trajectory().chart;
        let grid = chart.grid().ok_or_else(|| LabError::BackendMismatch("jet parametrix runs on the torus".into()))?;
        let sp = JetSpace::new(degree);
        let pack = back.pack(0)?;
        let g0 = back.metric(0);
        let g1 = pack.ricci.scaled(2.0);
        let g2 = lichnerowicz_endo(&pack, &pack.ricci)?.scaled(-1.0);
        let lap_r = pack.laplacian_scalar(&pack.scalar);
        let ric2 = pack.norm2_form(&pack.ricci);
        let r1: Vec<f64> = lap_r.c[0].iter().zip(&ric2).map(|(l, q)| -(l + 2.0 * q)).collect();
        let model = vec![
            form_jets(grid, |a, b| g0.comp(a, b), y, &sp),
            form_jets(grid, |a, b| g1.comp(a, b), y, &sp),
            form_jets(grid, |a, b| g2.comp(a, b), y, &sp),
        ];
        let potential = vec![scalar_jet(grid, &pack.scalar.c[0], y, &sp), scalar_jet(grid, &r1, y, &sp)];
        Self::from_model(y, model, potential, PARAMETRIX_ORDER)
    }

    /// `Φ_t = Σ t^α φ_α` and `∂_t Φ_t` as jets.
    pub fn series(&self, t: f64) -> (Jet, Jet) {
        let mut phi = Jet::zero(&self.space);
        let mut dphi = Jet::zero(&self.space);
        for (a, p) in self.phi.iter().enumerate() {
            phi.axpy(t.powi(a as i32), p);
            if a > 0 {
                dphi.axpy(a as f64 * t.powi(a as i32 - 1), p);
            }
        }
        (phi, dphi)
    }

    /// `e_t Φ_t` at offset `s = x − y` (no cutoff).
    pub fn value(&self, t: f64, s: [f64; 3]) -> f64 {
        let (phi, _) = self.series(t);
        gaussian(t, self.sigma.eval(s)) * phi.eval(s)
    }

    /// `e_t^{-1}(∂_t − Δ_t + R_t) e_t Φ_t` for an actual metric `g_t` and scalar
    /// curvature `R_t` (as jets about `y`).
    pub fn residual_jet(&self, t: f64, g_t: &JetMat, r_t: &Jet) -> Jet {
        let mj = MetricJets::new(g_t.clone());
        let gk = mj.contracted();
        let (phi, dphi) = self.series(t);
        let ds: [Jet; 3] = std::array::from_fn(|i| self.sigma.deriv(i));
        let mut lap_sigma = Jet::zero(&self.space);
        for i in 0..3 {
            for j in 0..3 {
                lap_sigma.axpy(1.0, &(mj.ginv.get(i, j) * &ds[i].deriv(j)));
            }
            lap_sigma.axpy(-1.0, &(&gk[i] * &ds[i]));
        }
        let mut coef = &self.sigma.scaled(2.0) - &quadratic(&mj.ginv, &ds);
        coef = coef.scaled(1.0 / (4.0 * t));
        coef.axpy(0.5, &lap_sigma);
        coef.c[0] -= 1.5;
        coef.axpy(t, r_t);
        let mut tp = &coef * &phi;
        let cvec: [Jet; 3] = std::array::from_fn(|j| {
            let mut v = Jet::zero(&self.space);
            for i in 0..3 {
                v.axpy(1.0, &(mj.ginv.get(i, j) * &ds[i]));
            }
            v
        });
        tp.axpy(1.0, &apply_vector(&cvec, &phi));
        tp.axpy(t, &dphi);
        tp.axpy(-t, &laplacian_with(&mj.ginv, &gk, &phi));
        tp.scaled(1.0 / t)
    }
}

pub fn gaussian(t: f64, sigma: f64) -> f64 {
    (4.0 * PI * t).powf(-1.5) * (-sigma / (2.0 * t)).exp()
}

/// Smooth cutoff: 1 for `d ≤ inner`, 0 for `d ≥ outer`.
pub fn cutoff_weight(d: f64, inner: f64, outer: f64) -> f64 {
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    if d <= inner {
        1.0
    } else if d >= outer {
        0.0
    } else {
        let (a, b) = (f(outer - d), f(d - inner));
        a / (a + b)
    }
}

// ------------------------------------------------------------- shooting ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RayProfile {
    /// Unit direction (in `g(y)`) in chart coordinates.
    pub direction: [f64; 3],
    pub r: Vec<f64>,
    /// Chart offsets `x − y` along the ray.
    pub offsets: Vec<[f64; 3]>,
    pub j: Vec<f64>,
    pub z_m1: Vec<f64>,
    /// Solution of `φ_0' = −½ z₋₁ φ_0`, `φ_0(0) = 1`, as `J^{-1/2} exp(−¼∫ r h₁(γ̇, γ̇))`.
    pub phi0: Vec<f64>,
    pub cutoff: f64,
    pub truncated: bool,
}

const RAY_DIM: usize = 25;

/// Shoots the `g`-geodesic from the origin with unit initial direction and
/// integrates the Jacobi matrix `Y = ∂x/∂v` alongside, giving
/// `J = √(det g(x)/det g(y)) det Y / r³`. With `h1` the first-order metric rate,
/// `z₋₁` carries the extra `r h₁(γ̇, γ̇)/2`.
pub fn shoot_ray(
    metric: &MetricJets,
    h1: Option<&JetMat>,
    direction: [f64; 3],
    r_max: f64,
    steps: usize,
    cutoff: f64,
) -> Result<RayProfile> {
    if !(r_max > 0.0) || steps == 0 {
        return Err(LabError::Domain("ray length and step count must be positive".into()));
    }
    let gy = metric.g.at_origin();
    let v = nalgebra::Vector3::from(direction);
    let norm = (v.transpose() * gy * v)[(0, 0)].sqrt();
    if !(norm > 0.0) {
        return Err(LabError::Domain("ray direction must be nonzero".into()));
    }
    let u: [f64; 3] = (v / norm).into();
    let truncated = r_max > cutoff;
    let end = r_max.min(cutoff);
    let h = end / steps as f64;
    let dgamma: Vec<Jet> = (0..81).map(|q| metric.gamma[q % 27].deriv(q / 27)).collect();
    let det0 = gy.determinant();
    let rhs = |rho: f64, y: &[f64; RAY_DIM]| -> ([f64; RAY_DIM], f64) {
        let s = [y[0], y[1], y[2]];
        let p = [y[3], y[4], y[5]];
        let gam: Vec<f64> = metric.gamma.iter().map(|j| j.eval(s)).collect();
        let dgam: Vec<f64> = dgamma.iter().map(|j| j.eval(s)).collect();
        let ym = Mat3::from_fn(|a, b| y[6 + 3 * a + b]);
        let yp = Mat3::from_fn(|a, b| y[15 + 3 * a + b]);
        let mut out = [0.0; RAY_DIM];
        out[..3].copy_from_slice(&p);
        for k in 0..3 {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc -= gam[9 * k + 3 * i + j] * p[i] * p[j];
                }
            }
            out[3 + k] = acc;
        }
        for a in 0..3 {
            for b in 0..3 {
                out[6 + 3 * a + b] = yp[(a, b)];
            }
        }
        for k in 0..3 {
            for col in 0..3 {
                let mut acc = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let pp = p[i] * p[j];
                        for m in 0..3 {
                            acc -= dgam[27 * m + 9 * k + 3 * i + j] * pp * ym[(m, col)];
                        }
                        acc -= 2.0 * gam[9 * k + 3 * i + j] * p[i] * yp[(j, col)];
                    }
                }
                out[15 + 3 * k + col] = acc;
            }
        }
        // (log J)' = Γ^k_km p^m + tr(Y' Y^{-1}) − 3/ρ
        let mut lj = 0.0;
        if rho > 0.0 {
            for k in 0..3 {
                for m in 0..3 {
                    lj += gam[9 * k + 3 * k + m] * p[m];
                }
            }
            let inv = ym.try_inverse().unwrap_or_else(Mat3::zeros);
            lj += (yp * inv).trace() - 3.0 / rho;
        }
        let h1pp = h1.map_or(0.0, |h| {
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += h.get(i, j).eval(s) * p[i] * p[j];
                }
            }
            acc
        });
        let z = lj + 0.5 * rho * h1pp;
        out[24] = -0.25 * rho * h1pp;
        (out, z)
    };
    let mut y = [0.0f64; RAY_DIM];
    y[3..6].copy_from_slice(&u);
    for a in 0..3 {
        y[15 + 4 * a] = 1.0;
    }
    let mut prof = RayProfile {
        direction: u,
        r: vec![],
        offsets: vec![],
        j: vec![],
        z_m1: vec![],
        phi0: vec![],
        cutoff,
        truncated,
    };
    for k in 0..=steps {
        let rho = k as f64 * h;
        let s = [y[0], y[1], y[2]];
        let (_, z) = rhs(rho, &y);
        let j = if k == 0 {
            1.0
        } else {
            let gx = metric.g.0.iter().map(|j| j.eval(s)).collect::<Vec<_>>();
            let det = Mat3::from_fn(|a, b| gx[3 * a + b]).determinant();
            let ym = Mat3::from_fn(|a, b| y[6 + 3 * a + b]);
            (det / det0).sqrt() * ym.determinant() / rho.powi(3)
        };
        prof.r.push(rho);
        prof.offsets.push(s);
        prof.j.push(j);
        prof.z_m1.push(z);
        prof.phi0.push(j.powf(-0.5) * y[24].exp());
        if k == steps {
            break;
        }
        let k1 = rhs(rho, &y).0;
        let step = |base: &[f64; RAY_DIM], kk: &[f64; RAY_DIM], f: f64| {
            let mut o = *base;
            for i in 0..RAY_DIM {
                o[i] += f * kk[i];
            }
            o
        };
        let k2 = rhs(rho + 0.5 * h, &step(&y, &k1, 0.5 * h)).0;
        let k3 = rhs(rho + 0.5 * h, &step(&y, &k2, 0.5 * h)).0;
        let k4 = rhs(rho + h, &step(&y, &k3, h)).0;
        for i in 0..RAY_DIM {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(prof)
}

// -------------------------------------------------------------- Volterra ----

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VolterraReport {
    /// `(t, sup |ψ₁|)` over the parabolic patch `|s|_g ≤ 5√(2t)`.
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    /// `K − n/2`.
    pub theory: f64,
}

fn jets_at(back: &BackwardView<'_>, t: f64, y: [f64; 3], sp: &Arc<JetSpace>) -> Result<(JetMat, Jet)> {
    let chart = &back.trajectory().chart;
    let grid = chart.grid().ok_or_else(|| LabError::BackendMismatch("Volterra residual runs on the torus".into()))?;
    let g = back.metric_at(t)?;
    let pack = compute_curvature_lite(chart, &g)?;
    Ok((form_jets(grid, |a, b| g.comp(a, b), y, sp), scalar_jet(grid, &pack.scalar.c[0], y, sp)))
}

/// First Volterra iterate `ψ₁ = (∂_t − Δ_t + R_t) p_t` with the actual metric
/// track, sampled on a lattice over the parabolic patch around `y`.
pub fn volterra_psi1(par: &JetParametrix, back: &BackwardView<'_>, times: &[f64]) -> Result<VolterraReport> {
    let gy = par.model[0].at_origin();
    let lmin = gy.symmetric_eigenvalues().min();
    let mut samples = vec![];
    for &t in times {
        let (g_t, r_t) = jets_at(back, t, par.y, &par.space)?;
        let p = par.residual_jet(t, &g_t, &r_t);
        let rho = 5.0 * (2.0 * t).sqrt();
        let half = rho / lmin.sqrt();
        let m = 8i32;
        let mut sup = 0.0f64;
        for a in -m..=m {
            for b in -m..=m {
                for c in -m..=m {
                    let s = [a as f64 * half / m as f64, b as f64 * half / m as f64, c as f64 * half / m as f64];
                    let sv = nalgebra::Vector3::from(s);
                    if (sv.transpose() * gy * sv)[(0, 0)] > rho * rho {
                        continue;
                    }
                    let v = gaussian(t, par.sigma.eval(s)) * p.eval(s);
                    sup = sup.max(v.abs());
                }
            }
        }
        samples.push((t, sup));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let e: Vec<f64> = samples.iter().map(|s| s.1.max(1e-300)).collect();
    let slope = if samples.len() > 1 { loglog_slope(&x, &e) } else { f64::NAN };
    Ok(VolterraReport { samples, slope, theory: par.order as f64 - 1.5 })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Self { inner: 1.6, outer: 2.6 }
    }
}

/// Grid samples of the cut-off parametrix `η(d) e_t Φ_t` and of its explicit
/// time derivative.
pub fn parametrix_on_grid(par: &JetParametrix, grid: &GridChart, t: f64, cut: Cutoff) -> (Vec<f64>, Vec<f64>) {
    let (phi, dphi) = par.series(t);
    let lmin = par.model[0].at_origin().symmetric_eigenvalues().min();
    let reach = cut.outer / lmin.sqrt();
    let vals: Vec<(f64, f64)> = (0..grid.npts())
        .map(|p| {
            let s = min_image(grid.coords(p), par.y, grid.l());
            if s.iter().map(|v| v * v).sum::<f64>().sqrt() > reach {
                return (0.0, 0.0);
            }
            let sig = par.sigma.eval(s);
            let w = cutoff_weight((2.0 * sig.max(0.0)).sqrt(), cut.inner, cut.outer);
            if w == 0.0 {
                return (0.0, 0.0);
            }
            let e = gaussian(t, sig);
            let (f, df) = (phi.eval(s), dphi.eval(s));
            (w * e * f, w * e * ((-1.5 / t + sig / (2.0 * t * t)) * f + df))
        })
        .collect();
    vals.into_iter().unzip()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub t0: f64,
    pub t1: f64,
    /// `sup |u(t1) − p(t1)| / sup |u(t1)|` with `u` the grid evolution of `p(t0)`.
    pub parametrix_error: f64,
    /// The same after adding the first Duhamel correction.
    pub corrected_error: f64,
    pub ratio: f64,
}

/// Evolves the cut-off parametrix from `t0` to `t1` on the grid and compares
/// with `p(t1)` and with `p(t1) − ∫ S_{t1−τ} ψ₁(τ) dτ`, where `S` is the heat
/// semigroup of the metric frozen at `y` (Gauss–Legendre in `τ`).
pub fn correction_check(
    par: &JetParametrix,
    traj: &FlowTrajectory,
    t0: f64,
    t1: f64,
    cut: Cutoff,
) -> Result<CorrectionReport> {
    let chart = &traj.chart;
    let grid = chart.grid().ok_or_else(|| LabError::BackendMismatch("correction check runs on the torus".into()))?;
    let back = traj.backward();
    let k = back.steps();
    let m0 = (t0 / traj.dt).round() as usize;
    let m1 = (t1 / traj.dt).round() as usize;
    if !(m0 >= 1 && m1 > m0 && m1 <= k) {
        return Err(LabError::Domain(format!("need 0 < t0 < t1 ≤ β* on the step grid, got {t0}, {t1}")));
    }
    let (t0, t1) = (back.eta(m0), back.eta(m1));
    let sub = FlowTrajectory::from_snapshots(
        chart,
        traj.dt,
        traj.metrics[k - m1..=k - m0].to_vec(),
        traj.rates[k - m1..=k - m0].to_vec(),
    )?;
    let (p0, _) = parametrix_on_grid(par, grid, t0, cut);
    let u = integrate_conjugate_density(&sub.backward(), &ScalarField { tag: chart.tag(), c: [p0] })?;
    let u1 = &u.last().c[0];
    let (p1, _) = parametrix_on_grid(par, grid, t1, cut);

    let tm = 0.5 * (t0 + t1);
    let gy = par.model.iter().enumerate().fold(Mat3::zeros(), |acc, (m, g)| acc + tm.powi(m as i32) * g.at_origin());
    let ry = par.potential.iter().enumerate().map(|(m, f)| tm.powi(m as i32) * f.value_at_origin()).sum::<f64>();
    let gyi = gy.try_inverse().ok_or_else(|| LabError::Domain("singular metric at the base point".into()))?;
    let (nodes, weights) = gauss_legendre_5();
    let mut w = vec![0.0; grid.npts()];
    for (x, wt) in nodes.iter().zip(weights) {
        let tau = tm + 0.5 * (t1 - t0) * x;
        let g = back.metric_at(tau)?;
        let psi = psi1_on_grid(par, chart, &g, grid, tau, cut)?;
        let lag = t1 - tau;
        let prop = grid.spectral_filter(&psi, |kv| {
            let kk = nalgebra::Vector3::from(kv);
            (-lag * ((kk.transpose() * gyi * kk)[(0, 0)] + ry)).exp()
        });
        let f = 0.5 * (t1 - t0) * wt;
        for (o, v) in w.iter_mut().zip(&prop) {
            *o -= f * v;
        }
    }
    let scale = u1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let e_p = u1.iter().zip(&p1).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
    let e_c = u1.iter().zip(p1.iter().zip(&w)).fold(0.0f64, |m, (a, (b, c))| m.max((a - b - c).abs())) / scale;
    Ok(CorrectionReport { t0, t1, parametrix_error: e_p, corrected_error: e_c, ratio: e_c / e_p })
}

/// `ψ₁` on the grid, with the Laplacian of the cut-off parametrix taken by the
/// grid operator of `g`.
pub fn psi1_on_grid(
    par: &JetParametrix,
    chart: &Chart,
    g: &MetricField,
    grid: &GridChart,
    t: f64,
    cut: Cutoff,
) -> Result<Vec<f64>> {
    let pack = compute_curvature_lite(chart, g)?;
    let (p, dp) = parametrix_on_grid(par, grid, t, cut);
    let lap = pack.laplacian_scalar(&ScalarField { tag: chart.tag(), c: [p.clone()] });
    Ok((0..p.len()).map(|i| dp[i] - lap.c[0][i] + pack.scalar.c[0][i] * p[i]).collect())
}

fn gauss_legendre_5() -> ([f64; 5], [f64; 5]) {
    let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    ([-b, -a, 0.0, a, b], [wb, wa, 128.0 / 225.0, wa, wb])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{integrate_ricci, FlowOptions};
    use crate::torus::{perturbed_metric, torus_chart, Scheme};

    /// Stereographic unit sphere `4|ds|²/(1 + |s|²)²` as jets about the pole.
    fn stereo(sp: &Arc<JetSpace>, scale: f64) -> JetMat {
        let mut q = Jet::constant(sp, 1.0);
        for i in 0..3 {
            let s = Jet::coord(sp, i);
            q.axpy(1.0, &(&s * &s));
        }
        let w = q.recip();
        let f = (&w * &w).scaled(4.0 * scale);
        let mut m = JetMat::zero(sp);
        for i in 0..3 {
            m.0[4 * i] = f.clone();
        }
        m
    }

    fn r_over_sin(r: f64) -> f64 {
        if r == 0.0 {
            1.0
        } else {
            r / r.sin()
        }
    }

    fn stereo_parametrix(flowing: bool, degree: usize) -> JetParametrix {
        let sp = JetSpace::new(degree);
        let g0 = stereo(&sp, 1.0);
        let (model, pot) = if flowing {
            // g(t) = (1 + 4t) g0, R(t) = 6/(1 + 4t)
            (
                vec![g0.clone(), g0.scaled(4.0)],
                vec![Jet::constant(&sp, 6.0), Jet::constant(&sp, -24.0), Jet::constant(&sp, 96.0)],
            )
        } else {
            (vec![g0], vec![])
        };
        JetParametrix::from_model([0.0; 3], model, pot, 2).unwrap()
    }

    #[test]
    fn radial_phi0_matches_closed_form() {
        for model in [SpaceForm::static_sphere(1.0), SpaceForm::flowing_sphere(1.0)] {
            let c = radial_parametrix(&model, 3.0, 3000).unwrap();
            assert!(!c.truncated);
            for (r, p) in c.r.iter().zip(&c.phi0) {
                let exact = if *r == 0.0 { 1.0 } else { r / r.sin() } * (-model.rate * r * r / 8.0).exp();
                assert!((p - exact).abs() < 1e-8 * exact, "r = {r}: {p} vs {exact}");
            }
        }
        let c = radial_parametrix(&SpaceForm::static_sphere(1.0), 4.0, 100).unwrap();
        assert!(c.truncated && *c.r.last().unwrap() < PI);
    }

    #[test]
    fn static_sphere_has_phi1_equal_phi0() {
        // the exact kernel is e^t (r / sin r) times the Euclidean Gaussian
        let c = radial_parametrix(&SpaceForm::static_sphere(1.0), 2.5, 2500).unwrap();
        for (a, b) in c.phi1.iter().zip(&c.phi0) {
            assert!((a - b).abs() < 1e-8 * b, "{a} vs {b}");
        }
    }

    #[test]
    fn phi1_on_diagonal_matches_spectral_fit() {
        let times: Vec<f64> = (0..10).map(|i| 0.005 + 0.005 * i as f64).collect();
        for (model, flowing, expect) in
            [(SpaceForm::static_sphere(1.0), false, 1.0), (SpaceForm::flowing_sphere(1.0), true, -2.0)]
        {
            let c = radial_parametrix(&model, 1.0, 100).unwrap();
            assert!((c.phi1[0] - expect).abs() < 1e-12);
            assert!((model.phi1_at_origin() - expect).abs() < 1e-12);
            let fit = spectral_subleading_fit(flowing, &times).unwrap();
            assert!((fit - c.phi1[0]).abs() < 0.01 * c.phi1[0].abs(), "fit {fit} vs {}", c.phi1[0]);
        }
    }

    #[test]
    fn flat_model_gives_the_euclidean_kernel() {
        let sp = JetSpace::new(6);
        let g = Mat3::new(1.2, 0.1, 0.0, 0.1, 0.9, 0.05, 0.0, 0.05, 1.1);
        let par = JetParametrix::from_model([0.0; 3], vec![JetMat::constant(&sp, &g)], vec![], 2).unwrap();
        let s = [0.3, -0.2, 0.5];
        let sv = nalgebra::Vector3::from(s);
        assert!((par.sigma.eval(s) - 0.5 * (sv.transpose() * g * sv)[(0, 0)]).abs() < 1e-14);
        assert!((par.phi[0].eval(s) - 1.0).abs() < 1e-14);
        assert!(par.phi[1].degree_norm(0) < 1e-14 && par.phi[2].eval(s).abs() < 1e-14);
    }

    #[test]
    fn jet_recursion_reproduces_sphere_coefficients() {
        let stat = stereo_parametrix(false, 16);
        let flow = stereo_parametrix(true, 16);
        let (ms, mf) = (SpaceForm::static_sphere(1.0), SpaceForm::flowing_sphere(1.0));
        let rs = radial_parametrix(&ms, 1.0, 2000).unwrap();
        let rf = radial_parametrix(&mf, 1.0, 2000).unwrap();
        let dir = [0.6, 0.0, 0.8];
        for k in [0usize, 200, 500, 800] {
            let r = rs.r[k];
            let rad = (r / 2.0).tan();
            let s = dir.map(|d| d * rad);
            assert!((stat.sigma.eval(s) - r * r / 2.0).abs() < 1e-9, "sigma at r = {r}");
            assert!((stat.phi[0].eval(s) - rs.phi0[k]).abs() < 1e-8);
            assert!((stat.phi[1].eval(s) - rs.phi1[k]).abs() < 1e-7);
            // static: Σ t^α φ_α = e^t φ_0
            assert!((stat.phi[2].eval(s) - 0.5 * rs.phi0[k]).abs() < 1e-6);
            assert!((flow.phi[0].eval(s) - rf.phi0[k]).abs() < 1e-8);
            assert!((flow.phi[1].eval(s) - rf.phi1[k]).abs() < 1e-7, "{} vs {}", flow.phi[1].eval(s), rf.phi1[k]);
        }
    }

    #[test]
    fn shooting_recovers_jacobian_and_transport() {
        // jets converge for |s| < 1; r = 0.5 keeps |s| near 0.25
        let sp = JetSpace::new(18);
        let g0 = stereo(&sp, 1.0);
        let mj = MetricJets::new(g0.clone());
        let prof = shoot_ray(&mj, None, [1.0, 2.0, -1.0], 0.5, 500, PI).unwrap();
        let flow = stereo_parametrix(true, 16);
        let h1 = g0.scaled(4.0);
        let prof_f = shoot_ray(&mj, Some(&h1), [1.0, 2.0, -1.0], 0.5, 500, PI).unwrap();
        let m = SpaceForm::flowing_sphere(1.0);
        for k in (0..=500).step_by(100) {
            let r = prof.r[k];
            let sm = SpaceForm::static_sphere(1.0);
            assert!((prof.j[k] - sm.j(r)).abs() < 1e-9, "J at {r}: {}", prof.j[k] - sm.j(r));
            assert!((prof.phi0[k] - r_over_sin(r)).abs() < 1e-9);
            assert!((prof_f.phi0[k] - m.phi0_closed(r)).abs() < 1e-9);
            assert!((flow.phi[0].eval(prof_f.offsets[k]) - prof_f.phi0[k]).abs() < 1e-9);
            assert!((prof_f.z_m1[k] - (2.0 * (1.0 / r.tan() - 1.0 / r) + 2.0 * r)).abs() < 1e-8 || r == 0.0);
        }
        let short = shoot_ray(&mj, None, [1.0, 0.0, 0.0], 4.0, 100, PI).unwrap();
        assert!(short.truncated && (short.r.last().unwrap() - PI).abs() < 1e-12);
    }

    #[test]
    fn residual_is_of_order_k_on_the_model() {
        let par = stereo_parametrix(true, 14);
        let sp = par.space.clone();
        let g0 = &par.model[0];
        let at = |t: f64| {
            let g = g0.scaled(1.0 + 4.0 * t);
            let r = Jet::constant(&sp, 6.0 / (1.0 + 4.0 * t));
            par.residual_jet(t, &g, &r)
        };
        let s = [0.1, -0.05, 0.08];
        let (a, b) = (at(0.02).eval(s), at(0.01).eval(s));
        let order = (a / b).abs().log2();
        assert!((order - 2.0).abs() < 0.15, "order {order}");
    }

    #[test]
    fn cutoff_is_smooth_step() {
        assert_eq!(cutoff_weight(0.5, 1.0, 2.0), 1.0);
        assert_eq!(cutoff_weight(2.5, 1.0, 2.0), 0.0);
        assert!((cutoff_weight(1.5, 1.0, 2.0) - 0.5).abs() < 1e-15);
        let (x, w) = gauss_legendre_5();
        let integral: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((integral - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn volterra_residual_on_the_flat_torus_vanishes() {
        let chart = torus_chart(12, 2.0 * PI, Scheme::Fourier).unwrap();
        let g = MetricField::flat(&chart);
        let traj = integrate_ricci(&chart, &g, FlowOptions::new(0.02, 0.005)).unwrap();
        let back = traj.backward();
        let par = JetParametrix::from_track(&back, [1.0, 2.0, 0.5], 8).unwrap();
        let rep = volterra_psi1(&par, &back, &[0.005, 0.01]).unwrap();
        assert!(rep.samples.iter().all(|s| s.1 < 1e-10), "{:?}", rep.samples);
    }

    #[test]
    fn volterra_residual_decays_at_half_order_on_a_perturbed_torus() {
        let chart = torus_chart(16, 2.0 * PI, Scheme::Fourier).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        let traj = integrate_ricci(&chart, &g, FlowOptions::new(0.012, 0.001)).unwrap();
        let back = traj.backward();
        let par = JetParametrix::from_track(&back, [1.0, 2.0, 0.5], 10).unwrap();
        let rep = volterra_psi1(&par, &back, &[0.002, 0.005, 0.01]).unwrap();
        assert!(rep.samples.iter().all(|s| s.1 > 0.0));
        assert!((rep.slope - rep.theory).abs() < 0.1, "slope {}", rep.slope);
    }
}
