//! Backend-agnostic tensor calculus in a frame `{E_i}` with structure
//! constants `c_ij^k`.
//!
//! Conventions:
//! * `∇_{E_i} E_j = Γ^k_ij E_k`, from the Koszul formula
//!   `Γ_ijl = ½(E_i g_jl + E_j g_il − E_l g_ij + c_ij^m g_ml − c_il^m g_mj − c_jl^m g_mi)`.
//! * `R(X,Y)Z = ∇_X∇_Y Z − ∇_Y∇_X Z − ∇_[X,Y] Z` and the stored Riemann tensor is
//!   `R_asbt = g(R(E_s,E_a)E_b, E_t)`, so that `g^{st} R_asbt = R_ab` and the unit
//!   round 3-sphere has `R_asbt = g_ab g_st − g_at g_sb`, `Ric = 2g`, `R = 6`.
//! * `Δ = g^{ab}∇_a∇_b` (geometer sign).
//!
//! Two discretizations of the rough Laplacian coexist. The direct one
//! ([`lichnerowicz_cov`]) contracts second covariant derivatives built from
//! second-derivative stencils. The divergence one (used everywhere else) writes
//! `Δh = ∇_j(∇^j h)` as `(1/√g) E_j(√g ·)` plus connection terms; with a
//! skew-adjoint first-derivative stencil it is exactly symmetric for the
//! discrete pairing `Σ √g H^{ab} b_ab`, which is what the conservation checks
//! rely on.

use rayon::prelude::*;

use crate::chart::Chart;
use crate::error::{LabError, Result};
use crate::field::{ensure_same, sym, CoVectorField, ContraForm, CovariantForm, Mat3, MetricField, ScalarField, SYM};

type Arr = Vec<f64>;

#[inline]
fn g3(k: usize, i: usize, j: usize) -> usize {
    9 * k + 3 * i + j
}

/// Evaluates `f` at every point and transposes the results into `K` arrays.
pub(crate) fn pointwise<const K: usize, F>(n: usize, f: F) -> [Arr; K]
where
    F: Fn(usize) -> [f64; K] + Sync + Send,
{
    let vals: Vec<[f64; K]> = (0..n).into_par_iter().map(f).collect();
    std::array::from_fn(|k| vals.iter().map(|v| v[k]).collect())
}

pub(crate) fn pointwise_vec<F>(n: usize, k: usize, f: F) -> Vec<Arr>
where
    F: Fn(usize) -> Vec<f64> + Sync + Send,
{
    let vals: Vec<Vec<f64>> = (0..n).into_par_iter().map(f).collect();
    (0..k).map(|c| vals.iter().map(|v| v[c]).collect()).collect()
}

#[derive(Clone, Debug)]
pub struct CurvaturePack {
    pub chart: Chart,
    pub metric: MetricField,
    pub ginv: Vec<Mat3>,
    pub sqrtg: Arr,
    /// `Γ^k_ij` at component `9k + 3i + j`.
    pub christoffel: Vec<Arr>,
    /// `E_m Γ^k_ij` at component `27m + 9k + 3i + j`; only in full packs.
    pub dchristoffel: Option<Vec<Arr>>,
    /// `R_asbt` at component `27a + 9s + 3b + t`; only in full packs.
    pub riemann: Option<Vec<Arr>>,
    pub ricci: CovariantForm,
    pub scalar: ScalarField,
    pub einstein: CovariantForm,
}

/// Full curvature: connection, its derivatives, Riemann, Ricci, scalar, Einstein.
pub fn compute_curvature(chart: &Chart, g: &MetricField) -> Result<CurvaturePack> {
    build(chart, g, true)
}

/// Connection, Ricci, scalar and Einstein tensors only (what the flows need).
pub fn compute_curvature_lite(chart: &Chart, g: &MetricField) -> Result<CurvaturePack> {
    build(chart, g, false)
}

fn build(chart: &Chart, g: &MetricField, full: bool) -> Result<CurvaturePack> {
    ensure_same(chart.tag(), g.tag, "metric")?;
    g.check_admissible()?;
    let n = chart.npts();
    let c = chart.structure();
    let ginv: Vec<Mat3> =
        (0..n).into_par_iter().map(|p| g.at(p).try_inverse().expect("admissible metric is invertible")).collect();
    let sqrtg: Arr = (0..n).into_par_iter().map(|p| g.at(p).determinant().sqrt()).collect();

    let homogeneous = chart.is_homogeneous();
    let zero = vec![0.0; n];
    let dg: Vec<Vec<Arr>> = (0..3)
        .map(|i| (0..6).map(|s| if homogeneous { zero.clone() } else { chart.d(&g.c[s], i) }).collect())
        .collect();

    let christoffel = pointwise_vec(n, 27, |p| {
        let gm = g.at(p);
        let gi = &ginv[p];
        let mut low = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    let mut v = dg[i][sym(j, l)][p] + dg[j][sym(i, l)][p] - dg[l][sym(i, j)][p];
                    for m in 0..3 {
                        v += c[i][j][m] * gm[(m, l)] - c[i][l][m] * gm[(m, j)] - c[j][l][m] * gm[(m, i)];
                    }
                    low[i][j][l] = 0.5 * v;
                }
            }
        }
        let mut out = vec![0.0; 27];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    out[g3(k, i, j)] = (0..3).map(|l| gi[(k, l)] * low[i][j][l]).sum();
                }
            }
        }
        out
    });

    let deriv = |f: &Arr, axis: usize| if homogeneous { zero.clone() } else { chart.d(f, axis) };

    let (dchristoffel, riemann, ricci_mats) = if full {
        let dgam: Vec<Arr> = (0..81).map(|q| deriv(&christoffel[q % 27], q / 27)).collect();
        let riem = pointwise_vec(n, 81, |p| {
            let gam = |k: usize, i: usize, j: usize| christoffel[g3(k, i, j)][p];
            let dg_ = |m: usize, k: usize, i: usize, j: usize| dgam[27 * m + g3(k, i, j)][p];
            let gm = g.at(p);
            // R^l_kij
            let mut r = [[[[0.0; 3]; 3]; 3]; 3];
            for l in 0..3 {
                for k in 0..3 {
                    for i in 0..3 {
                        for j in 0..3 {
                            let mut v = dg_(i, l, j, k) - dg_(j, l, i, k);
                            for m in 0..3 {
                                v += gam(m, j, k) * gam(l, i, m) - gam(m, i, k) * gam(l, j, m);
                                v -= c[i][j][m] * gam(l, m, k);
                            }
                            r[l][k][i][j] = v;
                        }
                    }
                }
            }
            let mut out = vec![0.0; 81];
            for a in 0..3 {
                for s in 0..3 {
                    for b in 0..3 {
                        for t in 0..3 {
                            out[27 * a + 9 * s + 3 * b + t] = (0..3).map(|m| gm[(t, m)] * r[m][b][s][a]).sum();
                        }
                    }
                }
            }
            out
        });
        let ricci: Vec<Mat3> = (0..n)
            .into_par_iter()
            .map(|p| {
                let gi = &ginv[p];
                Mat3::from_fn(|a, b| {
                    let mut v = 0.0;
                    for s in 0..3 {
                        for t in 0..3 {
                            v += gi[(s, t)] * riem[27 * a + 9 * s + 3 * b + t][p];
                        }
                    }
                    v
                })
            })
            .collect();
        (Some(dgam), Some(riem), ricci)
    } else {
        // Ric_ab = E_s Γ^s_ab − E_a Γ^s_sb + Γ^m_ab Γ^s_sm − Γ^m_sb Γ^s_am − c_sa^p Γ^s_pb
        let symmetric = !chart.has_structure();
        let mut div = vec![vec![zero.clone(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                if symmetric && b < a {
                    div[a][b] = div[b][a].clone();
                    continue;
                }
                let mut acc = zero.clone();
                for s in 0..3 {
                    let d = deriv(&christoffel[g3(s, a, b)], s);
                    for (x, y) in acc.iter_mut().zip(&d) {
                        *x += y;
                    }
                }
                div[a][b] = acc;
            }
        }
        let trace: Vec<Arr> =
            (0..3).map(|b| (0..n).map(|p| (0..3).map(|s| christoffel[g3(s, s, b)][p]).sum()).collect()).collect();
        let dtrace: Vec<Vec<Arr>> = (0..3).map(|a| (0..3).map(|b| deriv(&trace[b], a)).collect()).collect();
        let ricci: Vec<Mat3> = (0..n)
            .into_par_iter()
            .map(|p| {
                let gam = |k: usize, i: usize, j: usize| christoffel[g3(k, i, j)][p];
                Mat3::from_fn(|a, b| {
                    let mut v = div[a][b][p] - dtrace[a][b][p];
                    for m in 0..3 {
                        v += gam(m, a, b) * trace[m][p];
                        for s in 0..3 {
                            v -= gam(m, s, b) * gam(s, a, m);
                            v -= c[s][a][m] * gam(s, m, b);
                        }
                    }
                    v
                })
            })
            .collect();
        (None, None, ricci)
    };

    let ricci = CovariantForm::from_mats(chart.tag(), &ricci_mats);
    let scalar = ScalarField {
        tag: chart.tag(),
        c: [(0..n).into_par_iter().map(|p| (ginv[p] * ricci.at(p)).trace()).collect()],
    };
    let einstein = CovariantForm::from_fn(chart, |p| ricci.at(p) - 0.5 * scalar.c[0][p] * g.at(p));
    Ok(CurvaturePack {
        chart: chart.clone(),
        metric: g.clone(),
        ginv,
        sqrtg,
        christoffel,
        dchristoffel,
        riemann,
        ricci,
        scalar,
        einstein,
    })
}

impl CurvaturePack {
    pub fn npts(&self) -> usize {
        self.sqrtg.len()
    }

    #[inline]
    pub fn gamma(&self, p: usize, k: usize, i: usize, j: usize) -> f64 {
        self.christoffel[g3(k, i, j)][p]
    }

    fn d(&self, f: &Arr, axis: usize) -> Arr {
        self.chart.d(f, axis)
    }

    fn check(&self, tag: crate::chart::BackendTag, what: &str) -> Result<()> {
        ensure_same(self.chart.tag(), tag, what)
    }

    /// `∫ f dμ_g`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        let w: Arr = f.par_iter().zip(&self.sqrtg).map(|(a, b)| a * b).collect();
        self.chart.cell_sum(&w)
    }

    pub fn volume(&self) -> f64 {
        self.chart.cell_sum(&self.sqrtg)
    }

    pub fn raise(&self, h: &CovariantForm) -> ContraForm {
        ContraForm::from_fn(&self.chart, |p| self.ginv[p] * h.at(p) * self.ginv[p])
    }

    pub fn lower(&self, hc: &ContraForm) -> CovariantForm {
        let g = &self.metric;
        CovariantForm::from_fn(&self.chart, |p| {
            let gm = g.at(p);
            gm * hc.at(p) * gm
        })
    }

    pub fn raise_vec(&self, w: &CoVectorField) -> [Arr; 3] {
        pointwise(self.npts(), |p| (self.ginv[p] * w.at(p)).into())
    }

    pub fn lower_vec(&self, v: &[Arr; 3]) -> CoVectorField {
        let g = &self.metric;
        CoVectorField::from_fn(&self.chart, |p| (g.at(p) * nalgebra::Vector3::new(v[0][p], v[1][p], v[2][p])).into())
    }

    /// Pointwise norm `|h|² = g^{ac} g^{bd} h_ab h_cd`.
    pub fn norm2_form(&self, h: &CovariantForm) -> Arr {
        (0..self.npts())
            .into_par_iter()
            .map(|p| {
                let m = self.ginv[p] * h.at(p);
                (m * m).trace()
            })
            .collect()
    }

    pub fn norm2_vec(&self, w: &CoVectorField) -> Arr {
        (0..self.npts())
            .into_par_iter()
            .map(|p| {
                let v = w.at(p);
                (v.transpose() * self.ginv[p] * v)[(0, 0)]
            })
            .collect()
    }

    pub fn trace(&self, h: &CovariantForm) -> Arr {
        (0..self.npts()).into_par_iter().map(|p| (self.ginv[p] * h.at(p)).trace()).collect()
    }

    /// `∇_j h_ab` as `[j][sym(a,b)]`.
    pub fn nabla_form(&self, h: &CovariantForm) -> Vec<Vec<Arr>> {
        let n = self.npts();
        let dh: Vec<Vec<Arr>> = (0..3).map(|j| (0..6).map(|s| self.d(&h.c[s], j)).collect()).collect();
        (0..3)
            .map(|j| {
                let out: [Arr; 6] = pointwise(n, |p| {
                    let hm = h.at(p);
                    std::array::from_fn(|s| {
                        let (a, b) = SYM[s];
                        let mut v = dh[j][s][p];
                        for m in 0..3 {
                            v -= self.gamma(p, m, j, a) * hm[(m, b)] + self.gamma(p, m, j, b) * hm[(a, m)];
                        }
                        v
                    })
                });
                out.to_vec()
            })
            .collect()
    }

    /// `∇_j w_a` as a row-major 3×3 field `[3j + a]`.
    pub fn nabla_vec(&self, w: &CoVectorField) -> Vec<Arr> {
        let dw: Vec<Vec<Arr>> = (0..3).map(|j| (0..3).map(|a| self.d(&w.c[a], j)).collect()).collect();
        pointwise_vec(self.npts(), 9, |p| {
            let mut out = vec![0.0; 9];
            for j in 0..3 {
                for a in 0..3 {
                    let mut v = dw[j][a][p];
                    for m in 0..3 {
                        v -= self.gamma(p, m, j, a) * w.c[m][p];
                    }
                    out[3 * j + a] = v;
                }
            }
            out
        })
    }

    pub fn gradient(&self, f: &ScalarField) -> CoVectorField {
        CoVectorField { tag: f.tag, c: std::array::from_fn(|a| self.d(&f.c[0], a)) }
    }

    /// Covariant Hessian `∇_a ∇_b f`.
    pub fn hessian(&self, f: &ScalarField) -> CovariantForm {
        let df = self.gradient(f);
        let nab = self.nabla_vec(&df);
        CovariantForm::from_fn(&self.chart, |p| Mat3::from_fn(|a, b| nab[3 * a + b][p]))
    }

    /// `∇_a V^a` for a contravariant vector, in divergence form.
    pub fn div_vector(&self, v: &[Arr; 3]) -> Arr {
        let n = self.npts();
        let mut acc = vec![0.0; n];
        for a in 0..3 {
            let w: Arr = (0..n).map(|p| self.sqrtg[p] * v[a][p]).collect();
            let d = self.d(&w, a);
            for p in 0..n {
                acc[p] += d[p] / self.sqrtg[p];
            }
        }
        acc
    }

    /// `V^b = ∇_a H^{ab}` in divergence form.
    pub fn div_contra(&self, hc: &ContraForm) -> [Arr; 3] {
        let n = self.npts();
        let mut out: [Arr; 3] = std::array::from_fn(|_| vec![0.0; n]);
        for (b, o) in out.iter_mut().enumerate() {
            let col: [Arr; 3] = std::array::from_fn(|a| hc.comp(a, b).to_vec());
            *o = self.div_vector(&col);
        }
        let extra: [Arr; 3] = pointwise(n, |p| {
            let hm = hc.at(p);
            std::array::from_fn(|b| {
                let mut v = 0.0;
                for a in 0..3 {
                    for m in 0..3 {
                        v += self.gamma(p, b, a, m) * hm[(a, m)];
                    }
                }
                v
            })
        });
        for b in 0..3 {
            for p in 0..n {
                out[b][p] += extra[b][p];
            }
        }
        out
    }

    /// Rough Laplacian of a covariant 2-tensor, divergence form.
    pub fn rough_laplacian_form(&self, h: &CovariantForm) -> CovariantForm {
        let n = self.npts();
        let t = self.nabla_form(h);
        // U^{jab}: all indices raised.
        let u: Vec<Arr> = pointwise_vec(n, 18, |p| {
            let gi = &self.ginv[p];
            let tl: [Mat3; 3] = std::array::from_fn(|j| Mat3::from_fn(|a, b| t[j][sym(a, b)][p]));
            let mut out = vec![0.0; 18];
            for j in 0..3 {
                let mut m = Mat3::zeros();
                for i in 0..3 {
                    m += gi[(j, i)] * tl[i];
                }
                let m = gi * m * gi;
                for s in 0..6 {
                    let (a, b) = SYM[s];
                    out[6 * j + s] = m[(a, b)];
                }
            }
            out
        });
        let mut lap: Vec<Arr> = vec![vec![0.0; n]; 6];
        for s in 0..6 {
            let col: [Arr; 3] = std::array::from_fn(|j| u[6 * j + s].clone());
            lap[s] = self.div_vector(&col);
        }
        let conn: [Arr; 6] = pointwise(n, |p| {
            let uu = |j: usize, a: usize, b: usize| u[6 * j + sym(a, b)][p];
            std::array::from_fn(|s| {
                let (a, b) = SYM[s];
                let mut v = 0.0;
                for j in 0..3 {
                    for m in 0..3 {
                        v += self.gamma(p, a, j, m) * uu(j, m, b) + self.gamma(p, b, j, m) * uu(j, a, m);
                    }
                }
                v
            })
        });
        let g = &self.metric;
        CovariantForm::from_fn(&self.chart, |p| {
            let up = Mat3::from_fn(|a, b| lap[sym(a, b)][p] + conn[sym(a, b)][p]);
            let gm = g.at(p);
            gm * up * gm
        })
    }

    /// Rough Laplacian of a 1-form, divergence form.
    pub fn rough_laplacian_vec(&self, w: &CoVectorField) -> CoVectorField {
        let n = self.npts();
        let t = self.nabla_vec(w);
        let u: Vec<Arr> = pointwise_vec(n, 9, |p| {
            let gi = &self.ginv[p];
            let m = Mat3::from_fn(|j, a| t[3 * j + a][p]);
            let up = gi * m * gi;
            (0..9).map(|q| up[(q / 3, q % 3)]).collect()
        });
        let mut lap: [Arr; 3] = std::array::from_fn(|_| vec![0.0; n]);
        for (a, l) in lap.iter_mut().enumerate() {
            let col: [Arr; 3] = std::array::from_fn(|j| u[3 * j + a].clone());
            *l = self.div_vector(&col);
        }
        for p in 0..n {
            for a in 0..3 {
                let mut v = 0.0;
                for j in 0..3 {
                    for m in 0..3 {
                        v += self.gamma(p, a, j, m) * u[3 * j + m][p];
                    }
                }
                lap[a][p] += v;
            }
        }
        self.lower_vec(&lap)
    }

    pub fn laplacian_scalar(&self, f: &ScalarField) -> ScalarField {
        let n = self.npts();
        let df: [Arr; 3] = std::array::from_fn(|a| self.d(&f.c[0], a));
        let up: [Arr; 3] =
            pointwise(n, |p| (self.ginv[p] * nalgebra::Vector3::new(df[0][p], df[1][p], df[2][p])).into());
        ScalarField { tag: f.tag, c: [self.div_vector(&up)] }
    }
}

/// `ℰ(h)`, the curvature endomorphism of the Lichnerowicz Laplacian in 3D.
pub fn endomorphism(curv: &CurvaturePack, h: &CovariantForm) -> CovariantForm {
    let g = &curv.metric;
    CovariantForm::from_fn(&curv.chart, |p| {
        let gm = g.at(p);
        let gi = curv.ginv[p];
        let ric = curv.ricci.at(p);
        let r = curv.scalar.c[0][p];
        let hm = h.at(p);
        let trh = (gi * hm).trace();
        let ric_h = (gi * ric * gi * hm).trace();
        -3.0 * (ric * gi * hm + hm * gi * ric) + 2.0 * ric_h * gm + 2.0 * (ric - 0.5 * r * gm) * trh + r * hm
    })
}

/// `Δ_L h = Δh − R_as h^s_b − R_bs h^s_a + 2 R_asbt h^{st}`: direct form with
/// second-derivative stencils and the full Riemann tensor.
pub fn lichnerowicz_cov(curv: &CurvaturePack, h: &CovariantForm) -> Result<CovariantForm> {
    curv.check(h.tag, "lichnerowicz_cov")?;
    let (Some(dgam), Some(riem)) = (&curv.dchristoffel, &curv.riemann) else {
        return Err(LabError::Domain("lichnerowicz_cov needs a full curvature pack".into()));
    };
    let n = curv.npts();
    let chart = &curv.chart;
    let homogeneous = chart.is_homogeneous();
    let zero = vec![0.0; n];
    let dh: Vec<Vec<Arr>> = (0..3)
        .map(|j| (0..6).map(|s| if homogeneous { zero.clone() } else { chart.d(&h.c[s], j) }).collect())
        .collect();
    // second derivatives E_i E_j h_ab, i ≤ j
    let mut ddh: Vec<Vec<Arr>> = vec![vec![]; 6];
    for (q, &(i, j)) in SYM.iter().enumerate() {
        ddh[q] = (0..6).map(|s| if homogeneous { zero.clone() } else { chart.dd(&h.c[s], i, j) }).collect();
    }
    let out = CovariantForm::from_fn(chart, |p| {
        let gam = |k: usize, i: usize, j: usize| curv.gamma(p, k, i, j);
        let dgm = |m: usize, k: usize, i: usize, j: usize| dgam[27 * m + g3(k, i, j)][p];
        let hm = h.at(p);
        let dhm: [Mat3; 3] = std::array::from_fn(|j| Mat3::from_fn(|a, b| dh[j][sym(a, b)][p]));
        // T_jab = ∇_j h_ab
        let t: [Mat3; 3] = std::array::from_fn(|j| {
            Mat3::from_fn(|a, b| {
                let mut v = dhm[j][(a, b)];
                for m in 0..3 {
                    v -= gam(m, j, a) * hm[(m, b)] + gam(m, j, b) * hm[(a, m)];
                }
                v
            })
        });
        let gi = curv.ginv[p];
        let mut lap = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let w = gi[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let m = Mat3::from_fn(|a, b| {
                    // E_i T_jab
                    let mut v = ddh[sym(i, j)][sym(a, b)][p];
                    for m in 0..3 {
                        v -= dgm(i, m, j, a) * hm[(m, b)] + gam(m, j, a) * dhm[i][(m, b)];
                        v -= dgm(i, m, j, b) * hm[(a, m)] + gam(m, j, b) * dhm[i][(a, m)];
                    }
                    for m in 0..3 {
                        v -= gam(m, i, j) * t[m][(a, b)] + gam(m, i, a) * t[j][(m, b)] + gam(m, i, b) * t[j][(a, m)];
                    }
                    v
                });
                lap += w * m;
            }
        }
        let ric = curv.ricci.at(p);
        let hup = gi * hm * gi;
        let riem_term = Mat3::from_fn(|a, b| {
            let mut v = 0.0;
            for s in 0..3 {
                for t in 0..3 {
                    v += riem[27 * a + 9 * s + 3 * b + t][p] * hup[(s, t)];
                }
            }
            v
        });
        lap - ric * gi * hm - hm * gi * ric + 2.0 * riem_term
    });
    Ok(out)
}

/// `Δ_L h = Δh + ℰ(h)` with the divergence-form rough Laplacian.
pub fn lichnerowicz_endo(curv: &CurvaturePack, h: &CovariantForm) -> Result<CovariantForm> {
    curv.check(h.tag, "lichnerowicz_endo")?;
    let mut out = curv.rough_laplacian_form(h);
    out.axpy(1.0, &endomorphism(curv, h));
    Ok(out)
}

/// Index-raised Lichnerowicz Laplacian of a contravariant form.
pub fn lichnerowicz_contra(curv: &CurvaturePack, hc: &ContraForm) -> Result<ContraForm> {
    curv.check(hc.tag, "lichnerowicz_contra")?;
    let low = curv.lower(hc);
    Ok(curv.raise(&lichnerowicz_endo(curv, &low)?))
}

/// `(δh)_k = −g^{ij} ∇_i h_jk`.
pub fn divergence(curv: &CurvaturePack, h: &CovariantForm) -> Result<CoVectorField> {
    curv.check(h.tag, "divergence")?;
    divergence_contra(curv, &curv.raise(h))
}

/// `(δH)_b = −g_bc ∇_a H^{ac}`.
pub fn divergence_contra(curv: &CurvaturePack, hc: &ContraForm) -> Result<CoVectorField> {
    curv.check(hc.tag, "divergence")?;
    let v = curv.div_contra(hc);
    let neg: [Arr; 3] = std::array::from_fn(|a| v[a].iter().map(|x| -x).collect());
    Ok(curv.lower_vec(&neg))
}

/// `δ*w = ½(∇_a w_b + ∇_b w_a)`, i.e. half the Lie derivative of `g` along `w♯`.
pub fn lie_metric(curv: &CurvaturePack, w: &CoVectorField) -> Result<CovariantForm> {
    curv.check(w.tag, "lie_metric")?;
    let nab = curv.nabla_vec(w);
    Ok(CovariantForm::from_fn(&curv.chart, |p| Mat3::from_fn(|a, b| 0.5 * (nab[3 * a + b][p] + nab[3 * b + a][p]))))
}

/// `G(h) = h − ½ (tr_g h) g`.
pub fn einstein_conjugate(g: &MetricField, h: &CovariantForm) -> Result<CovariantForm> {
    ensure_same(g.tag, h.tag, "einstein_conjugate")?;
    let n = g.npts();
    let vals: Vec<Mat3> = (0..n)
        .into_par_iter()
        .map(|p| {
            let gm = g.at(p);
            let hm = h.at(p);
            let tr = (gm.try_inverse().expect("invertible metric") * hm).trace();
            hm - 0.5 * tr * gm
        })
        .collect();
    Ok(CovariantForm::from_mats(g.tag, &vals))
}

/// `Δv_a + R_a^b v_b`.
pub fn hodge_1form_laplacian(curv: &CurvaturePack, v: &CoVectorField) -> Result<CoVectorField> {
    curv.check(v.tag, "hodge_1form_laplacian")?;
    let mut out = curv.rough_laplacian_vec(v);
    let extra = CoVectorField::from_fn(&curv.chart, |p| (curv.ricci.at(p) * curv.ginv[p] * v.at(p)).into());
    out.axpy(1.0, &extra);
    Ok(out)
}

/// `∫ A^{ab} b_ab dμ_g`.
pub fn l2_pairing(curv: &CurvaturePack, a: &ContraForm, b: &CovariantForm) -> Result<f64> {
    curv.check(a.tag, "l2_pairing")?;
    curv.check(b.tag, "l2_pairing")?;
    let f: Arr = (0..curv.npts()).into_par_iter().map(|p| (a.at(p) * b.at(p)).trace()).collect();
    Ok(curv.integrate(&f))
}

/// `∫ g^{ac} g^{bd} h_ab k_cd dμ_g`.
pub fn l2_forms(curv: &CurvaturePack, h: &CovariantForm, k: &CovariantForm) -> f64 {
    let f: Arr = (0..curv.npts())
        .into_par_iter()
        .map(|p| {
            let gi = curv.ginv[p];
            (gi * h.at(p) * gi * k.at(p)).trace()
        })
        .collect();
    curv.integrate(&f)
}

/// `∫ g^{ab} v_a w_b dμ_g`.
pub fn l2_vectors(curv: &CurvaturePack, v: &CoVectorField, w: &CoVectorField) -> f64 {
    let f: Arr =
        (0..curv.npts()).into_par_iter().map(|p| (v.at(p).transpose() * curv.ginv[p] * w.at(p))[(0, 0)]).collect();
    curv.integrate(&f)
}

/// DeTurck covector `X_a = g_ak X^k` with `X^k = −g^{ij}(Γ^k_ij − Γ̃^k_ij)`.
pub fn deturck_covector(curv: &CurvaturePack, reference: &[Arr]) -> CoVectorField {
    let n = curv.npts();
    let up: [Arr; 3] = pointwise(n, |p| {
        let gi = curv.ginv[p];
        std::array::from_fn(|k| {
            let mut v = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    v -= gi[(i, j)] * (curv.gamma(p, k, i, j) - reference[g3(k, i, j)][p]);
                }
            }
            v
        })
    });
    curv.lower_vec(&up)
}

/// Result of [`project_divergence_free`].
#[derive(Clone, Debug)]
pub struct Projection {
    pub transverse: CovariantForm,
    pub w: CoVectorField,
    pub iterations: usize,
    pub relative_residual: f64,
}

pub const PROJECTION_TOL: f64 = 1e-10;

/// Splits `h = h_T + 2δ*w` with `δh_T = 0`, solving `δδ*w = ½δh` by conjugate
/// gradients in the `L²(g)` inner product on 1-forms. Constant covectors that
/// lie in the numerical kernel of `δ*` are removed from the iterate.
pub fn project_divergence_free(curv: &CurvaturePack, h: &CovariantForm) -> Result<Projection> {
    project_with(curv, h, PROJECTION_TOL, 20_000)
}

pub fn project_with(curv: &CurvaturePack, h: &CovariantForm, tol: f64, max_iter: usize) -> Result<Projection> {
    curv.check(h.tag, "project_divergence_free")?;
    let chart = &curv.chart;
    let apply = |w: &CoVectorField| -> CoVectorField {
        let s = lie_metric(curv, w).expect("same backend");
        divergence(curv, &s).expect("same backend")
    };
    let mut kernel: Vec<CoVectorField> = vec![];
    for a in 0..3 {
        let e = CoVectorField::from_fn(chart, |_| {
            let mut v = [0.0; 3];
            v[a] = 1.0;
            v
        });
        let s = lie_metric(curv, &e)?;
        if s.max_abs() < 1e-12 {
            kernel.push(e);
        }
    }
    // Orthonormalize the kernel basis.
    let mut basis: Vec<CoVectorField> = vec![];
    for e in kernel {
        let mut v = e;
        for b in &basis {
            let c = l2_vectors(curv, b, &v);
            v.axpy(-c, b);
        }
        let nv = l2_vectors(curv, &v, &v).sqrt();
        if nv > 1e-14 {
            basis.push(v.scaled(1.0 / nv));
        }
    }
    let deflate = |v: &mut CoVectorField| {
        for b in &basis {
            let c = l2_vectors(curv, b, v);
            v.axpy(-c, b);
        }
    };

    let mut rhs = divergence(curv, h)?.scaled(0.5);
    deflate(&mut rhs);
    let bnorm = l2_vectors(curv, &rhs, &rhs).sqrt();
    // A divergence at roundoff level of `h` counts as zero.
    let floor = 1e-13 * l2_forms(curv, h, h).sqrt() / curv.volume().cbrt();
    let mut w = CoVectorField::zeros(chart);
    let mut iterations = 0;
    let mut rel = 0.0;
    if bnorm > floor {
        let mut r = rhs.clone();
        let mut d = r.clone();
        let mut rr = l2_vectors(curv, &r, &r);
        loop {
            rel = rr.sqrt() / bnorm;
            if rel <= tol {
                break;
            }
            if iterations >= max_iter {
                return Err(LabError::NoConvergence { iterations, residual: rel });
            }
            let ad = apply(&d);
            let dad = l2_vectors(curv, &d, &ad);
            if dad <= 0.0 {
                return Err(LabError::NoConvergence { iterations, residual: rel });
            }
            let alpha = rr / dad;
            w.axpy(alpha, &d);
            r.axpy(-alpha, &ad);
            deflate(&mut r);
            let rr_new = l2_vectors(curv, &r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            let mut dn = r.clone();
            dn.axpy(beta, &d);
            d = dn;
            iterations += 1;
            // Recompute the true residual periodically to avoid drift.
            if iterations % 200 == 0 {
                let mut tr = rhs.clone();
                tr.axpy(-1.0, &apply(&w));
                deflate(&mut tr);
                r = tr;
                rr = l2_vectors(curv, &r, &r);
                d = r.clone();
            }
        }
    }
    deflate(&mut w);
    let mut transverse = h.clone();
    transverse.axpy(-2.0, &lie_metric(curv, &w)?);
    Ok(Projection { transverse, w, iterations, relative_residual: rel })
}

/// The 3D identity expressing Riemann through Ricci and scalar curvature:
/// `R_asbt = R_ab g_st + R_st g_ab − R_sb g_at − R_at g_sb + ½R(g_at g_sb − g_ab g_st)`.
pub fn riemann_from_ricci(g: &Mat3, ric: &Mat3, r: f64) -> [f64; 81] {
    let mut out = [0.0; 81];
    for a in 0..3 {
        for s in 0..3 {
            for b in 0..3 {
                for t in 0..3 {
                    out[27 * a + 9 * s + 3 * b + t] = ric[(a, b)] * g[(s, t)] + ric[(s, t)] * g[(a, b)]
                        - ric[(s, b)] * g[(a, t)]
                        - ric[(a, t)] * g[(s, b)]
                        + 0.5 * r * (g[(a, t)] * g[(s, b)] - g[(a, b)] * g[(s, t)]);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milnor::{milnor_curvature, MilnorMetric};
    use crate::random::FieldSampler;
    use crate::torus::{perturbed_metric, torus_chart, Scheme};
    use std::f64::consts::PI;

    fn perturbed(n: usize, scheme: Scheme) -> CurvaturePack {
        let chart = torus_chart(n, 2.0 * PI, scheme).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        compute_curvature(&chart, &g).unwrap()
    }

    fn order(e: &[f64], n: &[usize]) -> f64 {
        let k = e.len() - 1;
        (e[k - 1] / e[k]).ln() / (n[k] as f64 / n[k - 1] as f64).ln()
    }

    #[test]
    fn flat_torus_has_no_curvature() {
        let chart = torus_chart(8, 2.0 * PI, Scheme::Fd4).unwrap();
        let c = compute_curvature(&chart, &MetricField::flat(&chart)).unwrap();
        assert_eq!(c.ricci.max_abs(), 0.0);
        assert_eq!(c.scalar.max_abs(), 0.0);
        assert!(c.riemann.unwrap().iter().all(|r| r.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn lite_and_full_ricci_agree() {
        let chart = torus_chart(12, 2.0 * PI, Scheme::Fourier).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        let full = compute_curvature(&chart, &g).unwrap();
        let lite = compute_curvature_lite(&chart, &g).unwrap();
        assert!(full.ricci.sub(&lite.ricci).max_abs() < 1e-12);
    }

    #[test]
    fn riemann_symmetries_and_reconstruction() {
        let ns = [16, 24, 32];
        let mut pair = vec![];
        let mut recon = vec![];
        for &n in &ns {
            let c = perturbed(n, Scheme::Fd4);
            let r = c.riemann.as_ref().unwrap();
            let (mut e_pair, mut e_rec, mut e_skew) = (0.0f64, 0.0f64, 0.0f64);
            for p in 0..c.npts() {
                let rr = riemann_from_ricci(&c.metric.at(p), &c.ricci.at(p), c.scalar.c[0][p]);
                for a in 0..3 {
                    for s in 0..3 {
                        for b in 0..3 {
                            for t in 0..3 {
                                let v = r[27 * a + 9 * s + 3 * b + t][p];
                                e_skew = e_skew.max((v + r[27 * s + 9 * a + 3 * b + t][p]).abs());
                                e_pair = e_pair.max((v - r[27 * b + 9 * t + 3 * a + s][p]).abs());
                                e_rec = e_rec.max((v - rr[27 * a + 9 * s + 3 * b + t]).abs());
                            }
                        }
                    }
                }
            }
            assert!(e_skew < 1e-14);
            pair.push(e_pair);
            recon.push(e_rec);
        }
        assert!(order(&pair, &ns) > 3.5, "pair symmetry {pair:?}");
        assert!(order(&recon, &ns) > 3.5, "reconstruction {recon:?}");
    }

    #[test]
    fn contracted_bianchi_converges() {
        let ns = [16, 32];
        let e: Vec<f64> = ns
            .iter()
            .map(|&n| {
                let chart = torus_chart(n, 2.0 * PI, Scheme::Fd4).unwrap();
                let g = perturbed_metric(&chart, 0.05).unwrap();
                let c = compute_curvature_lite(&chart, &g).unwrap();
                divergence(&c, &c.einstein).unwrap().max_abs()
            })
            .collect();
        assert!(order(&e, &ns) >= 3.5, "{e:?}");
    }

    #[test]
    fn metric_is_lichnerowicz_harmonic() {
        let ns = [16, 24, 32];
        let mut cov = vec![];
        for &n in &ns {
            let c = perturbed(n, Scheme::Fd4);
            let g = c.metric.as_form();
            assert!(lichnerowicz_endo(&c, &g).unwrap().max_abs() < 1e-12);
            cov.push(lichnerowicz_cov(&c, &g).unwrap().max_abs());
        }
        assert!(order(&cov, &ns) >= 3.5, "{cov:?}");
        let m = milnor_curvature(&MilnorMetric::new(1.3, 0.7, 1.1).unwrap()).unwrap();
        let g = m.metric.as_form();
        assert!(lichnerowicz_cov(&m, &g).unwrap().max_abs() < 1e-12);
        assert!(lichnerowicz_endo(&m, &g).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn two_lichnerowicz_forms_agree() {
        let ns = [16, 24, 32];
        let mut e = vec![];
        for &n in &ns {
            let c = perturbed(n, Scheme::Fd4);
            let h = FieldSampler::new(3).form(&c.chart, 0.5);
            e.push(lichnerowicz_cov(&c, &h).unwrap().sub(&lichnerowicz_endo(&c, &h).unwrap()).max_abs());
        }
        assert!(order(&e, &ns) >= 3.5, "{e:?}");
        let m = milnor_curvature(&MilnorMetric::new(1.3, 0.7, 1.1).unwrap()).unwrap();
        let mut s = FieldSampler::new(4);
        let hm = s.matrix();
        let h = CovariantForm::from_fn(&m.chart, |_| hm);
        let d = lichnerowicz_cov(&m, &h).unwrap().sub(&lichnerowicz_endo(&m, &h).unwrap());
        assert!(d.max_abs() < 1e-12);
    }

    #[test]
    fn lichnerowicz_is_self_adjoint() {
        let c = perturbed(16, Scheme::Fd4);
        let mut s = FieldSampler::new(11);
        let h = s.form(&c.chart, 1.0);
        let k = s.form(&c.chart, 1.0);
        let lh = lichnerowicz_endo(&c, &h).unwrap();
        let lk = lichnerowicz_endo(&c, &k).unwrap();
        let a = l2_forms(&c, &lh, &k);
        let b = l2_forms(&c, &h, &lk);
        let scale = l2_forms(&c, &lh, &lh).sqrt() * l2_forms(&c, &k, &k).sqrt();
        assert!((a - b).abs() <= 1e-9 * scale, "{a} {b}");
    }

    #[test]
    fn delta_adjointness_is_exact() {
        let c = perturbed(12, Scheme::Fd4);
        let mut s = FieldSampler::new(5);
        let w = s.covector(&c.chart, 1.0);
        let h = s.form(&c.chart, 1.0);
        let a = l2_forms(&c, &lie_metric(&c, &w).unwrap(), &h);
        let b = l2_vectors(&c, &w, &divergence(&c, &h).unwrap());
        assert!((a - b).abs() < 1e-11 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn single_mode_operators_on_flat_torus() {
        let chart = torus_chart(16, 2.0 * PI, Scheme::Fourier).unwrap();
        let c = compute_curvature(&chart, &MetricField::flat(&chart)).unwrap();
        let grid = chart.grid().unwrap();
        let w = CoVectorField::from_fn(&chart, |p| [grid.coords(p)[0].sin(), 0.0, 0.0]);
        let s = lie_metric(&c, &w).unwrap();
        let expect = CovariantForm::from_fn(&chart, |p| {
            Mat3::from_diagonal(&nalgebra::Vector3::new(grid.coords(p)[0].cos(), 0.0, 0.0))
        });
        assert!(s.sub(&expect).max_abs() < 1e-12);
        assert!(divergence(&c, &s).unwrap().sub(&w).max_abs() < 1e-12);
        assert!(hodge_1form_laplacian(&c, &w).unwrap().sub(&w.scaled(-1.0)).max_abs() < 1e-12);
        let z = CoVectorField::zeros(&chart);
        assert_eq!(lie_metric(&c, &z).unwrap().max_abs(), 0.0);
        assert_eq!(hodge_1form_laplacian(&c, &z).unwrap().max_abs(), 0.0);
        let h = FieldSampler::new(2).form(&chart, 1.0);
        assert!(lichnerowicz_endo(&c, &h).unwrap().sub(&c.rough_laplacian_form(&h)).max_abs() < 1e-13);
        assert_eq!(endomorphism(&c, &h).max_abs(), 0.0);
    }

    #[test]
    fn einstein_conjugate_algebra() {
        let chart = torus_chart(8, 1.0, Scheme::Fd4).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        let h = FieldSampler::new(9).form(&chart, 1.0);
        let gg = einstein_conjugate(&g, &einstein_conjugate(&g, &h).unwrap()).unwrap();
        let direct = CovariantForm::from_fn(&chart, |p| {
            let gm = g.at(p);
            let tr = (gm.try_inverse().unwrap() * h.at(p)).trace();
            h.at(p) - 0.25 * tr * gm
        });
        assert!(gg.sub(&direct).max_abs() < 1e-13);
        let gi = einstein_conjugate(&g, &g.as_form()).unwrap();
        assert!(gi.sub(&g.as_form().scaled(-0.5)).max_abs() < 1e-14);
    }

    #[test]
    fn unit_sphere_pairings() {
        let c = milnor_curvature(&MilnorMetric::round(1.0).unwrap()).unwrap();
        let ginv = ContraForm::from_fn(&c.chart, |p| c.ginv[p]);
        let a = l2_pairing(&c, &ginv, &c.metric.as_form()).unwrap();
        let b = l2_pairing(&c, &ginv, &c.ricci).unwrap();
        assert!((a - 6.0 * PI * PI).abs() < 1e-12);
        assert!((b - 118.4353).abs() < 1e-4);
        assert!((b - 12.0 * PI * PI).abs() < 1e-12);
        let zero = CovariantForm::zeros(&c.chart);
        assert_eq!(l2_pairing(&c, &ginv, &zero).unwrap(), 0.0);
    }

    #[test]
    fn pairing_respects_index_gymnastics() {
        let c = perturbed(8, Scheme::Fd4);
        let mut s = FieldSampler::new(21);
        let a = s.contra(&c.chart, 1.0);
        let b = s.form(&c.chart, 1.0);
        let direct = l2_pairing(&c, &a, &b).unwrap();
        let other = l2_pairing(&c, &c.raise(&b), &c.lower(&a)).unwrap();
        assert!((direct - other).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn contra_lichnerowicz_roundtrip() {
        let m = milnor_curvature(&MilnorMetric::new(0.8, 1.1, 1.4).unwrap()).unwrap();
        let ginv = ContraForm::from_fn(&m.chart, |p| m.ginv[p]);
        assert!(lichnerowicz_contra(&m, &ginv).unwrap().max_abs() < 1e-12);
        let mut s = FieldSampler::new(13);
        let hm = s.matrix();
        let hc = ContraForm::from_fn(&m.chart, |_| hm);
        assert!(m.raise(&m.lower(&hc)).sub(&hc).max_abs() < 1e-12);
        let direct = m.raise(&lichnerowicz_cov(&m, &m.lower(&hc)).unwrap());
        assert!(lichnerowicz_contra(&m, &hc).unwrap().sub(&direct).max_abs() < 1e-12);
    }

    #[test]
    fn left_invariant_fields_are_killing_on_round_sphere() {
        let m = milnor_curvature(&MilnorMetric::round(1.0).unwrap()).unwrap();
        for a in 0..3 {
            let w = CoVectorField::from_fn(&m.chart, |_| {
                let mut v = [0.0; 3];
                v[a] = 1.0;
                v
            });
            assert!(lie_metric(&m, &w).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn hodge_laplacian_on_round_sphere() {
        // Independent algebra: for left-invariant v on the unit sphere
        // ∇_a v_b = −ε_abm v_m, so Δv = −2v and Δv + Ric v = 0.
        let m = milnor_curvature(&MilnorMetric::round(1.0).unwrap()).unwrap();
        let v = CoVectorField::from_fn(&m.chart, |_| [0.3, -1.2, 0.7]);
        let lap = m.rough_laplacian_vec(&v);
        assert!(lap.sub(&v.scaled(-2.0)).max_abs() < 1e-12);
        assert!(hodge_1form_laplacian(&m, &v).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn projection_examples() {
        let chart = torus_chart(12, 2.0 * PI, Scheme::Fd4).unwrap();
        let flat = compute_curvature_lite(&chart, &MetricField::flat(&chart)).unwrap();
        let grid = chart.grid().unwrap();
        // Transverse input: h_23 = sin x¹.
        let tt = CovariantForm::from_fn(&chart, |p| {
            let s = grid.coords(p)[0].sin();
            Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, s, 0.0, s, 0.0)
        });
        let pr = project_divergence_free(&flat, &tt).unwrap();
        assert!(pr.transverse.sub(&tt).max_abs() < 1e-12);
        assert!(pr.w.max_abs() < 1e-12);
        // Pure gauge input.
        let w0 = CoVectorField::from_fn(&chart, |p| {
            let x = grid.coords(p);
            [x[1].sin() + 0.3, (x[0] + x[2]).cos(), 0.5 * x[0].sin() * x[1].cos()]
        });
        let h = lie_metric(&flat, &w0).unwrap().scaled(2.0);
        let pr = project_divergence_free(&flat, &h).unwrap();
        assert!(pr.transverse.max_abs() < 1e-8, "{}", pr.transverse.max_abs());
        let mut shifted = w0.clone();
        for a in 0..3 {
            let mean = chart.cell_sum(&pr.w.sub(&w0).c[a]) / (2.0 * PI).powi(3);
            shifted.c[a].iter_mut().for_each(|v| *v += mean);
        }
        assert!(pr.w.sub(&shifted).max_abs() < 1e-8);
    }

    #[test]
    fn projection_on_perturbed_torus() {
        let c = perturbed(12, Scheme::Fd4);
        let h = FieldSampler::new(17).form(&c.chart, 0.5);
        let pr = project_divergence_free(&c, &h).unwrap();
        let dt = divergence(&c, &pr.transverse).unwrap();
        let dh = divergence(&c, &h).unwrap();
        assert!(l2_vectors(&c, &dt, &dt).sqrt() <= 1e-9 * l2_vectors(&c, &dh, &dh).sqrt());
        let gauge = lie_metric(&c, &pr.w).unwrap();
        let ortho = l2_forms(&c, &pr.transverse, &gauge);
        let norms = l2_forms(&c, &pr.transverse, &pr.transverse).sqrt() * l2_forms(&c, &gauge, &gauge).sqrt();
        assert!(ortho.abs() <= 1e-9 * norms, "{ortho} vs {norms}");
        let mut back = pr.transverse.clone();
        back.axpy(2.0, &gauge);
        assert!(back.sub(&h).max_abs() < 1e-13);
    }

    #[test]
    fn backend_mismatch_is_reported() {
        let c = perturbed(8, Scheme::Fd4);
        let h = CovariantForm::zeros(&Chart::Milnor);
        assert!(matches!(lichnerowicz_endo(&c, &h), Err(LabError::BackendMismatch(_))));
        let bad = MetricField::from_fn(&c.chart, |_| Mat3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, -1.0)));
        assert!(matches!(compute_curvature(&c.chart, &bad), Err(LabError::Domain(_))));
    }
}
