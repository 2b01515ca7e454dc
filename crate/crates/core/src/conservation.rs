//! Conserved pairings, the monotonicity identity and the operator identities,
//! evaluated along stored trajectories.
//!
//! Every pairing is formed at a common time with the metric of that time:
//! backward step `m` pairs the conjugate field at `η_m` with the forward field
//! at `β = β* − η_m`. Drifts are measured against the `η = 0` value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::field::{CoVectorField, ContraForm, CovariantForm, Mat3, ScalarField, SYM};
use crate::flows::{BackwardView, Direction, FlowTrajectory, Track};
use crate::geom::{
    divergence, divergence_contra, l2_pairing, lichnerowicz_contra, lichnerowicz_endo, project_divergence_free,
    CurvaturePack,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub quantity: String,
    /// `(η, value)` samples.
    pub series: Vec<(f64, f64)>,
    pub reference: f64,
    pub abs_drift: f64,
    pub rel_drift: f64,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
    pub order: Option<f64>,
}

impl DriftReport {
    pub fn from_series(quantity: &str, series: Vec<(f64, f64)>) -> Self {
        let reference = series.first().map_or(0.0, |s| s.1);
        let abs_drift = series.iter().fold(0.0f64, |m, s| m.max((s.1 - reference).abs()));
        let rel_drift = if reference.abs() > 1e-300 { abs_drift / reference.abs() } else { abs_drift };
        Self {
            quantity: quantity.to_string(),
            series,
            reference,
            abs_drift,
            rel_drift,
            tolerance: None,
            pass: None,
            order: None,
        }
    }

    /// Sets the verdict `rel_drift ≤ tol`.
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self.pass = Some(self.rel_drift <= tol);
        self
    }

    pub fn values(&self) -> Vec<f64> {
        self.series.iter().map(|s| s.1).collect()
    }
}

/// `log(e_coarse/e_fine) / log(ratio)`.
pub fn observed_order(e_coarse: f64, e_fine: f64, ratio: f64) -> f64 {
    (e_coarse / e_fine).ln() / ratio.ln()
}

/// Least-squares slope of `log e` against `log x`.
pub fn loglog_slope(x: &[f64], e: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let le: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let me = le.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&le).map(|(a, b)| (a - mx) * (b - me)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

fn check_backward(track: &Track<ContraForm>, back: &BackwardView<'_>) -> Result<()> {
    if track.direction != Direction::Backward || track.states.len() != back.steps() + 1 {
        return Err(LabError::MissingTrack("conjugate track does not cover the backward window".into()));
    }
    Ok(())
}

/// What the conjugate field is paired against.
#[derive(Clone, Copy, Debug)]
pub enum PairingTarget<'a> {
    /// Forward reduced linearized track `h̃(β)`.
    Reduced(&'a Track<CovariantForm>),
    Ricci,
    /// `g − 2η Ric`.
    MetricMinusRicci,
    /// Arbitrary covariant forms indexed by backward step.
    Custom(&'a [CovariantForm]),
}

fn target_at(target: &PairingTarget<'_>, pack: &CurvaturePack, m: usize, k: usize, eta: f64) -> Result<CovariantForm> {
    Ok(match target {
        PairingTarget::Reduced(t) => {
            if t.direction != Direction::Forward || t.states.len() != k + 1 {
                return Err(LabError::MissingTrack("h̃ track does not cover the forward window".into()));
            }
            t.states[k - m].clone()
        }
        PairingTarget::Ricci => pack.ricci.clone(),
        PairingTarget::MetricMinusRicci => {
            let mut b = pack.metric.as_form();
            b.axpy(-2.0 * eta, &pack.ricci);
            b
        }
        PairingTarget::Custom(v) => {
            if v.len() != k + 1 {
                return Err(LabError::MissingTrack("custom pairing track has the wrong length".into()));
            }
            v[m].clone()
        }
    })
}

/// `η ↦ ∫ H^{ab}(η) b_ab(η) dμ_{g(η)}`.
pub fn pairing_series(
    name: &str,
    back: &BackwardView<'_>,
    h_track: &Track<ContraForm>,
    target: PairingTarget<'_>,
) -> Result<DriftReport> {
    check_backward(h_track, back)?;
    let k = back.steps();
    let series = (0..=k)
        .map(|m| {
            let pack = back.pack(m)?;
            let eta = back.eta(m);
            let b = target_at(&target, &pack, m, k, eta)?;
            Ok((eta, l2_pairing(&pack, &h_track.states[m], &b)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport::from_series(name, series))
}

/// Raises the divergence-free part of the lowered field.
pub fn project_contra(pack: &CurvaturePack, h: &ContraForm) -> Result<ContraForm> {
    let pr = project_divergence_free(pack, &pack.lower(h))?;
    Ok(pack.raise(&pr.transverse))
}

/// `η ↦ ∫ H_T^{ab}(η) h̃^{(T)}_ab(η) dμ`, with `h̃^{(T)}` the divergence-free part
/// of the forward reduced linearized field at the same time.
pub fn transverse_pairing_series(
    back: &BackwardView<'_>,
    ht_track: &Track<ContraForm>,
    reduced: &Track<CovariantForm>,
) -> Result<DriftReport> {
    check_backward(ht_track, back)?;
    let k = back.steps();
    if reduced.states.len() != k + 1 {
        return Err(LabError::MissingTrack("h̃ track does not cover the forward window".into()));
    }
    let series = (0..=k)
        .map(|m| {
            let pack = back.pack(m)?;
            let pr = project_divergence_free(&pack, &reduced.states[k - m])?;
            Ok((back.eta(m), l2_pairing(&pack, &ht_track.states[m], &pr.transverse)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport::from_series("transverse_pairing", series))
}

/// `η ↦ ‖δH(η)‖_{L²}`.
pub fn divergence_norm_series(back: &BackwardView<'_>, h_track: &Track<ContraForm>) -> Result<Vec<(f64, f64)>> {
    check_backward(h_track, back)?;
    (0..=back.steps())
        .map(|m| {
            let pack = back.pack(m)?;
            let d = divergence_contra(&pack, &h_track.states[m])?;
            Ok((back.eta(m), pack.integrate(&pack.norm2_vec(&d)).sqrt()))
        })
        .collect()
}

/// `β ↦ ‖δh̃(β)‖_{L²}` for a forward covariant track.
pub fn forward_divergence_norms(traj: &FlowTrajectory, track: &Track<CovariantForm>) -> Result<Vec<(f64, f64)>> {
    track
        .states
        .iter()
        .enumerate()
        .map(|(k, h)| {
            let pack = traj.pack(2 * k)?;
            let d = divergence(&pack, h)?;
            Ok((track.times[k], pack.integrate(&pack.norm2_vec(&d)).sqrt()))
        })
        .collect()
}

/// Fourth-order derivative of equispaced samples at index `m`: centred
/// five-point rule inside, one-sided rules within two samples of either end.
fn derivative4(e: &[f64], m: usize, dt: f64) -> f64 {
    const W: [[f64; 5]; 3] =
        [[-25.0, 48.0, -36.0, 16.0, -3.0], [-3.0, -10.0, 18.0, -6.0, 1.0], [1.0, -8.0, 0.0, 8.0, -1.0]];
    let k = e.len() - 1;
    let (w, start, sign) = match m {
        0 => (W[0], 0, 1.0),
        1 => (W[1], 0, 1.0),
        _ if m == k => (W[0], k, -1.0),
        _ if m == k - 1 => (W[1], k, -1.0),
        _ => (W[2], m - 2, 1.0),
    };
    let sum: f64 = if sign > 0.0 {
        w.iter().enumerate().map(|(i, c)| c * e[start + i]).sum()
    } else {
        // mirrored stencil reads backwards from the end
        -w.iter().enumerate().map(|(i, c)| c * e[start - i]).sum::<f64>()
    };
    sum / (12.0 * dt)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// `(η, ∫|δH|² dμ)`.
    pub energy: Vec<(f64, f64)>,
    /// `(η, d/dη ∫|δH|²)` by fourth-order differences of the energy samples.
    pub lhs: Vec<(f64, f64)>,
    /// `(η, −∫R|δH|² − 2∫|∇δH|²)`.
    pub rhs: Vec<(f64, f64)>,
    pub max_residual: f64,
    /// Scale of the two sides, for relative statements.
    pub scale: f64,
    pub nonincreasing: bool,
    pub scalar_nonnegative: bool,
}

/// Checks `d/dη ∫|δH|² dμ = −∫R|δH|² dμ − 2∫|∇δH|² dμ` along the conjugate flow.
pub fn monotonicity_identity(back: &BackwardView<'_>, h_track: &Track<ContraForm>) -> Result<MonotonicityReport> {
    check_backward(h_track, back)?;
    let k = back.steps();
    if k < 4 {
        return Err(LabError::Domain("the monotonicity identity needs at least four steps".into()));
    }
    let dt = back.trajectory().dt;
    let mut energy = vec![];
    let mut rhs_all = vec![];
    let mut scalar_nonnegative = true;
    for m in 0..=k {
        let pack = back.pack(m)?;
        let v = divergence_contra(&pack, &h_track.states[m])?;
        let v2 = pack.norm2_vec(&v);
        let nab = pack.nabla_vec(&v);
        let grad2: Vec<f64> = (0..pack.npts())
            .into_par_iter()
            .map(|p| {
                let t = Mat3::from_fn(|j, a| nab[3 * j + a][p]);
                let gi = pack.ginv[p];
                (gi * t * gi * t.transpose()).trace()
            })
            .collect();
        let rv2: Vec<f64> = v2.iter().zip(&pack.scalar.c[0]).map(|(a, r)| a * r).collect();
        scalar_nonnegative &= pack.scalar.c[0].iter().all(|r| *r >= -1e-12);
        energy.push((back.eta(m), pack.integrate(&v2)));
        rhs_all.push((back.eta(m), -pack.integrate(&rv2) - 2.0 * pack.integrate(&grad2)));
    }
    let e: Vec<f64> = energy.iter().map(|s| s.1).collect();
    let mut lhs = vec![];
    let mut max_residual = 0.0f64;
    let mut scale = 0.0f64;
    for m in 0..=k {
        let d = derivative4(&e, m, dt);
        lhs.push((energy[m].0, d));
        max_residual = max_residual.max((d - rhs_all[m].1).abs());
        scale = scale.max(d.abs()).max(rhs_all[m].1.abs());
    }
    let rhs = rhs_all;
    let nonincreasing = energy.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12) + 1e-300);
    Ok(MonotonicityReport { energy, lhs, rhs, max_residual, scale, nonincreasing, scalar_nonnegative })
}

/// `η ↦ ∫ϱ(β) ϖ(β) dμ_{g(β)}` with `β = β* − η`.
pub fn scalar_conjugacy_series(
    back: &BackwardView<'_>,
    rho: &Track<ScalarField>,
    varpi: &Track<ScalarField>,
) -> Result<DriftReport> {
    let k = back.steps();
    if rho.states.len() != k + 1 || varpi.states.len() != k + 1 {
        return Err(LabError::MissingTrack("scalar tracks do not cover the window".into()));
    }
    let series = (0..=k)
        .map(|m| {
            let pack = back.pack(m)?;
            let f: Vec<f64> = rho.states[k - m].c[0].iter().zip(&varpi.states[m].c[0]).map(|(a, b)| a * b).collect();
            Ok((back.eta(m), pack.integrate(&f)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport::from_series("scalar_conjugacy", series))
}

/// `η ↦ ∫ϖ dμ`.
pub fn mass_series(back: &BackwardView<'_>, varpi: &Track<ScalarField>) -> Result<DriftReport> {
    let series = (0..=back.steps())
        .map(|m| Ok((back.eta(m), back.pack(m)?.integrate(&varpi.states[m].c[0]))))
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftReport::from_series("conjugate_mass", series))
}

/// Residual series of `d/dη ∫ g_ab H^{ab} dμ − 2 ∫ R_ab H^{ab} dμ` (central
/// differences at interior samples). The series itself is the report; its
/// "drift" is the largest residual.
pub fn converse_characterization(back: &BackwardView<'_>, h_track: &Track<ContraForm>) -> Result<DriftReport> {
    check_backward(h_track, back)?;
    let k = back.steps();
    let dt = back.trajectory().dt;
    let mut gh = vec![];
    let mut rh = vec![];
    for m in 0..=k {
        let pack = back.pack(m)?;
        gh.push(l2_pairing(&pack, &h_track.states[m], &pack.metric.as_form())?);
        rh.push(l2_pairing(&pack, &h_track.states[m], &pack.ricci)?);
    }
    let series: Vec<(f64, f64)> =
        (1..k).map(|m| (back.eta(m), (gh[m + 1] - gh[m - 1]) / (2.0 * dt) - 2.0 * rh[m])).collect();
    let worst = series.iter().fold(0.0f64, |a, s| a.max(s.1.abs()));
    let mut r = DriftReport::from_series("converse_residual", series);
    r.reference = 0.0;
    r.abs_drift = worst;
    r.rel_drift = worst;
    Ok(r)
}

/// Residual of a named identity at a sampled time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub identity: String,
    pub time: f64,
    pub residual: f64,
    pub scale: f64,
}

fn raise_vec_field(pack: &CurvaturePack, w: &CoVectorField) -> [Vec<f64>; 3] {
    pack.raise_vec(w)
}

/// `∇_k R_ab` lowered, as `[k][sym]`.
fn nabla_ricci(pack: &CurvaturePack) -> Vec<Vec<Vec<f64>>> {
    pack.nabla_form(&pack.ricci)
}

/// Both sides of the commutation formula
/// `∇^k Δ_L S_kl = Δ∇^k S_kl + S^{ka}∇_l R_ka − R_la ∇^k S_k^a − 2 S_k^a ∇^k R_la`
/// as covectors.
pub fn commutation_sides(pack: &CurvaturePack, s: &CovariantForm) -> Result<(CoVectorField, CoVectorField)> {
    let lhs = divergence(pack, &lichnerowicz_endo(pack, s)?)?.scaled(-1.0);
    let div_s = divergence(pack, s)?.scaled(-1.0); // ∇^k S_kl
    let mut rhs = pack.rough_laplacian_vec(&div_s);
    let nr = nabla_ricci(pack);
    let extra = CoVectorField::from_fn(&pack.chart, |p| {
        let gi = pack.ginv[p];
        let sup = gi * s.at(p) * gi; // S^{ab}
        let rmix = pack.ricci.at(p) * gi; // R_l^a
        let dr = |k: usize, a: usize, b: usize| nr[k][crate::field::sym(a, b)][p];
        let dv = div_s.at(p);
        std::array::from_fn(|l| {
            let mut v = 0.0;
            for a in 0..3 {
                v -= rmix[(l, a)] * dv[a];
                for k in 0..3 {
                    v += sup[(k, a)] * dr(l, k, a);
                    v -= 2.0 * sup[(k, a)] * dr(k, l, a);
                }
            }
            v
        })
    });
    rhs.axpy(1.0, &extra);
    Ok((lhs, rhs))
}

/// Which version of an identity to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IdentityForm {
    /// As printed in the source derivation.
    Printed,
    /// Re-derived with the conventions of this crate.
    Derived,
}

/// Right side of the divergence evolution for `S` evolving by `Δ_L`:
/// `Δ∇^kS_kl − R_l^a ∇^kS_ka + c S^{ab}∇_l R_ab + 2R^{ik}∇_i S_kl − 2S^{ik}∇_i R_kl`
/// with `c = 1` printed and `c = 2` derived. The extra `S^{ab}∇_l R_ab` comes
/// from the variation of the Christoffel symbols contracted into the divergence.
pub fn divergence_evolution_rhs(pack: &CurvaturePack, s: &CovariantForm, form: IdentityForm) -> Result<CoVectorField> {
    let c = match form {
        IdentityForm::Printed => 1.0,
        IdentityForm::Derived => 2.0,
    };
    let div_s = divergence(pack, s)?.scaled(-1.0);
    let mut out = pack.rough_laplacian_vec(&div_s);
    let nr = nabla_ricci(pack);
    let ns = pack.nabla_form(s);
    let extra = CoVectorField::from_fn(&pack.chart, |p| {
        let gi = pack.ginv[p];
        let sup = gi * s.at(p) * gi;
        let ric = pack.ricci.at(p);
        let rup = gi * ric * gi;
        let dr = |k: usize, a: usize, b: usize| nr[k][crate::field::sym(a, b)][p];
        let ds = |k: usize, a: usize, b: usize| ns[k][crate::field::sym(a, b)][p];
        let rmix = ric * gi; // R_l^a: row l, column a
        let dv = div_s.at(p);
        std::array::from_fn(|l| {
            let mut v = 0.0;
            for a in 0..3 {
                v -= rmix[(l, a)] * dv[a];
                for b in 0..3 {
                    v += c * sup[(a, b)] * dr(l, a, b);
                    v += 2.0 * rup[(a, b)] * ds(a, b, l);
                    v -= 2.0 * sup[(a, b)] * dr(a, b, l);
                }
            }
            v
        })
    });
    out.axpy(1.0, &extra);
    Ok(out)
}

/// Terms of the contravariant Hessian identity for `f(β)` along the Ricci flow.
#[derive(Clone, Debug)]
pub struct HessianTerms {
    /// `○*_L Hess f = −(∂_β + Δ_L − R) Hess f`, with `∂_β` supplied by the caller.
    pub lhs: ContraForm,
    /// `∇^a∇^b (∂_β + Δ − R) f`.
    pub gradient_part: ContraForm,
    /// `∇_i(R^{ia}∇^b f) + ∇_i(R^{ib}∇^a f)`.
    pub transport: ContraForm,
    /// `(∇^aR^b_l + ∇^bR^a_l − ∇_lR^{ab})∇^l f`.
    pub curvature_gradient: ContraForm,
    /// `f ∇^a∇^b R`.
    pub scalar_hessian: ContraForm,
}

impl HessianTerms {
    /// The identity as printed: `gradient_part + 2 transport + 2 curvature_gradient`.
    pub fn printed_rhs(&self) -> ContraForm {
        let mut out = self.gradient_part.clone();
        out.axpy(2.0, &self.transport);
        out.axpy(2.0, &self.curvature_gradient);
        out
    }

    /// The identity re-derived with the conventions of this crate:
    /// `−gradient_part − 2 transport − 2 curvature_gradient − scalar_hessian`.
    pub fn derived_rhs(&self) -> ContraForm {
        let mut out = self.printed_rhs().scaled(-1.0);
        out.axpy(-1.0, &self.scalar_hessian);
        out
    }
}

fn contra_hessian(pack: &CurvaturePack, f: &ScalarField) -> ContraForm {
    pack.raise(&pack.hessian(f))
}

/// Evaluates every term at one time. `df_dbeta` is `∂f/∂β` and `dhess_dbeta`
/// is `∂_β (Hess f)^{ab}` (both supplied, typically by finite differences).
pub fn hessian_terms(
    pack: &CurvaturePack,
    f: &ScalarField,
    df_dbeta: &ScalarField,
    dhess_dbeta: &ContraForm,
) -> Result<HessianTerms> {
    let hess = contra_hessian(pack, f);
    let mut lhs = dhess_dbeta.clone();
    lhs.axpy(1.0, &lichnerowicz_contra(pack, &hess)?);
    let rh = ContraForm::from_fn(&pack.chart, |p| pack.scalar.c[0][p] * hess.at(p));
    lhs.axpy(-1.0, &rh);
    let lhs = lhs.scaled(-1.0);

    let mut u = df_dbeta.clone();
    u.axpy(1.0, &pack.laplacian_scalar(f));
    for (x, (r, v)) in u.c[0].iter_mut().zip(pack.scalar.c[0].iter().zip(&f.c[0])) {
        *x -= r * v;
    }
    let gradient_part = contra_hessian(pack, &u);

    let grad_up = raise_vec_field(pack, &pack.gradient(f));
    let div_ric_up = raise_vec_field(pack, &divergence(pack, &pack.ricci)?.scaled(-1.0)); // ∇_i R^{ia}
    let hess_mixed = pack.hessian(f); // ∇_i∇_b f
    let transport = ContraForm::from_fn(&pack.chart, |p| {
        let gi = pack.ginv[p];
        let rup = gi * pack.ricci.at(p) * gi;
        let hup = gi * hess_mixed.at(p) * gi; // ∇^i∇^b f
        let dr = nalgebra::Vector3::new(div_ric_up[0][p], div_ric_up[1][p], div_ric_up[2][p]);
        let gf = nalgebra::Vector3::new(grad_up[0][p], grad_up[1][p], grad_up[2][p]);
        // (∇_i R^{ia}) ∇^b f + R^{ia} ∇_i∇^b f, i.e. R^{ia} g_ij ∇^j∇^b f
        let t = dr * gf.transpose() + rup * pack.metric.at(p) * hup;
        t + t.transpose()
    });

    let nr = nabla_ricci(pack);
    let curvature_gradient = ContraForm::from_fn(&pack.chart, |p| {
        let gi = pack.ginv[p];
        let gf = nalgebra::Vector3::new(grad_up[0][p], grad_up[1][p], grad_up[2][p]);
        // D[k] = ∇_k R_ab
        let d: [Mat3; 3] = std::array::from_fn(|k| Mat3::from_fn(|a, b| nr[k][crate::field::sym(a, b)][p]));
        // X_ab = ∇_a R_bl V^l + ∇_b R_al V^l − ∇_l R_ab V^l, then raise a, b.
        let mut x = Mat3::zeros();
        for a in 0..3 {
            for b in 0..3 {
                let mut v = 0.0;
                for l in 0..3 {
                    v += (d[a][(b, l)] + d[b][(a, l)] - d[l][(a, b)]) * gf[l];
                }
                x[(a, b)] = v;
            }
        }
        gi * x * gi
    });

    let hr = contra_hessian(pack, &pack.scalar);
    let scalar_hessian = ContraForm::from_fn(&pack.chart, |p| f.c[0][p] * hr.at(p));
    Ok(HessianTerms { lhs, gradient_part, transport, curvature_gradient, scalar_hessian })
}

/// Residuals of the Hessian identity (printed and re-derived forms) along a
/// trajectory for `f(x, β) = f0(x) + β f1(x)`, at interior steps.
pub fn hessian_identity_residuals(
    traj: &FlowTrajectory,
    f0: &ScalarField,
    f1: &ScalarField,
) -> Result<(f64, f64, f64)> {
    let k = traj.steps();
    let f_at = |j: usize| {
        let mut f = f0.clone();
        f.axpy(traj.times[j], f1);
        f
    };
    let hess: Vec<ContraForm> =
        (0..=k).map(|j| Ok(contra_hessian(&*traj.pack(2 * j)?, &f_at(j)))).collect::<Result<_>>()?;
    let (mut printed, mut derived, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    for j in 1..k {
        let pack = traj.pack(2 * j)?;
        let dh = hess[j + 1].sub(&hess[j - 1]).scaled(0.5 / traj.dt);
        let terms = hessian_terms(&pack, &f_at(j), f1, &dh)?;
        printed = printed.max(terms.lhs.sub(&terms.printed_rhs()).max_abs());
        derived = derived.max(terms.lhs.sub(&terms.derived_rhs()).max_abs());
        scale = scale.max(terms.lhs.max_abs());
    }
    Ok((printed, derived, scale))
}

/// Residual of `∂_β Ric = Δ_L Ric` at every stored step, with `∂_β` taken by a
/// central difference across the neighbouring half-step (Hermite) nodes.
pub fn ricci_lichnerowicz_residual(traj: &FlowTrajectory) -> Result<f64> {
    let k = traj.steps();
    let mut worst = 0.0f64;
    for j in 1..k {
        let (a, b, c) = (traj.pack(2 * j - 1)?, traj.pack(2 * j)?, traj.pack(2 * j + 1)?);
        let mut fd = c.ricci.sub(&a.ricci).scaled(1.0 / traj.dt);
        fd.axpy(-1.0, &lichnerowicz_endo(&b, &b.ricci)?);
        worst = worst.max(fd.max_abs());
    }
    Ok(worst)
}

/// Residual of the divergence evolution for a `Δ_L`-evolved track.
pub fn divergence_evolution_residual(
    traj: &FlowTrajectory,
    track: &Track<CovariantForm>,
    form: IdentityForm,
) -> Result<f64> {
    let k = traj.steps();
    let divs: Vec<CoVectorField> =
        (0..=k).map(|j| Ok(divergence(&*traj.pack(2 * j)?, &track.states[j])?.scaled(-1.0))).collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for j in 1..k {
        let mut fd = divs[j + 1].sub(&divs[j - 1]).scaled(0.5 / traj.dt);
        fd.axpy(-1.0, &divergence_evolution_rhs(&*traj.pack(2 * j)?, &track.states[j], form)?);
        worst = worst.max(fd.max_abs());
    }
    Ok(worst)
}

/// Sampled residuals of the operator identities along a trajectory.
pub fn identity_suite(traj: &FlowTrajectory, seed: u64) -> Result<Vec<IdentityResidual>> {
    let mut sampler = crate::random::FieldSampler::new(seed);
    let chart = &traj.chart;
    let s = sampler.form(chart, 0.5);
    let f0 = sampler.scalar(chart, 0.5);
    let f1 = sampler.scalar(chart, 0.5);
    let k = traj.steps();
    let mut out = vec![];
    for &j in &[0, k / 2, k] {
        let pack = traj.pack(2 * j)?;
        let (l, r) = commutation_sides(&pack, &s)?;
        out.push(IdentityResidual {
            identity: "commutation".into(),
            time: traj.times[j],
            residual: l.sub(&r).max_abs(),
            scale: l.max_abs(),
        });
    }
    if k >= 2 {
        let t = crate::flows::integrate_reduced_linearized(traj, &s)?;
        for (name, form) in [
            ("divergence_evolution_printed", IdentityForm::Printed),
            ("divergence_evolution_derived", IdentityForm::Derived),
        ] {
            out.push(IdentityResidual {
                identity: name.into(),
                time: traj.beta_star(),
                residual: divergence_evolution_residual(traj, &t, form)?,
                scale: 1.0,
            });
        }
        out.push(IdentityResidual {
            identity: "ricci_lichnerowicz".into(),
            time: traj.beta_star(),
            residual: ricci_lichnerowicz_residual(traj)?,
            scale: traj.pack(0)?.ricci.max_abs(),
        });
        let (printed, derived, scale) = hessian_identity_residuals(traj, &f0, &f1)?;
        out.push(IdentityResidual {
            identity: "hessian_printed".into(),
            time: traj.beta_star(),
            residual: printed,
            scale,
        });
        out.push(IdentityResidual {
            identity: "hessian_derived".into(),
            time: traj.beta_star(),
            residual: derived,
            scale,
        });
    }
    Ok(out)
}

/// Symmetric components of a form in the order of [`SYM`], for reporting.
pub fn components(h: &CovariantForm, p: usize) -> [(String, f64); 6] {
    std::array::from_fn(|s| {
        let (a, b) = SYM[s];
        (format!("{}{}", a + 1, b + 1), h.c[s][p])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::Chart;
    use crate::field::MetricField;
    use crate::flows::{cfl_bound, integrate_conjugate_h, integrate_ricci, FlowOptions};
    use crate::geom::compute_curvature_lite;
    use crate::milnor::MilnorMetric;
    use crate::random::FieldSampler;
    use crate::torus::{perturbed_metric, torus_chart, Scheme};

    fn torus_pack(n: usize, scheme: Scheme) -> CurvaturePack {
        let chart = torus_chart(n, 1.0, scheme).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        compute_curvature_lite(&chart, &g).unwrap()
    }

    fn short_torus_flow(n: usize, steps: f64) -> FlowTrajectory {
        let chart = torus_chart(n, 1.0, Scheme::Fd4).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        let dt = cfl_bound(&chart, &g);
        integrate_ricci(&chart, &g, FlowOptions::new(steps * dt, dt)).unwrap()
    }

    #[test]
    fn derivative_stencils_are_exact_on_quartics() {
        let q = |t: f64| 0.3 - 1.5 * t + 2.0 * t * t + 0.7 * t.powi(3) - 4.0 * t.powi(4);
        let dq = |t: f64| -1.5 + 4.0 * t + 2.1 * t * t - 16.0 * t.powi(3);
        let dt = 0.1;
        let e: Vec<f64> = (0..=7).map(|i| q(i as f64 * dt)).collect();
        for m in 0..=7 {
            assert!((derivative4(&e, m, dt) - dq(m as f64 * dt)).abs() < 1e-12, "{m}");
        }
    }

    #[test]
    fn drift_report_statistics() {
        let r = DriftReport::from_series("x", vec![(0.0, 2.0), (0.1, 2.1), (0.2, 1.95)]).with_tolerance(0.06);
        assert!((r.abs_drift - 0.1).abs() < 1e-12);
        assert!((r.rel_drift - 0.05).abs() < 1e-12);
        assert_eq!(r.pass, Some(true));
        assert!((observed_order(16.0, 1.0, 2.0) - 4.0).abs() < 1e-12);
        assert!((loglog_slope(&[1.0, 2.0, 4.0], &[1.0, 4.0, 16.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn commutation_formula_converges_on_torus() {
        let err = |n: usize| {
            let pack = torus_pack(n, Scheme::Fd4);
            let s = FieldSampler::new(3).form(&pack.chart, 0.3);
            let (l, r) = commutation_sides(&pack, &s).unwrap();
            l.sub(&r).max_abs()
        };
        let (a, b) = (err(16), err(32));
        assert!(observed_order(a, b, 2.0) > 3.5, "{a:e} {b:e}");
    }

    #[test]
    fn commutation_formula_exact_on_milnor() {
        let m = MilnorMetric::new(1.3, 0.9, 0.7).unwrap();
        let pack = crate::milnor::milnor_curvature(&m).unwrap();
        let s = FieldSampler::new(4).form(&Chart::Milnor, 1.0);
        let (l, r) = commutation_sides(&pack, &s).unwrap();
        assert!(l.sub(&r).max_abs() < 1e-11, "{:e}", l.sub(&r).max_abs());
        assert!(l.max_abs() > 1e-3);
    }

    #[test]
    fn derived_hessian_identity_converges_and_printed_one_does_not() {
        let run = |n: usize| {
            let t = short_torus_flow(n, 4.0);
            let mut smp = FieldSampler::new(5);
            let f0 = smp.scalar(&t.chart, 0.5);
            let f1 = smp.scalar(&t.chart, 0.5);
            hessian_identity_residuals(&t, &f0, &f1).unwrap()
        };
        let (p16, d16, s16) = run(16);
        let (p24, d24, _) = run(24);
        assert!(observed_order(d16, d24, 1.5) > 3.0, "{d16:e} {d24:e}");
        assert!(p24 > 0.1 * s16, "printed residual {p24:e} vs scale {s16:e}");
        let _ = p16;
    }

    #[test]
    fn flat_conjugate_pairing_is_constant() {
        let chart = torus_chart(8, 1.0, Scheme::Fourier).unwrap();
        let g = MetricField::flat(&chart);
        let dt = cfl_bound(&chart, &g);
        let t = integrate_ricci(&chart, &g, FlowOptions::new(10.0 * dt, dt)).unwrap();
        let mut smp = FieldSampler::new(9);
        let hs = smp.contra(&chart, 0.5);
        let h0 = smp.form(&chart, 0.5);
        let back = t.backward();
        let ht = integrate_conjugate_h(&back, &hs).unwrap();
        let red = crate::flows::integrate_reduced_linearized(&t, &h0).unwrap();
        let r = pairing_series("h", &back, &ht, PairingTarget::Reduced(&red)).unwrap();
        assert!(r.abs_drift < 1e-13, "{:e}", r.abs_drift);
        let c = converse_characterization(&back, &ht).unwrap();
        assert!(c.abs_drift < 1e-12);
        let mono = monotonicity_identity(&back, &ht).unwrap();
        assert!(mono.nonincreasing);
    }
}
