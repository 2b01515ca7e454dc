//! Explicit RK4 integration of the Ricci flow and of every field co-evolved
//! along a stored trajectory.
//!
//! A [`FlowTrajectory`] keeps the metric and its rate `∂g/∂β` at each step.
//! Co-evolved fields advance with the same step size; their RK4 substages sit
//! at step midpoints, where the metric is the cubic Hermite interpolant of the
//! two neighbouring snapshots and rates. Curvature at grid points and midpoints
//! is computed once and cached, so the forward and backward passes share it.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::error::{LabError, Result};
use crate::field::{
    ensure_same, CoVectorField, ContraForm, CovariantForm, FramePack, Linear, Mat3, MetricField, ScalarField,
};
use crate::geom::{
    compute_curvature, compute_curvature_lite, deturck_covector, divergence, einstein_conjugate, hodge_1form_laplacian,
    lichnerowicz_contra, lichnerowicz_endo, lie_metric, CurvaturePack,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Gauge {
    #[default]
    None,
    DeTurck,
}

/// Curvature blow-up threshold relative to the initial `max |Ric|` (floored at 1).
pub const GUARD_FACTOR: f64 = 1e3;

/// Largest Milnor step relative to `min(A, B, C)`.
pub const MILNOR_DT_FACTOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowOptions {
    pub beta_star: f64,
    pub dt: f64,
    pub gauge: Gauge,
    pub guard_factor: f64,
}

impl FlowOptions {
    pub fn new(beta_star: f64, dt: f64) -> Self {
        Self { beta_star, dt, gauge: Gauge::None, guard_factor: GUARD_FACTOR }
    }

    pub fn with_gauge(mut self, gauge: Gauge) -> Self {
        self.gauge = gauge;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardEvent {
    pub step: usize,
    pub time: f64,
    pub reason: String,
}

/// Number of steps and the effective step: `K = ⌈β*/dt⌉`, `dt_eff = β*/K ≤ dt`.
pub fn step_count(beta_star: f64, dt: f64) -> Result<(usize, f64)> {
    if !(beta_star >= 0.0 && beta_star.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(LabError::Config(format!("need beta_star >= 0 and dt > 0, got {beta_star}, {dt}")));
    }
    let k = (beta_star / dt - 1e-9).ceil().max(0.0) as usize;
    Ok(if k == 0 { (0, dt) } else { (k, beta_star / k as f64) })
}

/// Explicit-step admissibility: `dt ≤ c h² min(1, λ_min(g))` on the torus,
/// `dt ≤ 1e-3 min(A, B, C)` on the Milnor backend.
pub fn cfl_bound(chart: &Chart, g: &MetricField) -> f64 {
    let lmin = g.min_eigenvalue();
    match chart.grid() {
        Some(grid) => grid.cfl_bound() * lmin.min(1.0),
        None => MILNOR_DT_FACTOR * lmin,
    }
}

pub fn check_cfl(chart: &Chart, g: &MetricField, dt: f64) -> Result<()> {
    let bound = cfl_bound(chart, g);
    if dt > bound * (1.0 + 1e-12) {
        return Err(LabError::Cfl { dt, bound });
    }
    Ok(())
}

fn max_ricci_norm(pack: &CurvaturePack) -> f64 {
    pack.norm2_form(&pack.ricci).iter().fold(0.0f64, |m, v| m.max(v.sqrt()))
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub chart: Chart,
    pub dt: f64,
    pub gauge: Gauge,
    pub requested_beta_star: f64,
    pub times: Vec<f64>,
    pub metrics: Vec<MetricField>,
    /// `∂g/∂β` at each stored time.
    pub rates: Vec<CovariantForm>,
    pub guard: Option<GuardEvent>,
    packs: Vec<OnceLock<Arc<CurvaturePack>>>,
}

impl FlowTrajectory {
    fn assemble(
        chart: Chart,
        dt: f64,
        gauge: Gauge,
        requested_beta_star: f64,
        times: Vec<f64>,
        metrics: Vec<MetricField>,
        rates: Vec<CovariantForm>,
        guard: Option<GuardEvent>,
    ) -> Self {
        let nodes = 2 * times.len() - 1;
        Self {
            chart,
            dt,
            gauge,
            requested_beta_star,
            times,
            metrics,
            rates,
            guard,
            packs: (0..nodes).map(|_| OnceLock::new()).collect(),
        }
    }

    /// A trajectory given by closed-form snapshots and rates (used by tests and
    /// fault-injection studies).
    pub fn from_snapshots(
        chart: &Chart,
        dt: f64,
        metrics: Vec<MetricField>,
        rates: Vec<CovariantForm>,
    ) -> Result<Self> {
        if metrics.is_empty() || metrics.len() != rates.len() {
            return Err(LabError::Config("snapshots and rates must be non-empty and equally long".into()));
        }
        for g in &metrics {
            ensure_same(chart.tag(), g.tag, "snapshot")?;
        }
        let times = (0..metrics.len()).map(|k| k as f64 * dt).collect();
        let beta = dt * (metrics.len() - 1) as f64;
        Ok(Self::assemble(chart.clone(), dt, Gauge::None, beta, times, metrics, rates, None))
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Final time actually reached (smaller than requested after a guard trip).
    pub fn beta_star(&self) -> f64 {
        *self.times.last().expect("non-empty trajectory")
    }

    pub fn completed(&self) -> bool {
        self.guard.is_none()
    }

    fn hermite(&self, k: usize, theta: f64) -> MetricField {
        if theta == 0.0 || k == self.steps() {
            return self.metrics[k].clone();
        }
        let (t2, t3) = (theta * theta, theta * theta * theta);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + theta;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let mut g = self.metrics[k].as_form().scaled(h00);
        g.axpy(h10 * self.dt, &self.rates[k]);
        g.axpy(h01, &self.metrics[k + 1].as_form());
        g.axpy(h11 * self.dt, &self.rates[k + 1]);
        MetricField::from_form(&g)
    }

    /// Metric at half-step node `j` (`β = j·dt/2`).
    pub fn node_metric(&self, j: usize) -> MetricField {
        if j.is_multiple_of(2) {
            self.metrics[j / 2].clone()
        } else {
            self.hermite(j / 2, 0.5)
        }
    }

    /// Metric at an arbitrary `β ∈ [0, β*]` by Hermite interpolation.
    pub fn metric_at(&self, beta: f64) -> Result<MetricField> {
        let end = self.beta_star();
        if !(beta >= -1e-12 && beta <= end + 1e-12) {
            return Err(LabError::Domain(format!("β = {beta} outside [0, {end}]")));
        }
        if self.steps() == 0 {
            return Ok(self.metrics[0].clone());
        }
        let x = (beta / self.dt).clamp(0.0, self.steps() as f64);
        let k = (x.floor() as usize).min(self.steps() - 1);
        Ok(self.hermite(k, x - k as f64))
    }

    /// Cached connection and Ricci data at half-step node `j`.
    pub fn pack(&self, j: usize) -> Result<Arc<CurvaturePack>> {
        if let Some(p) = self.packs[j].get() {
            return Ok(p.clone());
        }
        let p = Arc::new(compute_curvature_lite(&self.chart, &self.node_metric(j))?);
        let _ = self.packs[j].set(p.clone());
        Ok(self.packs[j].get().cloned().unwrap_or(p))
    }

    /// Full curvature (with Riemann and connection derivatives) at node `j`; not cached.
    pub fn full_pack(&self, j: usize) -> Result<CurvaturePack> {
        compute_curvature(&self.chart, &self.node_metric(j))
    }

    /// Copy with snapshot `k` scaled by `factor` (rates untouched).
    pub fn corrupted(&self, k: usize, factor: f64) -> Self {
        let mut metrics = self.metrics.clone();
        metrics[k] = MetricField::from_form(&metrics[k].as_form().scaled(factor));
        Self::assemble(
            self.chart.clone(),
            self.dt,
            self.gauge,
            self.requested_beta_star,
            self.times.clone(),
            metrics,
            self.rates.clone(),
            self.guard.clone(),
        )
    }

    pub fn backward(&self) -> BackwardView<'_> {
        BackwardView { traj: self }
    }

    /// `∫ dμ_g` at each stored time.
    pub fn volumes(&self) -> Result<Vec<f64>> {
        (0..=self.steps()).map(|k| Ok(self.pack(2 * k)?.volume())).collect()
    }
}

/// The trajectory read in reversed time `η = β* − β`.
#[derive(Clone, Copy, Debug)]
pub struct BackwardView<'a> {
    traj: &'a FlowTrajectory,
}

impl<'a> BackwardView<'a> {
    pub fn trajectory(&self) -> &'a FlowTrajectory {
        self.traj
    }

    pub fn steps(&self) -> usize {
        self.traj.steps()
    }

    pub fn eta(&self, m: usize) -> f64 {
        self.traj.beta_star() - self.traj.times[self.steps() - m]
    }

    pub fn etas(&self) -> Vec<f64> {
        (0..=self.steps()).map(|m| self.eta(m)).collect()
    }

    /// Snapshot at backward step `m`, i.e. forward snapshot `K − m`.
    pub fn metric(&self, m: usize) -> &'a MetricField {
        &self.traj.metrics[self.steps() - m]
    }

    pub fn metric_at(&self, eta: f64) -> Result<MetricField> {
        self.traj.metric_at(self.traj.beta_star() - eta)
    }

    pub fn pack(&self, m: usize) -> Result<Arc<CurvaturePack>> {
        self.traj.pack(2 * (self.steps() - m))
    }

    pub fn full_pack(&self, m: usize) -> Result<CurvaturePack> {
        self.traj.full_pack(2 * (self.steps() - m))
    }
}

/// Forward Ricci flow `∂g/∂β = −2Ric` (optionally `− L_X g` with the DeTurck
/// vector relative to `g0`).
pub fn integrate_ricci(chart: &Chart, g0: &MetricField, opts: FlowOptions) -> Result<FlowTrajectory> {
    ensure_same(chart.tag(), g0.tag, "integrate_ricci")?;
    g0.check_admissible()?;
    let (steps, dt) = step_count(opts.beta_star, opts.dt)?;
    check_cfl(chart, g0, opts.dt)?;
    let pack0 = compute_curvature_lite(chart, g0)?;
    let reference = pack0.christoffel.clone();
    let rate = |g: &MetricField| -> Result<(CovariantForm, CurvaturePack)> {
        let pack = compute_curvature_lite(chart, g)?;
        let mut r = pack.ricci.scaled(-2.0);
        if opts.gauge == Gauge::DeTurck {
            let x = deturck_covector(&pack, &reference);
            r.axpy(-2.0, &lie_metric(&pack, &x)?);
        }
        Ok((r, pack))
    };
    let threshold = opts.guard_factor * max_ricci_norm(&pack0).max(1.0);

    let mut times = vec![0.0];
    let mut metrics = vec![g0.clone()];
    let (r0, p0) = rate(g0)?;
    let mut rates = vec![r0];
    let mut node_packs = vec![Arc::new(p0)];
    let mut guard = None;
    for k in 0..steps {
        let g = metrics[k].as_form();
        let stage = |base: &CovariantForm, a: f64, d: &CovariantForm| {
            let mut s = base.clone();
            s.axpy(a, d);
            MetricField::from_form(&s)
        };
        let step = (|| -> Result<(MetricField, CovariantForm, CurvaturePack)> {
            let k1 = &rates[k];
            let (k2, _) = rate(&stage(&g, 0.5 * dt, k1))?;
            let (k3, _) = rate(&stage(&g, 0.5 * dt, &k2))?;
            let (k4, _) = rate(&stage(&g, dt, &k3))?;
            let mut next = g.clone();
            next.axpy(dt / 6.0, k1);
            next.axpy(dt / 3.0, &k2);
            next.axpy(dt / 3.0, &k3);
            next.axpy(dt / 6.0, &k4);
            let next = MetricField::from_form(&next);
            let (r, p) = rate(&next)?;
            Ok((next, r, p))
        })();
        let time = (k + 1) as f64 * dt;
        match step {
            Err(LabError::Domain(msg)) => {
                guard = Some(GuardEvent { step: k + 1, time, reason: format!("positivity lost: {msg}") });
                break;
            }
            Err(e) => return Err(e),
            Ok((next, r, p)) => {
                let ric = max_ricci_norm(&p);
                if !ric.is_finite() || ric > threshold {
                    guard = Some(GuardEvent {
                        step: k + 1,
                        time,
                        reason: format!("curvature blow-up: max|Ric| = {ric:.3e} exceeds {threshold:.3e}"),
                    });
                    break;
                }
                times.push(time);
                metrics.push(next);
                rates.push(r);
                node_packs.push(Arc::new(p));
            }
        }
    }
    let traj = FlowTrajectory::assemble(chart.clone(), dt, opts.gauge, opts.beta_star, times, metrics, rates, guard);
    if opts.gauge == Gauge::None {
        for (k, p) in node_packs.into_iter().enumerate() {
            let _ = traj.packs[2 * k].set(p);
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// States of a co-evolved field at every step, in the field's own time
/// orientation (`β` forward, `η` backward).
#[derive(Clone, Debug)]
pub struct Track<S> {
    pub direction: Direction,
    pub times: Vec<f64>,
    pub states: Vec<S>,
}

impl<S> Track<S> {
    pub fn last(&self) -> &S {
        self.states.last().expect("non-empty track")
    }

    pub fn map<T>(&self, f: impl Fn(&S) -> T) -> Track<T> {
        Track { direction: self.direction, times: self.times.clone(), states: self.states.iter().map(f).collect() }
    }
}

fn plain_ricci(traj: &FlowTrajectory) -> Result<()> {
    if traj.gauge != Gauge::None {
        return Err(LabError::Config("co-evolved fields need a trajectory without gauge term".into()));
    }
    check_cfl(&traj.chart, &traj.metrics[0], traj.dt)
}

/// Classical RK4 for `dS/dt = F(pack(t), t, S)` over the whole trajectory.
pub fn integrate_on_track<S, F>(traj: &FlowTrajectory, dir: Direction, init: S, rhs: F) -> Result<Track<S>>
where
    S: Linear,
    F: Fn(&CurvaturePack, f64, &S) -> Result<S>,
{
    plain_ricci(traj)?;
    let k_steps = traj.steps();
    let dt = traj.dt;
    let node = |j: usize| match dir {
        Direction::Forward => j,
        Direction::Backward => 2 * k_steps - j,
    };
    let mut times = vec![0.0];
    let mut states = vec![init];
    for m in 0..k_steps {
        let t = m as f64 * dt;
        let s = &states[m];
        let (p0, ph, p1) = (traj.pack(node(2 * m))?, traj.pack(node(2 * m + 1))?, traj.pack(node(2 * m + 2))?);
        let k1 = rhs(&p0, t, s)?;
        let mut s2 = s.clone();
        s2.add_scaled(0.5 * dt, &k1);
        let k2 = rhs(&ph, t + 0.5 * dt, &s2)?;
        let mut s3 = s.clone();
        s3.add_scaled(0.5 * dt, &k2);
        let k3 = rhs(&ph, t + 0.5 * dt, &s3)?;
        let mut s4 = s.clone();
        s4.add_scaled(dt, &k3);
        let k4 = rhs(&p1, t + dt, &s4)?;
        let mut next = s.clone();
        next.add_scaled(dt / 6.0, &k1);
        next.add_scaled(dt / 3.0, &k2);
        next.add_scaled(dt / 3.0, &k3);
        next.add_scaled(dt / 6.0, &k4);
        times.push((m + 1) as f64 * dt);
        states.push(next);
    }
    Ok(Track { direction: dir, times, states })
}

/// Reduced linearized flow `∂h̃/∂β = Δ_L h̃`.
pub fn integrate_reduced_linearized(traj: &FlowTrajectory, h0: &CovariantForm) -> Result<Track<CovariantForm>> {
    ensure_same(traj.chart.tag(), h0.tag, "integrate_reduced_linearized")?;
    integrate_on_track(traj, Direction::Forward, h0.clone(), |p, _, h| lichnerowicz_endo(p, h))
}

/// `(h̃, w)` with `∂h̃/∂β = Δ_L h̃`, `∂w_a/∂β = −∇^b(h̃_ab − ½ tr h̃ g_ab)`, `w(0) = 0`.
pub fn integrate_linearized_pair(
    traj: &FlowTrajectory,
    h0: &CovariantForm,
) -> Result<Track<(CovariantForm, CoVectorField)>> {
    ensure_same(traj.chart.tag(), h0.tag, "integrate_linearized_pair")?;
    let init = (h0.clone(), CoVectorField::zeros(&traj.chart));
    integrate_on_track(traj, Direction::Forward, init, |p, _, (h, _)| {
        Ok((lichnerowicz_endo(p, h)?, divergence(p, &einstein_conjugate(&p.metric, h)?)?))
    })
}

/// `h = h̃ + L_w g` at each step.
pub fn assemble_full_linearized(
    traj: &FlowTrajectory,
    pair: &Track<(CovariantForm, CoVectorField)>,
) -> Result<Vec<CovariantForm>> {
    pair.states
        .iter()
        .enumerate()
        .map(|(k, (h, w))| {
            let p = traj.pack(2 * k)?;
            let mut out = h.clone();
            out.axpy(2.0, &lie_metric(&p, w)?);
            Ok(out)
        })
        .collect()
}

/// Right side of the full linearized flow: `Δ_L h + 2 δ*δ G(h)`.
pub fn linearized_rhs(pack: &CurvaturePack, h: &CovariantForm) -> Result<CovariantForm> {
    let mut out = lichnerowicz_endo(pack, h)?;
    let d = divergence(pack, &einstein_conjugate(&pack.metric, h)?)?;
    out.axpy(2.0, &lie_metric(pack, &d)?);
    Ok(out)
}

/// `max_k ‖(x_{k+1} − x_{k−1})/2dt − F_k‖_∞` over interior steps, where
/// `F_k = rhs(pack_k, x_k)`.
pub fn central_residual<F>(traj: &FlowTrajectory, states: &[CovariantForm], rhs: F) -> Result<f64>
where
    F: Fn(&CurvaturePack, &CovariantForm) -> Result<CovariantForm>,
{
    let mut worst = 0.0f64;
    for k in 1..states.len().saturating_sub(1) {
        let mut fd = states[k + 1].sub(&states[k - 1]).scaled(0.5 / traj.dt);
        fd.axpy(-1.0, &rhs(&*traj.pack(2 * k)?, &states[k])?);
        worst = worst.max(fd.max_abs());
    }
    Ok(worst)
}

/// Solitonic vector flow `∂v_a/∂β = Δv_a + R_a^b v_b`.
pub fn integrate_soliton_vector(traj: &FlowTrajectory, v0: &CoVectorField) -> Result<Track<CoVectorField>> {
    ensure_same(traj.chart.tag(), v0.tag, "integrate_soliton_vector")?;
    integrate_on_track(traj, Direction::Forward, v0.clone(), |p, _, v| hodge_1form_laplacian(p, v))
}

/// `L_v g = 2δ*v` along a vector track.
pub fn lie_track(traj: &FlowTrajectory, vs: &Track<CoVectorField>) -> Result<Vec<CovariantForm>> {
    vs.states.iter().enumerate().map(|(k, v)| Ok(lie_metric(&*traj.pack(2 * k)?, v)?.scaled(2.0))).collect()
}

/// Conjugate flow `∂H/∂η = Δ_L H − R H` against the reversed metric.
pub fn integrate_conjugate_h(back: &BackwardView<'_>, h_star: &ContraForm) -> Result<Track<ContraForm>> {
    let traj = back.trajectory();
    ensure_same(traj.chart.tag(), h_star.tag, "integrate_conjugate_h")?;
    integrate_on_track(traj, Direction::Backward, h_star.clone(), conjugate_rhs)
}

pub fn conjugate_rhs(p: &CurvaturePack, _eta: f64, h: &ContraForm) -> Result<ContraForm> {
    let mut out = lichnerowicz_contra(p, h)?;
    let rh = ContraForm::from_fn(&p.chart, |q| p.scalar.c[0][q] * h.at(q));
    out.axpy(-1.0, &rh);
    Ok(out)
}

/// Heat flow `∂ϱ/∂β = Δϱ`.
pub fn integrate_heat(traj: &FlowTrajectory, rho0: &ScalarField) -> Result<Track<ScalarField>> {
    ensure_same(traj.chart.tag(), rho0.tag, "integrate_heat")?;
    integrate_on_track(traj, Direction::Forward, rho0.clone(), |p, _, f| Ok(p.laplacian_scalar(f)))
}

/// Conjugate heat flow `∂ϖ/∂η = Δϖ − Rϖ`.
pub fn integrate_conjugate_density(back: &BackwardView<'_>, w_star: &ScalarField) -> Result<Track<ScalarField>> {
    let traj = back.trajectory();
    ensure_same(traj.chart.tag(), w_star.tag, "integrate_conjugate_density")?;
    integrate_on_track(traj, Direction::Backward, w_star.clone(), |p, _, f| {
        let mut out = p.laplacian_scalar(f);
        for (o, (v, r)) in out.c[0].iter_mut().zip(f.c[0].iter().zip(&p.scalar.c[0])) {
            *o -= r * v;
        }
        Ok(out)
    })
}

/// Uhlenbeck frame flow `∂ι^k_μ/∂β = ι^h_μ R_h^k`.
pub fn integrate_uhlenbeck_frame(traj: &FlowTrajectory, iota0: &FramePack) -> Result<Track<FramePack>> {
    ensure_same(traj.chart.tag(), iota0.tag, "integrate_uhlenbeck_frame")?;
    integrate_on_track(traj, Direction::Forward, iota0.clone(), |p, _, iota| {
        Ok(FramePack::from_fn(&p.chart, |q| {
            // (R^k_h) ι^h_μ with R^k_h = g^{km} R_mh
            p.ginv[q] * p.ricci.at(q) * iota.at(q)
        }))
    })
}

/// The `g`-orthonormal frame `g^{-1/2}`.
pub fn orthonormal_frame(chart: &Chart, g: &MetricField) -> FramePack {
    FramePack::from_fn(chart, |p| {
        let e = g.at(p).symmetric_eigen();
        let d = e.eigenvalues.map(|v| 1.0 / v.sqrt());
        e.eigenvectors * Mat3::from_diagonal(&d) * e.eigenvectors.transpose()
    })
}

/// `(ι*g)_{μν} = ι^h_μ ι^k_ν g_hk`.
pub fn pullback_metric(iota: &FramePack, g: &MetricField) -> Vec<Mat3> {
    (0..g.npts()).map(|p| iota.at(p).transpose() * g.at(p) * iota.at(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milnor::MilnorMetric;
    use crate::random::FieldSampler;
    use crate::torus::{perturbed_metric, torus_chart, Scheme};
    use std::f64::consts::PI;

    fn milnor_flow(a: f64, b: f64, c: f64, beta: f64, dt: f64) -> FlowTrajectory {
        let m = MilnorMetric::new(a, b, c).unwrap();
        integrate_ricci(&Chart::Milnor, &m.field(), FlowOptions::new(beta, dt)).unwrap()
    }

    #[test]
    fn step_count_rounds_up() {
        assert_eq!(step_count(0.1, 1e-4).unwrap().0, 1000);
        let (k, dt) = step_count(0.02, 0.0066).unwrap();
        assert_eq!(k, 4);
        assert!((dt - 0.005).abs() < 1e-15);
        assert_eq!(step_count(0.0, 0.1).unwrap().0, 0);
        assert!(step_count(0.1, 0.0).is_err());
    }

    #[test]
    fn round_sphere_shrinks_linearly() {
        let t = milnor_flow(1.0, 1.0, 1.0, 0.1, 1e-4);
        let g = t.metrics.last().unwrap().at(0);
        for i in 0..3 {
            assert!((g[(i, i)] - 0.6).abs() < 1e-10);
        }
        let mid = t.metric_at(0.03705).unwrap().at(0);
        assert!((mid[(0, 0)] - (1.0 - 4.0 * 0.03705)).abs() < 1e-12);
    }

    #[test]
    fn berger_self_convergence_is_fourth_order() {
        let end = |dt: f64| milnor_flow(1.2, 1.0, 1.0, 0.05, dt).metrics.last().unwrap().at(0);
        let (a, b, c) = (end(1e-3), end(5e-4), end(2.5e-4));
        let r = (a - b).norm() / (b - c).norm();
        assert!((r - 16.0).abs() < 2.0, "ratio {r} ({:e})", (a - b).norm());
    }

    #[test]
    fn flat_torus_is_a_fixed_point() {
        let chart = torus_chart(8, 2.0 * PI, Scheme::Fd4).unwrap();
        let dt = 0.1 * chart.grid().unwrap().h().powi(2);
        let t = integrate_ricci(&chart, &MetricField::flat(&chart), FlowOptions::new(5.0 * dt, dt)).unwrap();
        assert!(t.metrics.last().unwrap().sub(&MetricField::flat(&chart)).max_abs() < 1e-13);
        assert!(t.completed());
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let chart = torus_chart(8, 2.0 * PI, Scheme::Fd4).unwrap();
        let dt = chart.grid().unwrap().h().powi(2);
        let r = integrate_ricci(&chart, &MetricField::flat(&chart), FlowOptions::new(dt, dt));
        assert!(matches!(r, Err(LabError::Cfl { .. })));
    }

    #[test]
    fn guard_truncates_near_singularity() {
        let t = milnor_flow(1.0, 1.0, 1.0, 0.2499, 1e-4);
        let ev = t.guard.as_ref().expect("guard event");
        assert!(ev.reason.contains("blow-up"));
        assert!(t.beta_star() < 0.2499 && t.beta_star() > 0.24);
    }

    #[test]
    fn volume_evolution_matches_total_scalar_curvature() {
        let chart = torus_chart(12, 2.0 * PI, Scheme::Fourier).unwrap();
        let g0 = perturbed_metric(&chart, 0.05).unwrap();
        let dt0 = 0.5 * cfl_bound(&chart, &g0);
        let err = |dt: f64| {
            let t = integrate_ricci(&chart, &g0, FlowOptions::new(4.0 * dt0, dt)).unwrap();
            let v = t.volumes().unwrap();
            let k = t.steps() / 2;
            let dv = (v[k + 1] - v[k - 1]) / (2.0 * t.dt);
            let p = t.pack(2 * k).unwrap();
            (dv + p.integrate(&p.scalar.c[0])).abs()
        };
        let (e1, e2) = (err(dt0), err(0.5 * dt0));
        assert!(e1 < 1e-4 && (e1 / e2).log2() > 1.8, "{e1} {e2}");
    }

    #[test]
    fn ricci_evolves_by_lichnerowicz_on_berger() {
        let t = milnor_flow(1.2, 1.0, 1.0, 0.05, 1e-4);
        let ric0 = t.pack(0).unwrap().ricci.clone();
        let tr = integrate_reduced_linearized(&t, &ric0).unwrap();
        let ric_end = &t.pack(2 * t.steps()).unwrap().ricci;
        assert!(tr.last().sub(ric_end).max_abs() < 1e-10);
    }

    #[test]
    fn soliton_vector_decays_on_flat_torus() {
        let chart = torus_chart(12, 2.0 * PI, Scheme::Fourier).unwrap();
        let g = MetricField::flat(&chart);
        let dt = 0.5 * cfl_bound(&chart, &g);
        let t = integrate_ricci(&chart, &g, FlowOptions::new(20.0 * dt, dt)).unwrap();
        let grid = chart.grid().unwrap();
        let v0 = CoVectorField::from_fn(&chart, |p| [grid.coords(p)[0].sin(), 0.0, 0.0]);
        let vt = integrate_soliton_vector(&t, &v0).unwrap();
        let expect = v0.scaled((-t.beta_star()).exp());
        assert!(vt.last().sub(&expect).max_abs() < 1e-9);
        let z = integrate_soliton_vector(&t, &CoVectorField::zeros(&chart)).unwrap();
        assert_eq!(z.last().max_abs(), 0.0);
    }

    #[test]
    fn uhlenbeck_frame_keeps_pullback_metric() {
        let t = milnor_flow(1.0, 1.0, 1.0, 0.1, 1e-4);
        let f0 = orthonormal_frame(&t.chart, &t.metrics[0]);
        let ft = integrate_uhlenbeck_frame(&t, &f0).unwrap();
        let a = t.metrics.last().unwrap().at(0)[(0, 0)];
        assert!((ft.last().at(0) - Mat3::identity() / a.sqrt()).norm() < 1e-10);
        let drift = (pullback_metric(ft.last(), t.metrics.last().unwrap())[0] - Mat3::identity()).norm();
        assert!(drift < 1e-10);
        let t = milnor_flow(1.2, 1.0, 1.0, 0.05, 1e-4);
        let f0 = orthonormal_frame(&t.chart, &t.metrics[0]);
        let ft = integrate_uhlenbeck_frame(&t, &f0).unwrap();
        let worst = ft
            .states
            .iter()
            .zip(&t.metrics)
            .map(|(f, g)| (pullback_metric(f, g)[0] - Mat3::identity()).norm())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-8);
    }

    #[test]
    fn conjugate_flow_is_componentwise_heat_on_flat_torus() {
        let chart = torus_chart(12, 2.0 * PI, Scheme::Fourier).unwrap();
        let g = MetricField::flat(&chart);
        let dt = 0.5 * cfl_bound(&chart, &g);
        let t = integrate_ricci(&chart, &g, FlowOptions::new(10.0 * dt, dt)).unwrap();
        let grid = chart.grid().unwrap();
        let h = ContraForm::from_fn(&chart, |p| {
            let x = grid.coords(p);
            Mat3::new(x[1].cos(), 0.0, 0.0, 0.0, 0.0, (x[0] + x[2]).sin(), 0.0, (x[0] + x[2]).sin(), 0.0)
        });
        let tr = integrate_conjugate_h(&t.backward(), &h).unwrap();
        let eta = t.beta_star();
        let expect = ContraForm::from_fn(&chart, |p| {
            let x = grid.coords(p);
            let s = (x[0] + x[2]).sin() * (-2.0 * eta).exp();
            Mat3::new(x[1].cos() * (-eta).exp(), 0.0, 0.0, 0.0, 0.0, s, 0.0, s, 0.0)
        });
        assert!(tr.last().sub(&expect).max_abs() < 1e-9);
    }

    #[test]
    fn homogeneous_class_is_closed_under_conjugate_flow() {
        let t = milnor_flow(1.2, 0.9, 1.0, 0.05, 1e-4);
        let h = ContraForm::from_fn(&Chart::Milnor, |_| Mat3::from_diagonal(&nalgebra::Vector3::new(0.5, 1.0, 2.0)));
        let tr = integrate_conjugate_h(&t.backward(), &h).unwrap();
        let m = tr.last().at(0);
        assert!(m[(0, 1)].abs() + m[(0, 2)].abs() + m[(1, 2)].abs() < 1e-14);
    }

    #[test]
    fn backward_view_reverses_exactly() {
        let t = milnor_flow(1.2, 1.0, 1.0, 0.01, 1e-3);
        let b = t.backward();
        assert_eq!(b.steps(), 10);
        assert_eq!(b.metric(0), t.metrics.last().unwrap());
        assert_eq!(b.metric(10), &t.metrics[0]);
        assert_eq!(&b.metric_at(0.0).unwrap(), t.metrics.last().unwrap());
        assert!((b.eta(3) - 0.003).abs() < 1e-15);
    }

    #[test]
    fn linearity_of_conjugate_flow() {
        let chart = torus_chart(8, 2.0 * PI, Scheme::Fourier).unwrap();
        let g0 = perturbed_metric(&chart, 0.05).unwrap();
        let dt = 0.5 * cfl_bound(&chart, &g0);
        let t = integrate_ricci(&chart, &g0, FlowOptions::new(3.0 * dt, dt)).unwrap();
        let mut s = FieldSampler::new(3);
        let (a, b) = (s.contra(&chart, 1.0), s.contra(&chart, 1.0));
        let mut ab = a.clone();
        ab.axpy(1.0, &b);
        let ta = integrate_conjugate_h(&t.backward(), &a).unwrap();
        let tb = integrate_conjugate_h(&t.backward(), &b).unwrap();
        let tab = integrate_conjugate_h(&t.backward(), &ab).unwrap();
        let mut sum = ta.last().clone();
        sum.axpy(1.0, tb.last());
        assert!(tab.last().sub(&sum).max_abs() < 1e-12);
    }
}
