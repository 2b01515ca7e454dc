//! Scenario configs, the checks catalog and the runner behind the CLI.
//!
//! A run integrates the Ricci flow once, then executes the requested checks in
//! config order. Each check appends rows to the CSV table and one record to the
//! manifest, so the artifacts depend only on the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::conservation::{
    divergence_norm_series, forward_divergence_norms, mass_series, monotonicity_identity, observed_order,
    pairing_series, project_contra, ricci_lichnerowicz_residual, scalar_conjugacy_series, DriftReport, PairingTarget,
};
use crate::constraints::{conjugated_pair_report, isotropic_pair, PairTolerances};
use crate::error::{LabError, Result};
use crate::field::{ContraForm, CovariantForm, Mat3, MetricField, ScalarField};
use crate::flows::{
    integrate_conjugate_density, integrate_conjugate_h, integrate_heat, integrate_reduced_linearized, integrate_ricci,
    FlowOptions, FlowTrajectory, Gauge,
};
use crate::geom::{compute_curvature, lichnerowicz_cov, lichnerowicz_endo, project_divergence_free};
use crate::kernel::{
    evolve_kernel_column, evolve_kernel_slot, kernel_positivity, sphere_normalization_check, torus_theta_kernel,
};
use crate::milnor::MilnorMetric;
use crate::parametrix::{radial_parametrix, spectral_subleading_fit, volterra_psi1, JetParametrix, SpaceForm};
use crate::random::{FieldSampler, DEFAULT_SEED};
use crate::report::{CheckRecord, CsvTable, Family, RunManifest};
use crate::torus::{perturbed_metric, torus_chart, Scheme};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    Torus {
        n: usize,
        l: f64,
        epsilon: f64,
        #[serde(default)]
        scheme: Scheme,
    },
    Milnor {
        a: f64,
        b: f64,
        c: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub y: [f64; 3],
    pub sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub coupling: f64,
    /// `h = forward_scale · g(0)`.
    pub forward_scale: f64,
    /// `H* = backward_scale · g(β*)^{-1}`.
    pub backward_scale: f64,
    /// Multiplies the solved `ϖ*` (fault injection).
    #[serde(default)]
    pub fault: Option<f64>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    LichnerowiczMetric,
    SolitonRadius,
    RicciLichnerowicz,
    ConjugatePairings,
    ScalarConjugacy,
    DivergenceFree,
    Monotonicity,
    KernelTheta,
    KernelPositivity,
    SphereNormalization,
    ParametrixRadial,
    VolterraSlope,
    ConstraintPair,
}

impl CheckKind {
    pub fn name(self) -> String {
        serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
    }

    pub fn family(self) -> Family {
        use CheckKind::*;
        match self {
            LichnerowiczMetric | SolitonRadius | RicciLichnerowicz => Family::Identities,
            ConjugatePairings | ScalarConjugacy | DivergenceFree | Monotonicity => Family::Conservation,
            KernelTheta | KernelPositivity | SphereNormalization | ParametrixRadial | VolterraSlope => Family::Kernel,
            ConstraintPair => Family::Constraints,
        }
    }

    /// What the check certifies, in one line.
    pub fn claim(self) -> &'static str {
        use CheckKind::*;
        match self {
            LichnerowiczMetric => "the Lichnerowicz Laplacian annihilates the metric",
            SolitonRadius => "the round sphere shrinks homothetically with radius squared A(β) = A(0) − 4β",
            RicciLichnerowicz => "along Ricci flow the Ricci tensor evolves by the Lichnerowicz Laplacian",
            ConjugatePairings => {
                "the conjugate linearized flow preserves its pairing with h̃, with Ric and with g − 2ηRic"
            }
            ScalarConjugacy => {
                "the heat density paired with the conjugate heat density is constant; conjugate mass is conserved"
            }
            DivergenceFree => {
                "divergence-free data stay divergence-free under the conjugate flow but not under the forward flow"
            }
            Monotonicity => "the divergence energy of the conjugate flow obeys its monotonicity identity",
            KernelTheta => "on the flat torus each kernel column is the scalar heat kernel times the identity",
            KernelPositivity => "on the flat torus the kernel defines a positive quadratic form",
            SphereNormalization => "on the round sphere the kernel scales with the radius and keeps unit normalization",
            ParametrixRadial => "the radial transport chain reproduces the sphere heat kernel coefficients",
            VolterraSlope => "the first Volterra iterate of the order-2 parametrix is bounded by t^(K − n/2)",
            ConstraintPair => "end data satisfying the Hamiltonian constraint are conjugated along the flow",
        }
    }

    fn default_tolerance(self) -> f64 {
        use CheckKind::*;
        match self {
            LichnerowiczMetric => 1e-12,
            SolitonRadius => 1e-10,
            RicciLichnerowicz => 1e-6,
            ConjugatePairings | ScalarConjugacy => 1e-8,
            DivergenceFree => 3.0,
            Monotonicity => 1e-6,
            KernelTheta => 1e-6,
            KernelPositivity => 1e-12,
            SphereNormalization => 1e-8,
            ParametrixRadial => 1e-8,
            VolterraSlope => 0.4,
            ConstraintPair => 1e-12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum CheckSpec {
    Name(CheckKind),
    Detailed {
        name: CheckKind,
        #[serde(default)]
        tolerance: Option<f64>,
    },
}

impl CheckSpec {
    pub fn kind(&self) -> CheckKind {
        match self {
            CheckSpec::Name(k) | CheckSpec::Detailed { name: k, .. } => *k,
        }
    }

    pub fn tolerance(&self) -> f64 {
        match self {
            CheckSpec::Detailed { tolerance: Some(t), .. } => *t,
            _ => self.kind().default_tolerance(),
        }
    }
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// `beta_star` and `dt` have no defaults: a silent default could violate the
/// step bound of a different geometry.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub backend: BackendConfig,
    pub beta_star: f64,
    pub dt: f64,
    #[serde(default)]
    pub gauge: Gauge,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub constraint: Option<ConstraintConfig>,
    pub checks: Vec<CheckSpec>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn config_err(msg: impl Into<String>) -> LabError {
    LabError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn is_round(&self) -> bool {
        matches!(self.backend, BackendConfig::Milnor { a, b, c } if a == b && b == c)
    }

    fn is_flat(&self) -> bool {
        matches!(self.backend, BackendConfig::Torus { epsilon, .. } if epsilon == 0.0)
    }

    /// Checks every parameter before any compute, including the step bound.
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(config_err("scenario name must be a nonempty plain file name"));
        }
        if !finite_pos(self.beta_star) || !finite_pos(self.dt) {
            return Err(config_err(format!(
                "beta_star and dt must be positive, got {} and {}",
                self.beta_star, self.dt
            )));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads must be at least 1"));
        }
        match self.backend {
            BackendConfig::Torus { n, l, epsilon, .. } => {
                if n < 8 {
                    return Err(config_err(format!("torus needs n >= 8, got {n}")));
                }
                if !finite_pos(l) || !epsilon.is_finite() || epsilon.abs() >= 0.5 {
                    return Err(config_err("torus needs l > 0 and |epsilon| < 0.5"));
                }
            }
            BackendConfig::Milnor { a, b, c } => {
                MilnorMetric::new(a, b, c).map_err(|e| config_err(e.to_string()))?;
            }
        }
        if self.gauge == Gauge::DeTurck && self.checks.iter().any(|c| c.kind() != CheckKind::LichnerowiczMetric) {
            return Err(config_err("co-evolved checks need the plain Ricci flow gauge"));
        }
        if self.checks.is_empty() {
            return Err(config_err("at least one check is required"));
        }
        let torus = matches!(self.backend, BackendConfig::Torus { .. });
        for spec in &self.checks {
            let k = spec.kind();
            if !spec.tolerance().is_finite() {
                return Err(config_err(format!("{}: tolerance must be finite", k.name())));
            }
            use CheckKind::*;
            let ok = match k {
                SolitonRadius | SphereNormalization | ParametrixRadial => self.is_round(),
                KernelTheta | KernelPositivity => self.is_flat(),
                DivergenceFree | VolterraSlope => torus,
                _ => true,
            };
            if !ok {
                return Err(config_err(format!("check {} does not apply to this backend", k.name())));
            }
            if matches!(k, KernelTheta | KernelPositivity | VolterraSlope) {
                let kc =
                    self.kernel.as_ref().ok_or_else(|| config_err(format!("{} needs a kernel block", k.name())))?;
                if !finite_pos(kc.sigma) || kc.y.iter().any(|v| !v.is_finite()) {
                    return Err(config_err("kernel sigma must be positive and y finite"));
                }
            }
            if k == VolterraSlope && self.beta_star < 0.01 {
                return Err(config_err("volterra_slope samples t up to 0.01 and needs beta_star >= 0.01"));
            }
            if k == ConstraintPair {
                let c =
                    self.constraint.as_ref().ok_or_else(|| config_err("constraint_pair needs a constraint block"))?;
                if !(c.coupling.is_finite() && c.coupling != 0.0) {
                    return Err(config_err("constraint coupling must be nonzero"));
                }
                if c.fault.is_some_and(|f| !f.is_finite()) {
                    return Err(config_err("fault factor must be finite"));
                }
            }
        }
        let (chart, g0) = self.geometry()?;
        if let Some(grid) = chart.grid() {
            if let Some(kc) = &self.kernel {
                if kc.sigma < 2.0 * grid.h() {
                    return Err(LabError::UnderResolved { sigma: kc.sigma, min: 2.0 * grid.h() });
                }
            }
        }
        crate::flows::check_cfl(&chart, &g0, self.dt).map_err(|e| config_err(e.to_string()))
    }

    pub fn geometry(&self) -> Result<(Chart, MetricField)> {
        match self.backend {
            BackendConfig::Torus { n, l, epsilon, scheme } => {
                let chart = torus_chart(n, l, scheme)?;
                let g = perturbed_metric(&chart, epsilon)?;
                Ok((chart, g))
            }
            BackendConfig::Milnor { a, b, c } => Ok((Chart::Milnor, MilnorMetric::new(a, b, c)?.field())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub table: CsvTable,
}

impl RunOutcome {
    pub fn guard_tripped(&self) -> bool {
        self.manifest.guard.is_some()
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.manifest.json`.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv = PathBuf::from(format!("{}.csv", self.manifest.scenario));
        let man = PathBuf::from(format!("{}.manifest.json", self.manifest.scenario));
        self.manifest.artifacts = vec![csv.clone(), man.clone()];
        self.table.write(&dir.join(csv))?;
        self.manifest.write(&dir.join(man))
    }
}

struct Ctx<'a> {
    cfg: &'a ScenarioConfig,
    traj: &'a FlowTrajectory,
    table: CsvTable,
}

struct Verdict {
    passed: bool,
    metrics: BTreeMap<String, f64>,
    note: Option<String>,
}

impl Verdict {
    fn new(passed: bool, metrics: &[(&str, f64)]) -> Self {
        Self { passed, metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(), note: None }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Runs the flow and the configured checks. Only the `checks` filter is
/// applied on top of the config, for suite mode.
pub fn run_scenario(cfg: &ScenarioConfig, family: Option<Family>) -> Result<RunOutcome> {
    cfg.validate()?;
    let (chart, g0) = cfg.geometry()?;
    let traj = integrate_ricci(&chart, &g0, FlowOptions::new(cfg.beta_star, cfg.dt).with_gauge(cfg.gauge))?;
    let mut ctx = Ctx { cfg, traj: &traj, table: CsvTable::default() };
    ctx.trajectory_rows()?;
    let mut checks = vec![];
    if traj.guard.is_none() {
        for spec in cfg.checks.iter().filter(|s| family.is_none_or(|f| s.kind().family() == f)) {
            let k = spec.kind();
            let tol = spec.tolerance();
            let v = ctx.run_check(k, tol)?;
            checks.push(CheckRecord {
                name: k.name(),
                family: k.family(),
                claim: k.claim().to_string(),
                passed: v.passed,
                tolerance: Some(tol),
                metrics: v.metrics,
                note: v.note,
            });
        }
    }
    let passed = traj.guard.is_none() && checks.iter().all(|c| c.passed);
    let manifest = RunManifest {
        scenario: cfg.name.clone(),
        config: serde_json::to_value(ConfigEcho::from(cfg))?,
        steps: traj.steps(),
        effective_dt: traj.dt,
        guard: traj.guard.clone(),
        checks,
        artifacts: vec![],
        passed,
    };
    Ok(RunOutcome { manifest, table: ctx.table })
}

/// The config as recorded in the manifest; output location and thread budget
/// are left out so manifests compare equal across machines and thread counts.
#[derive(Serialize)]
struct ConfigEcho<'a> {
    backend: &'a BackendConfig,
    beta_star: f64,
    dt: f64,
    gauge: Gauge,
    kernel: &'a Option<KernelConfig>,
    constraint: &'a Option<ConstraintConfig>,
    checks: &'a [CheckSpec],
    seed: u64,
}

impl<'a> From<&'a ScenarioConfig> for ConfigEcho<'a> {
    fn from(c: &'a ScenarioConfig) -> Self {
        Self {
            backend: &c.backend,
            beta_star: c.beta_star,
            dt: c.dt,
            gauge: c.gauge,
            kernel: &c.kernel,
            constraint: &c.constraint,
            checks: &c.checks,
            seed: c.seed,
        }
    }
}

fn drift_rows(table: &mut CsvTable, d: &DriftReport) {
    table.push_series("drift", &d.quantity, &d.series);
}

impl Ctx<'_> {
    fn trajectory_rows(&mut self) -> Result<()> {
        let traj = self.traj;
        for (k, t) in traj.times.iter().enumerate() {
            let pack = traj.pack(2 * k)?;
            match traj.chart {
                Chart::Milnor => {
                    let m = traj.metrics[k].at(0);
                    for (i, c) in ["A", "B", "C"].iter().enumerate() {
                        self.table.push(k, *t, "metric", c, m[(i, i)]);
                    }
                    self.table.push(k, *t, "scalar", "R", pack.scalar.c[0][0]);
                }
                _ => {
                    let ric = pack.norm2_form(&pack.ricci).iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
                    self.table.push(k, *t, "volume", "total", pack.volume());
                    self.table.push(k, *t, "ricci", "max_norm", ric);
                    self.table.push(k, *t, "metric", "min_eigenvalue", traj.metrics[k].min_eigenvalue());
                }
            }
        }
        Ok(())
    }

    fn sampler(&self, salt: u64) -> FieldSampler {
        FieldSampler::new(self.cfg.seed.wrapping_add(salt))
    }

    fn run_check(&mut self, k: CheckKind, tol: f64) -> Result<Verdict> {
        use CheckKind::*;
        match k {
            LichnerowiczMetric => self.lichnerowicz_metric(tol),
            SolitonRadius => self.soliton_radius(tol),
            RicciLichnerowicz => {
                let r = ricci_lichnerowicz_residual(self.traj)?;
                Ok(Verdict::new(r <= tol, &[("residual", r)]))
            }
            ConjugatePairings => self.conjugate_pairings(tol),
            ScalarConjugacy => self.scalar_conjugacy(tol),
            DivergenceFree => self.divergence_free(tol),
            Monotonicity => self.monotonicity(tol),
            KernelTheta => self.kernel_theta(tol),
            KernelPositivity => self.kernel_positivity(tol),
            SphereNormalization => {
                let r = sphere_normalization_check(self.traj)?;
                self.table.push_series("sphere_normalization", "value", &r.values);
                Ok(Verdict::new(
                    r.max_deviation <= tol,
                    &[("max_deviation", r.max_deviation), ("radius_algebra", r.radius_algebra)],
                ))
            }
            ParametrixRadial => self.parametrix_radial(tol),
            VolterraSlope => self.volterra_slope(tol),
            ConstraintPair => self.constraint_pair(tol),
        }
    }

    /// Both operator forms. On the torus a form passes if its residual is at
    /// roundoff or if it converges at order ≥ 3.5 over `n, 3n/2, 2n`.
    fn lichnerowicz_metric(&mut self, tol: f64) -> Result<Verdict> {
        let residuals = |chart: &Chart, g: &MetricField| -> Result<(f64, f64)> {
            let pack = compute_curvature(chart, g)?;
            let h = g.as_form();
            let scale = h.max_abs();
            Ok((lichnerowicz_endo(&pack, &h)?.max_abs() / scale, lichnerowicz_cov(&pack, &h)?.max_abs() / scale))
        };
        let (chart, g) = self.cfg.geometry()?;
        let (endo, cov) = residuals(&chart, &g)?;
        self.table.push(0, 0.0, "lichnerowicz_metric", "endomorphism", endo);
        self.table.push(0, 0.0, "lichnerowicz_metric", "covariant", cov);
        let BackendConfig::Torus { n, l, epsilon, scheme } = self.cfg.backend else {
            return Ok(Verdict::new(endo <= tol && cov <= tol, &[("endomorphism", endo), ("covariant", cov)]));
        };
        let mut errs = vec![(endo, cov)];
        for m in [3 * n / 2, 2 * n] {
            let c = torus_chart(m, l, scheme)?;
            let g = perturbed_metric(&c, epsilon)?;
            errs.push(residuals(&c, &g)?);
        }
        let order = |a: f64, b: f64, r: f64| if a <= tol && b <= tol { f64::INFINITY } else { observed_order(a, b, r) };
        let endo_order = order(errs[1].0, errs[2].0, 4.0 / 3.0);
        let cov_order = order(errs[1].1, errs[2].1, 4.0 / 3.0);
        for (i, (a, b)) in errs.iter().enumerate().skip(1) {
            self.table.push(i, 0.0, "lichnerowicz_metric", "endomorphism", *a);
            self.table.push(i, 0.0, "lichnerowicz_metric", "covariant", *b);
        }
        let ok = |res: f64, ord: f64| res <= tol || ord >= 3.5;
        let passed = ok(errs[2].0, endo_order) && ok(errs[2].1, cov_order);
        let finite = |v: f64| if v.is_finite() { v } else { f64::MAX };
        Ok(Verdict::new(
            passed,
            &[
                ("endomorphism", errs[2].0),
                ("covariant", errs[2].1),
                ("endomorphism_order", finite(endo_order)),
                ("covariant_order", finite(cov_order)),
            ],
        )
        .with_note("residuals at n, 3n/2, 2n; finite orders use the last pair"))
    }

    fn soliton_radius(&mut self, tol: f64) -> Result<Verdict> {
        let traj = self.traj;
        let a0 = traj.metrics[0].at(0)[(0, 0)];
        let mut worst = 0.0f64;
        for (k, t) in traj.times.iter().enumerate() {
            let a = traj.metrics[k].at(0)[(0, 0)];
            let exact = a0 - 4.0 * t;
            self.table.push(k, *t, "soliton_radius", "error", a - exact);
            worst = worst.max((a - exact).abs());
        }
        Ok(Verdict::new(worst <= tol, &[("endpoint_error", worst)]))
    }

    fn conjugate_pairings(&mut self, tol: f64) -> Result<Verdict> {
        let traj = self.traj;
        let back = traj.backward();
        let mut smp = self.sampler(1);
        // identity offsets keep every pairing away from zero on flat data
        let mut hs = smp.contra(&traj.chart, 0.3);
        hs.axpy(1.0, &ContraForm::from_fn(&traj.chart, |_| Mat3::identity()));
        let mut h0 = smp.form(&traj.chart, 0.3);
        h0.axpy(1.0, &CovariantForm::from_fn(&traj.chart, |_| Mat3::identity()));
        let track = integrate_conjugate_h(&back, &hs)?;
        let red = integrate_reduced_linearized(traj, &h0)?;
        let reports = [
            pairing_series("pairing_h_tilde", &back, &track, PairingTarget::Reduced(&red))?,
            pairing_series("pairing_ricci", &back, &track, PairingTarget::Ricci)?,
            pairing_series("pairing_metric_minus_ricci", &back, &track, PairingTarget::MetricMinusRicci)?,
        ];
        for r in &reports {
            drift_rows(&mut self.table, r);
        }
        let worst = reports.iter().fold(0.0f64, |m, r| m.max(r.rel_drift));
        Ok(Verdict::new(
            worst <= tol,
            &[
                ("h_tilde", reports[0].rel_drift),
                ("ricci", reports[1].rel_drift),
                ("metric_minus_ricci", reports[2].rel_drift),
            ],
        ))
    }

    fn scalar_conjugacy(&mut self, tol: f64) -> Result<Verdict> {
        let traj = self.traj;
        let back = traj.backward();
        let mut smp = self.sampler(2);
        let shift = |f: ScalarField| ScalarField { tag: f.tag, c: [f.c[0].iter().map(|v| 1.0 + v).collect()] };
        let rho0 = shift(smp.scalar(&traj.chart, 0.3));
        let varpi = shift(smp.scalar(&traj.chart, 0.3));
        let rho = integrate_heat(traj, &rho0)?;
        let w = integrate_conjugate_density(&back, &varpi)?;
        let pair = scalar_conjugacy_series(&back, &rho, &w)?;
        let mass = mass_series(&back, &w)?;
        drift_rows(&mut self.table, &pair);
        drift_rows(&mut self.table, &mass);
        Ok(Verdict::new(
            pair.rel_drift <= tol && mass.rel_drift <= tol,
            &[("pairing", pair.rel_drift), ("mass", mass.rel_drift)],
        ))
    }

    /// `tol` bounds the growth of `‖δH‖` over its initial floor; the forward
    /// contrast must grow by more than 10.
    fn divergence_free(&mut self, tol: f64) -> Result<Verdict> {
        let traj = self.traj;
        let back = traj.backward();
        let mut smp = self.sampler(3);
        let end = back.pack(0)?;
        let hs = project_contra(&end, &smp.contra(&traj.chart, 0.3))?;
        let track = integrate_conjugate_h(&back, &hs)?;
        let norms = divergence_norm_series(&back, &track)?;
        let start = traj.pack(0)?;
        let h0 = project_divergence_free(&start, &smp.form(&traj.chart, 0.3))?.transverse;
        let fwd = forward_divergence_norms(traj, &integrate_reduced_linearized(traj, &h0)?)?;
        self.table.push_series("divergence_norm", "conjugate", &norms);
        self.table.push_series("divergence_norm", "forward", &fwd);
        let growth = |s: &[(f64, f64)]| s.iter().fold(0.0f64, |m, v| m.max(v.1)) / s[0].1.max(f64::MIN_POSITIVE);
        let (g_back, g_fwd) = (growth(&norms), growth(&fwd));
        Ok(Verdict::new(
            g_back <= tol && g_fwd > 10.0,
            &[("conjugate_growth", g_back), ("forward_growth", g_fwd), ("floor", norms[0].1)],
        ))
    }

    fn monotonicity(&mut self, tol: f64) -> Result<Verdict> {
        let traj = self.traj;
        let back = traj.backward();
        let hs = self.sampler(4).contra(&traj.chart, 0.3);
        let track = integrate_conjugate_h(&back, &hs)?;
        let r = monotonicity_identity(&back, &track)?;
        self.table.push_series("monotonicity", "energy", &r.energy);
        self.table.push_series("monotonicity", "lhs", &r.lhs);
        self.table.push_series("monotonicity", "rhs", &r.rhs);
        let rel = r.max_residual / r.scale.max(f64::MIN_POSITIVE);
        let sign_ok = !r.scalar_nonnegative || r.nonincreasing;
        Ok(Verdict::new(
            rel <= tol && sign_ok,
            &[("relative_residual", rel), ("nonincreasing", f64::from(u8::from(r.nonincreasing)))],
        ))
    }

    fn kernel_theta(&mut self, tol: f64) -> Result<Verdict> {
        let traj = self.traj;
        let kc = self.cfg.kernel.clone().expect("validated");
        let back = traj.backward();
        let col = evolve_kernel_column(&back, kc.y, (0, 1), kc.sigma)?;
        let oracle = torus_theta_kernel(&traj.chart, kc.y, 0.5 * kc.sigma * kc.sigma + traj.beta_star())?;
        let last = col.track.last();
        let off = last.comp(0, 1);
        let err = off.iter().zip(&oracle.c[0]).fold(0.0f64, |m, (k, o)| m.max((k - 0.5 * o).abs()))
            / (0.5 * oracle.max_abs());
        let leak = [(0, 0), (1, 1), (2, 2), (0, 2), (1, 2)]
            .iter()
            .fold(0.0f64, |m, &(a, b)| m.max(last.comp(a, b).iter().fold(0.0f64, |x, v| x.max(v.abs()))));
        self.table.push(traj.steps(), traj.beta_star(), "kernel_theta", "relative_error", err);
        Ok(Verdict::new(err <= tol && leak == 0.0, &[("relative_error", err), ("other_components", leak)]))
    }

    fn kernel_positivity(&mut self, tol: f64) -> Result<Verdict> {
        let kc = self.cfg.kernel.clone().expect("validated");
        let back = self.traj.backward();
        let cols = evolve_kernel_slot(&back, kc.y, kc.sigma)?;
        let r = kernel_positivity(&cols, &back, 100, self.cfg.seed)?;
        self.table.push(back.steps(), self.traj.beta_star(), "kernel_positivity", "min_value", r.min_value);
        self.table.push(back.steps(), self.traj.beta_star(), "kernel_positivity", "min_diagonal", r.min_diagonal);
        let floor = -tol * r.max_value;
        Ok(Verdict::new(
            r.min_value >= floor && r.min_diagonal > 0.0,
            &[("min_value", r.min_value), ("max_value", r.max_value), ("min_diagonal", r.min_diagonal)],
        ))
    }

    /// Unit-sphere radial chain: `φ_0 = r/sin r`, static `φ_1 = φ_0`, and
    /// `φ_1(y, y)` against the spectral fit (static and expanding).
    fn parametrix_radial(&mut self, tol: f64) -> Result<Verdict> {
        let stat = radial_parametrix(&SpaceForm::static_sphere(1.0), 3.0, 3000)?;
        let mut e0 = 0.0f64;
        let mut e1 = 0.0f64;
        for (i, r) in stat.r.iter().enumerate() {
            let exact = if *r == 0.0 { 1.0 } else { r / r.sin() };
            e0 = e0.max((stat.phi0[i] - exact).abs() / exact);
            e1 = e1.max((stat.phi1[i] - stat.phi0[i]).abs() / exact);
            if i % 300 == 0 {
                self.table.push(i, *r, "parametrix_radial", "phi0", stat.phi0[i]);
                self.table.push(i, *r, "parametrix_radial", "phi1", stat.phi1[i]);
            }
        }
        let times: Vec<f64> = (0..10).map(|i| 0.005 + 0.005 * i as f64).collect();
        let fit_static = spectral_subleading_fit(false, &times)?;
        let fit_flow = spectral_subleading_fit(true, &times)?;
        let flow = SpaceForm::flowing_sphere(1.0).phi1_at_origin();
        let rel_s = (fit_static - stat.phi1[0]).abs() / stat.phi1[0].abs();
        let rel_f = (fit_flow - flow).abs() / flow.abs();
        Ok(Verdict::new(
            e0 <= tol && e1 <= tol && rel_s <= 0.01 && rel_f <= 0.01,
            &[("phi0_error", e0), ("phi1_static_error", e1), ("phi1_fit_static", rel_s), ("phi1_fit_expanding", rel_f)],
        ))
    }

    fn volterra_slope(&mut self, tol: f64) -> Result<Verdict> {
        let kc = self.cfg.kernel.clone().expect("validated");
        let back = self.traj.backward();
        let par = JetParametrix::from_track(&back, kc.y, 10)?;
        let times = [0.002, 0.004, 0.007, 0.01];
        let r = volterra_psi1(&par, &back, &times)?;
        self.table.push_series("volterra", "sup_psi1", &r.samples);
        Ok(Verdict::new(r.slope >= tol, &[("slope", r.slope), ("theory", r.theory)]))
    }

    fn constraint_pair(&mut self, tol: f64) -> Result<Verdict> {
        let c = self.cfg.constraint.clone().expect("validated");
        let mut data = isotropic_pair(self.traj, c.forward_scale, c.backward_scale, c.coupling)?;
        if let Some(f) = c.fault {
            data.varpi_star = data.varpi_star.scaled(f);
        }
        let tols = PairTolerances { residual: tol, ..PairTolerances::default() };
        let r = conjugated_pair_report(self.traj, &data, tols)?;
        for d in [&r.drifts.transverse, &r.drifts.ricci, &r.drifts.scalar] {
            drift_rows(&mut self.table, d);
        }
        self.table.push(0, 0.0, "constraint_residual", "forward", r.forward_residual);
        self.table.push(
            self.traj.steps(),
            self.traj.beta_star(),
            "constraint_residual",
            "backward",
            r.backward_residual,
        );
        Ok(Verdict::new(
            r.conjugated() && r.drifts_pass(),
            &[
                ("forward_residual", r.forward_residual),
                ("backward_residual", r.backward_residual),
                ("drift_h_tilde", r.drifts.transverse.rel_drift),
                ("drift_ricci", r.drifts.ricci.rel_drift),
                ("drift_scalar", r.drifts.scalar.rel_drift),
            ],
        )
        .with_note(r.verdict))
    }
}

/// Configs shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 5] = [
    ("flat_torus", include_str!("../../../scenarios/flat_torus.json")),
    ("perturbed_torus", include_str!("../../../scenarios/perturbed_torus.json")),
    ("round_soliton", include_str!("../../../scenarios/round_soliton.json")),
    ("berger", include_str!("../../../scenarios/berger.json")),
    ("constraint_demo", include_str!("../../../scenarios/constraint_demo.json")),
];

pub fn bundled() -> Result<Vec<ScenarioConfig>> {
    BUNDLED.iter().map(|(_, text)| ScenarioConfig::from_json(text)).collect()
}

pub fn bundled_by_name(name: &str) -> Option<ScenarioConfig> {
    BUNDLED.iter().find(|(n, _)| *n == name).and_then(|(_, t)| ScenarioConfig::from_json(t).ok())
}
