//! Hamiltonian-type constraint `R − |s|² + (tr s)² = C f` at the two ends of a
//! Ricci flow window, and the pairing identities that link the forward data
//! `(h, ϱ)` with the backward data `(H*, ϖ*)`.

use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::conservation::{pairing_series, scalar_conjugacy_series, DriftReport, PairingTarget};
use crate::error::{LabError, Result};
use crate::field::{ContraForm, CovariantForm, MetricField, ScalarField};
use crate::flows::{
    integrate_conjugate_density, integrate_conjugate_h, integrate_heat, integrate_reduced_linearized, FlowTrajectory,
};
use crate::geom::{compute_curvature_lite, CurvaturePack};

/// The second fundamental form slot, covariant on the forward end and
/// contravariant on the backward end.
#[derive(Clone, Debug)]
pub enum SecondForm {
    Covariant(CovariantForm),
    Contravariant(ContraForm),
}

impl SecondForm {
    fn tag(&self) -> crate::chart::BackendTag {
        match self {
            SecondForm::Covariant(h) => h.tag,
            SecondForm::Contravariant(h) => h.tag,
        }
    }

    /// `(|s|², tr s)` pointwise, both taken with the pack's metric.
    fn invariants(&self, pack: &CurvaturePack) -> (Vec<f64>, Vec<f64>) {
        let low = match self {
            SecondForm::Covariant(h) => h.clone(),
            SecondForm::Contravariant(h) => pack.lower(h),
        };
        (pack.norm2_form(&low), pack.trace(&low))
    }
}

#[derive(Clone, Debug)]
pub struct ConstraintTriple {
    pub g: MetricField,
    pub s: SecondForm,
    pub f: ScalarField,
    pub coupling: f64,
}

impl ConstraintTriple {
    pub fn new(g: MetricField, s: SecondForm, f: ScalarField, coupling: f64) -> Result<Self> {
        if s.tag() != g.tag || f.tag != g.tag {
            return Err(LabError::BackendMismatch("constraint triple mixes backends".into()));
        }
        if !coupling.is_finite() {
            return Err(LabError::Domain("coupling constant must be finite".into()));
        }
        Ok(Self { g, s, f, coupling })
    }

    pub fn evaluate(&self, chart: &Chart) -> Result<ScalarField> {
        let pack = compute_curvature_lite(chart, &self.g)?;
        evaluate_constraint(&pack, &self.s, &self.f, self.coupling)
    }
}

/// Free part `R − |s|² + (tr s)²` of the constraint.
fn constraint_source(pack: &CurvaturePack, s: &SecondForm) -> Result<Vec<f64>> {
    if s.tag() != pack.metric.tag {
        return Err(LabError::BackendMismatch("second form and metric live on different backends".into()));
    }
    let (n2, tr) = s.invariants(pack);
    Ok(pack.scalar.c[0].iter().zip(n2.iter().zip(&tr)).map(|(r, (n, t))| r - n + t * t).collect())
}

/// `𝒞 = R − |s|² + (tr s)² − C f` pointwise, with `R`, norms and trace from `pack`.
pub fn evaluate_constraint(
    pack: &CurvaturePack,
    s: &SecondForm,
    f: &ScalarField,
    coupling: f64,
) -> Result<ScalarField> {
    if f.tag != pack.metric.tag {
        return Err(LabError::BackendMismatch("density and metric live on different backends".into()));
    }
    let src = constraint_source(pack, s)?;
    let c = src.iter().zip(&f.c[0]).map(|(a, b)| a - coupling * b).collect();
    Ok(ScalarField { tag: f.tag, c: [c] })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensitySolution {
    #[serde(skip)]
    pub density: Option<ScalarField>,
    /// `∫ f dμ`.
    pub mass: f64,
    /// The coupling for which the same source has unit mass.
    pub normalizing_coupling: f64,
    pub changes_sign: bool,
}

/// Solves the constraint pointwise for the density at fixed `C`. Unit mass is
/// not enforced: it would fix `C` as well, so the normalizing `C` is reported.
pub fn solve_conjugate_density(pack: &CurvaturePack, s: &SecondForm, coupling: f64) -> Result<DensitySolution> {
    if coupling == 0.0 || !coupling.is_finite() {
        return Err(LabError::Domain("coupling constant must be nonzero".into()));
    }
    let src = constraint_source(pack, s)?;
    let f: Vec<f64> = src.iter().map(|v| v / coupling).collect();
    let mass = pack.integrate(&f);
    let changes_sign = f.iter().any(|v| *v < 0.0) && f.iter().any(|v| *v > 0.0);
    Ok(DensitySolution {
        density: Some(ScalarField { tag: pack.metric.tag, c: [f] }),
        mass,
        normalizing_coupling: coupling * mass,
        changes_sign,
    })
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PairTolerances {
    /// Largest admissible `max |𝒞|` at either end.
    pub residual: f64,
    /// Relative drift bound for the three pairings.
    pub drift: f64,
}

impl Default for PairTolerances {
    fn default() -> Self {
        Self { residual: 1e-12, drift: 1e-8 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairDrifts {
    pub transverse: DriftReport,
    pub ricci: DriftReport,
    pub scalar: DriftReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConjugatedPairReport {
    pub forward_residual: f64,
    pub backward_residual: f64,
    pub drifts: PairDrifts,
    pub tolerances: PairTolerances,
    pub verdict: String,
}

pub const CONJUGATED: &str = "conjugated";
pub const NOT_CONJUGATED: &str = "not conjugated";

impl ConjugatedPairReport {
    pub fn conjugated(&self) -> bool {
        self.verdict == CONJUGATED
    }

    pub fn drifts_pass(&self) -> bool {
        [&self.drifts.transverse, &self.drifts.ricci, &self.drifts.scalar].iter().all(|d| d.pass == Some(true))
    }
}

/// End data of a window: `(h, ϱ_0)` at `β = 0` and `(H*, ϖ*)` at `β = β*`.
#[derive(Clone, Debug)]
pub struct PairData {
    pub h: CovariantForm,
    pub rho0: ScalarField,
    pub h_star: ContraForm,
    pub varpi_star: ScalarField,
    pub coupling: f64,
}

fn max_abs(f: &ScalarField) -> f64 {
    f.c[0].iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Checks both end-time constraints, then runs the reduced linearized and heat
/// flows forward and the two conjugate flows backward and reports the three
/// pairing drifts. The verdict only looks at the end-time residuals.
pub fn conjugated_pair_report(
    traj: &FlowTrajectory,
    data: &PairData,
    tol: PairTolerances,
) -> Result<ConjugatedPairReport> {
    let back = traj.backward();
    let start = traj.pack(0)?;
    let end = back.pack(0)?;
    let fwd = evaluate_constraint(&start, &SecondForm::Covariant(data.h.clone()), &data.rho0, data.coupling)?;
    let bwd =
        evaluate_constraint(&end, &SecondForm::Contravariant(data.h_star.clone()), &data.varpi_star, data.coupling)?;
    let (forward_residual, backward_residual) = (max_abs(&fwd), max_abs(&bwd));

    let h_tilde = integrate_reduced_linearized(traj, &data.h)?;
    let h_track = integrate_conjugate_h(&back, &data.h_star)?;
    let rho = integrate_heat(traj, &data.rho0)?;
    let varpi = integrate_conjugate_density(&back, &data.varpi_star)?;
    let drifts = PairDrifts {
        transverse: pairing_series("pairing_h_tilde", &back, &h_track, PairingTarget::Reduced(&h_tilde))?
            .with_tolerance(tol.drift),
        ricci: pairing_series("pairing_ricci", &back, &h_track, PairingTarget::Ricci)?.with_tolerance(tol.drift),
        scalar: scalar_conjugacy_series(&back, &rho, &varpi)?.with_tolerance(tol.drift),
    };
    let ok = forward_residual <= tol.residual && backward_residual <= tol.residual;
    Ok(ConjugatedPairReport {
        forward_residual,
        backward_residual,
        drifts,
        tolerances: tol,
        verdict: if ok { CONJUGATED } else { NOT_CONJUGATED }.to_string(),
    })
}

/// Isotropic end data: `h = a g(0)`, `H* = b g(β*)^{-1}`, with both densities
/// solved from the constraint.
pub fn isotropic_pair(traj: &FlowTrajectory, a: f64, b: f64, coupling: f64) -> Result<PairData> {
    let start = traj.pack(0)?;
    let end = traj.backward().pack(0)?;
    let h = start.metric.as_form().scaled(a);
    let ginv = ContraForm::from_fn(&traj.chart, |p| end.ginv[p]).scaled(b);
    let rho0 = solve_conjugate_density(&start, &SecondForm::Covariant(h.clone()), coupling)?;
    let varpi = solve_conjugate_density(&end, &SecondForm::Contravariant(ginv.clone()), coupling)?;
    Ok(PairData {
        h,
        rho0: rho0.density.expect("density is always returned"),
        h_star: ginv,
        varpi_star: varpi.density.expect("density is always returned"),
        coupling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{integrate_ricci, FlowOptions};
    use crate::milnor::MilnorMetric;
    use crate::torus::{perturbed_metric, torus_chart, Scheme};

    #[test]
    fn unit_sphere_algebra() {
        let g = MilnorMetric::round(1.0).unwrap().field();
        let pack = compute_curvature_lite(&Chart::Milnor, &g).unwrap();
        let one = ScalarField::constant(&Chart::Milnor, 1.0);
        let cov = SecondForm::Covariant(g.as_form());
        assert!(evaluate_constraint(&pack, &cov, &one, 12.0).unwrap().c[0][0].abs() < 1e-12);
        let contra = SecondForm::Contravariant(ContraForm::from_fn(&Chart::Milnor, |p| pack.ginv[p]));
        let sol = solve_conjugate_density(&pack, &contra, 12.0).unwrap();
        assert!((sol.density.unwrap().c[0][0] - 1.0).abs() < 1e-12);
        assert!(!sol.changes_sign);
        // unit mass needs C = 12 Vol(S³) = 24π²
        assert!((sol.normalizing_coupling - 24.0 * std::f64::consts::PI.powi(2)).abs() < 1e-9);
        assert!(solve_conjugate_density(&pack, &contra, 0.0).is_err());
    }

    #[test]
    fn flat_torus_with_zero_data_is_trivial() {
        let chart = torus_chart(8, 1.0, Scheme::Fd4).unwrap();
        let g = MetricField::flat(&chart);
        let pack = compute_curvature_lite(&chart, &g).unwrap();
        let zero = SecondForm::Contravariant(ContraForm::zeros(&chart));
        let sol = solve_conjugate_density(&pack, &zero, 3.0).unwrap();
        assert_eq!(max_abs(sol.density.as_ref().unwrap()), 0.0);
        let t = ConstraintTriple::new(g, zero, ScalarField::zeros(&chart), 3.0).unwrap();
        assert_eq!(max_abs(&t.evaluate(&chart).unwrap()), 0.0);
    }

    #[test]
    fn perturbed_torus_round_trip() {
        let chart = torus_chart(12, 1.0, Scheme::Fd4).unwrap();
        let g = perturbed_metric(&chart, 0.05).unwrap();
        let pack = compute_curvature_lite(&chart, &g).unwrap();
        let hs = crate::random::FieldSampler::new(7).contra(&chart, 0.4);
        let s = SecondForm::Contravariant(hs);
        let sol = solve_conjugate_density(&pack, &s, 2.5).unwrap();
        let res = evaluate_constraint(&pack, &s, sol.density.as_ref().unwrap(), 2.5).unwrap();
        assert!(max_abs(&res) < 1e-12, "{:e}", max_abs(&res));
        let mixed = ConstraintTriple::new(g, s, ScalarField::zeros(&Chart::Milnor), 1.0);
        assert!(matches!(mixed, Err(LabError::BackendMismatch(_))));
    }

    #[test]
    fn milnor_pair_is_conjugated_and_fault_is_caught() {
        let m = MilnorMetric::new(1.0, 1.0, 1.0).unwrap();
        let traj = integrate_ricci(&Chart::Milnor, &m.field(), FlowOptions::new(0.05, 1e-3)).unwrap();
        let data = isotropic_pair(&traj, 0.3, 0.7, 12.0).unwrap();
        let rep = conjugated_pair_report(&traj, &data, PairTolerances::default()).unwrap();
        assert!(rep.conjugated(), "{rep:?}");
        assert!(rep.drifts_pass(), "{:?}", rep.drifts);
        let mut bad = data.clone();
        bad.varpi_star = bad.varpi_star.scaled(1.1);
        let rep = conjugated_pair_report(&traj, &bad, PairTolerances::default()).unwrap();
        assert_eq!(rep.verdict, NOT_CONJUGATED);
        let expect = 0.1 * 12.0 * data.varpi_star.c[0][0];
        assert!((rep.backward_residual - expect).abs() < 1e-9 * expect);
        let json = serde_json::to_value(&rep).unwrap();
        for key in ["forward_residual", "backward_residual", "drifts", "verdict"] {
            assert!(json.get(key).is_some());
        }
    }
}
