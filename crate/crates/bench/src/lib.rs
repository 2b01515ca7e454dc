//! Fixtures shared by the benchmarks.

use riccilab::flows::{integrate_ricci, FlowOptions};
use riccilab::milnor::MilnorMetric;
use riccilab::torus::{perturbed_metric, torus_chart, Scheme};
use riccilab::{Chart, FlowTrajectory, MetricField};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Perturbed torus (`ε = 0.05`, `L = 2π`) at resolution `n`.
pub fn perturbed_torus(n: usize, scheme: Scheme) -> (Chart, MetricField) {
    let chart = torus_chart(n, TWO_PI, scheme).expect("valid grid");
    let g = perturbed_metric(&chart, 0.05).expect("admissible metric");
    (chart, g)
}

/// Short forward flow on the perturbed torus.
pub fn torus_flow(n: usize, scheme: Scheme, beta_star: f64, dt: f64) -> FlowTrajectory {
    let (chart, g) = perturbed_torus(n, scheme);
    integrate_ricci(&chart, &g, FlowOptions::new(beta_star, dt)).expect("stable step")
}

pub fn berger_flow(beta_star: f64, dt: f64) -> FlowTrajectory {
    let g = MilnorMetric::new(1.2, 1.0, 1.0).expect("positive axes").field();
    integrate_ricci(&Chart::Milnor, &g, FlowOptions::new(beta_star, dt)).expect("stable step")
}
