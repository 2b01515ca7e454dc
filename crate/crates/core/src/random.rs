//! Seeded band-limited random fields. On the torus every component is a
//! trigonometric polynomial with wavenumbers `|k_a| ≤ kmax` and amplitudes
//! decaying like `1/(1 + |k|²)`; on the Milnor backend fields are constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chart::Chart;
use crate::field::{CoVectorField, ContraForm, CovariantForm, Mat3, ScalarField};

pub const DEFAULT_SEED: u64 = 20_240_611;

pub struct FieldSampler {
    rng: ChaCha8Rng,
    kmax: i32,
}

impl FieldSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), kmax: 2 }
    }

    pub fn with_kmax(seed: u64, kmax: i32) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), kmax }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen_range(-1.0..1.0)
    }

    pub fn vector(&mut self) -> [f64; 3] {
        [self.uniform(), self.uniform(), self.uniform()]
    }

    /// One band-limited component with zero mean, scaled so `max ≈ amp`.
    fn component(&mut self, chart: &Chart, amp: f64) -> Vec<f64> {
        let Some(grid) = chart.grid() else {
            return vec![amp * self.uniform()];
        };
        let k = self.kmax;
        let mut modes = Vec::new();
        for a in -k..=k {
            for b in -k..=k {
                for c in -k..=k {
                    if (a, b, c) <= (0, 0, 0) {
                        continue;
                    }
                    let w = 1.0 / (1.0 + (a * a + b * b + c * c) as f64);
                    modes.push(([a as f64, b as f64, c as f64], w * self.uniform(), w * self.uniform()));
                }
            }
        }
        let k0 = 2.0 * std::f64::consts::PI / grid.l();
        let norm: f64 = modes.iter().map(|(_, c, s)| c.abs() + s.abs()).sum();
        let scale = amp / norm.max(1e-300);
        grid.sample(|x| {
            modes
                .iter()
                .map(|(kv, c, s)| {
                    let ph = k0 * (kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2]);
                    c * ph.cos() + s * ph.sin()
                })
                .sum::<f64>()
                * scale
        })
    }

    pub fn scalar(&mut self, chart: &Chart, amp: f64) -> ScalarField {
        ScalarField { tag: chart.tag(), c: [self.component(chart, amp)] }
    }

    pub fn covector(&mut self, chart: &Chart, amp: f64) -> CoVectorField {
        CoVectorField { tag: chart.tag(), c: std::array::from_fn(|_| self.component(chart, amp)) }
    }

    pub fn form(&mut self, chart: &Chart, amp: f64) -> CovariantForm {
        CovariantForm { tag: chart.tag(), c: std::array::from_fn(|_| self.component(chart, amp)) }
    }

    pub fn contra(&mut self, chart: &Chart, amp: f64) -> ContraForm {
        ContraForm { tag: chart.tag(), c: std::array::from_fn(|_| self.component(chart, amp)) }
    }

    pub fn matrix(&mut self) -> Mat3 {
        let m = Mat3::from_fn(|_, _| self.uniform());
        0.5 * (m + m.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::{torus_chart, Scheme};

    #[test]
    fn same_seed_same_field() {
        let chart = torus_chart(8, 1.0, Scheme::Fd4).unwrap();
        let a = FieldSampler::new(7).form(&chart, 0.3);
        let b = FieldSampler::new(7).form(&chart, 0.3);
        let c = FieldSampler::new(8).form(&chart, 0.3);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.max_abs() <= 0.3 + 1e-12);
    }

    #[test]
    fn torus_fields_have_zero_mean() {
        let chart = torus_chart(12, 2.0, Scheme::Fd4).unwrap();
        let f = FieldSampler::new(1).scalar(&chart, 1.0);
        assert!(chart.cell_sum(&f.c[0]).abs() < 1e-12);
    }
}
