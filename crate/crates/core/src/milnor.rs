//! Left-invariant geometry on SU(2) in a Milnor frame.
//!
//! The frame satisfies `[e_i, e_j] = 2 ε_ijk e_k`. With this normalization the
//! metric `diag(1, 1, 1)` is the unit round 3-sphere (`Ric = 2g`, volume `2π²`),
//! and every anchor value in the crate depends on it.
//!
//! Left-invariant tensors are constant in the frame, so the generic frame
//! calculus in [`crate::geom`] applies on a one-point [`Chart::Milnor`]. This
//! module adds the closed-form curvature of diagonal metrics and an independent
//! algebraic route to the Laplacians, used to cross-check the generic code.

use serde::{Deserialize, Serialize};

use crate::chart::Chart;
use crate::error::{LabError, Result};
use crate::field::{ContraForm, CovariantForm, Mat3, MetricField};
use crate::geom::{compute_curvature, riemann_from_ricci, CurvaturePack};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilnorMetric {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Covariant,
    Contravariant,
}

/// Diagonal frame components of a left-invariant symmetric 2-tensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilnorForm {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub variance: Variance,
}

impl MilnorMetric {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if [a, b, c].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(Self { a, b, c })
        } else {
            Err(LabError::Domain(format!("Milnor metric ({a}, {b}, {c}) must be positive")))
        }
    }

    pub fn round(scale: f64) -> Result<Self> {
        Self::new(scale, scale, scale)
    }

    pub fn diag(&self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn field(&self) -> MetricField {
        MetricField::from_fn(&Chart::Milnor, |_| Mat3::from_diagonal(&self.diag().into()))
    }

    /// Reads back a diagonal metric; `None` if the off-diagonal part exceeds `tol`.
    pub fn from_field(g: &MetricField, tol: f64) -> Option<Self> {
        let m = g.at(0);
        if m[(0, 1)].abs().max(m[(0, 2)].abs()).max(m[(1, 2)].abs()) > tol {
            return None;
        }
        Self::new(m[(0, 0)], m[(1, 1)], m[(2, 2)]).ok()
    }

    pub fn volume(&self) -> f64 {
        crate::chart::UNIT_S3_VOLUME * (self.a * self.b * self.c).sqrt()
    }

    /// Frame components `Ric_ii = 2[A_i² − (A_j − A_k)²] / (A_j A_k)`.
    pub fn ricci_closed_form(&self) -> [f64; 3] {
        let d = self.diag();
        std::array::from_fn(|i| {
            let (ai, aj, ak) = (d[i], d[(i + 1) % 3], d[(i + 2) % 3]);
            2.0 * (ai * ai - (aj - ak) * (aj - ak)) / (aj * ak)
        })
    }

    pub fn scalar_closed_form(&self) -> f64 {
        let r = self.ricci_closed_form();
        r[0] / self.a + r[1] / self.b + r[2] / self.c
    }
}

impl MilnorForm {
    pub fn covariant(p: f64, q: f64, s: f64) -> Self {
        Self { p, q, s, variance: Variance::Covariant }
    }

    pub fn contravariant(p: f64, q: f64, s: f64) -> Self {
        Self { p, q, s, variance: Variance::Contravariant }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&nalgebra::Vector3::new(self.p, self.q, self.s))
    }

    pub fn covariant_field(&self) -> CovariantForm {
        assert_eq!(self.variance, Variance::Covariant);
        CovariantForm::from_fn(&Chart::Milnor, |_| self.matrix())
    }

    pub fn contra_field(&self) -> ContraForm {
        assert_eq!(self.variance, Variance::Contravariant);
        ContraForm::from_fn(&Chart::Milnor, |_| self.matrix())
    }

    fn from_matrix(m: &Mat3, variance: Variance) -> Self {
        Self { p: m[(0, 0)], q: m[(1, 1)], s: m[(2, 2)], variance }
    }
}

/// Curvature with the closed-form Ricci tensor and the 3D Riemann reconstruction;
/// the connection comes from the Koszul formula with the SU(2) structure constants.
pub fn milnor_curvature(m: &MilnorMetric) -> Result<CurvaturePack> {
    let g = m.field();
    let mut pack = compute_curvature(&Chart::Milnor, &g)?;
    let ric = Mat3::from_diagonal(&m.ricci_closed_form().into());
    let r = m.scalar_closed_form();
    let gm = g.at(0);
    pack.ricci = CovariantForm::from_fn(&Chart::Milnor, |_| ric);
    pack.scalar.c[0][0] = r;
    pack.einstein = CovariantForm::from_fn(&Chart::Milnor, |_| ric - 0.5 * r * gm);
    let riem = riemann_from_ricci(&gm, &ric, r);
    pack.riemann = Some(riem.iter().map(|v| vec![*v]).collect());
    Ok(pack)
}

/// Rough and Lichnerowicz Laplacians of a left-invariant form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MilnorLaplacians {
    pub rough: MilnorForm,
    pub lichnerowicz: MilnorForm,
}

/// Direct algebraic evaluation: on constant tensors `∇_{e_i}` acts as the
/// derivation `−Γ`, so `Δh = g^{ij}(∇_i∇_j h − Γ^m_ij ∇_m h)` needs no
/// derivatives; curvature terms use the closed-form Ricci tensor and the 3D
/// Riemann reconstruction. Contravariant input is lowered, processed and raised.
/// Off-diagonal output is dropped; for diagonal input on a diagonal metric it
/// vanishes identically.
pub fn milnor_laplacians(m: &MilnorMetric, form: &MilnorForm) -> Result<MilnorLaplacians> {
    let pack = milnor_curvature(m)?;
    let gm = pack.metric.at(0);
    let gi = pack.ginv[0];
    let h = match form.variance {
        Variance::Covariant => form.matrix(),
        Variance::Contravariant => gm * form.matrix() * gm,
    };
    let gam = |k: usize, i: usize, j: usize| pack.gamma(0, k, i, j);
    let t: [Mat3; 3] = std::array::from_fn(|j| {
        Mat3::from_fn(|a, b| -(0..3).map(|x| gam(x, j, a) * h[(x, b)] + gam(x, j, b) * h[(a, x)]).sum::<f64>())
    });
    let mut rough = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let w = gi[(i, j)];
            if w == 0.0 {
                continue;
            }
            rough += w * Mat3::from_fn(|a, b| {
                let mut v = 0.0;
                for x in 0..3 {
                    v -= gam(x, i, j) * t[x][(a, b)] + gam(x, i, a) * t[j][(x, b)] + gam(x, i, b) * t[j][(a, x)];
                }
                v
            });
        }
    }
    let ric = pack.ricci.at(0);
    let riem = pack.riemann.as_ref().expect("full pack");
    let hup = gi * h * gi;
    let rm = Mat3::from_fn(|a, b| {
        let mut v = 0.0;
        for s in 0..3 {
            for tt in 0..3 {
                v += riem[27 * a + 9 * s + 3 * b + tt][0] * hup[(s, tt)];
            }
        }
        v
    });
    let lich = rough - ric * gi * h - h * gi * ric + 2.0 * rm;
    let out = |x: Mat3| match form.variance {
        Variance::Covariant => MilnorForm::from_matrix(&x, Variance::Covariant),
        Variance::Contravariant => MilnorForm::from_matrix(&(gi * x * gi), Variance::Contravariant),
    };
    Ok(MilnorLaplacians { rough: out(rough), lichnerowicz: out(lich) })
}
