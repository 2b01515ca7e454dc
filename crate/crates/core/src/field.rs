//! Field containers. Components are stored one array per component; symmetric
//! 2-tensors keep the six independent entries in the order
//! `[00, 01, 02, 11, 12, 22]`.

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::chart::{BackendTag, Chart};
use crate::error::{LabError, Result};

pub type Mat3 = Matrix3<f64>;

pub const SYM: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

pub fn sym(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

/// Flat storage used by the time integrators.
pub trait Packed: Sized {
    fn tag(&self) -> BackendTag;
    fn pack(&self) -> Vec<f64>;
    fn unpack(tag: BackendTag, data: &[f64]) -> Self;
}

/// Vector-space structure used by the RK4 drivers.
pub trait Linear: Clone + Send + Sync {
    fn add_scaled(&mut self, a: f64, x: &Self);
}

impl<A: Linear, B: Linear> Linear for (A, B) {
    fn add_scaled(&mut self, a: f64, x: &Self) {
        self.0.add_scaled(a, &x.0);
        self.1.add_scaled(a, &x.1);
    }
}

impl<A: Linear, B: Linear, C: Linear> Linear for (A, B, C) {
    fn add_scaled(&mut self, a: f64, x: &Self) {
        self.0.add_scaled(a, &x.0);
        self.1.add_scaled(a, &x.1);
        self.2.add_scaled(a, &x.2);
    }
}

pub(crate) fn ensure_same(a: BackendTag, b: BackendTag, what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(LabError::BackendMismatch(format!("{what}: {a:?} vs {b:?}")))
    }
}

fn split_flat<const K: usize>(data: &[f64]) -> [Vec<f64>; K] {
    let n = data.len() / K;
    std::array::from_fn(|i| data[i * n..(i + 1) * n].to_vec())
}

macro_rules! component_field {
    ($name:ident, $k:expr) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            pub tag: BackendTag,
            pub c: [Vec<f64>; $k],
        }

        impl $name {
            pub fn zeros(chart: &Chart) -> Self {
                Self { tag: chart.tag(), c: std::array::from_fn(|_| vec![0.0; chart.npts()]) }
            }

            pub fn npts(&self) -> usize {
                self.c[0].len()
            }

            pub fn axpy(&mut self, a: f64, x: &Self) {
                for (u, v) in self.c.iter_mut().zip(&x.c) {
                    for (p, q) in u.iter_mut().zip(v) {
                        *p += a * q;
                    }
                }
            }

            pub fn scaled(&self, a: f64) -> Self {
                let mut out = self.clone();
                for u in out.c.iter_mut() {
                    for p in u.iter_mut() {
                        *p *= a;
                    }
                }
                out
            }

            pub fn sub(&self, x: &Self) -> Self {
                let mut out = self.clone();
                out.axpy(-1.0, x);
                out
            }

            pub fn max_abs(&self) -> f64 {
                self.c.iter().flat_map(|u| u.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
            }

            pub fn is_finite(&self) -> bool {
                self.c.iter().all(|u| u.iter().all(|v| v.is_finite()))
            }
        }

        impl Linear for $name {
            fn add_scaled(&mut self, a: f64, x: &Self) {
                self.axpy(a, x);
            }
        }

        impl Packed for $name {
            fn tag(&self) -> BackendTag {
                self.tag
            }
            fn pack(&self) -> Vec<f64> {
                self.c.concat()
            }
            fn unpack(tag: BackendTag, data: &[f64]) -> Self {
                Self { tag, c: split_flat::<$k>(data) }
            }
        }
    };
}

macro_rules! sym2_field {
    ($name:ident) => {
        component_field!($name, 6);

        impl $name {
            /// Builds the field pointwise; the symmetric part of `f(p)` is stored.
            pub fn from_fn<F: Fn(usize) -> Mat3 + Sync + Send>(chart: &Chart, f: F) -> Self {
                let vals: Vec<Mat3> = (0..chart.npts()).into_par_iter().map(f).collect();
                Self::from_mats(chart.tag(), &vals)
            }

            pub fn from_mats(tag: BackendTag, vals: &[Mat3]) -> Self {
                let c = std::array::from_fn(|s| {
                    let (i, j) = SYM[s];
                    vals.iter().map(|m| 0.5 * (m[(i, j)] + m[(j, i)])).collect()
                });
                Self { tag, c }
            }

            pub fn at(&self, p: usize) -> Mat3 {
                let c = &self.c;
                Mat3::new(c[0][p], c[1][p], c[2][p], c[1][p], c[3][p], c[4][p], c[2][p], c[4][p], c[5][p])
            }

            pub fn mats(&self) -> Vec<Mat3> {
                (0..self.npts()).into_par_iter().map(|p| self.at(p)).collect()
            }

            pub fn comp(&self, i: usize, j: usize) -> &[f64] {
                &self.c[sym(i, j)]
            }
        }
    };
}

sym2_field!(MetricField);
sym2_field!(CovariantForm);
sym2_field!(ContraForm);
component_field!(CoVectorField, 3);
component_field!(ScalarField, 1);
component_field!(FramePack, 9);

impl MetricField {
    pub fn flat(chart: &Chart) -> Self {
        Self::from_fn(chart, |_| Mat3::identity())
    }

    pub fn as_form(&self) -> CovariantForm {
        CovariantForm { tag: self.tag, c: self.c.clone() }
    }

    pub fn from_form(h: &CovariantForm) -> Self {
        Self { tag: h.tag, c: h.c.clone() }
    }

    /// Smallest eigenvalue over all points.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.npts())
            .into_par_iter()
            .map(|p| self.at(p).symmetric_eigenvalues().min())
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Rejects metrics whose smallest eigenvalue falls below `1e-8`.
    pub fn check_admissible(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(LabError::Domain("metric has non-finite components".into()));
        }
        let m = self.min_eigenvalue();
        if m < 1e-8 {
            return Err(LabError::Domain(format!("metric not positive-definite (min eigenvalue {m:.3e})")));
        }
        Ok(())
    }
}

impl ScalarField {
    pub fn from_fn<F: Fn(usize) -> f64 + Sync + Send>(chart: &Chart, f: F) -> Self {
        Self { tag: chart.tag(), c: [(0..chart.npts()).into_par_iter().map(f).collect()] }
    }

    pub fn constant(chart: &Chart, v: f64) -> Self {
        Self { tag: chart.tag(), c: [vec![v; chart.npts()]] }
    }

    pub fn values(&self) -> &[f64] {
        &self.c[0]
    }
}

impl CoVectorField {
    pub fn from_fn<F: Fn(usize) -> [f64; 3] + Sync + Send>(chart: &Chart, f: F) -> Self {
        let vals: Vec<[f64; 3]> = (0..chart.npts()).into_par_iter().map(f).collect();
        Self { tag: chart.tag(), c: std::array::from_fn(|a| vals.iter().map(|v| v[a]).collect()) }
    }

    pub fn at(&self, p: usize) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.c[0][p], self.c[1][p], self.c[2][p])
    }
}

impl FramePack {
    /// Frame `ι^k_μ`, stored at component `3k + μ`; column `μ` is the `μ`-th frame vector.
    pub fn from_fn<F: Fn(usize) -> Mat3 + Sync + Send>(chart: &Chart, f: F) -> Self {
        let vals: Vec<Mat3> = (0..chart.npts()).into_par_iter().map(f).collect();
        Self { tag: chart.tag(), c: std::array::from_fn(|s| vals.iter().map(|m| m[(s / 3, s % 3)]).collect()) }
    }

    pub fn at(&self, p: usize) -> Mat3 {
        Mat3::from_fn(|k, mu| self.c[3 * k + mu][p])
    }

    /// Coframe `ι^α_a`: the pointwise inverse matrix.
    pub fn coframe(&self, p: usize) -> Option<Mat3> {
        self.at(p).try_inverse()
    }
}
