//! Truncated multivariate Taylor polynomials in three variables (jets), used
//! to build the scalar parametrix near a base point.
//!
//! Coefficients are stored per monomial `s^a s^b s^c` with `a + b + c ≤ D`,
//! ordered by total degree. Products drop everything above `D`.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use crate::field::Mat3;

#[derive(Debug)]
pub struct JetSpace {
    deg: usize,
    exps: Vec<[usize; 3]>,
    lookup: Vec<usize>,
    deg_start: Vec<usize>,
}

impl JetSpace {
    pub fn new(deg: usize) -> Arc<Self> {
        let side = deg + 1;
        let mut exps = vec![];
        let mut deg_start = vec![];
        for d in 0..=deg {
            deg_start.push(exps.len());
            for a in (0..=d).rev() {
                for b in (0..=d - a).rev() {
                    exps.push([a, b, d - a - b]);
                }
            }
        }
        deg_start.push(exps.len());
        let mut lookup = vec![usize::MAX; side * side * side];
        for (i, e) in exps.iter().enumerate() {
            lookup[(e[0] * side + e[1]) * side + e[2]] = i;
        }
        Arc::new(Self { deg, exps, lookup, deg_start })
    }

    pub fn degree(&self) -> usize {
        self.deg
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[[usize; 3]] {
        &self.exps
    }

    pub fn index(&self, e: [usize; 3]) -> Option<usize> {
        if e[0] + e[1] + e[2] > self.deg {
            return None;
        }
        let side = self.deg + 1;
        Some(self.lookup[(e[0] * side + e[1]) * side + e[2]])
    }

    /// Index range of the monomials of total degree `d`.
    pub fn degree_range(&self, d: usize) -> std::ops::Range<usize> {
        self.deg_start[d]..self.deg_start[d + 1]
    }
}

#[derive(Clone, Debug)]
pub struct Jet {
    space: Arc<JetSpace>,
    pub c: Vec<f64>,
}

impl Jet {
    pub fn zero(space: &Arc<JetSpace>) -> Self {
        Self { space: space.clone(), c: vec![0.0; space.len()] }
    }

    pub fn constant(space: &Arc<JetSpace>, v: f64) -> Self {
        let mut j = Self::zero(space);
        j.c[0] = v;
        j
    }

    /// The coordinate `s^i`.
    pub fn coord(space: &Arc<JetSpace>, i: usize) -> Self {
        let mut j = Self::zero(space);
        if space.deg >= 1 {
            let mut e = [0; 3];
            e[i] = 1;
            j.c[space.index(e).expect("degree ≥ 1")] = 1.0;
        }
        j
    }

    pub fn from_coefficients(space: &Arc<JetSpace>, c: Vec<f64>) -> Self {
        assert_eq!(c.len(), space.len());
        Self { space: space.clone(), c }
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn value_at_origin(&self) -> f64 {
        self.c[0]
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { space: self.space.clone(), c: self.c.iter().map(|v| a * v).collect() }
    }

    pub fn axpy(&mut self, a: f64, x: &Jet) {
        for (s, v) in self.c.iter_mut().zip(&x.c) {
            *s += a * v;
        }
    }

    /// Homogeneous part of degree `d`.
    pub fn part(&self, d: usize) -> Jet {
        let mut out = Jet::zero(&self.space);
        for i in self.space.degree_range(d) {
            out.c[i] = self.c[i];
        }
        out
    }

    /// Drops all monomials of degree below `d`.
    pub fn from_degree(&self, d: usize) -> Jet {
        let mut out = self.clone();
        for v in &mut out.c[..self.space.deg_start[d.min(self.space.deg + 1)]] {
            *v = 0.0;
        }
        out
    }

    pub fn deriv(&self, axis: usize) -> Jet {
        let sp = &self.space;
        let mut out = Jet::zero(sp);
        for (i, e) in sp.exps.iter().enumerate() {
            if e[axis] == 0 || self.c[i] == 0.0 {
                continue;
            }
            let mut f = *e;
            f[axis] -= 1;
            let j = sp.index(f).expect("lower degree");
            out.c[j] += e[axis] as f64 * self.c[i];
        }
        out
    }

    pub fn eval(&self, s: [f64; 3]) -> f64 {
        let d = self.space.deg;
        let pw: Vec<[f64; 3]> = {
            let mut p = vec![[1.0; 3]; d + 1];
            for k in 1..=d {
                for a in 0..3 {
                    p[k][a] = p[k - 1][a] * s[a];
                }
            }
            p
        };
        self.space.exps.iter().zip(&self.c).map(|(e, c)| c * pw[e[0]][0] * pw[e[1]][1] * pw[e[2]][2]).sum()
    }

    /// Largest coefficient magnitude in degree `d`.
    pub fn degree_norm(&self, d: usize) -> f64 {
        self.c[self.space.degree_range(d)].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `1/f` for a jet with nonzero constant term.
    pub fn recip(&self) -> Jet {
        let f0 = self.c[0];
        assert!(f0 != 0.0, "reciprocal of a jet vanishing at the origin");
        let u = self.from_degree(1).scaled(-1.0 / f0);
        let mut term = Jet::constant(&self.space, 1.0 / f0);
        let mut acc = term.clone();
        for _ in 0..self.space.deg {
            term = &term * &u;
            acc.axpy(1.0, &term);
        }
        acc
    }

    /// `exp(f)` for a jet.
    pub fn exp(&self) -> Jet {
        let e0 = self.c[0].exp();
        let u = self.from_degree(1);
        let mut term = Jet::constant(&self.space, e0);
        let mut acc = term.clone();
        for k in 1..=self.space.deg {
            term = (&term * &u).scaled(1.0 / k as f64);
            acc.axpy(1.0, &term);
        }
        acc
    }

    /// `f^p` for a jet with positive constant term.
    pub fn powf(&self, p: f64) -> Jet {
        let f0 = self.c[0];
        assert!(f0 > 0.0, "real power of a jet needs a positive constant term");
        let u = self.from_degree(1).scaled(1.0 / f0);
        let mut term = Jet::constant(&self.space, 1.0);
        let mut acc = term.clone();
        let mut binom = 1.0;
        for k in 1..=self.space.deg {
            binom *= (p - (k - 1) as f64) / k as f64;
            term = &term * &u;
            acc.axpy(binom, &term);
        }
        acc.scaled(f0.powf(p))
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        let mut out = self.clone();
        out.axpy(1.0, o);
        out
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        let mut out = self.clone();
        out.axpy(-1.0, o);
        out
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scaled(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let sp = &self.space;
        let side = sp.deg + 1;
        let mut out = vec![0.0; sp.len()];
        for (ea, ca) in sp.exps.iter().zip(&self.c) {
            if *ca == 0.0 {
                continue;
            }
            let da = ea[0] + ea[1] + ea[2];
            let end = sp.deg_start[sp.deg - da + 1];
            for (eb, cb) in sp.exps[..end].iter().zip(&o.c[..end]) {
                if *cb == 0.0 {
                    continue;
                }
                let k = sp.lookup[((ea[0] + eb[0]) * side + ea[1] + eb[1]) * side + ea[2] + eb[2]];
                out[k] += ca * cb;
            }
        }
        Jet { space: sp.clone(), c: out }
    }
}

/// A symmetric or general 3×3 matrix of jets, row-major.
#[derive(Clone, Debug)]
pub struct JetMat(pub Vec<Jet>);

impl JetMat {
    pub fn zero(space: &Arc<JetSpace>) -> Self {
        Self((0..9).map(|_| Jet::zero(space)).collect())
    }

    pub fn constant(space: &Arc<JetSpace>, m: &Mat3) -> Self {
        Self((0..9).map(|k| Jet::constant(space, m[(k / 3, k % 3)])).collect())
    }

    pub fn get(&self, i: usize, j: usize) -> &Jet {
        &self.0[3 * i + j]
    }

    pub fn at_origin(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.get(i, j).value_at_origin())
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|j| j.scaled(a)).collect())
    }

    pub fn axpy(&mut self, a: f64, x: &JetMat) {
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            s.axpy(a, v);
        }
    }

    pub fn mul(&self, o: &JetMat) -> JetMat {
        let sp = self.0[0].space().clone();
        let mut out = JetMat::zero(&sp);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = Jet::zero(&sp);
                for k in 0..3 {
                    acc.axpy(1.0, &(self.get(i, k) * o.get(k, j)));
                }
                out.0[3 * i + j] = acc;
            }
        }
        out
    }

    pub fn det(&self) -> Jet {
        let m = |i, j| self.get(i, j);
        let c0 = &(m(1, 1) * m(2, 2)) - &(m(1, 2) * m(2, 1));
        let c1 = &(m(1, 0) * m(2, 2)) - &(m(1, 2) * m(2, 0));
        let c2 = &(m(1, 0) * m(2, 1)) - &(m(1, 1) * m(2, 0));
        let mut d = m(0, 0) * &c0;
        d.axpy(-1.0, &(m(0, 1) * &c1));
        d.axpy(1.0, &(m(0, 2) * &c2));
        d
    }

    /// Inverse via the adjugate and the reciprocal determinant.
    pub fn inverse(&self) -> JetMat {
        let m = |i: usize, j: usize| self.get(i % 3, j % 3);
        let rdet = self.det().recip();
        let mut out = JetMat::zero(self.0[0].space());
        for i in 0..3 {
            for j in 0..3 {
                // cofactor of (j, i)
                let cof = &(m(j + 1, i + 1) * m(j + 2, i + 2)) - &(m(j + 1, i + 2) * m(j + 2, i + 1));
                out.0[3 * i + j] = &cof * &rdet;
            }
        }
        out
    }
}
