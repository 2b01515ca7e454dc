//! Charts: the periodic grid on the 3-torus and the left-invariant frame on SU(2).
//!
//! Both expose the same frame calculus. A chart supplies the derivative of a
//! component array along each frame vector `E_i`, the structure constants
//! `c_ij^k` of `[E_i, E_j] = c_ij^k E_k`, and the reference cell measure.
//! Everything else (connection, curvature, Laplacians) is written once in
//! [`crate::geom`] on top of this interface.

use serde::{Deserialize, Serialize};

use crate::torus::{GridChart, Scheme};

pub type Structure = [[[f64; 3]; 3]; 3];

/// Total volume of the unit round 3-sphere.
pub const UNIT_S3_VOLUME: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendTag {
    Torus { n: usize, l: f64, scheme: Scheme },
    Milnor,
}

#[derive(Clone, Debug)]
pub enum Chart {
    Torus(GridChart),
    /// One point: left-invariant fields are constant, frame derivatives vanish.
    Milnor,
}

impl Chart {
    pub fn tag(&self) -> BackendTag {
        match self {
            Chart::Torus(g) => BackendTag::Torus { n: g.n(), l: g.l(), scheme: g.scheme() },
            Chart::Milnor => BackendTag::Milnor,
        }
    }

    pub fn npts(&self) -> usize {
        match self {
            Chart::Torus(g) => g.npts(),
            Chart::Milnor => 1,
        }
    }

    pub fn grid(&self) -> Option<&GridChart> {
        match self {
            Chart::Torus(g) => Some(g),
            Chart::Milnor => None,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        matches!(self, Chart::Milnor)
    }

    /// `E_axis f`.
    pub fn d(&self, f: &[f64], axis: usize) -> Vec<f64> {
        match self {
            Chart::Torus(g) => g.derivative(f, axis, 1),
            Chart::Milnor => vec![0.0; f.len()],
        }
    }

    /// Symmetrized second derivative `½(E_a E_b + E_b E_a) f`.
    pub fn dd(&self, f: &[f64], a: usize, b: usize) -> Vec<f64> {
        match self {
            Chart::Torus(g) => g.mixed(f, a, b),
            Chart::Milnor => vec![0.0; f.len()],
        }
    }

    /// `c[i][j][k] = c_ij^k`. Zero for coordinate frames, `2 ε_ijk` on SU(2).
    pub fn structure(&self) -> Structure {
        let mut c = [[[0.0; 3]; 3]; 3];
        if let Chart::Milnor = self {
            for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
                c[i][j][k] = 2.0;
                c[j][i][k] = -2.0;
            }
        }
        c
    }

    pub fn has_structure(&self) -> bool {
        matches!(self, Chart::Milnor)
    }

    /// `∫ f` against the reference measure: `h³ Σ f` on the grid, `2π² f` on SU(2).
    pub fn cell_sum(&self, f: &[f64]) -> f64 {
        match self {
            Chart::Torus(g) => g.cell_sum(f),
            Chart::Milnor => UNIT_S3_VOLUME * f[0],
        }
    }
}
