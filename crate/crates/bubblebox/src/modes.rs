//! The seven-dimensional space of rigid-plus-dilation velocity modes —
//! translation V, rotation ω, dilation rate Λ — and the ball-moment
//! projections onto it.
//!
//! A mode evaluates as `V + ω × (x − x_c) + (Λ/3)(x − x_c)`; Λ is stored so
//! that `Λ/3 = Ṙ/R`, and the projection coefficients are fixed by the exact
//! ball moments `∫_B dy = 4πR³/3` and `∫_B |y|² dy = 4πR⁵/5`, which makes
//! "project after evaluate" the identity up to quadrature error. The
//! penalization term lives and dies by that reproduction property.

use serde::{Deserialize, Serialize};

use crate::grid::{BoxDomain, ScalarField, VectorField};
use crate::{SimError, SimResult};

/// Element of the mode space: translation, rotation, dilation rate. The
/// anchor point x_c is supplied at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeVector {
    pub v: [f64; 3],
    pub omega: [f64; 3],
    pub lambda: f64,
}

impl ModeVector {
    pub const ZERO: ModeVector = ModeVector {
        v: [0.0; 3],
        omega: [0.0; 3],
        lambda: 0.0,
    };

    pub fn is_finite(&self) -> bool {
        self.v.iter().all(|c| c.is_finite())
            && self.omega.iter().all(|c| c.is_finite())
            && self.lambda.is_finite()
    }
}

/// Evaluate a mode at a point: `V + ω × (x − x_c) + (Λ/3)(x − x_c)`.
pub fn eval_mode(mv: &ModeVector, x_c: [f64; 3], x: [f64; 3]) -> [f64; 3] {
    let d = [x[0] - x_c[0], x[1] - x_c[1], x[2] - x_c[2]];
    let w = mv.omega;
    let third = mv.lambda / 3.0;
    [
        mv.v[0] + w[1] * d[2] - w[2] * d[1] + third * d[0],
        mv.v[1] + w[2] * d[0] - w[0] * d[2] + third * d[1],
        mv.v[2] + w[0] * d[1] - w[1] * d[0] + third * d[2],
    ]
}

/// Sample a mode as a grid field over the whole domain.
pub fn mode_field(mv: &ModeVector, x_c: [f64; 3], dom: &BoxDomain) -> VectorField {
    VectorField::from_fn(dom, |x| eval_mode(mv, x_c, x))
}

/// The three χ-weighted moments every projection needs:
/// `∫χu`, `∫χ(y−x_c)×u`, `∫χ(y−x_c)·u`.
fn chi_moments(
    chi: &ScalarField,
    u: &VectorField,
    x_c: [f64; 3],
) -> ([f64; 3], [f64; 3], f64) {
    assert_eq!(
        chi.domain, u.domain,
        "projection fields must share one domain"
    );
    let dom = &chi.domain;
    let vol = dom.cell_volume();
    let mut m0 = [0.0f64; 3];
    let mut m_cross = [0.0f64; 3];
    let mut m_dot = 0.0f64;
    let mut idx = 0;
    for k in 0..dom.resolution[2] {
        for j in 0..dom.resolution[1] {
            for i in 0..dom.resolution[0] {
                let w = chi.values[idx];
                if w != 0.0 {
                    let y = dom.cell_center(i, j, k);
                    let d = [y[0] - x_c[0], y[1] - x_c[1], y[2] - x_c[2]];
                    let v = u.values[idx];
                    m0[0] += w * v[0];
                    m0[1] += w * v[1];
                    m0[2] += w * v[2];
                    m_cross[0] += w * (d[1] * v[2] - d[2] * v[1]);
                    m_cross[1] += w * (d[2] * v[0] - d[0] * v[2]);
                    m_cross[2] += w * (d[0] * v[1] - d[1] * v[0]);
                    m_dot += w * (d[0] * v[0] + d[1] * v[1] + d[2] * v[2]);
                }
                idx += 1;
            }
        }
    }
    (
        [m0[0] * vol, m0[1] * vol, m0[2] * vol],
        [m_cross[0] * vol, m_cross[1] * vol, m_cross[2] * vol],
        m_dot * vol,
    )
}

/// Project a velocity field onto the mode space over the ball carried by χ:
/// `V = 3/(4πR³) ∫χu`, `ω = 15/(8πR⁵) ∫χ(y−x_c)×u`,
/// `Λ = 3·[5/(4πR⁵) ∫χ(y−x_c)·u]`.
pub fn project(
    chi: &ScalarField,
    u: &VectorField,
    r: f64,
    x_c: [f64; 3],
) -> SimResult<ModeVector> {
    if !(r > 0.0) {
        return Err(SimError::Domain(format!(
            "mode projection requires R > 0, got {r}"
        )));
    }
    let pi = std::f64::consts::PI;
    let (m0, m_cross, m_dot) = chi_moments(chi, u, x_c);
    let cv = 3.0 / (4.0 * pi * r.powi(3));
    let cw = 15.0 / (8.0 * pi * r.powi(5));
    let cl = 15.0 / (4.0 * pi * r.powi(5));
    Ok(ModeVector {
        v: [cv * m0[0], cv * m0[1], cv * m0[2]],
        omega: [cw * m_cross[0], cw * m_cross[1], cw * m_cross[2]],
        lambda: cl * m_dot,
    })
}

/// Rotation-free projection: identical V and Λ integrals, ω forced to zero.
/// This is the variant that drives bubble transport.
pub fn project_no_rotation(
    chi: &ScalarField,
    u: &VectorField,
    r: f64,
    x_c: [f64; 3],
) -> SimResult<ModeVector> {
    let mut mv = project(chi, u, r, x_c)?;
    mv.omega = [0.0; 3];
    Ok(mv)
}
