//! Bubble state, the affine translation–dilation(–rotation) map it induces,
//! mass/inertia diagnostics, and recovery of radius and center from a color
//! function.
//!
//! The bubble's mass is fixed once by the reference radius and density,
//! `m_b = (4π/3) R₀³ ρ_{b,0}`; its current density follows the incompressible
//! scaling `ρ_b = (R₀/R_b)³ ρ_{b,0}`. The grid density inside the bubble is a
//! separate field — it gets *checked* against this scaling, never overwritten.

use serde::{Deserialize, Serialize};

use crate::grid::{integrate, ScalarField};
use crate::{SimError, SimResult};

/// Center and radius of the (always spherical) bubble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleState {
    pub x_b: [f64; 3],
    pub r_b: f64,
}

/// Affine map `x ↦ a + (R/R₀)·O·(x − x₀)` carrying the reference ball onto
/// the current bubble. The rotation is stored for completeness but never
/// evolved: the transport velocity contains no rotation mode, so `O ≡ I`
/// throughout a run and angular velocity survives only as a projected
/// diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBubbleMap {
    /// Image of the reference center.
    pub translation: [f64; 3],
    /// Scale factor R/R₀ (> 0).
    pub scale: f64,
    /// Rotation matrix, row-major. Must stay orthogonal with det +1.
    pub rotation: [[f64; 3]; 3],
}

impl AffineBubbleMap {
    pub fn identity() -> Self {
        AffineBubbleMap {
            translation: [0.0; 3],
            scale: 1.0,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Map for a bubble currently at `state`, relative to reference radius
    /// `r0`; rotation stays the identity.
    pub fn from_state(state: &BubbleState, r0: f64) -> SimResult<Self> {
        if !(state.r_b > 0.0) || !(r0 > 0.0) {
            return Err(SimError::Domain(format!(
                "affine bubble map needs positive radii (R_b = {}, R0 = {r0})",
                state.r_b
            )));
        }
        Ok(AffineBubbleMap {
            translation: state.x_b,
            scale: state.r_b / r0,
            rotation: AffineBubbleMap::identity().rotation,
        })
    }

    /// ‖OᵀO − I‖_max of the stored rotation; a valid map keeps this ≤ 1e-10.
    pub fn orthogonality_defect(&self) -> f64 {
        let o = &self.rotation;
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..3 {
                let dot: f64 = (0..3).map(|k| o[k][r] * o[k][c]).sum();
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Apply the map: `a + (R/R₀)·O·(x − x₀)`.
pub fn apply_map(m: &AffineBubbleMap, x: [f64; 3], x0: [f64; 3]) -> [f64; 3] {
    let d = [x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]];
    let mut out = m.translation;
    for r in 0..3 {
        let rotated: f64 = (0..3).map(|c| m.rotation[r][c] * d[c]).sum();
        out[r] += m.scale * rotated;
    }
    out
}

/// Mass, inertia, and density diagnostics of a rigid homogeneous ball:
/// `J = (2/5) m R²` (moment of inertia), `K = (m/15) R²` (dilational
/// inertia), `ρ_b = 3m/(4πR³)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BubbleInertia {
    pub mass: f64,
    pub moment: f64,
    pub dilational: f64,
    pub rho_b: f64,
}

/// Inertia bundle for the current state. The mass comes from the reference
/// configuration and is conserved; density scales as `(R₀/R_b)³ ρ_{b,0}`.
pub fn bubble_inertia(state: &BubbleState, rho_b0: f64, r0: f64) -> SimResult<BubbleInertia> {
    if !(state.r_b > 0.0) {
        return Err(SimError::Collapse {
            radius: state.r_b,
            floor: 0.0,
            t: f64::NAN,
        });
    }
    if !(r0 > 0.0) || !(rho_b0 > 0.0) {
        return Err(SimError::Domain(format!(
            "bubble inertia needs R0 > 0 and rho_b0 > 0 (got {r0}, {rho_b0})"
        )));
    }
    let mass = 4.0 * std::f64::consts::PI / 3.0 * r0.powi(3) * rho_b0;
    let r2 = state.r_b * state.r_b;
    Ok(BubbleInertia {
        mass,
        moment: 0.4 * mass * r2,
        dilational: mass / 15.0 * r2,
        rho_b: (r0 / state.r_b).powi(3) * rho_b0,
    })
}

/// Surface energy of the bubble interface, `(2π/3) κ_b R²`.
pub fn surface_energy(kappa_b: f64, r_b: f64) -> f64 {
    2.0 * std::f64::consts::PI / 3.0 * kappa_b * r_b * r_b
}

/// Recover `(R, x_b)` from a color function: `R = (3/(4π) ∫χ)^{1/3}` and
/// `x_b = 3/(4πR³) ∫ χ y dy`.
pub fn moments_from_indicator(chi: &ScalarField) -> SimResult<(f64, [f64; 3])> {
    let mass = integrate(chi);
    if mass <= 0.0 {
        return Err(SimError::Domain(format!(
            "degenerate indicator: integral {mass} is not positive"
        )));
    }
    let r = (3.0 / (4.0 * std::f64::consts::PI) * mass).powf(1.0 / 3.0);
    let dom = &chi.domain;
    let vol = dom.cell_volume();
    let mut first = [0.0f64; 3];
    let mut idx = 0;
    for k in 0..dom.resolution[2] {
        for j in 0..dom.resolution[1] {
            for i in 0..dom.resolution[0] {
                let w = chi.values[idx];
                if w != 0.0 {
                    let y = dom.cell_center(i, j, k);
                    first[0] += w * y[0];
                    first[1] += w * y[1];
                    first[2] += w * y[2];
                }
                idx += 1;
            }
        }
    }
    let x_b = [
        first[0] * vol / mass,
        first[1] * vol / mass,
        first[2] * vol / mass,
    ];
    Ok((r, x_b))
}

/// One row of the trajectory series the driver emits: time, center, radius,
/// and the inertia diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x_b: [f64; 3],
    pub r_b: f64,
    pub rho_b: f64,
    pub m_b: f64,
    pub moment: f64,
    pub dilational: f64,
}

/// Write trajectory rows as CSV with columns
/// `t, x_b_0, x_b_1, x_b_2, R_b, rho_b, m_b, J, K`.
pub fn write_trajectory_csv(path: &std::path::Path, rows: &[TrajectoryRow]) -> SimResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t", "x_b_0", "x_b_1", "x_b_2", "R_b", "rho_b", "m_b", "J", "K",
    ])?;
    for r in rows {
        w.write_record(
            [
                r.t, r.x_b[0], r.x_b[1], r.x_b[2], r.r_b, r.rho_b, r.m_b, r.moment,
                r.dilational,
            ]
            .map(format_float),
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Full-precision float formatting shared by every CSV emitter, so reruns of
/// the same configuration produce byte-identical files.
pub(crate) fn format_float(v: f64) -> String {
    // RFC-compliant shortest round-trip representation.
    let mut s = format!("{v:?}");
    if s == "-0.0" {
        s = "0.0".to_string();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ball_indicator, BoxDomain};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn inertia_at_reference_state() {
        let s = BubbleState {
            x_b: [0.0; 3],
            r_b: 0.5,
        };
        let inertia = bubble_inertia(&s, 2.0, 0.5).unwrap();
        assert_relative_eq!(inertia.rho_b, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn inertia_scales_with_radius_cubed() {
        let s = BubbleState {
            x_b: [0.0; 3],
            r_b: 2.0,
        };
        let inertia = bubble_inertia(&s, 1.0, 1.0).unwrap();
        assert_relative_eq!(inertia.rho_b, 0.125, max_relative = 1e-12);
        assert_relative_eq!(
            inertia.mass,
            4.0 * std::f64::consts::PI / 3.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn moment_to_dilational_ratio_is_six() {
        for r in [0.3, 1.0, 2.5] {
            let s = BubbleState {
                x_b: [1.0, -2.0, 0.0],
                r_b: r,
            };
            let inertia = bubble_inertia(&s, 1.7, 0.9).unwrap();
            assert_relative_eq!(inertia.moment / inertia.dilational, 6.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn collapsed_state_is_an_error() {
        let s = BubbleState {
            x_b: [0.0; 3],
            r_b: 0.0,
        };
        assert!(matches!(
            bubble_inertia(&s, 1.0, 1.0),
            Err(SimError::Collapse { .. })
        ));
    }

    #[test]
    fn identity_map_fixes_points() {
        let m = AffineBubbleMap::identity();
        let x = [0.3, -0.2, 0.9];
        assert_eq!(apply_map(&m, x, [0.0; 3]), x);
        assert_eq!(m.orthogonality_defect(), 0.0);
    }

    #[test]
    fn pure_dilation_doubles_offsets() {
        let x0 = [0.5, 0.5, 0.5];
        let m = AffineBubbleMap {
            translation: x0,
            scale: 2.0,
            ..AffineBubbleMap::identity()
        };
        let out = apply_map(&m, [1.5, 0.5, 0.5], x0);
        assert_eq!(out, [2.5, 0.5, 0.5]);
    }

    #[test]
    fn map_carries_reference_sphere_onto_current_sphere() {
        // Sample 10^3 directions on the reference sphere B(x0, R0); every
        // image must land on B(a, R) up to rounding.
        let x0 = [0.2, 0.1, -0.3];
        let r0 = 0.7;
        let state = BubbleState {
            x_b: [1.0, 2.0, 3.0],
            r_b: 1.4,
        };
        let m = AffineBubbleMap::from_state(&state, r0).unwrap();
        let n = 10;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let v = [
                        a as f64 - 4.5,
                        b as f64 - 4.5,
                        c as f64 - 4.5,
                    ];
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    let p = [
                        x0[0] + r0 * v[0] / norm,
                        x0[1] + r0 * v[1] / norm,
                        x0[2] + r0 * v[2] / norm,
                    ];
                    let q = apply_map(&m, p, x0);
                    let d = ((q[0] - state.x_b[0]).powi(2)
                        + (q[1] - state.x_b[1]).powi(2)
                        + (q[2] - state.x_b[2]).powi(2))
                    .sqrt();
                    assert!(
                        (d - state.r_b).abs() <= 1e-12,
                        "image distance {d} vs radius {}",
                        state.r_b
                    );
                }
            }
        }
    }

    #[test]
    fn indicator_moments_recover_ball() {
        let dom = BoxDomain::unit(64);
        let chi = ball_indicator(&dom, [0.5, 0.5, 0.5], 0.25, 4).unwrap();
        let (r, xb) = moments_from_indicator(&chi).unwrap();
        assert_relative_eq!(r, 0.25, max_relative = 1e-2);
        for c in 0..3 {
            assert_relative_eq!(xb[c], 0.5, max_relative = 1e-2);
        }
    }

    #[test]
    fn radius_recovery_refines_at_least_first_order() {
        let err_at = |n: usize| {
            let dom = BoxDomain::unit(n);
            let chi = ball_indicator(&dom, [0.47, 0.53, 0.5], 0.23, 4).unwrap();
            let (r, _) = moments_from_indicator(&chi).unwrap();
            (r - 0.23).abs()
        };
        let e16 = err_at(16);
        let e32 = err_at(32);
        let e64 = err_at(64);
        let slope = (e16 / e64).log2() / 2.0;
        assert!(
            slope >= 1.0,
            "moment recovery slope {slope} (errors {e16:.3e}, {e32:.3e}, {e64:.3e})"
        );
    }

    #[test]
    fn volume_scaling_doubles_radius() {
        // Scaling the ball radius by 2 scales the indicator mass by 8 and the
        // recovered radius by 2 (cube-root homogeneity).
        let dom = BoxDomain::new([-2.0; 3], [2.0; 3], [64; 3]).unwrap();
        let small = ball_indicator(&dom, [0.0; 3], 0.4, 4).unwrap();
        let large = ball_indicator(&dom, [0.0; 3], 0.8, 4).unwrap();
        let (r1, _) = moments_from_indicator(&small).unwrap();
        let (r2, _) = moments_from_indicator(&large).unwrap();
        assert_relative_eq!(r2 / r1, 2.0, max_relative = 2e-2);
    }

    #[test]
    fn empty_indicator_is_degenerate() {
        let dom = BoxDomain::unit(8);
        let chi = ScalarField::zeros(&dom);
        assert!(matches!(
            moments_from_indicator(&chi),
            Err(SimError::Domain(_))
        ));
    }

    #[test]
    fn trajectory_csv_round_trips_through_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        let rows = vec![TrajectoryRow {
            t: 0.125,
            x_b: [0.5, 0.5, 0.625],
            r_b: 0.25,
            rho_b: 1.0,
            m_b: 0.0654,
            moment: 1.0,
            dilational: 1.0 / 6.0,
        }];
        write_trajectory_csv(&path, &rows).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let rec: Vec<String> = rdr
            .records()
            .next()
            .unwrap()
            .unwrap()
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(rec[0].parse::<f64>().unwrap(), 0.125);
        assert_eq!(rec[4].parse::<f64>().unwrap(), 0.25);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// Pairwise distances scale by exactly R/R₀ under the affine map.
        #[test]
        fn map_scales_distances_exactly(
            scale in 0.2f64..3.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0,
            qx in -1.0f64..1.0, qy in -1.0f64..1.0, qz in -1.0f64..1.0,
        ) {
            let m = AffineBubbleMap {
                translation: [0.4, -0.7, 1.1],
                scale,
                ..AffineBubbleMap::identity()
            };
            let x0 = [0.1, 0.2, 0.3];
            let p = [px, py, pz];
            let q = [qx, qy, qz];
            let d0 = ((p[0]-q[0]).powi(2) + (p[1]-q[1]).powi(2) + (p[2]-q[2]).powi(2)).sqrt();
            let pi = apply_map(&m, p, x0);
            let qi = apply_map(&m, q, x0);
            let d1 = ((pi[0]-qi[0]).powi(2) + (pi[1]-qi[1]).powi(2) + (pi[2]-qi[2]).powi(2)).sqrt();
            prop_assert!((d1 - scale * d0).abs() <= 1e-10 * (1.0 + d0));
        }

        /// Shifting the ball shifts the recovered center identically.
        #[test]
        fn moments_translation_equivariant(
            sx in -0.15f64..0.15,
            sy in -0.15f64..0.15,
            sz in -0.15f64..0.15,
        ) {
            let dom = BoxDomain::unit(32);
            let base = [0.5, 0.5, 0.5];
            let shifted = [base[0] + sx, base[1] + sy, base[2] + sz];
            let chi0 = ball_indicator(&dom, base, 0.2, 3).unwrap();
            let chi1 = ball_indicator(&dom, shifted, 0.2, 3).unwrap();
            let (_, c0) = moments_from_indicator(&chi0).unwrap();
            let (_, c1) = moments_from_indicator(&chi1).unwrap();
            for a in 0..3 {
                let shift_rec = c1[a] - c0[a];
                let shift_true = shifted[a] - base[a];
                prop_assert!(
                    (shift_rec - shift_true).abs() <= 6e-3,
                    "axis {}: recovered shift {} vs true {}", a, shift_rec, shift_true
                );
            }
        }
    }
}
