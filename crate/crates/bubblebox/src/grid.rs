//! Axis-aligned box domain, cell-centered tensor grid, scalar/vector/tensor
//! fields, midpoint quadrature, finite-difference stencils, and sampled ball
//! indicators.
//!
//! Nodes sit at cell centers, so `Σ f_i · h₁h₂h₃` is the midpoint rule —
//! exact for constants and, for products of the sine modes used by the
//! momentum space, exactly orthogonal. Derivatives are second-order central
//! in the interior with second-order one-sided stencils at the boundary,
//! which keeps affine fields exactly differenced everywhere.

use serde::{Deserialize, Serialize};

use crate::{SimError, SimResult};

/// Rectangular domain with a uniform cell-centered grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub resolution: [usize; 3],
}

impl BoxDomain {
    /// Build a domain, enforcing `upper > lower` per axis and at least 4
    /// cells per axis (the boundary stencils need 3 points).
    pub fn new(lower: [f64; 3], upper: [f64; 3], resolution: [usize; 3]) -> SimResult<Self> {
        for d in 0..3 {
            if !(upper[d] > lower[d]) {
                return Err(SimError::InvalidInput(format!(
                    "domain axis {d}: upper ({}) must exceed lower ({})",
                    upper[d], lower[d]
                )));
            }
            if resolution[d] < 4 {
                return Err(SimError::InvalidInput(format!(
                    "domain axis {d}: resolution {} below minimum 4",
                    resolution[d]
                )));
            }
        }
        Ok(BoxDomain {
            lower,
            upper,
            resolution,
        })
    }

    /// Unit cube `[0,1]³` at the given isotropic resolution.
    pub fn unit(n: usize) -> Self {
        BoxDomain::new([0.0; 3], [1.0; 3], [n; 3]).expect("unit cube is valid")
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.upper[0] - self.lower[0],
            self.upper[1] - self.lower[1],
            self.upper[2] - self.lower[2],
        ]
    }

    /// Grid spacing per axis.
    pub fn spacing(&self) -> [f64; 3] {
        let e = self.extent();
        [
            e[0] / self.resolution[0] as f64,
            e[1] / self.resolution[1] as f64,
            e[2] / self.resolution[2] as f64,
        ]
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h[0] * h[1] * h[2]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn cell_count(&self) -> usize {
        self.resolution[0] * self.resolution[1] * self.resolution[2]
    }

    /// Flat index of cell `(i, j, k)`, x-fastest.
    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    /// Center coordinate of cell `(i, j, k)`.
    #[inline]
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.spacing();
        [
            self.lower[0] + (i as f64 + 0.5) * h[0],
            self.lower[1] + (j as f64 + 0.5) * h[1],
            self.lower[2] + (k as f64 + 0.5) * h[2],
        ]
    }

    /// Shortest distance from a point to the boundary of the box (negative
    /// if the point is outside).
    pub fn distance_to_boundary(&self, x: [f64; 3]) -> f64 {
        let mut d = f64::INFINITY;
        for a in 0..3 {
            d = d.min(x[a] - self.lower[a]).min(self.upper[a] - x[a]);
        }
        d
    }
}

/// One real value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub domain: BoxDomain,
    pub values: Vec<f64>,
}

/// One 3-vector per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub domain: BoxDomain,
    pub values: Vec<[f64; 3]>,
}

/// One symmetric 3×3 matrix per cell, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    pub domain: BoxDomain,
    pub values: Vec<[f64; 9]>,
}

impl TensorField {
    pub fn zeros(domain: &BoxDomain) -> Self {
        TensorField {
            domain: domain.clone(),
            values: vec![[0.0; 9]; domain.cell_count()],
        }
    }
}

impl ScalarField {
    pub fn zeros(domain: &BoxDomain) -> Self {
        ScalarField {
            domain: domain.clone(),
            values: vec![0.0; domain.cell_count()],
        }
    }

    pub fn constant(domain: &BoxDomain, c: f64) -> Self {
        ScalarField {
            domain: domain.clone(),
            values: vec![c; domain.cell_count()],
        }
    }

    /// Sample an analytic function at every cell center.
    pub fn from_fn(domain: &BoxDomain, f: impl Fn([f64; 3]) -> f64) -> Self {
        let mut values = Vec::with_capacity(domain.cell_count());
        for k in 0..domain.resolution[2] {
            for j in 0..domain.resolution[1] {
                for i in 0..domain.resolution[0] {
                    values.push(f(domain.cell_center(i, j, k)));
                }
            }
        }
        ScalarField {
            domain: domain.clone(),
            values,
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl VectorField {
    pub fn zeros(domain: &BoxDomain) -> Self {
        VectorField {
            domain: domain.clone(),
            values: vec![[0.0; 3]; domain.cell_count()],
        }
    }

    pub fn from_fn(domain: &BoxDomain, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut values = Vec::with_capacity(domain.cell_count());
        for k in 0..domain.resolution[2] {
            for j in 0..domain.resolution[1] {
                for i in 0..domain.resolution[0] {
                    values.push(f(domain.cell_center(i, j, k)));
                }
            }
        }
        VectorField {
            domain: domain.clone(),
            values,
        }
    }

    /// Largest Euclidean norm over all cells.
    pub fn max_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// Trilinear interpolation between cell centers; outside the hull of
    /// centers the query clamps to the nearest face value (constant
    /// extrapolation across the half-cell boundary shell).
    pub fn sample(&self, x: [f64; 3]) -> [f64; 3] {
        let n = self.domain.resolution;
        let h = self.domain.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            // Position in units of cells, measured from the first center.
            let t = (x[a] - self.domain.lower[a]) / h[a] - 0.5;
            let t = t.clamp(0.0, (n[a] - 1) as f64);
            let b = (t.floor() as usize).min(n[a] - 2);
            base[a] = b;
            frac[a] = t - b as f64;
        }
        let mut out = [0.0f64; 3];
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    let w = wx * wy * wz;
                    let v = self.values[self
                        .domain
                        .idx(base[0] + dx, base[1] + dy, base[2] + dz)];
                    for c in 0..3 {
                        out[c] += w * v[c];
                    }
                }
            }
        }
        out
    }
}

impl AsRef<VectorField> for VectorField {
    fn as_ref(&self) -> &VectorField {
        self
    }
}

/// Midpoint-rule integral `Σ f_i · h₁h₂h₃`, compensated so the summation
/// order never shows up in the last bits.
pub fn integrate(f: &ScalarField) -> f64 {
    kahan_sum(f.values.iter().copied()) * f.domain.cell_volume()
}

/// Componentwise midpoint integral of a vector field.
pub fn integrate_vector(u: &VectorField) -> [f64; 3] {
    let vol = u.domain.cell_volume();
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = kahan_sum(u.values.iter().map(|v| v[c])) * vol;
    }
    out
}

/// Compensated (Kahan) summation; keeps big reductions deterministic *and*
/// accurate without resorting to arbitrary precision.
pub fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Sampled sharp-ball color function: each cell gets the fraction of its
/// `samples³` subcell midpoints lying inside `B(center, radius)`. Cells whose
/// center is farther than half a cell diagonal from the sphere are resolved
/// without subsampling.
pub fn ball_indicator(
    dom: &BoxDomain,
    center: [f64; 3],
    radius: f64,
    samples: usize,
) -> SimResult<ScalarField> {
    if !(radius > 0.0) {
        return Err(SimError::Domain(format!(
            "ball indicator requires radius > 0, got {radius}"
        )));
    }
    let samples = samples.max(1);
    let h = dom.spacing();
    let half_diag = 0.5 * (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let r2 = radius * radius;
    let inv_s = 1.0 / samples as f64;
    let total = (samples * samples * samples) as f64;

    let mut values = Vec::with_capacity(dom.cell_count());
    for k in 0..dom.resolution[2] {
        for j in 0..dom.resolution[1] {
            for i in 0..dom.resolution[0] {
                let c = dom.cell_center(i, j, k);
                let d = ((c[0] - center[0]).powi(2)
                    + (c[1] - center[1]).powi(2)
                    + (c[2] - center[2]).powi(2))
                .sqrt();
                let v = if d <= radius - half_diag {
                    1.0
                } else if d >= radius + half_diag {
                    0.0
                } else {
                    // Straddling cell: count subcell midpoints inside.
                    let mut inside = 0usize;
                    let corner = [
                        c[0] - 0.5 * h[0],
                        c[1] - 0.5 * h[1],
                        c[2] - 0.5 * h[2],
                    ];
                    for sz in 0..samples {
                        let z = corner[2] + (sz as f64 + 0.5) * inv_s * h[2];
                        let dz2 = (z - center[2]).powi(2);
                        for sy in 0..samples {
                            let y = corner[1] + (sy as f64 + 0.5) * inv_s * h[1];
                            let dyz2 = dz2 + (y - center[1]).powi(2);
                            for sx in 0..samples {
                                let x = corner[0] + (sx as f64 + 0.5) * inv_s * h[0];
                                if (x - center[0]).powi(2) + dyz2 <= r2 {
                                    inside += 1;
                                }
                            }
                        }
                    }
                    inside as f64 / total
                };
                values.push(v);
            }
        }
    }
    Ok(ScalarField {
        domain: dom.clone(),
        values,
    })
}

/// Derivative of a flat array along one axis: central in the interior,
/// second-order one-sided at the two boundary layers (exact on quadratics,
/// hence on every affine field).
fn diff_axis(dom: &BoxDomain, get: &dyn Fn(usize) -> f64, out: &mut [f64], axis: usize) {
    let n = dom.resolution;
    let h = dom.spacing()[axis];
    let stride = match axis {
        0 => 1,
        1 => n[0],
        _ => n[0] * n[1],
    };
    let len = n[axis];
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                let pos = [i, j, k][axis];
                let idx = dom.idx(i, j, k);
                let d = if pos == 0 {
                    (-3.0 * get(idx) + 4.0 * get(idx + stride) - get(idx + 2 * stride))
                        / (2.0 * h)
                } else if pos == len - 1 {
                    (3.0 * get(idx) - 4.0 * get(idx - stride) + get(idx - 2 * stride))
                        / (2.0 * h)
                } else {
                    (get(idx + stride) - get(idx - stride)) / (2.0 * h)
                };
                out[idx] = d;
            }
        }
    }
}

/// Second-order gradient of a scalar field.
pub fn gradient(f: &ScalarField) -> VectorField {
    let dom = &f.domain;
    let mut out = VectorField::zeros(dom);
    let mut tmp = vec![0.0; dom.cell_count()];
    for axis in 0..3 {
        diff_axis(dom, &|i| f.values[i], &mut tmp, axis);
        for (o, d) in out.values.iter_mut().zip(tmp.iter()) {
            o[axis] = *d;
        }
    }
    out
}

/// Second-order divergence of a vector field.
pub fn divergence(u: &VectorField) -> ScalarField {
    let dom = &u.domain;
    let mut out = ScalarField::zeros(dom);
    let mut tmp = vec![0.0; dom.cell_count()];
    for axis in 0..3 {
        let a = axis;
        diff_axis(dom, &|i| u.values[i][a], &mut tmp, axis);
        for (o, d) in out.values.iter_mut().zip(tmp.iter()) {
            *o += *d;
        }
    }
    out
}

/// Symmetric gradient `D(u) = ½(∇u + ∇uᵀ)`.
pub fn sym_gradient(u: &VectorField) -> TensorField {
    let dom = &u.domain;
    let count = dom.cell_count();
    // grad[b][c] holds ∂_b u_c as a flat array.
    let mut grad = vec![vec![0.0f64; count]; 9];
    let mut tmp = vec![0.0; count];
    for axis in 0..3 {
        for comp in 0..3 {
            let c = comp;
            diff_axis(dom, &|i| u.values[i][c], &mut tmp, axis);
            grad[3 * axis + comp].copy_from_slice(&tmp);
        }
    }
    let mut values = vec![[0.0f64; 9]; count];
    for idx in 0..count {
        for r in 0..3 {
            for c in 0..3 {
                values[idx][3 * r + c] =
                    0.5 * (grad[3 * c + r][idx] + grad[3 * r + c][idx]);
            }
        }
    }
    TensorField {
        domain: dom.clone(),
        values,
    }
}

/// JSON sidecar accompanying every field dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub name: String,
    pub time: f64,
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub resolution: [usize; 3],
    /// 1 for scalar dumps, 3 for vector dumps.
    pub components: usize,
}

fn write_f64_le(path: &std::path::Path, data: impl Iterator<Item = f64>) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

fn write_sidecar(
    dir: &std::path::Path,
    name: &str,
    time: f64,
    dom: &BoxDomain,
    components: usize,
) -> SimResult<()> {
    let sidecar = FieldSidecar {
        name: name.to_string(),
        time,
        lower: dom.lower,
        upper: dom.upper,
        resolution: dom.resolution,
        components,
    };
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| SimError::ConfigParse(e.to_string()))?;
    std::fs::write(dir.join(format!("{name}.json")), text)?;
    Ok(())
}

/// Dump a scalar field as flat little-endian f64 in x-fastest order, with a
/// JSON sidecar holding corners, resolution, name, and time stamp.
pub fn dump_scalar(
    f: &ScalarField,
    dir: &std::path::Path,
    name: &str,
    time: f64,
) -> SimResult<()> {
    write_f64_le(&dir.join(format!("{name}.f64")), f.values.iter().copied())?;
    write_sidecar(dir, name, time, &f.domain, 1)
}

/// Dump a vector field: per node the three components are adjacent, nodes in
/// x-fastest order.
pub fn dump_vector(
    u: &VectorField,
    dir: &std::path::Path,
    name: &str,
    time: f64,
) -> SimResult<()> {
    write_f64_le(
        &dir.join(format!("{name}.f64")),
        u.values.iter().flat_map(|v| v.iter().copied()),
    )?;
    write_sidecar(dir, name, time, &u.domain, 3)
}

/// Read back a dump pair written by [`dump_scalar`].
pub fn load_scalar(dir: &std::path::Path, name: &str) -> SimResult<(ScalarField, FieldSidecar)> {
    let text = std::fs::read_to_string(dir.join(format!("{name}.json")))?;
    let sidecar: FieldSidecar =
        serde_json::from_str(&text).map_err(|e| SimError::ConfigParse(e.to_string()))?;
    let dom = BoxDomain::new(sidecar.lower, sidecar.upper, sidecar.resolution)?;
    let raw = std::fs::read(dir.join(format!("{name}.f64")))?;
    if raw.len() != 8 * dom.cell_count() {
        return Err(SimError::ConfigParse(format!(
            "field dump {name}.f64 has {} bytes, expected {}",
            raw.len(),
            8 * dom.cell_count()
        )));
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((
        ScalarField {
            domain: dom,
            values,
        },
        sidecar,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn degenerate_domains_rejected() {
        assert!(BoxDomain::new([0.0; 3], [1.0, 1.0, 0.0], [8; 3]).is_err());
        assert!(BoxDomain::new([0.0; 3], [1.0; 3], [8, 3, 8]).is_err());
    }

    #[test]
    fn constant_integrates_exactly() {
        let dom = BoxDomain::unit(16);
        let one = ScalarField::constant(&dom, 1.0);
        assert!((integrate(&one) - 1.0).abs() <= 1e-12);
        let zero = ScalarField::zeros(&dom);
        assert_eq!(integrate(&zero), 0.0);
    }

    #[test]
    fn anisotropic_box_volume_exact() {
        let dom = BoxDomain::new([-1.0, 0.0, 2.0], [1.0, 0.5, 3.0], [8, 4, 16]).unwrap();
        let one = ScalarField::constant(&dom, 1.0);
        assert_relative_eq!(integrate(&one), dom.volume(), max_relative = 1e-12);
    }

    #[test]
    fn ball_volume_from_indicator_at_128() {
        let dom = BoxDomain::unit(128);
        let chi = ball_indicator(&dom, [0.5, 0.5, 0.5], 0.3, 4).unwrap();
        let exact = 4.0 * std::f64::consts::PI * 0.3f64.powi(3) / 3.0;
        assert_relative_eq!(integrate(&chi), exact, max_relative = 1e-3);
    }

    #[test]
    fn ball_volume_from_indicator_at_64() {
        let dom = BoxDomain::unit(64);
        let chi = ball_indicator(&dom, [0.5, 0.5, 0.5], 0.25, 4).unwrap();
        let exact = 4.0 * std::f64::consts::PI * 0.25f64.powi(3) / 3.0;
        assert_relative_eq!(integrate(&chi), exact, max_relative = 1e-3);
    }

    #[test]
    fn ball_outside_domain_gives_zero_field() {
        let dom = BoxDomain::unit(8);
        let chi = ball_indicator(&dom, [5.0, 5.0, 5.0], 0.5, 2).unwrap();
        assert_eq!(chi.max(), 0.0);
    }

    #[test]
    fn ball_covering_domain_gives_unit_field() {
        let dom = BoxDomain::unit(8);
        let chi = ball_indicator(&dom, [0.5, 0.5, 0.5], 10.0, 2).unwrap();
        assert_eq!(chi.min(), 1.0);
    }

    #[test]
    fn constant_field_has_zero_derivatives() {
        let dom = BoxDomain::unit(8);
        let u = VectorField::from_fn(&dom, |_| [1.0, -2.0, 0.5]);
        assert!(divergence(&u).values.iter().all(|v| v.abs() <= 1e-12));
        let d = sym_gradient(&u);
        assert!(d
            .values
            .iter()
            .all(|m| m.iter().all(|e| e.abs() <= 1e-12)));
    }

    #[test]
    fn dilation_field_divergence_is_rate() {
        let dom = BoxDomain::unit(12);
        let lambda = 0.9;
        let xc = [0.4, 0.5, 0.6];
        let u = VectorField::from_fn(&dom, |x| {
            [
                lambda / 3.0 * (x[0] - xc[0]),
                lambda / 3.0 * (x[1] - xc[1]),
                lambda / 3.0 * (x[2] - xc[2]),
            ]
        });
        for v in divergence(&u).values {
            assert!((v - lambda).abs() <= 1e-10, "divergence {v} vs {lambda}");
        }
    }

    #[test]
    fn derivative_converges_at_second_order() {
        let pi = std::f64::consts::PI;
        let err_at = |n: usize| {
            let dom = BoxDomain::unit(n);
            let f = ScalarField::from_fn(&dom, |x| (pi * x[0]).sin());
            let g = gradient(&f);
            let mut worst = 0.0f64;
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        let x = dom.cell_center(i, j, k);
                        let exact = pi * (pi * x[0]).cos();
                        worst = worst.max((g.values[dom.idx(i, j, k)][0] - exact).abs());
                    }
                }
            }
            worst
        };
        let e16 = err_at(16);
        let e32 = err_at(32);
        let slope = (e16 / e32).log2();
        assert!(
            (slope - 2.0).abs() <= 0.2,
            "finite-difference slope {slope} (errors {e16:.3e} -> {e32:.3e})"
        );
    }

    #[test]
    fn trilinear_sample_reproduces_affine_fields() {
        let dom = BoxDomain::unit(16);
        let u = VectorField::from_fn(&dom, |x| {
            [1.0 + 2.0 * x[0] - x[2], x[1] * 0.5, -x[0] + 3.0 * x[2]]
        });
        for q in [[0.3, 0.4, 0.5], [0.52, 0.11, 0.77], [0.9, 0.9, 0.12]] {
            let exact = [
                1.0 + 2.0 * q[0] - q[2],
                q[1] * 0.5,
                -q[0] + 3.0 * q[2],
            ];
            let got = u.sample(q);
            for c in 0..3 {
                assert!(
                    (got[c] - exact[c]).abs() <= 1e-12,
                    "component {c}: {} vs {}",
                    got[c],
                    exact[c]
                );
            }
        }
    }

    #[test]
    fn dump_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dom = BoxDomain::new([0.0, -1.0, 0.5], [2.0, 1.0, 1.5], [8, 6, 4]).unwrap();
        let f = ScalarField::from_fn(&dom, |x| x[0] + 10.0 * x[1] + 100.0 * x[2]);
        dump_scalar(&f, dir.path(), "rho", 0.25).unwrap();
        let (back, sidecar) = load_scalar(dir.path(), "rho").unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(sidecar.resolution, [8, 6, 4]);
        assert_eq!(sidecar.time, 0.25);
        assert_eq!(sidecar.components, 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Indicator values stay in [0,1] and grow pointwise with the radius.
        #[test]
        fn indicator_bounded_and_monotone(
            cx in 0.0f64..1.0,
            cy in 0.0f64..1.0,
            cz in 0.0f64..1.0,
            r1 in 0.05f64..0.4,
            dr in 0.0f64..0.3,
        ) {
            let dom = BoxDomain::unit(8);
            let small = ball_indicator(&dom, [cx, cy, cz], r1, 2).unwrap();
            let large = ball_indicator(&dom, [cx, cy, cz], r1 + dr, 2).unwrap();
            for (s, l) in small.values.iter().zip(large.values.iter()) {
                prop_assert!((0.0..=1.0).contains(s));
                prop_assert!(l + 1e-12 >= *s);
            }
        }

        /// Affine fields are differenced exactly, boundary stencils included.
        #[test]
        fn affine_fields_differenced_exactly(
            a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0,
            d in -2.0f64..2.0,
        ) {
            let dom = BoxDomain::unit(6);
            let f = ScalarField::from_fn(&dom, |x| d + a * x[0] + b * x[1] + c * x[2]);
            let g = gradient(&f);
            for v in &g.values {
                prop_assert!((v[0] - a).abs() <= 1e-10);
                prop_assert!((v[1] - b).abs() <= 1e-10);
                prop_assert!((v[2] - c).abs() <= 1e-10);
            }
        }
    }
}
