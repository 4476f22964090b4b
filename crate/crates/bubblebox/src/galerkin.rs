//! Finite velocity space of vector sine modes vanishing on the box walls,
//! and the assembled ODE system `A(t)·dα/dt + B(t)·α = F(t)` for the
//! penalized momentum balance.
//!
//! Each basis function is a single Cartesian component carrying a
//! tensor-product sine, `ψ = e_d·∏_a √(2/L_a)·sin(k_a π (x_a−lo_a)/L_a)`.
//! On the cell-centered grid these are exactly discretely orthonormal for
//! wavenumbers up to one below the per-axis resolution, so the Gram matrix
//! is the identity to rounding. Values and derivatives come from small
//! per-axis tables; nothing stores full 3-D sample arrays.

use nalgebra::{DMatrix, DVector};

use crate::bubble::BubbleState;
use crate::grid::{BoxDomain, ScalarField, TensorField, VectorField};
use crate::modes::{eval_mode, project};
use crate::params::{pressure, SimulationParams};
use crate::{SimError, SimResult};

/// One vector sine mode `e_component · amp·∏ sin(freq_a·(x_a − lo_a))`.
#[derive(Debug, Clone)]
pub struct BasisMode {
    /// Per-axis integer wavenumbers (all ≥ 1).
    pub wave: [usize; 3],
    /// Cartesian component the mode points along.
    pub component: usize,
    amp: f64,
    freq: [f64; 3],
    sin_tab: [Vec<f64>; 3],
    cos_tab: [Vec<f64>; 3],
}

/// Per-(j,k) partial products so the inner x-loop costs a few multiplies.
#[derive(Clone, Copy)]
struct RowEval {
    /// amp·sin_y·sin_z — multiplies sin_x for the value, cos_x·freq_x for ∂x.
    a: f64,
    /// amp·freq_y·cos_y·sin_z — multiplies sin_x for ∂y.
    gy: f64,
    /// amp·freq_z·sin_y·cos_z — multiplies sin_x for ∂z.
    gz: f64,
}

impl BasisMode {
    fn new(dom: &BoxDomain, wave: [usize; 3], component: usize) -> Self {
        let ext = dom.extent();
        let amp = (8.0 / (ext[0] * ext[1] * ext[2])).sqrt();
        let freq = [
            wave[0] as f64 * std::f64::consts::PI / ext[0],
            wave[1] as f64 * std::f64::consts::PI / ext[1],
            wave[2] as f64 * std::f64::consts::PI / ext[2],
        ];
        let mut sin_tab: [Vec<f64>; 3] = Default::default();
        let mut cos_tab: [Vec<f64>; 3] = Default::default();
        for a in 0..3 {
            let m = dom.resolution[a];
            let mut s = Vec::with_capacity(m);
            let mut c = Vec::with_capacity(m);
            for cell in 0..m {
                let phase = wave[a] as f64 * std::f64::consts::PI * (cell as f64 + 0.5)
                    / m as f64;
                s.push(phase.sin());
                c.push(phase.cos());
            }
            sin_tab[a] = s;
            cos_tab[a] = c;
        }
        BasisMode {
            wave,
            component,
            amp,
            freq,
            sin_tab,
            cos_tab,
        }
    }

    /// Analytic evaluation at an arbitrary point (used for boundary checks;
    /// grid work goes through the tables).
    pub fn eval(&self, dom: &BoxDomain, x: [f64; 3]) -> [f64; 3] {
        let mut s = self.amp;
        for a in 0..3 {
            s *= (self.freq[a] * (x[a] - dom.lower[a])).sin();
        }
        let mut out = [0.0; 3];
        out[self.component] = s;
        out
    }

    fn row(&self, j: usize, k: usize) -> RowEval {
        RowEval {
            a: self.amp * self.sin_tab[1][j] * self.sin_tab[2][k],
            gy: self.amp * self.freq[1] * self.cos_tab[1][j] * self.sin_tab[2][k],
            gz: self.amp * self.freq[2] * self.sin_tab[1][j] * self.cos_tab[2][k],
        }
    }

    #[inline]
    fn value_grad(&self, row: &RowEval, i: usize) -> (f64, [f64; 3]) {
        let sx = self.sin_tab[0][i];
        (
            row.a * sx,
            [
                row.a * self.freq[0] * self.cos_tab[0][i],
                row.gy * sx,
                row.gz * sx,
            ],
        )
    }

    /// Sup norm of the mode, attained at the interior antinode.
    pub fn sup_value(&self) -> f64 {
        self.amp
    }

    /// Upper bound on the gradient sup norm (componentwise bounds combined).
    pub fn sup_gradient(&self) -> f64 {
        self.amp * (self.freq[0].powi(2) + self.freq[1].powi(2) + self.freq[2].powi(2)).sqrt()
    }
}

/// Orthonormal sine-mode velocity space on a box.
#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub domain: BoxDomain,
    pub modes: Vec<BasisMode>,
}

/// Coefficients of `u = Σ α_i ψ_i` at a time stamp.
#[derive(Debug, Clone)]
pub struct GalerkinState {
    pub alpha: DVector<f64>,
    pub t: f64,
}

impl GalerkinState {
    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.alpha.iter().all(|v| v.is_finite())
    }
}

/// Build the lowest-N modes, ordered by |k|², then k lexicographically, then
/// component, so ties resolve deterministically. Wavenumbers are capped one
/// below the per-axis resolution (the discrete orthogonality limit).
pub fn build_basis(dom: &BoxDomain, n: usize) -> SimResult<GalerkinBasis> {
    let m = dom.resolution;
    let available = 3 * (m[0] - 1) * (m[1] - 1) * (m[2] - 1);
    if n == 0 || n > available {
        return Err(SimError::InvalidInput(format!(
            "basis size {n} outside the available range 1..={available} at resolution {m:?}"
        )));
    }
    let mut waves = Vec::new();
    for k1 in 1..m[0] {
        for k2 in 1..m[1] {
            for k3 in 1..m[2] {
                waves.push([k1, k2, k3]);
            }
        }
    }
    waves.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1] + k[2] * k[2], k[0], k[1], k[2]));
    let modes = waves
        .iter()
        .flat_map(|&w| (0..3).map(move |c| (w, c)))
        .take(n)
        .map(|(w, c)| BasisMode::new(dom, w, c))
        .collect();
    Ok(GalerkinBasis {
        domain: dom.clone(),
        modes,
    })
}

impl GalerkinBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Fill `out` with the i-th mode sampled at cell centers.
    fn fill_mode_field(&self, i: usize, out: &mut VectorField) {
        let m = &self.modes[i];
        let n = self.domain.resolution;
        let mut idx = 0;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let row = m.row(j, k);
                for ii in 0..n[0] {
                    let mut v = [0.0; 3];
                    v[m.component] = row.a * m.sin_tab[0][ii];
                    out.values[idx] = v;
                    idx += 1;
                }
            }
        }
    }

    pub fn mode_field(&self, i: usize) -> VectorField {
        let mut out = VectorField::zeros(&self.domain);
        self.fill_mode_field(i, &mut out);
        out
    }

    /// Synthesize `u = Σ α_i ψ_i` on the grid.
    pub fn velocity_field(&self, alpha: &DVector<f64>) -> VectorField {
        assert_eq!(alpha.len(), self.len());
        let n = self.domain.resolution;
        let mut out = VectorField::zeros(&self.domain);
        for (m, &a) in self.modes.iter().zip(alpha.iter()) {
            if a == 0.0 {
                continue;
            }
            let mut idx = 0;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    let row = m.row(j, k);
                    for ii in 0..n[0] {
                        out.values[idx][m.component] += a * row.a * m.sin_tab[0][ii];
                        idx += 1;
                    }
                }
            }
        }
        out
    }

    /// Analytic velocity gradient `T[r][c] = ∂_c u_r` of `Σ α_i ψ_i`.
    pub fn velocity_gradient(&self, alpha: &DVector<f64>) -> TensorField {
        assert_eq!(alpha.len(), self.len());
        let n = self.domain.resolution;
        let mut out = TensorField::zeros(&self.domain);
        for (m, &a) in self.modes.iter().zip(alpha.iter()) {
            if a == 0.0 {
                continue;
            }
            let r = m.component;
            let mut idx = 0;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    let row = m.row(j, k);
                    for ii in 0..n[0] {
                        let (_, g) = m.value_grad(&row, ii);
                        for c in 0..3 {
                            out.values[idx][3 * r + c] += a * g[c];
                        }
                        idx += 1;
                    }
                }
            }
        }
        out
    }

    /// L² coefficients of an arbitrary field: `α_i = ∫ u·ψ_i` (the basis is
    /// orthonormal, so this is the best-approximation projection).
    pub fn project_coefficients(&self, u: &VectorField) -> DVector<f64> {
        let n = self.domain.resolution;
        let vol = self.domain.cell_volume();
        let mut alpha = DVector::zeros(self.len());
        for (mi, m) in self.modes.iter().enumerate() {
            let mut acc = 0.0;
            let mut idx = 0;
            for k in 0..n[2] {
                for j in 0..n[1] {
                    let row = m.row(j, k);
                    for ii in 0..n[0] {
                        acc += u.values[idx][m.component] * row.a * m.sin_tab[0][ii];
                        idx += 1;
                    }
                }
            }
            alpha[mi] = acc * vol;
        }
        alpha
    }

    /// Full Gram matrix by grid quadrature (diagnostic; identity to rounding).
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let nb = self.len();
        let n = self.domain.resolution;
        let vol = self.domain.cell_volume();
        let mut g = DMatrix::zeros(nb, nb);
        let mut vals = vec![0.0; nb];
        for k in 0..n[2] {
            for j in 0..n[1] {
                let rows: Vec<RowEval> = self.modes.iter().map(|m| m.row(j, k)).collect();
                for ii in 0..n[0] {
                    for (m, (row, v)) in self.modes.iter().zip(rows.iter().zip(vals.iter_mut()))
                    {
                        *v = row.a * m.sin_tab[0][ii];
                    }
                    for a in 0..nb {
                        for b in a..nb {
                            if self.modes[a].component == self.modes[b].component {
                                g[(a, b)] += vals[a] * vals[b] * vol;
                            }
                        }
                    }
                }
            }
        }
        for a in 0..nb {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g
    }

    /// Packed sup-norm constant `sqrt(Σ_i (sup|ψ_i| + sup|∇ψ_i|)²)`: a
    /// computable Cauchy–Schwarz bound turning coefficient norms into
    /// pointwise field bounds.
    pub fn sup_norm_constant(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| (m.sup_value() + m.sup_gradient()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Mass matrix `A_ij = ∫ ρ ψ_i·ψ_j` (symmetric; `A ⪰ ρ_min·I` for positive
/// density since the basis is orthonormal).
pub fn assemble_mass(rho: &ScalarField, basis: &GalerkinBasis) -> SimResult<DMatrix<f64>> {
    if rho.domain != basis.domain {
        return Err(SimError::InvalidInput(
            "density and basis live on different grids".into(),
        ));
    }
    let nb = basis.len();
    let n = basis.domain.resolution;
    let vol = basis.domain.cell_volume();
    let mut a_mat = DMatrix::zeros(nb, nb);
    let mut vals = vec![0.0; nb];
    let mut idx = 0;
    for k in 0..n[2] {
        for j in 0..n[1] {
            let rows: Vec<RowEval> = basis.modes.iter().map(|m| m.row(j, k)).collect();
            for ii in 0..n[0] {
                let w = rho.values[idx] * vol;
                for (m, (row, v)) in basis.modes.iter().zip(rows.iter().zip(vals.iter_mut())) {
                    *v = row.a * m.sin_tab[0][ii];
                }
                for p in 0..nb {
                    for q in p..nb {
                        if basis.modes[p].component == basis.modes[q].component {
                            a_mat[(p, q)] += w * vals[p] * vals[q];
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    for p in 0..nb {
        for q in 0..p {
            a_mat[(p, q)] = a_mat[(q, p)];
        }
    }
    Ok(a_mat)
}

/// The four additive blocks of the stiffness matrix, kept separate so the
/// energy bookkeeping can read dissipation and penalization individually.
#[derive(Debug, Clone)]
pub struct StiffnessParts {
    /// `∫ ρ (u·∇ψ_j)·ψ_i` — not symmetric.
    pub convection: DMatrix<f64>,
    /// `∫ 2μ (D(ψ_i)−⅓div ψ_i I):(D(ψ_j)−⅓div ψ_j I) + ν div ψ_i div ψ_j`
    /// with the indicator-penalized shear viscosity — symmetric PSD.
    pub viscous: DMatrix<f64>,
    /// `ε ∫ ((∇ρ·∇)ψ_j)·ψ_i` — the mass-diffusion coupling.
    pub diffusion_coupling: DMatrix<f64>,
    /// `n ∫ χ (ψ_i−Πψ_i)·(ψ_j−Πψ_j)` — symmetric PSD Gram of projector
    /// residuals.
    pub penalization: DMatrix<f64>,
}

impl StiffnessParts {
    pub fn total(&self) -> DMatrix<f64> {
        &self.convection + &self.viscous + &self.diffusion_coupling + &self.penalization
    }
}

/// Assemble all stiffness blocks in one sweep over the grid (plus a
/// bubble-support sweep for the penalization Gram).
pub fn assemble_stiffness(
    rho: &ScalarField,
    u: &VectorField,
    chi: &ScalarField,
    grad_rho: &VectorField,
    bubble: &BubbleState,
    p: &SimulationParams,
    basis: &GalerkinBasis,
) -> SimResult<StiffnessParts> {
    let dom = &basis.domain;
    if rho.domain != *dom || u.domain != *dom || chi.domain != *dom || grad_rho.domain != *dom {
        return Err(SimError::InvalidInput(
            "stiffness inputs live on different grids".into(),
        ));
    }
    let nb = basis.len();
    let n = dom.resolution;
    let vol = dom.cell_volume();

    let mut conv = DMatrix::zeros(nb, nb);
    let mut visc = DMatrix::zeros(nb, nb);
    let mut eps_m = DMatrix::zeros(nb, nb);

    let mut vals = vec![0.0; nb];
    let mut grads = vec![[0.0f64; 3]; nb];
    let mut t_conv = vec![0.0; nb];
    let mut t_eps = vec![0.0; nb];

    let mut idx = 0;
    for k in 0..n[2] {
        for j in 0..n[1] {
            let rows: Vec<RowEval> = basis.modes.iter().map(|m| m.row(j, k)).collect();
            for ii in 0..n[0] {
                let chi_c = chi.values[idx];
                let rho_c = rho.values[idx];
                let mu = (1.0 - chi_c) * p.mu_f + p.n_pen * chi_c;
                let nu = (1.0 - chi_c) * p.nu_f + chi_c * p.nu_b;
                let uc = u.values[idx];
                let gr = grad_rho.values[idx];
                for ((m, (row, v)), g) in basis
                    .modes
                    .iter()
                    .zip(rows.iter().zip(vals.iter_mut()))
                    .zip(grads.iter_mut())
                {
                    let (value, grad) = m.value_grad(row, ii);
                    *v = value;
                    *g = grad;
                }
                for q in 0..nb {
                    let g = grads[q];
                    t_conv[q] = rho_c * (uc[0] * g[0] + uc[1] * g[1] + uc[2] * g[2]);
                    t_eps[q] = p.epsilon * (gr[0] * g[0] + gr[1] * g[1] + gr[2] * g[2]);
                }
                let w_mu = mu * vol;
                let w_nu = nu * vol;
                for a in 0..nb {
                    let da = basis.modes[a].component;
                    let ga = grads[a];
                    let div_a = ga[da];
                    // Symmetric viscous block: deviatoric shear + bulk.
                    for b in a..nb {
                        let db = basis.modes[b].component;
                        let gb = grads[b];
                        let div_b = gb[db];
                        let mut dd = ga[db] * gb[da];
                        if da == db {
                            dd += ga[0] * gb[0] + ga[1] * gb[1] + ga[2] * gb[2];
                        }
                        visc[(a, b)] +=
                            w_mu * (dd - 2.0 / 3.0 * div_a * div_b) + w_nu * div_a * div_b;
                    }
                    // Component-diagonal convection and diffusion coupling.
                    let va = vals[a] * vol;
                    for b in 0..nb {
                        if basis.modes[b].component == da {
                            conv[(a, b)] += va * t_conv[b];
                            eps_m[(a, b)] += va * t_eps[b];
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    for a in 0..nb {
        for b in 0..a {
            visc[(a, b)] = visc[(b, a)];
        }
    }

    let pen = assemble_penalization(chi, bubble, p.n_pen, basis)?;
    Ok(StiffnessParts {
        convection: conv,
        viscous: visc,
        diffusion_coupling: eps_m,
        penalization: pen,
    })
}

/// Penalization Gram `n ∫ χ (ψ_i − Πψ_i)·(ψ_j − Πψ_j)`: residuals of the
/// ball projector, restricted to the indicator's support.
fn assemble_penalization(
    chi: &ScalarField,
    bubble: &BubbleState,
    n_pen: f64,
    basis: &GalerkinBasis,
) -> SimResult<DMatrix<f64>> {
    let nb = basis.len();
    let mut pen = DMatrix::zeros(nb, nb);
    if n_pen == 0.0 {
        return Ok(pen);
    }
    let dom = &basis.domain;
    let support: Vec<usize> = chi
        .values
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0.0)
        .map(|(i, _)| i)
        .collect();
    if support.is_empty() {
        return Ok(pen);
    }
    let centers: Vec<[f64; 3]> = {
        let n = dom.resolution;
        support
            .iter()
            .map(|&idx| {
                let i = idx % n[0];
                let j = (idx / n[0]) % n[1];
                let k = idx / (n[0] * n[1]);
                dom.cell_center(i, j, k)
            })
            .collect()
    };
    let vol = dom.cell_volume();
    let mut residuals: Vec<Vec<[f64; 3]>> = Vec::with_capacity(nb);
    let mut field = VectorField::zeros(dom);
    for i in 0..nb {
        basis.fill_mode_field(i, &mut field);
        let mv = project(chi, &field, bubble.r_b, bubble.x_b)?;
        let res: Vec<[f64; 3]> = support
            .iter()
            .zip(centers.iter())
            .map(|(&idx, &x)| {
                let m = eval_mode(&mv, bubble.x_b, x);
                let v = field.values[idx];
                [v[0] - m[0], v[1] - m[1], v[2] - m[2]]
            })
            .collect();
        residuals.push(res);
    }
    for a in 0..nb {
        for b in a..nb {
            let mut acc = 0.0;
            for ((&idx, ra), rb) in support
                .iter()
                .zip(residuals[a].iter())
                .zip(residuals[b].iter())
            {
                acc += chi.values[idx] * (ra[0] * rb[0] + ra[1] * rb[1] + ra[2] * rb[2]);
            }
            let entry = n_pen * acc * vol;
            pen[(a, b)] = entry;
            pen[(b, a)] = entry;
        }
    }
    Ok(pen)
}

/// Measured defect of the formal antisymmetry identity
/// `∫ρ(u·∇ψ_j)·ψ_i + ∫ρ(u·∇ψ_i)·ψ_j + ∫div(ρu)ψ_i·ψ_j = 0`
/// (exact for smooth fields vanishing on the walls; discretely O(h²)).
/// Reported as a diagnostic, never assumed.
pub fn convection_symmetry_defect(
    rho: &ScalarField,
    u: &VectorField,
    basis: &GalerkinBasis,
    convection: &DMatrix<f64>,
) -> f64 {
    let dom = &basis.domain;
    let n = dom.resolution;
    let vol = dom.cell_volume();
    let nb = basis.len();
    // div(ρu) by central differences of the momentum field.
    let mut momentum = VectorField::zeros(dom);
    for (m, (r, uv)) in momentum
        .values
        .iter_mut()
        .zip(rho.values.iter().zip(u.values.iter()))
    {
        *m = [r * uv[0], r * uv[1], r * uv[2]];
    }
    let div_m = crate::grid::divergence(&momentum);

    let mut mass_like: DMatrix<f64> = DMatrix::zeros(nb, nb);
    let mut vals = vec![0.0; nb];
    let mut idx = 0;
    for k in 0..n[2] {
        for j in 0..n[1] {
            let rows: Vec<RowEval> = basis.modes.iter().map(|m| m.row(j, k)).collect();
            for ii in 0..n[0] {
                let w = div_m.values[idx] * vol;
                for (m, (row, v)) in basis.modes.iter().zip(rows.iter().zip(vals.iter_mut())) {
                    *v = row.a * m.sin_tab[0][ii];
                }
                for a in 0..nb {
                    for b in a..nb {
                        if basis.modes[a].component == basis.modes[b].component {
                            mass_like[(a, b)] += w * vals[a] * vals[b];
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    let mut defect = 0.0f64;
    for a in 0..nb {
        for b in a..nb {
            let d = convection[(a, b)] + convection[(b, a)] + mass_like[(a, b)];
            defect = defect.max(d.abs());
        }
    }
    defect
}

/// Load vector `F_j = −∫ρ g·ψ_j + ∫(χ κ_b/R_b + p(ρ,χ)) div ψ_j`.
pub fn assemble_forcing(
    rho: &ScalarField,
    chi: &ScalarField,
    r_b: f64,
    p: &SimulationParams,
    basis: &GalerkinBasis,
) -> SimResult<DVector<f64>> {
    if r_b <= 0.0 {
        return Err(SimError::Collapse {
            radius: r_b,
            floor: 0.0,
            t: f64::NAN,
        });
    }
    let dom = &basis.domain;
    if rho.domain != *dom || chi.domain != *dom {
        return Err(SimError::InvalidInput(
            "forcing inputs live on different grids".into(),
        ));
    }
    let n = dom.resolution;
    let vol = dom.cell_volume();
    let nb = basis.len();
    // Pressure + surface tension scalar per cell, evaluated once.
    let mut stress = vec![0.0; rho.values.len()];
    for (s, (r, c)) in stress
        .iter_mut()
        .zip(rho.values.iter().zip(chi.values.iter()))
    {
        *s = c * p.kappa_b / r_b + pressure(*r, *c, p)?;
    }
    let mut f = DVector::zeros(nb);
    for (mi, m) in basis.modes.iter().enumerate() {
        let d = m.component;
        let g_d = p.g[d];
        let mut acc = 0.0;
        let mut idx = 0;
        for k in 0..n[2] {
            for j in 0..n[1] {
                let row = m.row(j, k);
                for ii in 0..n[0] {
                    let (value, grad) = m.value_grad(&row, ii);
                    acc += stress[idx] * grad[d] - rho.values[idx] * g_d * value;
                    idx += 1;
                }
            }
        }
        f[mi] = acc * vol;
    }
    Ok(f)
}

/// Semi-implicit Euler step of `A·dα/dt + B·α = F`:
/// solve `(A + dt·B)·α' = A·α + dt·F` by LU with a residual check.
pub fn momentum_step(
    state: &GalerkinState,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    f: &DVector<f64>,
    dt: f64,
) -> SimResult<GalerkinState> {
    if !(dt > 0.0) {
        return Err(SimError::InvalidInput(format!(
            "momentum step needs dt > 0, got {dt}"
        )));
    }
    let lhs = a + b * dt;
    let rhs = a * &state.alpha + f * dt;
    let solved = lhs.clone().lu().solve(&rhs).ok_or_else(|| {
        SimError::SolverBreakdown("momentum system is singular to working precision".into())
    })?;
    let residual = (&lhs * &solved - &rhs).norm();
    let scale = f.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    if residual > 1e-10 * scale {
        return Err(SimError::SolverBreakdown(format!(
            "momentum solve residual {residual:e} exceeds 1e-10 of scale {scale:e}"
        )));
    }
    let next = GalerkinState {
        alpha: solved,
        t: state.t + dt,
    };
    if !next.is_finite() {
        return Err(SimError::NonFinite("momentum coefficients".into()));
    }
    Ok(next)
}

/// Poincaré constant of the box from its first Dirichlet eigenvalue:
/// `c_p = 1/(π·sqrt(Σ 1/L_i²))`, the sharp value for sine modes.
pub fn poincare_constant(dom: &BoxDomain) -> f64 {
    let ext = dom.extent();
    1.0 / (std::f64::consts::PI
        * (1.0 / (ext[0] * ext[0]) + 1.0 / (ext[1] * ext[1]) + 1.0 / (ext[2] * ext[2])).sqrt())
}

/// Geometric constant `(√3+√5)/(R₀·√(4πR₀))` converting kinetic-energy
/// bounds into bubble-center speed bounds.
pub fn crossing_constant(r0: f64) -> f64 {
    (3.0f64.sqrt() + 5.0f64.sqrt()) / (r0 * (4.0 * std::f64::consts::PI * r0).sqrt())
}

/// Collapse-exclusion horizon `T₁ = π R₀⁵ / (5 c_p² K)`.
pub fn horizon_radius(r0: f64, c_p: f64, k: f64) -> f64 {
    std::f64::consts::PI * r0.powi(5) / (5.0 * c_p * c_p * k)
}

/// Wall-exclusion horizon `T₂ = (dist₀ − 2σ)₊² / (c₀² c_p² K)`.
pub fn horizon_wall(dist0: f64, sigma: f64, c0: f64, c_p: f64, k: f64) -> f64 {
    let margin = (dist0 - 2.0 * sigma).max(0.0);
    margin * margin / (c0 * c0 * c_p * c_p * k)
}

/// A-priori constants governing how long the coupled approximation is
/// guaranteed to stay alive.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ContinuationConstants {
    /// Kinetic-energy ceiling seed `max{1, (4/ρ̲)‖√ρ₀ u₀‖²}`.
    pub q: f64,
    /// Local existence window of the coefficient ODE.
    pub t_seed: f64,
    /// Collapse-exclusion horizon.
    pub t1: f64,
    /// Wall-exclusion horizon.
    pub t2: f64,
    /// Packed basis sup constant c(N).
    pub sup_constant: f64,
    /// Box Poincaré constant c_p.
    pub poincare: f64,
    /// Center-speed conversion constant c₀.
    pub crossing: f64,
    /// Grönwall energy ceiling K over the probe window (∞ when the
    /// stiff-pressure weight is zero — the bound is then vacuous and both
    /// horizons honestly report 0).
    pub gronwall_bound: f64,
    /// Time window the Grönwall ceiling was evaluated over.
    pub probe_window: f64,
}

/// Grönwall energy ceiling: every force term Young-split against the
/// dissipation and the stiff-pressure reservoir, integrated over a unit
/// probe window. Infinite when `delta = 0` or `β ≤ 2γ` (no reservoir).
fn gronwall_bound(
    p: &SimulationParams,
    e0: f64,
    omega_vol: f64,
    r0: f64,
    probe: f64,
) -> f64 {
    if p.delta == 0.0 {
        return f64::INFINITY;
    }
    let beta = p.beta;
    let theta = (p.nu_f.min(p.nu_b) + p.mu_f / 3.0) / 6.0;
    let g_norm = (p.g[0] * p.g[0] + p.g[1] * p.g[1] + p.g[2] * p.g[2]).sqrt();
    let c_g = if g_norm > 0.0 {
        ((beta - 1.0) / (2.0 * beta))
            * (3.0 * (beta - 1.0) / (2.0 * p.delta * beta)).powf(1.0 / (beta - 1.0))
            * g_norm.powf(2.0 * beta / (beta - 1.0))
    } else {
        0.0
    };
    let phase = |a: f64, gamma: f64| -> f64 {
        let gap = beta - 2.0 * gamma;
        if gap <= 0.0 {
            return f64::INFINITY;
        }
        a.powf(2.0 * beta / gap)
            * (gap / (4.0 * theta * beta))
            * (6.0 * gamma * (beta - 1.0) / (4.0 * theta * p.delta * beta)).powf(2.0 * gamma / gap)
    };
    let c_omega = phase(p.a_f, p.gamma_f) + phase(p.a_b, p.gamma_b);
    let c_kappa = p.kappa_b * p.kappa_b / theta;
    probe.exp() * (e0 + (c_g + c_omega * omega_vol + c_kappa * omega_vol / (r0 * r0)) * probe)
        / p.mu_f
}

/// Compute the continuation constants for given initial data and bubble
/// placement: the driver refuses horizons beyond `min{T₁, T₂}` unless
/// explicitly overridden.
pub fn continuation_constants(
    p: &SimulationParams,
    rho0: &ScalarField,
    u0: &VectorField,
    basis: &GalerkinBasis,
    r0: f64,
    dist0: f64,
    sigma: f64,
) -> SimResult<ContinuationConstants> {
    if r0 <= 0.0 || sigma < 0.0 || dist0 < 0.0 {
        return Err(SimError::InvalidInput(format!(
            "continuation constants need r0 > 0, sigma >= 0, dist0 >= 0 \
             (got {r0}, {sigma}, {dist0})"
        )));
    }
    let rho_min = rho0.min();
    let rho_max = rho0.max();
    if rho_min <= 0.0 {
        return Err(SimError::Domain(format!(
            "continuation constants need strictly positive density, min = {rho_min}"
        )));
    }
    let vol = rho0.domain.cell_volume();
    let mut weighted_ke = 0.0;
    let mut e0 = 0.0;
    for (r, u) in rho0.values.iter().zip(u0.values.iter()) {
        let speed2 = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
        weighted_ke += r * speed2;
        e0 += 0.5 * r * speed2;
        if p.delta > 0.0 {
            e0 += p.delta / (p.beta - 1.0) * r.powf(p.beta);
        }
    }
    weighted_ke *= vol;
    e0 *= vol;

    let q = 1.0f64.max(4.0 / rho_min * weighted_ke);
    let c_n = basis.sup_norm_constant();
    let omega_vol = rho0.domain.volume();
    let gamma_bar = p.gamma_f.max(p.gamma_b).max(p.beta);
    let g_norm = (p.g[0] * p.g[0] + p.g[1] * p.g[1] + p.g[2] * p.g[2]).sqrt();
    let ln2 = std::f64::consts::LN_2;

    let mut t_seed = (ln2 / (2.0 * q)).min(ln2 / (gamma_bar * c_n * q));
    if g_norm > 0.0 {
        t_seed = t_seed.min(rho_min * q / (16.0 * rho_max * g_norm));
    }
    let stress_scale = p.kappa_b / r0
        + p.a_f * rho_max.powf(p.gamma_f)
        + p.a_b * rho_max.powf(p.gamma_b)
        + p.delta * rho_max.powf(p.beta);
    t_seed = t_seed.min(rho_min * q / (32.0 * c_n * omega_vol * stress_scale));

    let probe = 1.0;
    let k = gronwall_bound(p, e0, omega_vol, r0, probe);
    let c_p = poincare_constant(&rho0.domain);
    let c0 = crossing_constant(r0);
    let (t1, t2) = if k.is_finite() {
        (
            horizon_radius(r0, c_p, k),
            horizon_wall(dist0, sigma, c0, c_p, k),
        )
    } else {
        (0.0, 0.0)
    };
    Ok(ContinuationConstants {
        q,
        t_seed,
        t1,
        t2,
        sup_constant: c_n,
        poincare: c_p,
        crossing: c0,
        gronwall_bound: k,
        probe_window: probe,
    })
}
