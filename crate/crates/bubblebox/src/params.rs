//! Physical constants, the power-law pressure/potential pair, and the
//! validation gate every run passes through before touching a grid.
//!
//! The two-phase pressure blends a fluid law `a_f ρ^γ_f` with a bubble law
//! `a_b ρ^γ_b` through the bubble fraction χ and adds the stabilizing
//! high-power term `δ ρ^β`. Its antiderivative-like potential
//! `P(ρ) = a ρ^γ/(γ−1)` satisfies `ρ P′(ρ) − P(ρ) = p(ρ)` per phase, which
//! is what the energy budget leans on.

use serde::{Deserialize, Serialize};

use crate::{SimError, SimResult};

/// All physical and regularization constants of a run. Immutable after
/// construction; everything downstream borrows it. Fields missing from a
/// configuration file take the desk-scale defaults below.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationParams {
    /// Fluid shear viscosity (> 0). Inside the bubble the shear coefficient
    /// is replaced by the penalization strength `n_pen`.
    pub mu_f: f64,
    /// Fluid bulk viscosity (≥ 0).
    pub nu_f: f64,
    /// Bubble bulk viscosity (≥ 0).
    pub nu_b: f64,
    /// Fluid pressure coefficient (> 0).
    pub a_f: f64,
    /// Bubble pressure coefficient (> 0).
    pub a_b: f64,
    /// Fluid adiabatic exponent (> 3/2).
    pub gamma_f: f64,
    /// Bubble adiabatic exponent (> 3/2).
    pub gamma_b: f64,
    /// Artificial-pressure coefficient (≥ 0); 0 switches the term off.
    pub delta: f64,
    /// Artificial-pressure exponent; must reach max{8, 2γ_f, 2γ_b} whenever
    /// `delta > 0`.
    pub beta: f64,
    /// Continuity-equation diffusion coefficient (≥ 0).
    pub epsilon: f64,
    /// Mode-penalization strength (≥ 0); also the in-bubble shear coefficient.
    pub n_pen: f64,
    /// Surface-tension coefficient of the bubble (≥ 0).
    pub kappa_b: f64,
    /// Constant gravity vector.
    pub g: [f64; 3],
    /// Bubble density at the reference radius (> 0).
    pub rho_b0: f64,
}

impl Default for SimulationParams {
    /// Desk-scale defaults: O(1) coefficients, a small but active artificial
    /// pressure so the energy-based safe-horizon constants stay finite, and
    /// gravity off (symmetric test configurations switch it on explicitly).
    fn default() -> Self {
        SimulationParams {
            mu_f: 0.1,
            nu_f: 0.1,
            nu_b: 0.1,
            a_f: 1.0,
            a_b: 1.0,
            gamma_f: 2.0,
            gamma_b: 2.0,
            delta: 1e-3,
            beta: 8.0,
            epsilon: 1e-2,
            n_pen: 1e3,
            kappa_b: 0.0,
            g: [0.0, 0.0, 0.0],
            rho_b0: 1.0,
        }
    }
}

/// Outcome of one validation rule: which bound was checked and whether the
/// supplied parameters satisfy it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    /// The bound in the form it is enforced, e.g. `"gamma_f > 3/2"`.
    pub bound: String,
    pub ok: bool,
    /// Offending value, present when the check failed.
    pub detail: Option<String>,
}

/// Pass/fail record for every parameter invariant. A report, not an
/// exception: callers decide whether a failure is fatal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    /// Bounds violated by the parameter set, in check order.
    pub fn violations(&self) -> Vec<&ValidationCheck> {
        self.checks.iter().filter(|c| !c.ok).collect()
    }

    /// Collapse the report into a result, for callers that treat any
    /// violation as a rejection.
    pub fn into_result(self) -> SimResult<()> {
        if self.all_ok() {
            Ok(())
        } else {
            let msg = self
                .violations()
                .iter()
                .map(|c| {
                    let detail = c.detail.as_deref().unwrap_or("violated");
                    format!("{} ({detail})", c.bound)
                })
                .collect::<Vec<_>>()
                .join("; ");
            Err(SimError::InvalidInput(format!("parameter validation failed: {msg}")))
        }
    }
}

/// Check every parameter bound and report each one by name.
pub fn validate_params(p: &SimulationParams) -> ValidationReport {
    let mut checks = Vec::new();
    let mut push = |bound: &str, ok: bool, detail: String| {
        checks.push(ValidationCheck {
            bound: bound.to_string(),
            ok,
            detail: if ok { None } else { Some(detail) },
        });
    };

    push("mu_f > 0", p.mu_f > 0.0, format!("mu_f = {}", p.mu_f));
    push("nu_f >= 0", p.nu_f >= 0.0, format!("nu_f = {}", p.nu_f));
    push("nu_b >= 0", p.nu_b >= 0.0, format!("nu_b = {}", p.nu_b));
    push("a_f > 0", p.a_f > 0.0, format!("a_f = {}", p.a_f));
    push("a_b > 0", p.a_b > 0.0, format!("a_b = {}", p.a_b));
    push(
        "gamma_f > 3/2",
        p.gamma_f > 1.5,
        format!("gamma_f = {} (gamma_f <= 3/2)", p.gamma_f),
    );
    push(
        "gamma_b > 3/2",
        p.gamma_b > 1.5,
        format!("gamma_b = {} (gamma_b <= 3/2)", p.gamma_b),
    );
    push("delta >= 0", p.delta >= 0.0, format!("delta = {}", p.delta));
    // The exponent bound only guards the artificial term; with delta = 0 the
    // term is absent and beta is unconstrained.
    let beta_floor = 8.0_f64.max(2.0 * p.gamma_f).max(2.0 * p.gamma_b);
    let beta_ok = p.delta == 0.0 || p.beta >= beta_floor;
    push(
        "delta > 0 implies beta >= max{8, 2*gamma_f, 2*gamma_b}",
        beta_ok,
        format!("beta = {} < {beta_floor}", p.beta),
    );
    push(
        "epsilon >= 0",
        p.epsilon >= 0.0,
        format!("epsilon = {}", p.epsilon),
    );
    push("n_pen >= 0", p.n_pen >= 0.0, format!("n_pen = {}", p.n_pen));
    push(
        "kappa_b >= 0",
        p.kappa_b >= 0.0,
        format!("kappa_b = {}", p.kappa_b),
    );
    push(
        "g finite",
        p.g.iter().all(|c| c.is_finite()),
        format!("g = {:?}", p.g),
    );
    push(
        "rho_b0 > 0",
        p.rho_b0 > 0.0,
        format!("rho_b0 = {}", p.rho_b0),
    );

    ValidationReport { checks }
}

/// Two-phase pressure `(1−χ) a_f ρ^γ_f + χ a_b ρ^γ_b + δ ρ^β`.
///
/// χ may be fractional: a sharp ball sampled onto a grid produces partial
/// cells, and the law extends by convex combination.
pub fn pressure(rho: f64, chi: f64, p: &SimulationParams) -> SimResult<f64> {
    if rho < 0.0 {
        return Err(SimError::Domain(format!(
            "pressure evaluated at negative density rho = {rho}"
        )));
    }
    Ok((1.0 - chi) * p.a_f * rho.powf(p.gamma_f)
        + chi * p.a_b * rho.powf(p.gamma_b)
        + p.delta * rho.powf(p.beta))
}

/// Pressure potential `(1−χ) a_f ρ^γ_f/(γ_f−1) + χ a_b ρ^γ_b/(γ_b−1)
/// + δ ρ^β/(β−1)`, the internal-energy density the energy budget tracks.
pub fn potential_energy_density(rho: f64, chi: f64, p: &SimulationParams) -> SimResult<f64> {
    if rho < 0.0 {
        return Err(SimError::Domain(format!(
            "potential evaluated at negative density rho = {rho}"
        )));
    }
    for (name, gamma) in [("gamma_f", p.gamma_f), ("gamma_b", p.gamma_b), ("beta", p.beta)] {
        if gamma == 1.0 {
            return Err(SimError::Domain(format!(
                "potential undefined for {name} = 1 (division by gamma - 1)"
            )));
        }
    }
    Ok((1.0 - chi) * p.a_f * rho.powf(p.gamma_f) / (p.gamma_f - 1.0)
        + chi * p.a_b * rho.powf(p.gamma_b) / (p.gamma_b - 1.0)
        + p.delta * rho.powf(p.beta) / (p.beta - 1.0))
}

/// Artificial-pressure part of the potential, `δ ρ^β/(β−1)` alone. The
/// reduced energy that the step-level budget balances uses only this slice
/// of the potential.
pub fn artificial_potential_density(rho: f64, p: &SimulationParams) -> SimResult<f64> {
    if rho < 0.0 {
        return Err(SimError::Domain(format!(
            "potential evaluated at negative density rho = {rho}"
        )));
    }
    if p.beta == 1.0 {
        return Err(SimError::Domain(
            "potential undefined for beta = 1 (division by beta - 1)".into(),
        ));
    }
    Ok(p.delta * rho.powf(p.beta) / (p.beta - 1.0))
}
