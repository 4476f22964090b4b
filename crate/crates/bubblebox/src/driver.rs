//! Run orchestration: the versioned configuration schema, the coupled
//! bubble–density–momentum time loop with its guard rails, parameter sweeps
//! with log-log slope summaries, and offline re-validation of a finished run
//! directory.
//!
//! One step advances the pieces in a fixed order: transport the bubble
//! through the frozen velocity field, rebuild the sharp indicator from the
//! new bubble state, advance the density, then assemble and solve the
//! momentum system on the new density starting from the step-start
//! coefficients. The step can optionally be re-iterated (Picard) with the
//! freshly solved velocity until successive iterates agree. Guards abort the
//! run — never clamp — on collapse, wall contact, negative density, or
//! solver failure, leaving a structured error file next to the tables
//! written so far. All tables use round-trip float formatting, so identical
//! configurations produce byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bubble::{
    bubble_inertia, format_float, write_trajectory_csv, BubbleState, TrajectoryRow,
};
use crate::continuity::{continuity_step, log_entropy_balance, ContinuityStepReport};
use crate::energy::{
    compatibility_checks, energy_inequality_residual, energy_report, integrated_penalization,
    CompatibilityReport, EnergyReport,
};
use crate::galerkin::{
    assemble_forcing, assemble_mass, assemble_stiffness, build_basis, continuation_constants,
    momentum_step, ContinuationConstants, GalerkinBasis, GalerkinState,
};
use crate::grid::{
    ball_indicator, dump_scalar, dump_vector, gradient, BoxDomain, ScalarField, VectorField,
};
use crate::modes::{eval_mode, ModeVector};
use crate::params::{validate_params, SimulationParams, ValidationCheck, ValidationReport};
use crate::transport::{integrate_bubble, safe_time, BallQuadrature, DEFAULT_BALL_LATTICE};
use crate::{SimError, SimResult};

/// Version tag every configuration, summary, and error file carries.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Per-step mass drift beyond this is treated as a numerical failure: the
/// advection flux form conserves mass structurally, so any real drift means
/// the arithmetic itself broke down.
const MASS_DRIFT_LIMIT: f64 = 1e-10;

/// Advective stability bound `dt · ‖u‖_∞ / h ≤ 1/2` enforced every step.
const ADVECTIVE_LIMIT: f64 = 0.5;

fn default_rho_f0() -> f64 {
    1.0
}
fn default_basis_size() -> usize {
    12
}
fn default_sigma() -> f64 {
    0.02
}
fn default_snapshot_every() -> usize {
    10
}
fn default_ball_lattice() -> usize {
    DEFAULT_BALL_LATTICE
}
fn default_chi_subsamples() -> usize {
    4
}
fn default_picard_iterations() -> usize {
    1
}
fn default_picard_tolerance() -> f64 {
    1e-8
}

/// Box extents and resolution as they appear in a configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
    pub resolution: [usize; 3],
}

/// Initial bubble placement and its rigid-plus-dilation velocity mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BubbleConfig {
    /// Initial center.
    pub x0: [f64; 3],
    /// Reference radius `R₀`; also sets the collapse floor `R₀/2`.
    pub r0: f64,
    /// Initial translation velocity of the bubble mode.
    #[serde(default)]
    pub v0: [f64; 3],
    /// Initial angular velocity of the bubble mode.
    #[serde(default)]
    pub omega0: [f64; 3],
    /// Initial dilation rate of the bubble mode.
    #[serde(default)]
    pub lambda0: f64,
}

/// How the initial velocity coefficients are produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocityInit {
    /// Fluid initially at rest.
    Zero,
    /// Wall-windowed extension of the bubble's initial mode `(V₀, ω₀, Λ₀)`,
    /// projected onto the basis. The window is 1 except within 20 % of each
    /// extent from the walls, so the mode is reproduced exactly on the
    /// bubble whenever the bubble sits inside the plateau; the basis
    /// projection then adds only truncation error, which the compatibility
    /// table records.
    BubbleMode,
    /// Explicit Galerkin coefficients; the length must match the basis.
    Coefficients { values: Vec<f64> },
    /// Reproducible random coefficients `α_i ~ amplitude · U(−1,1) / √N`
    /// drawn from the run seed.
    Random { amplitude: f64 },
}

/// Initial data: a uniform carrier-fluid density completed by the bubble
/// density inside the indicator, plus the velocity recipe.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    /// Carrier-fluid density outside the bubble (> 0).
    #[serde(default = "default_rho_f0")]
    pub rho_f0: f64,
    #[serde(default = "default_velocity_init")]
    pub velocity: VelocityInit,
}

fn default_velocity_init() -> VelocityInit {
    VelocityInit::Zero
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData {
            rho_f0: default_rho_f0(),
            velocity: default_velocity_init(),
        }
    }
}

/// Inner fixed-point iteration within each step. One iteration is the plain
/// staggered scheme; more re-run the step with the freshly solved velocity
/// until `‖α_{k+1} − α_k‖` drops below the tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    #[serde(default = "default_picard_iterations")]
    pub iterations: usize,
    #[serde(default = "default_picard_tolerance")]
    pub tolerance: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            iterations: default_picard_iterations(),
            tolerance: default_picard_tolerance(),
        }
    }
}

/// Complete description of one run. Everything a rerun needs is in here;
/// the driver never reads state from anywhere else.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Must equal [`CONFIG_SCHEMA_VERSION`].
    pub schema_version: u32,
    #[serde(default)]
    pub params: SimulationParams,
    pub domain: DomainConfig,
    /// Number of velocity modes `N`.
    #[serde(default = "default_basis_size")]
    pub basis_size: usize,
    #[serde(default)]
    pub initial: InitialData,
    pub bubble: BubbleConfig,
    /// Time step; the horizon must be an integer multiple of it.
    pub dt: f64,
    /// Final time of the run.
    pub horizon: f64,
    /// Minimal allowed distance between bubble surface and wall.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub picard: PicardConfig,
    /// Field snapshots are retained every this many steps (plus the final
    /// step). Diagnostic tables are written every step regardless.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
    /// Seed for the random velocity initialization.
    #[serde(default)]
    pub seed: u64,
    /// Accept horizons beyond the certified continuation window
    /// `min(T₁, T₂)`. The certified constants are wildly conservative, so
    /// most production runs set this; the refusal is the honest default.
    #[serde(default)]
    pub allow_long_horizon: bool,
    /// Per-axis lattice count of the bubble-transport quadrature.
    #[serde(default = "default_ball_lattice")]
    pub ball_lattice: usize,
    /// Per-axis subsamples when rasterizing the bubble indicator.
    #[serde(default = "default_chi_subsamples")]
    pub chi_subsamples: usize,
    /// Dump the final density and velocity fields next to the tables.
    #[serde(default)]
    pub dump_fields: bool,
}

/// Parse a configuration file, rejecting unknown fields and schema
/// mismatches before any numerics start.
pub fn load_config(path: &Path) -> SimResult<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| SimError::ConfigParse(format!("{}: {e}", path.display())))?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(SimError::ConfigParse(format!(
            "config schema version {} unsupported (expected {})",
            cfg.schema_version, CONFIG_SCHEMA_VERSION
        )));
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> SimResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| SimError::ConfigParse(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> SimResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| SimError::ConfigParse(format!("{}: {e}", path.display())))
}

/// Smooth cutoff that is 1 except within 20 % of each extent from the
/// walls, decaying to 0 at the boundary (C¹, per-axis smootherstep).
fn wall_window(dom: &BoxDomain, x: [f64; 3]) -> f64 {
    let ext = dom.extent();
    let mut w = 1.0;
    for a in 0..3 {
        let margin = 0.2 * ext[a];
        let d = (x[a] - dom.lower[a]).min(dom.upper[a] - x[a]);
        let s = (d / margin).clamp(0.0, 1.0);
        w *= s * s * (3.0 - 2.0 * s);
    }
    w
}

/// Everything [`run`] needs after validation, with the evolving state
/// initialized at `t = 0`.
#[derive(Debug)]
struct Prepared {
    dom: BoxDomain,
    basis: GalerkinBasis,
    quad: BallQuadrature,
    rho: ScalarField,
    chi: ScalarField,
    bubble: BubbleState,
    state: GalerkinState,
    constants: ContinuationConstants,
    safe_time: f64,
    steps: usize,
}

fn build_initial_alpha(
    cfg: &RunConfig,
    dom: &BoxDomain,
    basis: &GalerkinBasis,
) -> SimResult<DVector<f64>> {
    let n = basis.len();
    match &cfg.initial.velocity {
        VelocityInit::Zero => Ok(DVector::zeros(n)),
        VelocityInit::BubbleMode => {
            let mv = ModeVector {
                v: cfg.bubble.v0,
                omega: cfg.bubble.omega0,
                lambda: cfg.bubble.lambda0,
            };
            let x0 = cfg.bubble.x0;
            let field = VectorField::from_fn(dom, |x| {
                let m = eval_mode(&mv, x0, x);
                let w = wall_window(dom, x);
                [w * m[0], w * m[1], w * m[2]]
            });
            Ok(basis.project_coefficients(&field))
        }
        VelocityInit::Coefficients { values } => {
            if values.len() != n {
                return Err(SimError::InvalidInput(format!(
                    "initial coefficients have length {}, basis has {n} modes",
                    values.len()
                )));
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(SimError::InvalidInput(
                    "initial coefficients must be finite".into(),
                ));
            }
            Ok(DVector::from_column_slice(values))
        }
        VelocityInit::Random { amplitude } => {
            if !(*amplitude >= 0.0) || !amplitude.is_finite() {
                return Err(SimError::InvalidInput(format!(
                    "random initial velocity needs amplitude >= 0, got {amplitude}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let scale = amplitude / (n.max(1) as f64).sqrt();
            Ok(DVector::from_fn(n, |_, _| {
                scale * rng.gen_range(-1.0f64..1.0)
            }))
        }
    }
}

/// Validate a configuration and build the initial state. Does *not* apply
/// the continuation-window refusal — [`run`] does, so that the `constants`
/// inspection path works for configurations that would be refused.
fn prepare(cfg: &RunConfig) -> SimResult<Prepared> {
    validate_params(&cfg.params).into_result()?;
    let dom = BoxDomain::new(
        cfg.domain.lower,
        cfg.domain.upper,
        cfg.domain.resolution,
    )?;

    if cfg.basis_size == 0 {
        return Err(SimError::InvalidInput("basis size must be positive".into()));
    }
    if !(cfg.dt > 0.0) || !cfg.dt.is_finite() {
        return Err(SimError::InvalidInput(format!(
            "time step must be positive and finite, got {}",
            cfg.dt
        )));
    }
    if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
        return Err(SimError::InvalidInput(format!(
            "horizon must be positive and finite, got {}",
            cfg.horizon
        )));
    }
    let steps_f = cfg.horizon / cfg.dt;
    let steps = steps_f.round();
    if steps < 1.0 || (steps_f - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(SimError::InvalidInput(format!(
            "horizon {} is not an integer number of steps of dt = {}",
            cfg.horizon, cfg.dt
        )));
    }
    let steps = steps as usize;
    if !(cfg.sigma >= 0.0) {
        return Err(SimError::InvalidInput(format!(
            "wall margin sigma must be nonnegative, got {}",
            cfg.sigma
        )));
    }
    if cfg.picard.iterations == 0 {
        return Err(SimError::InvalidInput(
            "picard iterations must be at least 1".into(),
        ));
    }
    if !(cfg.picard.tolerance > 0.0) {
        return Err(SimError::InvalidInput(format!(
            "picard tolerance must be positive, got {}",
            cfg.picard.tolerance
        )));
    }
    if cfg.snapshot_every == 0 {
        return Err(SimError::InvalidInput(
            "snapshot cadence must be at least 1".into(),
        ));
    }
    if cfg.ball_lattice < 2 {
        return Err(SimError::InvalidInput(format!(
            "transport quadrature lattice must be at least 2 per axis, got {}",
            cfg.ball_lattice
        )));
    }
    if cfg.chi_subsamples == 0 {
        return Err(SimError::InvalidInput(
            "indicator subsample count must be at least 1".into(),
        ));
    }
    if !(cfg.initial.rho_f0 > 0.0) {
        return Err(SimError::InvalidInput(format!(
            "carrier density must be positive, got {}",
            cfg.initial.rho_f0
        )));
    }
    if !(cfg.bubble.r0 > 0.0) {
        return Err(SimError::InvalidInput(format!(
            "bubble radius must be positive, got {}",
            cfg.bubble.r0
        )));
    }
    let dist0 = dom.distance_to_boundary(cfg.bubble.x0);
    let margin0 = dist0 - cfg.bubble.r0;
    if margin0 < cfg.sigma {
        return Err(SimError::InvalidInput(format!(
            "initial wall margin {margin0:.6e} is below sigma = {:.6e}; \
             the bubble must start clear of the wall",
            cfg.sigma
        )));
    }

    let basis = build_basis(&dom, cfg.basis_size)?;
    let chi = ball_indicator(&dom, cfg.bubble.x0, cfg.bubble.r0, cfg.chi_subsamples)?;
    let mut rho = ScalarField::zeros(&dom);
    for (r, c) in rho.values.iter_mut().zip(chi.values.iter()) {
        *r = (1.0 - c) * cfg.initial.rho_f0 + c * cfg.params.rho_b0;
    }

    let alpha = build_initial_alpha(cfg, &dom, &basis)?;
    let state = GalerkinState { alpha, t: 0.0 };
    let u0 = basis.velocity_field(&state.alpha);

    let h_min = dom.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    let adv = cfg.dt * u0.max_norm() / h_min;
    if adv > ADVECTIVE_LIMIT + 1e-12 {
        return Err(SimError::InvalidInput(format!(
            "initial velocity violates the advective limit: \
             dt·‖u‖_∞/h = {adv:.3e} > {ADVECTIVE_LIMIT}"
        )));
    }

    let constants = continuation_constants(
        &cfg.params,
        &rho,
        &u0,
        &basis,
        cfg.bubble.r0,
        dist0,
        cfg.sigma,
    )?;
    let safe = safe_time(cfg.bubble.r0, u0.max_norm())?;
    let quad = BallQuadrature::new(cfg.bubble.r0, cfg.ball_lattice)?;

    Ok(Prepared {
        dom,
        basis,
        quad,
        rho,
        chi,
        bubble: BubbleState {
            x_b: cfg.bubble.x0,
            r_b: cfg.bubble.r0,
        },
        state,
        constants,
        safe_time: safe,
        steps,
    })
}

/// The continuation constants of a configuration plus the derived horizon
/// advisories, as written to `constants.json` and printed by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantsFile {
    pub schema_version: u32,
    pub constants: ContinuationConstants,
    /// Guaranteed collapse-free window for the initial velocity alone.
    pub safe_time: f64,
    /// `min(T₁, T₂)` — the certified continuation window.
    pub advisory_horizon: f64,
    pub horizon: f64,
    pub steps: usize,
}

/// Compute the certified constants of a configuration without running it.
pub fn constants_for(cfg: &RunConfig) -> SimResult<ConstantsFile> {
    let prep = prepare(cfg)?;
    Ok(ConstantsFile {
        schema_version: CONFIG_SCHEMA_VERSION,
        advisory_horizon: prep.constants.t1.min(prep.constants.t2),
        constants: prep.constants,
        safe_time: prep.safe_time,
        horizon: cfg.horizon,
        steps: prep.steps,
    })
}

/// Per-step diagnostics beyond the energy/compatibility reports.
#[derive(Debug, Clone)]
struct StepDiag {
    t: f64,
    continuity: ContinuityStepReport,
    picard_iterations: usize,
    picard_delta: f64,
}

/// Everything a finished (or aborted) run hands back in memory: the full
/// diagnostic series plus field snapshots at the configured cadence.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Step stamps `0, dt, 2dt, …` for the committed states.
    pub times: Vec<f64>,
    pub bubble: Vec<BubbleState>,
    pub energy: Vec<EnergyReport>,
    /// Energy-inequality residual at each stamp (`≤ 0` predicted).
    pub residual: Vec<f64>,
    pub compatibility: Vec<CompatibilityReport>,
    /// One entry per committed step (none for the initial stamp).
    pub continuity: Vec<ContinuityStepReport>,
    pub picard_iterations: Vec<usize>,
    pub picard_delta: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    pub densities: Vec<ScalarField>,
    pub velocities: Vec<VectorField>,
    pub alpha_final: DVector<f64>,
    pub constants: ContinuationConstants,
    pub safe_time: f64,
}

/// Summary written as `report.json` when a run completes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub status: String,
    pub steps: usize,
    pub final_time: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    /// Largest energy-inequality residual over the run (signed).
    pub max_residual: f64,
    /// Positive part of `max_residual` — 0 whenever the inequality held.
    pub residual_excursion: f64,
    pub max_mass_step_error: f64,
    pub min_density: f64,
    pub max_density: f64,
    pub min_radius: f64,
    pub final_bubble: BubbleState,
    pub final_margin: f64,
    pub max_picard_iterations: usize,
}

/// Structured abort record written as `error.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorFile {
    pub schema_version: u32,
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    /// Steps committed before the abort.
    pub step: usize,
    /// Time of the failed step.
    pub t: f64,
}

fn write_error_file(dir: &Path, e: &SimError, step: usize, t: f64) {
    let record = ErrorFile {
        schema_version: CONFIG_SCHEMA_VERSION,
        kind: e.kind().to_string(),
        message: e.to_string(),
        exit_code: e.exit_code(),
        step,
        t,
    };
    let _ = write_json(&dir.join("error.json"), &record);
}

struct Accum {
    times: Vec<f64>,
    bubbles: Vec<BubbleState>,
    energy: Vec<EnergyReport>,
    compat: Vec<CompatibilityReport>,
    steps: Vec<StepDiag>,
    traj: Vec<TrajectoryRow>,
    alphas: Vec<(f64, Vec<f64>)>,
    snapshot_times: Vec<f64>,
    densities: Vec<ScalarField>,
    velocities: Vec<VectorField>,
}

impl Accum {
    fn push_state(
        &mut self,
        cfg: &RunConfig,
        t: f64,
        bubble: BubbleState,
        erep: EnergyReport,
        comp: CompatibilityReport,
        alpha: &DVector<f64>,
    ) -> SimResult<()> {
        let inertia = bubble_inertia(&bubble, cfg.params.rho_b0, cfg.bubble.r0)?;
        self.times.push(t);
        self.bubbles.push(bubble);
        self.energy.push(erep);
        self.compat.push(comp);
        self.traj.push(TrajectoryRow {
            t,
            x_b: bubble.x_b,
            r_b: bubble.r_b,
            rho_b: inertia.rho_b,
            m_b: inertia.mass,
            moment: inertia.moment,
            dilational: inertia.dilational,
        });
        self.alphas.push((t, alpha.iter().copied().collect()));
        Ok(())
    }

    fn push_snapshot(&mut self, t: f64, rho: ScalarField, u: VectorField) {
        self.snapshot_times.push(t);
        self.densities.push(rho);
        self.velocities.push(u);
    }
}

fn write_table(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> SimResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn flush_tables(dir: &Path, acc: &Accum, residual: &[f64]) -> SimResult<()> {
    write_table(
        &dir.join("energy.csv"),
        &[
            "t",
            "kinetic",
            "potential",
            "artificial_potential",
            "surface",
            "viscous_dissipation",
            "penalization_residual",
            "diffusion_dissipation",
            "gravity_work",
            "pressure_work",
            "surface_work",
            "full_pressure_work",
            "reduced_energy",
            "residual",
        ],
        acc.times
            .iter()
            .zip(acc.energy.iter())
            .zip(residual.iter())
            .map(|((t, e), r)| {
                [
                    *t,
                    e.kinetic,
                    e.potential,
                    e.artificial_potential,
                    e.surface,
                    e.viscous_dissipation,
                    e.penalization_residual,
                    e.diffusion_dissipation,
                    e.gravity_work,
                    e.pressure_work,
                    e.surface_work,
                    e.full_pressure_work,
                    e.reduced_energy(),
                    *r,
                ]
                .map(format_float)
                .to_vec()
            }),
    )?;

    write_table(
        &dir.join("compatibility.csv"),
        &[
            "t",
            "density_deviation",
            "velocity_deviation",
            "margin",
            "sigma",
            "margin_ok",
        ],
        acc.times.iter().zip(acc.compat.iter()).map(|(t, c)| {
            vec![
                format_float(*t),
                format_float(c.density_deviation),
                format_float(c.velocity_deviation),
                format_float(c.margin),
                format_float(c.sigma),
                (if c.margin_ok { "true" } else { "false" }).to_string(),
            ]
        }),
    )?;

    write_table(
        &dir.join("steps.csv"),
        &[
            "t",
            "mass_pre",
            "mass_post",
            "mass_rel_error",
            "min_density",
            "max_density",
            "advective_number",
            "solver_residual",
            "solver_iterations",
            "picard_iterations",
            "picard_delta",
        ],
        acc.steps.iter().map(|s| {
            vec![
                format_float(s.t),
                format_float(s.continuity.mass_pre),
                format_float(s.continuity.mass_post),
                format_float(s.continuity.relative_mass_error()),
                format_float(s.continuity.min_density),
                format_float(s.continuity.max_density),
                format_float(s.continuity.advective_number),
                format_float(s.continuity.solver_residual),
                format_float(s.continuity.solver_iterations as f64),
                format_float(s.picard_iterations as f64),
                format_float(s.picard_delta),
            ]
        }),
    )?;

    let n_modes = acc.alphas.first().map(|(_, a)| a.len()).unwrap_or(0);
    let mut coeff_header = vec!["t".to_string()];
    coeff_header.extend((1..=n_modes).map(|i| format!("alpha_{i}")));
    let coeff_header_refs: Vec<&str> = coeff_header.iter().map(String::as_str).collect();
    write_table(
        &dir.join("coefficients.csv"),
        &coeff_header_refs,
        acc.alphas.iter().map(|(t, a)| {
            let mut row = vec![format_float(*t)];
            row.extend(a.iter().map(|v| format_float(*v)));
            row
        }),
    )?;

    write_trajectory_csv(&dir.join("trajectory.csv"), &acc.traj)?;
    Ok(())
}

/// Execute one run into `out_dir`, returning the full diagnostic series.
///
/// The directory receives `config.json`, `constants.json`, the five
/// per-step tables, and `report.json` on success or `error.json` on abort
/// (with the tables flushed up to the last committed step). Identical
/// configurations produce byte-identical tables.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> SimResult<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut prep = match prepare(cfg) {
        Ok(p) => p,
        Err(e) => {
            write_error_file(out_dir, &e, 0, 0.0);
            return Err(e);
        }
    };

    let advisory = prep.constants.t1.min(prep.constants.t2);
    if cfg.horizon > advisory && !cfg.allow_long_horizon {
        let e = SimError::InvalidInput(format!(
            "horizon {} exceeds the certified continuation window min(T1, T2) = {advisory:.6e}; \
             set allow_long_horizon to run anyway",
            cfg.horizon
        ));
        write_error_file(out_dir, &e, 0, 0.0);
        return Err(e);
    }

    write_json(&out_dir.join("config.json"), cfg)?;
    write_json(
        &out_dir.join("constants.json"),
        &ConstantsFile {
            schema_version: CONFIG_SCHEMA_VERSION,
            advisory_horizon: advisory,
            constants: prep.constants.clone(),
            safe_time: prep.safe_time,
            horizon: cfg.horizon,
            steps: prep.steps,
        },
    )?;

    let mut acc = Accum {
        times: Vec::new(),
        bubbles: Vec::new(),
        energy: Vec::new(),
        compat: Vec::new(),
        steps: Vec::new(),
        traj: Vec::new(),
        alphas: Vec::new(),
        snapshot_times: Vec::new(),
        densities: Vec::new(),
        velocities: Vec::new(),
    };

    // Initial diagnostics at t = 0.
    let u0 = prep.basis.velocity_field(&prep.state.alpha);
    let grad0 = prep.basis.velocity_gradient(&prep.state.alpha);
    let init_result: SimResult<()> = (|| {
        let erep = energy_report(&prep.rho, &u0, &grad0, &prep.chi, &prep.bubble, &cfg.params)?;
        let comp = compatibility_checks(
            &prep.rho,
            &u0,
            &prep.chi,
            &prep.bubble,
            cfg.bubble.r0,
            cfg.sigma,
            &cfg.params,
        )?;
        acc.push_state(cfg, 0.0, prep.bubble, erep, comp, &prep.state.alpha)
    })();
    if let Err(e) = init_result {
        write_error_file(out_dir, &e, 0, 0.0);
        return Err(e);
    }
    acc.push_snapshot(0.0, prep.rho.clone(), u0.clone());

    let mut progress = (0usize, 0.0f64);
    let loop_result = time_loop(cfg, &mut prep, &mut acc, u0, &mut progress);

    let residual = energy_inequality_residual(&acc.energy, cfg.dt)?;
    flush_tables(out_dir, &acc, &residual)?;

    match loop_result {
        Ok(()) => {
            let final_margin = prep.dom.distance_to_boundary(prep.bubble.x_b) - prep.bubble.r_b;
            let max_residual = residual.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min_density = acc
                .steps
                .iter()
                .map(|s| s.continuity.min_density)
                .fold(prep.rho.min().min(acc.densities[0].min()), f64::min);
            let max_density = acc
                .steps
                .iter()
                .map(|s| s.continuity.max_density)
                .fold(acc.densities[0].max(), f64::max);
            let report = RunReport {
                schema_version: CONFIG_SCHEMA_VERSION,
                status: "completed".to_string(),
                steps: prep.steps,
                final_time: acc.times.last().copied().unwrap_or(0.0),
                initial_energy: acc.energy[0].reduced_energy(),
                final_energy: acc.energy.last().map(|e| e.reduced_energy()).unwrap_or(0.0),
                max_residual,
                residual_excursion: max_residual.max(0.0),
                max_mass_step_error: acc
                    .steps
                    .iter()
                    .map(|s| s.continuity.relative_mass_error())
                    .fold(0.0, f64::max),
                min_density,
                max_density,
                min_radius: acc.bubbles.iter().map(|b| b.r_b).fold(f64::INFINITY, f64::min),
                final_bubble: prep.bubble,
                final_margin,
                max_picard_iterations: acc.steps.iter().map(|s| s.picard_iterations).max().unwrap_or(0),
            };
            write_json(&out_dir.join("report.json"), &report)?;
            if cfg.dump_fields {
                let t_end = acc.times.last().copied().unwrap_or(0.0);
                dump_scalar(&prep.rho, out_dir, "rho_final", t_end)?;
                let u_end = prep.basis.velocity_field(&prep.state.alpha);
                dump_vector(&u_end, out_dir, "u_final", t_end)?;
            }
            Ok(RunOutcome {
                times: acc.times,
                bubble: acc.bubbles,
                energy: acc.energy,
                residual,
                compatibility: acc.compat,
                continuity: acc.steps.iter().map(|s| s.continuity.clone()).collect(),
                picard_iterations: acc.steps.iter().map(|s| s.picard_iterations).collect(),
                picard_delta: acc.steps.iter().map(|s| s.picard_delta).collect(),
                snapshot_times: acc.snapshot_times,
                densities: acc.densities,
                velocities: acc.velocities,
                alpha_final: prep.state.alpha.clone(),
                constants: prep.constants,
                safe_time: prep.safe_time,
            })
        }
        Err(e) => {
            write_error_file(out_dir, &e, progress.0, progress.1);
            Err(e)
        }
    }
}

fn time_loop(
    cfg: &RunConfig,
    prep: &mut Prepared,
    acc: &mut Accum,
    mut u: VectorField,
    progress: &mut (usize, f64),
) -> SimResult<()> {
    let p = &cfg.params;
    let h_min = prep
        .dom
        .spacing()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    for m in 0..prep.steps {
        let t = m as f64 * cfg.dt;
        let t_next = (m + 1) as f64 * cfg.dt;
        *progress = (m, t_next);

        let adv = cfg.dt * u.max_norm() / h_min;
        if adv > ADVECTIVE_LIMIT + 1e-12 {
            return Err(SimError::SolverBreakdown(format!(
                "advective limit violated at t = {t:.6e}: dt·‖u‖_∞/h = {adv:.3e} > {ADVECTIVE_LIMIT}"
            )));
        }

        let alpha_start = prep.state.alpha.clone();
        let mut u_iter = u;
        let mut prev_candidate: Option<DVector<f64>> = None;
        let mut picard_delta = 0.0;
        let mut picard_iters = 0;
        let mut committed: Option<(
            ScalarField,
            ScalarField,
            BubbleState,
            ContinuityStepReport,
            DVector<f64>,
        )> = None;

        for k in 0..cfg.picard.iterations {
            picard_iters = k + 1;

            // (1) Transport the bubble through the frozen field.
            let traj = integrate_bubble(
                prep.bubble.x_b,
                prep.bubble.r_b,
                |_| &u_iter,
                t,
                t_next,
                cfg.dt,
                &prep.quad,
            )?;
            let bub_next = traj.last_state();
            if bub_next.r_b < 0.5 * cfg.bubble.r0 {
                return Err(SimError::Collapse {
                    radius: bub_next.r_b,
                    floor: 0.5 * cfg.bubble.r0,
                    t: t_next,
                });
            }
            let margin = prep.dom.distance_to_boundary(bub_next.x_b) - bub_next.r_b;
            if margin < cfg.sigma {
                return Err(SimError::WallContact {
                    distance: margin,
                    margin: cfg.sigma,
                    t: t_next,
                });
            }

            // (2) Rebuild the sharp indicator from the new bubble state.
            let chi_next = ball_indicator(
                &prep.dom,
                bub_next.x_b,
                bub_next.r_b,
                cfg.chi_subsamples,
            )?;

            // (3) Advance the density from the step-start state.
            let (rho_next, crep) = continuity_step(&prep.rho, &u_iter, p.epsilon, cfg.dt)?;
            if crep.has_negative_density() {
                return Err(SimError::NegativeDensity {
                    min: crep.min_density,
                    t: t_next,
                });
            }
            if crep.relative_mass_error() > MASS_DRIFT_LIMIT {
                return Err(SimError::SolverBreakdown(format!(
                    "continuity mass drift {:.3e} exceeds {MASS_DRIFT_LIMIT:.0e} in one step at t = {t_next:.6e}",
                    crep.relative_mass_error()
                )));
            }

            // (4) Momentum step on the new density from the step-start
            //     coefficients.
            let grad_rho = gradient(&rho_next);
            let a_mat = assemble_mass(&rho_next, &prep.basis)?;
            let parts = assemble_stiffness(
                &rho_next,
                &u_iter,
                &chi_next,
                &grad_rho,
                &bub_next,
                p,
                &prep.basis,
            )?;
            let f_vec = assemble_forcing(&rho_next, &chi_next, bub_next.r_b, p, &prep.basis)?;
            let stepped = momentum_step(
                &GalerkinState {
                    alpha: alpha_start.clone(),
                    t,
                },
                &a_mat,
                &parts.total(),
                &f_vec,
                cfg.dt,
            )?;

            picard_delta = match &prev_candidate {
                Some(prev) => (&stepped.alpha - prev).norm(),
                None => 0.0,
            };
            let converged = prev_candidate.is_some() && picard_delta <= cfg.picard.tolerance;
            prev_candidate = Some(stepped.alpha.clone());
            let alpha_next = stepped.alpha;
            committed = Some((rho_next, chi_next, bub_next, crep, alpha_next));
            if converged || k + 1 == cfg.picard.iterations {
                break;
            }
            let (_, _, _, _, ref alpha_ref) = *committed.as_ref().expect("just set");
            u_iter = prep.basis.velocity_field(alpha_ref);
        }

        let (rho_next, chi_next, bub_next, crep, alpha_next) =
            committed.expect("picard loop runs at least once");
        prep.rho = rho_next;
        prep.chi = chi_next;
        prep.bubble = bub_next;
        prep.state = GalerkinState {
            alpha: alpha_next,
            t: t_next,
        };
        if !prep.rho.is_finite() || !prep.state.is_finite() {
            return Err(SimError::NonFinite(format!(
                "state after step {} (t = {t_next:.6e})",
                m + 1
            )));
        }

        let u_new = prep.basis.velocity_field(&prep.state.alpha);
        let grad_new = prep.basis.velocity_gradient(&prep.state.alpha);
        let erep = energy_report(&prep.rho, &u_new, &grad_new, &prep.chi, &prep.bubble, p)?;
        let comp = compatibility_checks(
            &prep.rho,
            &u_new,
            &prep.chi,
            &prep.bubble,
            cfg.bubble.r0,
            cfg.sigma,
            p,
        )?;
        acc.push_state(cfg, t_next, prep.bubble, erep, comp, &prep.state.alpha)?;
        acc.steps.push(StepDiag {
            t: t_next,
            continuity: crep,
            picard_iterations: picard_iters,
            picard_delta,
        });
        if (m + 1) % cfg.snapshot_every == 0 || m + 1 == prep.steps {
            acc.push_snapshot(t_next, prep.rho.clone(), u_new.clone());
        }
        u = u_new;
        *progress = (m + 1, t_next);
    }
    Ok(())
}

/// Metric names every run records for sweep summaries, in output order.
pub const METRIC_NAMES: &[&str] = &[
    "penalization_integral",
    "penalization_unweighted",
    "velocity_mismatch_rms",
    "velocity_deviation_mean",
    "density_deviation_mean",
    "density_deviation_final",
    "energy_residual_excursion",
    "entropy_residual_max_abs",
    "kinetic_final",
    "mass_error_max",
];

/// Scalar summaries of one run, keyed by [`METRIC_NAMES`]. The deviation
/// means skip the initial stamp: at `t = 0` they measure initial-data
/// truncation, which is identical across a sweep and would dilute trends.
pub fn run_metrics(outcome: &RunOutcome, cfg: &RunConfig) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    let (with_n, without_n) = integrated_penalization(&outcome.energy, cfg.dt, cfg.params.n_pen);
    m.insert("penalization_integral".to_string(), with_n);
    m.insert("penalization_unweighted".to_string(), without_n);

    // Absolute in-bubble mode mismatch in the L²-in-time sense:
    // `(T⁻¹ ∫₀ᵀ ‖u − Πu‖²_{L²(B)} dt)^{1/2}`, recovered from the recorded
    // penalization integral.
    let horizon = outcome.times.last().copied().unwrap_or(0.0)
        - outcome.times.first().copied().unwrap_or(0.0);
    let mismatch = if horizon > 0.0 && cfg.params.n_pen > 0.0 {
        (without_n / horizon).max(0.0).sqrt()
    } else {
        f64::NAN
    };
    m.insert("velocity_mismatch_rms".to_string(), mismatch);

    let tail_mean = |extract: &dyn Fn(&CompatibilityReport) -> f64| -> f64 {
        let rows = &outcome.compatibility;
        if rows.len() > 1 {
            rows[1..].iter().map(|c| extract(c)).sum::<f64>() / (rows.len() - 1) as f64
        } else if let Some(first) = rows.first() {
            extract(first)
        } else {
            f64::NAN
        }
    };
    m.insert(
        "velocity_deviation_mean".to_string(),
        tail_mean(&|c| c.velocity_deviation),
    );
    m.insert(
        "density_deviation_mean".to_string(),
        tail_mean(&|c| c.density_deviation),
    );
    m.insert(
        "density_deviation_final".to_string(),
        outcome
            .compatibility
            .last()
            .map(|c| c.density_deviation)
            .unwrap_or(f64::NAN),
    );
    m.insert(
        "energy_residual_excursion".to_string(),
        outcome.residual.iter().cloned().fold(0.0, f64::max),
    );
    let entropy = log_entropy_balance(
        &outcome.snapshot_times,
        &outcome.densities,
        &outcome.velocities,
    )
    .map(|r| r.iter().map(|v| v.abs()).fold(0.0, f64::max))
    .unwrap_or(f64::NAN);
    m.insert("entropy_residual_max_abs".to_string(), entropy);
    m.insert(
        "kinetic_final".to_string(),
        outcome.energy.last().map(|e| e.kinetic).unwrap_or(f64::NAN),
    );
    m.insert(
        "mass_error_max".to_string(),
        outcome
            .continuity
            .iter()
            .map(|c| c.relative_mass_error())
            .fold(0.0, f64::max),
    );
    m
}

/// Which single knob a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NPen,
    Epsilon,
    Delta,
    BasisSize,
    Dt,
    Resolution,
}

impl SweepAxis {
    /// Clone the base configuration with this axis set to `value`. Integer
    /// axes reject non-integer values instead of rounding silently.
    pub fn apply(self, base: &RunConfig, value: f64) -> SimResult<RunConfig> {
        let mut cfg = base.clone();
        let as_count = |value: f64, what: &str| -> SimResult<usize> {
            if !(value > 0.0) || value.fract() != 0.0 || value > 1e6 {
                return Err(SimError::InvalidInput(format!(
                    "{what} sweep needs positive integer values, got {value}"
                )));
            }
            Ok(value as usize)
        };
        match self {
            SweepAxis::NPen => cfg.params.n_pen = value,
            SweepAxis::Epsilon => cfg.params.epsilon = value,
            SweepAxis::Delta => cfg.params.delta = value,
            SweepAxis::BasisSize => cfg.basis_size = as_count(value, "basis size")?,
            SweepAxis::Dt => cfg.dt = value,
            SweepAxis::Resolution => {
                let n = as_count(value, "resolution")?;
                cfg.domain.resolution = [n, n, n];
            }
        }
        Ok(cfg)
    }
}

/// A sweep: one axis, at least two strictly monotone values, and optionally
/// a subset of [`METRIC_NAMES`] to report (all when empty).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub metrics: Vec<String>,
}

/// On-disk description of a sweep: the base run plus the sweep spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub schema_version: u32,
    pub base: RunConfig,
    pub spec: SweepSpec,
}

/// Parse a sweep file, rejecting schema mismatches.
pub fn load_sweep(path: &Path) -> SimResult<SweepFile> {
    let text = std::fs::read_to_string(path)?;
    let file: SweepFile = serde_json::from_str(&text)
        .map_err(|e| SimError::ConfigParse(format!("{}: {e}", path.display())))?;
    if file.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(SimError::ConfigParse(format!(
            "sweep schema version {} unsupported (expected {})",
            file.schema_version, CONFIG_SCHEMA_VERSION
        )));
    }
    Ok(file)
}

fn validate_sweep(spec: &SweepSpec) -> SimResult<()> {
    if spec.values.len() < 2 {
        return Err(SimError::InvalidInput(
            "a sweep needs at least two values".into(),
        ));
    }
    if !spec.values.iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(SimError::InvalidInput(
            "sweep values must be finite and positive".into(),
        ));
    }
    let increasing = spec.values.windows(2).all(|w| w[0] < w[1]);
    let decreasing = spec.values.windows(2).all(|w| w[0] > w[1]);
    if !increasing && !decreasing {
        return Err(SimError::InvalidInput(
            "sweep values must be strictly monotone".into(),
        ));
    }
    for name in &spec.metrics {
        if !METRIC_NAMES.contains(&name.as_str()) {
            return Err(SimError::InvalidInput(format!(
                "unknown sweep metric '{name}'; known: {}",
                METRIC_NAMES.join(", ")
            )));
        }
    }
    Ok(())
}

/// One run of a sweep: its axis value, how it ended, and its metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    pub value: f64,
    /// "completed" or "failed".
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
}

/// Serialized summary of a sweep (`summary.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub axis: SweepAxis,
    pub entries: Vec<SweepEntry>,
    /// Log-log least-squares slope of each metric against the axis value,
    /// over the completed runs with positive metric values.
    pub slopes: BTreeMap<String, f64>,
}

/// In-memory result of a sweep: the summary plus each run's full outcome
/// (`None` for failed runs).
#[derive(Debug)]
pub struct SweepOutcome {
    pub summary: SweepSummary,
    pub outcomes: Vec<Option<RunOutcome>>,
}

/// Least-squares slope of `ln y` against `ln x`; `None` below two points.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

/// Run the sweep into `out_dir` (one `run_NNN` subdirectory per value).
/// Individual run failures are recorded in the summary and the sweep
/// continues; only sweep-level problems (bad spec, unwritable directory)
/// abort. Writes `sweep.json` (echo), `summary.json`, and `sweep.csv`.
pub fn sweep(file: &SweepFile, out_dir: &Path) -> SimResult<SweepOutcome> {
    validate_sweep(&file.spec)?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("sweep.json"), file)?;

    let chosen: Vec<&str> = if file.spec.metrics.is_empty() {
        METRIC_NAMES.to_vec()
    } else {
        file.spec.metrics.iter().map(String::as_str).collect()
    };

    let mut entries = Vec::new();
    let mut outcomes = Vec::new();
    for (i, &value) in file.spec.values.iter().enumerate() {
        let sub = out_dir.join(format!("run_{i:03}"));
        let result = file
            .spec
            .axis
            .apply(&file.base, value)
            .and_then(|cfg| run(&cfg, &sub).map(|out| (cfg, out)));
        match result {
            Ok((cfg, outcome)) => {
                let all = run_metrics(&outcome, &cfg);
                let metrics: BTreeMap<String, f64> = all
                    .into_iter()
                    .filter(|(k, _)| chosen.contains(&k.as_str()))
                    .collect();
                entries.push(SweepEntry {
                    value,
                    status: "completed".to_string(),
                    error: None,
                    metrics,
                });
                outcomes.push(Some(outcome));
            }
            Err(e) => {
                entries.push(SweepEntry {
                    value,
                    status: "failed".to_string(),
                    error: Some(format!("{} ({})", e, e.kind())),
                    metrics: BTreeMap::new(),
                });
                outcomes.push(None);
            }
        }
    }

    let mut slopes = BTreeMap::new();
    for name in &chosen {
        let points: Vec<(f64, f64)> = entries
            .iter()
            .filter(|e| e.status == "completed")
            .filter_map(|e| {
                e.metrics
                    .get(*name)
                    .filter(|v| v.is_finite() && **v > 0.0)
                    .map(|v| (e.value, *v))
            })
            .collect();
        if let Some(s) = fit_log_slope(&points) {
            slopes.insert(name.to_string(), s);
        }
    }

    let summary = SweepSummary {
        schema_version: CONFIG_SCHEMA_VERSION,
        axis: file.spec.axis,
        entries,
        slopes,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;

    let mut header = vec!["index".to_string(), "value".to_string(), "status".to_string()];
    header.extend(chosen.iter().map(|s| s.to_string()));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(
        &out_dir.join("sweep.csv"),
        &header_refs,
        summary.entries.iter().enumerate().map(|(i, e)| {
            let mut row = vec![
                format_float(i as f64),
                format_float(e.value),
                e.status.clone(),
            ];
            for name in &chosen {
                row.push(
                    e.metrics
                        .get(*name)
                        .map(|v| format_float(*v))
                        .unwrap_or_default(),
                );
            }
            row
        }),
    )?;

    Ok(SweepOutcome { summary, outcomes })
}

fn read_table(path: &Path) -> SimResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for cell in record.iter() {
            let v = match cell {
                "true" => 1.0,
                "false" => 0.0,
                "" => f64::NAN,
                other => other.parse::<f64>().map_err(|_| {
                    SimError::ConfigParse(format!(
                        "{}: non-numeric cell '{other}'",
                        path.display()
                    ))
                })?,
            };
            row.push(v);
        }
        rows.push(row);
    }
    Ok((header, rows))
}

fn column(header: &[String], rows: &[Vec<f64>], name: &str) -> Option<Vec<f64>> {
    let idx = header.iter().position(|h| h == name)?;
    Some(rows.iter().map(|r| r[idx]).collect())
}

/// Re-validate a finished run directory offline: parse every table, check
/// time stamps, re-accumulate the energy residual from the recorded rates,
/// and re-check the per-step mass, density-positivity, radius-floor,
/// bubble-mass, and wall-margin invariants. Pure reader — never touches the
/// directory.
pub fn check(run_dir: &Path) -> SimResult<ValidationReport> {
    let mut checks: Vec<ValidationCheck> = Vec::new();
    let mut push = |bound: &str, ok: bool, detail: Option<String>| {
        checks.push(ValidationCheck {
            bound: bound.to_string(),
            ok,
            detail: if ok { None } else { detail },
        });
    };

    let cfg = load_config(&run_dir.join("config.json"));
    push(
        "config.json parses",
        cfg.is_ok(),
        cfg.as_ref().err().map(|e| e.to_string()),
    );
    let cfg = cfg.ok();

    let constants: SimResult<ConstantsFile> = read_json(&run_dir.join("constants.json"));
    push(
        "constants.json parses",
        constants.is_ok(),
        constants.as_ref().err().map(|e| e.to_string()),
    );

    let energy = read_table(&run_dir.join("energy.csv"));
    push(
        "energy.csv parses",
        energy.is_ok(),
        energy.as_ref().err().map(|e| e.to_string()),
    );

    let mut stamp_count = None;
    if let Ok((header, rows)) = &energy {
        let t = column(header, rows, "t").unwrap_or_default();
        stamp_count = Some(t.len());
        let starts_at_zero = t.first().copied() == Some(0.0);
        let increasing = t.windows(2).all(|w| w[1] > w[0]);
        push(
            "energy.csv time stamps start at 0 and strictly increase",
            starts_at_zero && increasing,
            Some(format!("first = {:?}, monotone = {increasing}", t.first())),
        );

        // Re-accumulate the energy residual from the recorded rates using
        // the same right-endpoint rule the driver used.
        let need: Option<Vec<Vec<f64>>> = [
            "reduced_energy",
            "viscous_dissipation",
            "penalization_residual",
            "diffusion_dissipation",
            "gravity_work",
            "pressure_work",
            "surface_work",
            "residual",
        ]
        .iter()
        .map(|name| column(header, rows, name))
        .collect();
        if let Some(cols) = need {
            let (red, visc, pen, diff, grav, pres, surf, res) = (
                &cols[0], &cols[1], &cols[2], &cols[3], &cols[4], &cols[5], &cols[6], &cols[7],
            );
            let mut acc = 0.0;
            let mut worst = 0.0f64;
            for i in 0..t.len() {
                if i > 0 {
                    let dt = t[i] - t[i - 1];
                    let dissipation = visc[i] + pen[i] + diff[i];
                    let work = grav[i] + pres[i] + surf[i];
                    acc += dt * (dissipation - work);
                }
                let recomputed = red[i] + acc - red[0];
                worst = worst.max((recomputed - res[i]).abs());
            }
            let scale = red.first().map(|v| v.abs().max(1.0)).unwrap_or(1.0);
            push(
                "residual column re-accumulates from recorded rates",
                worst <= 1e-9 * scale,
                Some(format!("worst deviation {worst:.3e}")),
            );
        } else {
            push(
                "residual column re-accumulates from recorded rates",
                false,
                Some("energy.csv misses expected columns".to_string()),
            );
        }
    }

    let steps = read_table(&run_dir.join("steps.csv"));
    push(
        "steps.csv parses",
        steps.is_ok(),
        steps.as_ref().err().map(|e| e.to_string()),
    );
    if let Ok((header, rows)) = &steps {
        let mass = column(header, rows, "mass_rel_error").unwrap_or_default();
        let worst = mass.iter().cloned().fold(0.0, f64::max);
        push(
            "per-step relative mass drift <= 1e-10",
            worst <= MASS_DRIFT_LIMIT + 1e-16,
            Some(format!("worst {worst:.3e}")),
        );
        let min_rho = column(header, rows, "min_density").unwrap_or_default();
        let worst_rho = min_rho.iter().cloned().fold(f64::INFINITY, f64::min);
        push(
            "density stayed positive in every committed step",
            rows.is_empty() || worst_rho > 0.0,
            Some(format!("min {worst_rho:.3e}")),
        );
        if let Some(n) = stamp_count {
            push(
                "steps.csv has one row per committed step",
                rows.len() + 1 == n,
                Some(format!("{} step rows vs {n} stamps", rows.len())),
            );
        }
    }

    let traj = read_table(&run_dir.join("trajectory.csv"));
    push(
        "trajectory.csv parses",
        traj.is_ok(),
        traj.as_ref().err().map(|e| e.to_string()),
    );
    if let (Ok((header, rows)), Some(cfg)) = (&traj, &cfg) {
        let r = column(header, rows, "R_b").unwrap_or_default();
        let rho_b = column(header, rows, "rho_b").unwrap_or_default();
        let m_b = column(header, rows, "m_b").unwrap_or_default();
        let floor = 0.5 * cfg.bubble.r0;
        let min_r = r.iter().cloned().fold(f64::INFINITY, f64::min);
        push(
            "bubble radius stayed above the collapse floor",
            min_r >= floor,
            Some(format!("min radius {min_r:.6e} vs floor {floor:.6e}")),
        );
        let mut worst_rho = 0.0f64;
        for (ri, pi) in r.iter().zip(rho_b.iter()) {
            let predicted = (cfg.bubble.r0 / ri).powi(3) * cfg.params.rho_b0;
            worst_rho = worst_rho.max((pi - predicted).abs() / predicted.abs().max(1e-300));
        }
        push(
            "bubble density follows the volume law (R0/R)^3",
            worst_rho <= 1e-10,
            Some(format!("worst relative deviation {worst_rho:.3e}")),
        );
        let (m_min, m_max) = m_b.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| {
            (a.0.min(*v), a.1.max(*v))
        });
        push(
            "bubble mass is conserved along the trajectory",
            rows.is_empty() || (m_max - m_min) <= 1e-10 * m_max.abs().max(1e-300),
            Some(format!("mass spread [{m_min:.12e}, {m_max:.12e}]")),
        );
    }

    let compat = read_table(&run_dir.join("compatibility.csv"));
    push(
        "compatibility.csv parses",
        compat.is_ok(),
        compat.as_ref().err().map(|e| e.to_string()),
    );
    if let Ok((header, rows)) = &compat {
        let margin = column(header, rows, "margin").unwrap_or_default();
        let sigma = column(header, rows, "sigma").unwrap_or_default();
        let ok = margin
            .iter()
            .zip(sigma.iter())
            .all(|(m, s)| *m >= *s - 1e-12);
        push(
            "wall margin stayed at or above sigma in every committed state",
            ok,
            Some("a committed state sits closer to the wall than sigma".to_string()),
        );
    }

    let report_path = run_dir.join("report.json");
    let error_path = run_dir.join("error.json");
    if report_path.exists() {
        let report: SimResult<RunReport> = read_json(&report_path);
        push(
            "report.json parses",
            report.is_ok(),
            report.as_ref().err().map(|e| e.to_string()),
        );
        if let Ok(report) = &report {
            push(
                "report declares a completed run",
                report.status == "completed",
                Some(format!("status '{}'", report.status)),
            );
            if let Some(n) = stamp_count {
                push(
                    "report step count matches the energy table",
                    report.steps + 1 == n,
                    Some(format!("{} steps vs {n} stamps", report.steps)),
                );
            }
        }
    } else if error_path.exists() {
        let err: SimResult<ErrorFile> = read_json(&error_path);
        push(
            "error.json parses",
            err.is_ok(),
            err.as_ref().err().map(|e| e.to_string()),
        );
        if let Ok(err) = &err {
            push(
                "error file carries a guard/failure classification",
                !err.kind.is_empty() && [2, 3, 4].contains(&err.exit_code),
                Some(format!("kind '{}', exit code {}", err.kind, err.exit_code)),
            );
        }
    } else {
        push(
            "run outcome file (report.json or error.json) present",
            false,
            Some("neither report.json nor error.json exists".to_string()),
        );
    }

    Ok(ValidationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_config() -> RunConfig {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            params: SimulationParams::default(),
            domain: DomainConfig {
                lower: [0.0; 3],
                upper: [1.0; 3],
                resolution: [16, 16, 16],
            },
            basis_size: 6,
            initial: InitialData::default(),
            bubble: BubbleConfig {
                x0: [0.5; 3],
                r0: 0.2,
                v0: [0.0; 3],
                omega0: [0.0; 3],
                lambda0: 0.0,
            },
            dt: 2e-3,
            horizon: 1e-2,
            sigma: 0.05,
            picard: PicardConfig::default(),
            snapshot_every: 2,
            seed: 7,
            allow_long_horizon: true,
            ball_lattice: 8,
            chi_subsamples: 2,
            dump_fields: false,
        }
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let text = r#"{
            "schema_version": 1,
            "domain": {"lower": [0,0,0], "upper": [1,1,1], "resolution": [8,8,8]},
            "bubble": {"x0": [0.5,0.5,0.5], "r0": 0.2},
            "dt": 0.001,
            "horizon": 0.01
        }"#;
        let cfg: RunConfig = serde_json::from_str(text).expect("minimal config must parse");
        assert_eq!(cfg.basis_size, default_basis_size());
        assert_eq!(cfg.picard.iterations, 1);
        assert!(matches!(cfg.initial.velocity, VelocityInit::Zero));
        assert!(!cfg.allow_long_horizon);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{
            "schema_version": 1,
            "domain": {"lower": [0,0,0], "upper": [1,1,1], "resolution": [8,8,8]},
            "bubble": {"x0": [0.5,0.5,0.5], "r0": 0.2},
            "dt": 0.001,
            "horizon": 0.01,
            "tyop": true
        }"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn prepare_rejects_non_integer_step_count() {
        let mut cfg = test_config();
        cfg.horizon = 0.0101;
        let err = prepare(&cfg).expect_err("non-integer step count must be rejected");
        assert_eq!(err.exit_code(), 2, "validation failures exit with 2, got {err}");
    }

    #[test]
    fn prepare_rejects_initial_wall_contact() {
        let mut cfg = test_config();
        cfg.bubble.x0 = [0.22, 0.5, 0.5];
        let err = prepare(&cfg).expect_err("margin below sigma at t = 0 must be rejected");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn initial_density_blends_the_two_phases() {
        let mut cfg = test_config();
        cfg.initial.rho_f0 = 2.0;
        cfg.params.rho_b0 = 0.5;
        let prep = prepare(&cfg).expect("config valid");
        // Cell at the bubble center is pure bubble; a corner cell is pure fluid.
        let center = prep.dom.idx(8, 8, 8);
        assert_relative_eq!(prep.rho.values[center], 0.5, max_relative = 1e-12);
        assert_relative_eq!(prep.rho.values[0], 2.0, max_relative = 1e-12);
        // Interface cells lie strictly between the phase values.
        assert!(prep.rho.min() >= 0.5 - 1e-12 && prep.rho.max() <= 2.0 + 1e-12);
    }

    #[test]
    fn random_initial_velocity_is_seed_deterministic() {
        let mut cfg = test_config();
        cfg.initial.velocity = VelocityInit::Random { amplitude: 0.1 };
        let a = prepare(&cfg).expect("valid").state.alpha;
        let b = prepare(&cfg).expect("valid").state.alpha;
        assert_eq!(a, b, "same seed must reproduce the same coefficients");
        cfg.seed = 8;
        let c = prepare(&cfg).expect("valid").state.alpha;
        assert_ne!(a, c, "different seeds must differ");
        let sup = a.amax();
        assert!(
            sup <= 0.1 / (6f64).sqrt() + 1e-15,
            "coefficients bounded by amplitude/sqrt(N), got {sup}"
        );
    }

    #[test]
    fn bubble_mode_init_reproduces_the_mode_near_the_center() {
        let mut cfg = test_config();
        cfg.domain.resolution = [24, 24, 24];
        cfg.basis_size = 24;
        cfg.bubble.lambda0 = 0.3;
        cfg.bubble.v0 = [0.05, 0.0, 0.0];
        cfg.initial.velocity = VelocityInit::BubbleMode;
        let prep = prepare(&cfg).expect("valid");
        let u = prep.basis.velocity_field(&prep.state.alpha);
        // At the bubble center the mode is exactly V0; the basis projection
        // adds truncation error but must keep the bulk of it.
        let probe = u.sample([0.5, 0.5, 0.5]);
        assert!(
            (probe[0] - 0.05).abs() < 0.03,
            "projected mode keeps the translation at the center, got {probe:?}"
        );
    }

    #[test]
    fn wall_window_is_one_inside_and_zero_on_the_wall() {
        let dom = BoxDomain::unit(8);
        assert_eq!(wall_window(&dom, [0.5; 3]), 1.0);
        assert_eq!(wall_window(&dom, [0.3, 0.6, 0.4]), 1.0);
        assert_eq!(wall_window(&dom, [0.0, 0.5, 0.5]), 0.0);
        let near = wall_window(&dom, [0.1, 0.5, 0.5]);
        assert!(near > 0.0 && near < 1.0, "decay region, got {near}");
    }

    #[test]
    fn sweep_axis_apply_sets_the_right_knob() {
        let base = test_config();
        let c = SweepAxis::NPen.apply(&base, 1e4).expect("valid");
        assert_eq!(c.params.n_pen, 1e4);
        let c = SweepAxis::Epsilon.apply(&base, 1e-3).expect("valid");
        assert_eq!(c.params.epsilon, 1e-3);
        let c = SweepAxis::Resolution.apply(&base, 24.0).expect("valid");
        assert_eq!(c.domain.resolution, [24, 24, 24]);
        let err = SweepAxis::BasisSize.apply(&base, 12.5);
        assert!(err.is_err(), "fractional basis size must be rejected");
    }

    #[test]
    fn sweep_validation_enforces_monotone_positive_values() {
        let ok = SweepSpec {
            axis: SweepAxis::NPen,
            values: vec![1e2, 1e3, 1e4],
            metrics: vec![],
        };
        assert!(validate_sweep(&ok).is_ok());
        let nonmono = SweepSpec {
            axis: SweepAxis::NPen,
            values: vec![1e2, 1e4, 1e3],
            metrics: vec![],
        };
        assert!(validate_sweep(&nonmono).is_err());
        let unknown = SweepSpec {
            axis: SweepAxis::NPen,
            values: vec![1e2, 1e3],
            metrics: vec!["no_such_metric".to_string()],
        };
        assert!(validate_sweep(&unknown).is_err());
    }

    #[test]
    fn log_slope_recovers_exact_power_laws() {
        let points: Vec<(f64, f64)> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&x| (x, 5.0 / x))
            .collect();
        let s = fit_log_slope(&points).expect("three points fit");
        assert_relative_eq!(s, -1.0, max_relative = 1e-12);
        let points: Vec<(f64, f64)> = [2.0, 4.0, 8.0].iter().map(|&x| (x, x * x)).collect();
        let s = fit_log_slope(&points).expect("three points fit");
        assert_relative_eq!(s, 2.0, max_relative = 1e-12);
        assert!(fit_log_slope(&[(1.0, 1.0)]).is_none());
    }

    #[test]
    fn horizon_advisory_refusal_and_override() {
        let dir = tempfile::tempdir().expect("tempdir");
        let mut cfg = test_config();
        cfg.allow_long_horizon = false;
        // The certified window for desk-scale parameters is far below any
        // usable horizon, so the refusal must fire...
        let err = run(&cfg, dir.path()).expect_err("advisory refusal");
        assert_eq!(err.exit_code(), 2);
        let error_file: ErrorFile =
            read_json(&dir.path().join("error.json")).expect("error file written");
        assert_eq!(error_file.kind, "invalid_input");
        // ...and the explicit override must clear it.
        cfg.allow_long_horizon = true;
        let dir2 = tempfile::tempdir().expect("tempdir");
        run(&cfg, dir2.path()).expect("override accepted");
    }
}
