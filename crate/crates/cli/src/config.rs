//! Strict scenario schema: JSON in, validated core objects out.
//!
//! Unknown keys are rejected by serde, cross-field requirements are checked
//! here, and every numeric range is re-validated by the core constructors —
//! so a config error always names the offending field or value. Growth laws
//! are spelled `{"type": "haldane", "M": …, "K": …, "a": …}` or
//! `{"type": "monod", "mu_max": …, "K": …}`.

use std::path::Path;

use chemostat_core::age::AgeSystem;
use chemostat_core::age_pde::{self, AgeGrid, MortalityKernel};
use chemostat_core::analysis::GridSpec;
use chemostat_core::kinetics::GrowthRateModel;
use chemostat_core::lumped::{FeedbackConfig, LumpedSystem};
use chemostat_core::sim::IntegratorConfig;
use serde::Deserialize;

use crate::{cfg_err, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lumped,
    Age,
    AgePde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthKind {
    Haldane,
    Monod,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthSpec {
    #[serde(rename = "type")]
    pub kind: GrowthKind,
    #[serde(rename = "M", default)]
    pub m: Option<f64>,
    #[serde(rename = "K", default)]
    pub k: Option<f64>,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub mu_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub growth: GrowthSpec,
    pub s_in: f64,
    pub d_star: f64,
    pub b: f64,
    pub p0: f64,
    #[serde(default)]
    pub q0: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSpec {
    pub delta: f64,
    pub alpha: f64,
    /// Certificate multiplier for the three-state check (searched when
    /// absent).
    #[serde(default)]
    pub phi: Option<f64>,
    /// Index into the ascending-substrate equilibrium list the loop
    /// stabilizes; defaults to the last (largest `S*`).
    #[serde(default)]
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Open,
    Closed,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub mode: RunMode,
    pub t_final: f64,
    #[serde(default)]
    pub initial: Vec<Vec<f64>>,
    /// Constant dilution for open-loop runs (defaults to `d_star`).
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
    #[serde(default)]
    pub max_step: Option<f64>,
    /// Record the certificate value along closed-loop trajectories.
    #[serde(default)]
    pub record_lyapunov: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    #[serde(default)]
    pub log: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// One axis per state component, in state order.
    pub axes: Vec<AxisSpec>,
    pub mode: RunMode,
    pub t_final: f64,
    #[serde(default)]
    pub d: Option<f64>,
    /// Convergence ball for basin labeling (defaults to 1e-3).
    #[serde(default)]
    pub ball: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaKind {
    Constant,
    Ramp,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSpec {
    #[serde(rename = "type")]
    pub kind: BetaKind,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default)]
    pub from: Option<f64>,
    #[serde(default)]
    pub to: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    Exponential,
    Cohort,
    Equilibrium,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(rename = "type")]
    pub kind: ProfileKind,
    #[serde(default)]
    pub rate: Option<f64>,
    #[serde(default)]
    pub mass: Option<f64>,
    #[serde(default)]
    pub center: Option<f64>,
    #[serde(default)]
    pub width: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSpec {
    pub beta: BetaSpec,
    pub n_cells: usize,
    /// Grid ladder for `pde-compare` (defaults to `n_cells` × {1, 2, 4}).
    #[serde(default)]
    pub refinements: Option<Vec<usize>>,
    pub initial: ProfileSpec,
    pub s0: f64,
    /// Time step as a fraction of the cell width (defaults to 0.5).
    #[serde(default)]
    pub dt_factor: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceSpec {
    /// Substrate level pinning the washout construction (searched when
    /// absent).
    #[serde(default)]
    pub s_bar: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub feedback: Option<FeedbackSpec>,
    #[serde(default)]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub pde: Option<PdeSpec>,
    #[serde(default)]
    pub divergence: Option<DivergenceSpec>,
}

fn require(field: &str, v: Option<f64>, ctx: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Config(format!("{ctx} requires the field `{field}`")))
}

fn forbid(field: &str, v: Option<f64>, ctx: &str) -> Result<(), CliError> {
    if v.is_some() {
        return Err(CliError::Config(format!("{ctx} does not take the field `{field}`")));
    }
    Ok(())
}

impl GrowthSpec {
    pub fn build(&self) -> Result<GrowthRateModel<f64>, CliError> {
        match self.kind {
            GrowthKind::Haldane => {
                forbid("mu_max", self.mu_max, "growth type `haldane`")?;
                GrowthRateModel::haldane(
                    require("M", self.m, "growth type `haldane`")?,
                    require("K", self.k, "growth type `haldane`")?,
                    require("a", self.a, "growth type `haldane`")?,
                )
                .map_err(cfg_err)
            }
            GrowthKind::Monod => {
                forbid("M", self.m, "growth type `monod`")?;
                forbid("a", self.a, "growth type `monod`")?;
                GrowthRateModel::monod(
                    require("mu_max", self.mu_max, "growth type `monod`")?,
                    require("K", self.k, "growth type `monod`")?,
                )
                .map_err(cfg_err)
            }
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => {
                CliError::Config(format!("in scenario {}: {msg}", path.display()))
            }
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The two-state system; errors unless the scenario declares `lumped`.
    pub fn build_lumped(&self) -> Result<LumpedSystem<f64>, CliError> {
        if self.model.kind != ModelKind::Lumped {
            return Err(CliError::Config(
                "this operation on the configured model needs `kind: \"lumped\"`".into(),
            ));
        }
        forbid("q0", self.model.q0, "the lumped model")?;
        forbid("gamma", self.model.gamma, "the lumped model")?;
        LumpedSystem::new(
            self.model.growth.build()?,
            self.model.s_in,
            self.model.d_star,
            self.model.b,
            self.model.p0,
        )
        .map_err(cfg_err)
    }

    /// The three-state system backing both `age` and `age_pde` scenarios.
    pub fn build_age(&self) -> Result<AgeSystem<f64>, CliError> {
        if self.model.kind == ModelKind::Lumped {
            return Err(CliError::Config(
                "this operation on the configured model needs `kind: \"age\"` or `\"age_pde\"`"
                    .into(),
            ));
        }
        AgeSystem::new(
            self.model.growth.build()?,
            self.model.s_in,
            self.model.d_star,
            self.model.b,
            self.model.p0,
            require("q0", self.model.q0, "the age-structured model")?,
            require("gamma", self.model.gamma, "the age-structured model")?,
        )
        .map_err(cfg_err)
    }

    pub fn feedback(&self) -> Result<(FeedbackConfig<f64>, &FeedbackSpec), CliError> {
        let spec = self
            .feedback
            .as_ref()
            .ok_or_else(|| CliError::Config("this command requires a `feedback` section".into()))?;
        let cfg = FeedbackConfig::new(spec.delta, spec.alpha).map_err(cfg_err)?;
        Ok((cfg, spec))
    }

    pub fn run(&self) -> Result<&RunSpec, CliError> {
        self.run
            .as_ref()
            .ok_or_else(|| CliError::Config("this command requires a `run` section".into()))
    }

    pub fn sweep(&self) -> Result<&SweepSpec, CliError> {
        self.sweep
            .as_ref()
            .ok_or_else(|| CliError::Config("this command requires a `sweep` section".into()))
    }

    pub fn pde(&self) -> Result<&PdeSpec, CliError> {
        self.pde
            .as_ref()
            .ok_or_else(|| CliError::Config("this command requires a `pde` section".into()))
    }

    pub fn integrator(&self) -> Result<IntegratorConfig<f64>, CliError> {
        let mut icfg = IntegratorConfig::default();
        if let Some(run) = &self.run {
            if let Some(v) = run.rel_tol {
                icfg.rel_tol = v;
            }
            if let Some(v) = run.abs_tol {
                icfg.abs_tol = v;
            }
            icfg.max_step = run.max_step;
        }
        icfg.validate().map_err(cfg_err)?;
        Ok(icfg)
    }
}

impl AxisSpec {
    pub fn build(&self) -> Result<GridSpec<f64>, CliError> {
        if self.log {
            GridSpec::logarithmic(self.lo, self.hi, self.n).map_err(cfg_err)
        } else {
            GridSpec::linear(self.lo, self.hi, self.n).map_err(cfg_err)
        }
    }
}

impl BetaSpec {
    /// The mortality profile as a function of age (`a_max` fixes the ramp's
    /// right endpoint).
    pub fn function(&self, a_max: f64) -> Result<impl Fn(f64) -> f64 + '_, CliError> {
        let (v0, v1) = match self.kind {
            BetaKind::Constant => {
                forbid("from", self.from, "beta type `constant`")?;
                forbid("to", self.to, "beta type `constant`")?;
                let v = require("value", self.value, "beta type `constant`")?;
                (v, v)
            }
            BetaKind::Ramp => {
                forbid("value", self.value, "beta type `ramp`")?;
                (
                    require("from", self.from, "beta type `ramp`")?,
                    require("to", self.to, "beta type `ramp`")?,
                )
            }
        };
        Ok(move |a: f64| v0 + (v1 - v0) * (a / a_max).clamp(0.0, 1.0))
    }
}

impl PdeSpec {
    pub fn dt_factor(&self) -> Result<f64, CliError> {
        let f = self.dt_factor.unwrap_or(0.5);
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Config(format!(
                "pde `dt_factor` = {f} must lie in (0, 1]"
            )));
        }
        Ok(f)
    }

    pub fn refinement_ladder(&self) -> Vec<usize> {
        self.refinements
            .clone()
            .unwrap_or_else(|| vec![self.n_cells, self.n_cells * 2, self.n_cells * 4])
    }

    /// Grid + mortality kernel for one cell count.
    pub fn build_grid(
        &self,
        sys: &AgeSystem<f64>,
        n_cells: usize,
    ) -> Result<(AgeGrid<f64>, MortalityKernel<f64>), CliError> {
        let grid = AgeGrid::from_decay(sys.b, sys.p0, sys.q0, sys.gamma, sys.d_star, n_cells)
            .map_err(cfg_err)?;
        let beta = self.beta.function(grid.a_max)?;
        let kernel = MortalityKernel::build(&grid, beta, sys.b, sys.p0, sys.q0, sys.gamma)
            .map_err(cfg_err)?;
        Ok((grid, kernel))
    }

    /// The initial age profile. A `mass` of exactly zero is allowed and
    /// yields the empty reactor (the washout-drift base case); the core
    /// profile builders themselves insist on positive mass.
    pub fn build_profile(
        &self,
        sys: &AgeSystem<f64>,
        grid: &AgeGrid<f64>,
        kernel: &MortalityKernel<f64>,
    ) -> Result<Vec<f64>, CliError> {
        let ctx_mass = |k: &str| format!("profile type `{k}`");
        match self.initial.kind {
            ProfileKind::Exponential => {
                forbid("center", self.initial.center, "profile type `exponential`")?;
                forbid("width", self.initial.width, "profile type `exponential`")?;
                let rate = require("rate", self.initial.rate, &ctx_mass("exponential"))?;
                let mass = require("mass", self.initial.mass, &ctx_mass("exponential"))?;
                if mass == 0.0 {
                    return Ok(vec![0.0; grid.n_cells + 1]);
                }
                age_pde::exponential_profile(grid, rate, mass).map_err(cfg_err)
            }
            ProfileKind::Cohort => {
                forbid("rate", self.initial.rate, "profile type `cohort`")?;
                let center = require("center", self.initial.center, &ctx_mass("cohort"))?;
                let width = require("width", self.initial.width, &ctx_mass("cohort"))?;
                let mass = require("mass", self.initial.mass, &ctx_mass("cohort"))?;
                if mass == 0.0 {
                    return Ok(vec![0.0; grid.n_cells + 1]);
                }
                age_pde::cohort_profile(grid, center, width, mass).map_err(cfg_err)
            }
            ProfileKind::Equilibrium => {
                for (name, v) in [
                    ("rate", self.initial.rate),
                    ("mass", self.initial.mass),
                    ("center", self.initial.center),
                    ("width", self.initial.width),
                ] {
                    forbid(name, v, "profile type `equilibrium`")?;
                }
                let eqs = sys.equilibria().map_err(cfg_err)?;
                let eq = eqs.last().ok_or_else(|| {
                    CliError::Config(
                        "profile type `equilibrium` needs an interior equilibrium".into(),
                    )
                })?;
                Ok(age_pde::equilibrium_profile(sys, eq, grid, kernel))
            }
        }
    }
}

/// Picks the equilibrium a feedback loop stabilizes: the configured
/// `feedback.target` index into the ascending-substrate list, or the last
/// entry when unset.
pub fn select_equilibrium(len: usize, target: Option<usize>) -> Result<usize, CliError> {
    if len == 0 {
        return Err(CliError::Config(
            "the configured model has no interior equilibrium to stabilize".into(),
        ));
    }
    match target {
        None => Ok(len - 1),
        Some(i) if i < len => Ok(i),
        Some(i) => Err(CliError::Config(format!(
            "feedback `target` = {i} is out of range: the model has {len} interior equilibria"
        ))),
    }
}
