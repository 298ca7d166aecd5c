//! Config-driven runs behind the `ifbounds` binary.
//!
//! Each subcommand builds a report struct, then writes it as a CSV table and a
//! JSON summary next to each other under an output prefix. Reports contain
//! nothing that depends on the worker count, so outputs are byte-stable.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    bogoliubov_lower_from, bogoliubov_upper_from, check_curve_grid, gamma_ti_from_means, homotopy_curve_from_means,
    naive_exponential, BoundEstimate, HomotopyCurve, MeanU,
};
use crate::model::{build_model, ModelConfig, ModelKind, SystemModel};
use crate::oracle::{
    check_bracket, enumerate_oracle, gaussian_oracle, quadrature_oracle, BracketReport, GridSpec, OracleMethod,
    OracleResult,
};
use crate::parallel::map_indexed;
use crate::sampler::{check_alpha_grid, diagnostics, run_chain, run_chain_ladder, ChainConfig, ChainDiagnostics};

pub const SCHEMA_VERSION: u32 = 1;

/// Standard errors used for the bracket and monotonicity verdicts.
pub const VERDICT_N_SE: f64 = 3.0;

pub const SEPARABILITY_CONVENTION: &str = "|dF| / (|E_pi0[H0]| / n_subsystems)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleChoice {
    #[default]
    Auto,
    Gaussian,
    Enumeration,
    Quadrature,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub n_steps: u64,
    /// Defaults to 10% of `n_steps`.
    #[serde(default)]
    pub burn_in: Option<u64>,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "one_u64")]
    pub thinning: u64,
}

fn default_step_size() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

fn default_alphas() -> Vec<f64> {
    vec![0.0, 1.0]
}

impl ChainSettings {
    pub fn chain_config(&self, alpha: f64, seed: u64) -> ChainConfig {
        ChainConfig {
            target_alpha: alpha,
            n_steps: self.n_steps,
            burn_in: self.burn_in.unwrap_or(self.n_steps / 10),
            step_size: self.step_size,
            thinning: self.thinning,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelConfig,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    pub chain: ChainSettings,
    #[serde(default = "one_usize")]
    pub n_repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub oracle: OracleChoice,
    /// Grid for the quadrature oracle; see [`GridSpec::default`].
    #[serde(default)]
    pub quadrature: Option<GridSpec>,
    pub outputs: String,
    #[serde(default = "one_usize")]
    pub replica_count: usize,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "(root)".to_string() } else { path };
            Error::config(path, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read config: {e}")))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        check_alpha_grid(&self.alphas).map_err(|e| Error::config("alphas", e.to_string()))?;
        if self.n_repetitions == 0 {
            return Err(Error::config("n_repetitions", "must be at least 1"));
        }
        if self.replica_count == 0 {
            return Err(Error::config("replica_count", "must be at least 1"));
        }
        if self.outputs.is_empty() {
            return Err(Error::config("outputs", "output prefix is empty"));
        }
        let discrete = self.model.kind == ModelKind::IsingBlock;
        self.chain.chain_config(0.0, 0).validate(discrete)?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<SystemModel> {
        build_model(&self.model)
    }

    fn require_curve_grid(&self) -> Result<()> {
        check_curve_grid(&self.alphas).map_err(|e| Error::config("alphas", e.to_string()))
    }
}

/// Per-invocation overrides from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub output: Option<String>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub oracle_fed: bool,
    /// Command line recorded in oracle fixtures.
    pub command_line: String,
}

impl RunOptions {
    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.seed)
    }

    fn prefix<'a>(&'a self, cfg: &'a ExperimentConfig) -> &'a str {
        self.output.as_deref().unwrap_or(&cfg.outputs)
    }

    fn workers(&self) -> usize {
        self.workers.max(1)
    }
}

// ---------------------------------------------------------------------------
// Oracle selection
// ---------------------------------------------------------------------------

/// Runs the configured oracle. `Ok(None)` when none is configured, or when
/// `auto` finds no applicable one and `required` is false.
pub fn resolve_oracle(
    cfg: &ExperimentConfig,
    model: &SystemModel,
    alphas: &[f64],
    workers: usize,
    required: bool,
) -> Result<Option<OracleResult>> {
    let grid = cfg.quadrature.unwrap_or_default();
    let result = match cfg.oracle {
        OracleChoice::None => {
            if required {
                return Err(Error::config("oracle", "this run needs an oracle but `none` is configured"));
            }
            return Ok(None);
        }
        OracleChoice::Gaussian => gaussian_oracle(model, alphas),
        OracleChoice::Enumeration => enumerate_oracle(model, alphas, workers),
        OracleChoice::Quadrature => quadrature_oracle(model, &grid, alphas, workers),
        OracleChoice::Auto => {
            let r = match model.kind() {
                ModelKind::GaussianPair => gaussian_oracle(model, alphas),
                ModelKind::IsingBlock => enumerate_oracle(model, alphas, workers),
                ModelKind::QuarticPair => quadrature_oracle(model, &grid, alphas, workers),
            };
            match r {
                Err(Error::OracleRefused(_)) if !required => return Ok(None),
                other => other,
            }
        }
    };
    result.map(Some)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub method: OracleMethod,
    pub delta_f: f64,
    pub e_u_pi: f64,
    pub e_u_pi0: f64,
    pub kl_pi_pi0: f64,
    pub error_bound: f64,
}

impl From<&OracleResult> for OracleSummary {
    fn from(r: &OracleResult) -> Self {
        Self {
            method: r.method,
            delta_f: r.delta_f,
            e_u_pi: r.e_u_pi,
            e_u_pi0: r.e_u_pi0,
            kl_pi_pi0: r.kl_pi_pi0,
            error_bound: r.error_bound,
        }
    }
}

fn oracle_fed_source(cfg: &ExperimentConfig, model: &SystemModel, alphas: &[f64], workers: usize) -> Result<OracleResult> {
    resolve_oracle(cfg, model, alphas, workers, true)?
        .ok_or_else(|| Error::OracleRefused("no oracle available for --oracle-fed".into()))
}

fn within(x: f64, lo: &BoundEstimate, hi: &BoundEstimate, n_se: f64) -> bool {
    lo.value - n_se * lo.std_error <= x && x <= hi.value + n_se * hi.std_error
}

fn ordered(lo: &BoundEstimate, hi: &BoundEstimate) -> bool {
    lo.value <= hi.value + VERDICT_N_SE * lo.std_error.hypot(hi.std_error)
}

// ---------------------------------------------------------------------------
// bounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsChecks {
    /// `lower <= upper + 3 combined SE`.
    pub bracket_ok: bool,
    /// Oracle dF inside `[lower - 3 SE, upper + 3 SE]`.
    pub oracle_inside_bracket: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub schema_version: u32,
    pub command: String,
    pub model_kind: ModelKind,
    pub oracle_fed: bool,
    pub seed_pi0: Option<u64>,
    pub seed_pi: Option<u64>,
    pub lower: BoundEstimate,
    pub upper: BoundEstimate,
    pub diagnostics_pi0: Option<ChainDiagnostics>,
    pub diagnostics_pi: Option<ChainDiagnostics>,
    pub oracle: Option<OracleSummary>,
    pub checks: BoundsChecks,
}

/// Chain seeds used by `bounds`: the seeds the curve ladder gives its
/// `alpha = 0` and `alpha = 1` rungs, so both commands see the same chains.
pub fn bounds_seeds(alphas: &[f64], base: u64) -> (u64, u64) {
    let i0 = alphas.iter().position(|&a| a == 0.0).unwrap_or(0);
    let i1 = alphas.iter().position(|&a| a == 1.0).unwrap_or(1);
    (base.wrapping_add(i0 as u64), base.wrapping_add(i1 as u64))
}

pub fn bounds_report(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<BoundsReport> {
    let model = cfg.build_model()?;
    let workers = opts.workers();
    let (lower, upper, seeds, diags, oracle) = if opts.oracle_fed {
        let o = oracle_fed_source(cfg, &model, &cfg.alphas, workers)?;
        let lower = bogoliubov_lower_from(&MeanU::exact(1.0, o.e_u_pi))?;
        let upper = bogoliubov_upper_from(&MeanU::exact(0.0, o.e_u_pi0))?;
        (lower, upper, (None, None), (None, None), Some(o))
    } else {
        let (s0, s1) = bounds_seeds(&cfg.alphas, opts.seed(cfg));
        let plan = [(0.0, s0), (1.0, s1)];
        let mut batches = map_indexed(2, workers, |i| {
            run_chain(&model, &cfg.chain.chain_config(plan[i].0, plan[i].1))
                .map_err(|e| Error::Ladder { alpha: plan[i].0, source: Box::new(e) })
        })
        .into_iter();
        let pi0 = batches.next().expect("two chains")?;
        let pi = batches.next().expect("two chains")?;
        let lower = bogoliubov_lower_from(&MeanU::from_batch(&pi)?)?;
        let upper = bogoliubov_upper_from(&MeanU::from_batch(&pi0)?)?;
        let oracle = resolve_oracle(cfg, &model, &cfg.alphas, workers, false)?;
        (
            lower,
            upper,
            (Some(s0), Some(s1)),
            (Some(diagnostics(&pi0)?), Some(diagnostics(&pi)?)),
            oracle,
        )
    };
    let checks = BoundsChecks {
        bracket_ok: ordered(&lower, &upper),
        oracle_inside_bracket: oracle.as_ref().map(|o| within(o.delta_f, &lower, &upper, VERDICT_N_SE)),
    };
    Ok(BoundsReport {
        schema_version: SCHEMA_VERSION,
        command: "bounds".into(),
        model_kind: model.kind(),
        oracle_fed: opts.oracle_fed,
        seed_pi0: seeds.0,
        seed_pi: seeds.1,
        lower,
        upper,
        diagnostics_pi0: diags.0,
        diagnostics_pi: diags.1,
        oracle: oracle.as_ref().map(OracleSummary::from),
        checks,
    })
}

impl BoundsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,alpha,value,std_error,n_effective\n");
        for (name, e) in [("bogoliubov_lower", &self.lower), ("bogoliubov_upper", &self.upper)] {
            out.push_str(&csv_row(&[
                name.to_string(),
                fmt_opt(e.alpha),
                fmt_f(e.value),
                fmt_f(e.std_error),
                fmt_f(e.n_effective),
            ]));
        }
        if let Some(o) = &self.oracle {
            out.push_str(&csv_row(&[
                "oracle_delta_f".into(),
                fmt_f(1.0),
                fmt_f(o.delta_f),
                fmt_f(o.error_bound),
                String::new(),
            ]));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// curve
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub alpha: f64,
    pub lower: f64,
    pub lower_se: f64,
    pub upper: f64,
    pub upper_se: f64,
    pub gamma: f64,
    pub gamma_se: f64,
    pub mean_u: f64,
    pub mean_u_se: f64,
}

pub const CURVE_COLUMNS: &str = "alpha,lower,lower_se,upper,upper_se,gamma,gamma_se,mean_u,mean_u_se";

impl CurveRow {
    pub fn rows(curve: &HomotopyCurve) -> Vec<CurveRow> {
        (0..curve.len())
            .map(|k| CurveRow {
                alpha: curve.alphas[k],
                lower: curve.lower_values[k],
                lower_se: curve.lower_se[k],
                upper: curve.upper_values[k],
                upper_se: curve.upper_se[k],
                gamma: curve.gamma_values[k],
                gamma_se: curve.gamma_se[k],
                mean_u: curve.mean_u_values[k],
                mean_u_se: curve.mean_u_se[k],
            })
            .collect()
    }

    fn fields(&self) -> [f64; 9] {
        [
            self.alpha,
            self.lower,
            self.lower_se,
            self.upper,
            self.upper_se,
            self.gamma,
            self.gamma_se,
            self.mean_u,
            self.mean_u_se,
        ]
    }
}

/// Interface free energy and a dimensionless separability indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    /// `gamma(1)`.
    pub delta_f: BoundEstimate,
    pub lower: BoundEstimate,
    pub upper: BoundEstimate,
    pub replica_count: usize,
    /// `delta_f / replica_count`.
    pub per_replica_energy: f64,
    /// `E_pi0[H0]`.
    pub reference_energy: f64,
    /// See `ratio_convention`; `None` when the reference energy is zero.
    pub separability_ratio: Option<f64>,
    pub ratio_convention: String,
    pub bracket_ok: bool,
    pub monotone_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveChecks {
    pub endpoints_closed: bool,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub n_se: f64,
    /// Rows whose `[lower - 3 SE, upper + 3 SE]` contains the oracle dF.
    pub oracle_bracketed_rows: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub schema_version: u32,
    pub command: String,
    pub model_kind: ModelKind,
    pub oracle_fed: bool,
    pub seed: Option<u64>,
    pub rows: Vec<CurveRow>,
    pub checks: CurveChecks,
    pub separability: SeparabilityReport,
    pub diagnostics: Vec<ChainDiagnostics>,
    pub oracle: Option<OracleSummary>,
}

pub fn curve_report(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CurveReport> {
    cfg.require_curve_grid()?;
    let model = cfg.build_model()?;
    let workers = opts.workers();
    let alphas = &cfg.alphas;
    let (means, reference_energy, diags, seed, oracle) = if opts.oracle_fed {
        let o = oracle_fed_source(cfg, &model, alphas, workers)?;
        let means = alphas
            .iter()
            .map(|&a| MeanU::exact(a, o.e_u_at(a).expect("oracle evaluated on the curve grid")))
            .collect::<Vec<_>>();
        (means, o.e_h0_pi0, vec![], None, Some(o))
    } else {
        let seed = opts.seed(cfg);
        let ladder = run_chain_ladder(&model, alphas, &cfg.chain.chain_config(0.0, seed), workers)?;
        let means = ladder.iter().map(MeanU::from_batch).collect::<Result<Vec<_>>>()?;
        let h0 = &ladder[0].h0_values;
        let reference = h0.iter().sum::<f64>() / h0.len() as f64;
        let diags = ladder.iter().map(diagnostics).collect::<Result<Vec<_>>>()?;
        let oracle = resolve_oracle(cfg, &model, alphas, workers, false)?;
        (means, reference, diags, Some(seed), oracle)
    };
    let curve = homotopy_curve_from_means(&means)?;
    let gammas = gamma_ti_from_means(&means)?;
    let lower = bogoliubov_lower_from(means.last().expect("non-empty"))?;
    let upper = bogoliubov_upper_from(&means[0])?;
    let (lv, uv) = curve.monotonicity_violations(VERDICT_N_SE);
    let rows = CurveRow::rows(&curve);
    let oracle_bracketed_rows = oracle.as_ref().map(|o| {
        rows.iter()
            .filter(|r| {
                r.lower - VERDICT_N_SE * r.lower_se <= o.delta_f && o.delta_f <= r.upper + VERDICT_N_SE * r.upper_se
            })
            .count()
    });
    let delta_f = gammas.last().expect("non-empty").to_estimate();
    let denom = reference_energy.abs() / model.n_subsystems() as f64;
    let separability = SeparabilityReport {
        per_replica_energy: delta_f.value / cfg.replica_count as f64,
        separability_ratio: (denom > 0.0).then(|| delta_f.value.abs() / denom),
        reference_energy,
        replica_count: cfg.replica_count,
        ratio_convention: SEPARABILITY_CONVENTION.into(),
        bracket_ok: ordered(&lower, &upper),
        monotone_ok: lv == 0 && uv == 0,
        delta_f,
        lower,
        upper,
    };
    Ok(CurveReport {
        schema_version: SCHEMA_VERSION,
        command: "curve".into(),
        model_kind: model.kind(),
        oracle_fed: opts.oracle_fed,
        seed,
        checks: CurveChecks {
            endpoints_closed: curve.endpoints_closed(),
            lower_violations: lv,
            upper_violations: uv,
            n_se: VERDICT_N_SE,
            oracle_bracketed_rows,
        },
        rows,
        separability,
        diagnostics: diags,
        oracle: oracle.as_ref().map(OracleSummary::from),
    })
}

impl CurveReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVE_COLUMNS}\n");
        for r in &self.rows {
            out.push_str(&csv_row(&r.fields().map(fmt_f)));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// oracle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub version: String,
    pub command_line: String,
}

/// A frozen oracle run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub generator: GeneratorInfo,
    pub model: ModelConfig,
    pub alphas: Vec<f64>,
    pub result: OracleResult,
    pub checks: BracketReport,
}

impl OracleFixture {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn oracle_fixture(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<OracleFixture> {
    let model = cfg.build_model()?;
    let result = resolve_oracle(cfg, &model, &cfg.alphas, opts.workers(), true)?
        .ok_or_else(|| Error::OracleRefused("no oracle available for this model".into()))?;
    Ok(OracleFixture {
        generator: GeneratorInfo {
            name: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command_line: opts.command_line.clone(),
        },
        model: cfg.model.clone(),
        alphas: cfg.alphas.clone(),
        checks: check_bracket(&result),
        result,
    })
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub repetition: usize,
    pub seed: u64,
    pub naive: f64,
    pub naive_se: f64,
    pub gamma_ti: f64,
    pub gamma_ti_se: f64,
    pub lower: f64,
    pub lower_se: f64,
    pub upper: f64,
    pub upper_se: f64,
    /// `gamma_ti` inside `[lower - 3 SE, upper + 3 SE]`.
    pub gamma_ti_in_bracket: bool,
}

pub const COMPARE_COLUMNS: &str =
    "repetition,seed,naive,naive_se,gamma_ti,gamma_ti_se,lower,lower_se,upper,upper_se,gamma_ti_in_bracket";

/// Error statistics of one estimator against the oracle dF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub bias: f64,
    pub rmse: f64,
}

impl EstimatorSummary {
    pub fn from_values(values: &[f64], truth: f64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let mse = values.iter().map(|v| (v - truth).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std_dev: var.sqrt(),
            bias: mean - truth,
            rmse: mse.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub command: String,
    pub model_kind: ModelKind,
    pub n_repetitions: usize,
    pub oracle_method: OracleMethod,
    pub oracle_delta_f: f64,
    pub naive: EstimatorSummary,
    pub gamma_ti: EstimatorSummary,
    pub containment_rate: f64,
    pub rows: Vec<CompareRow>,
}

/// Repetition `r` samples a full ladder with base seed
/// `seed + r * alphas.len()`, so no two chains share a seed.
pub fn compare_report(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<CompareReport> {
    if opts.oracle_fed {
        return Err(Error::config("--oracle-fed", "compare always samples; oracle-fed mode does not apply"));
    }
    cfg.require_curve_grid()?;
    let model = cfg.build_model()?;
    let workers = opts.workers();
    let oracle = resolve_oracle(cfg, &model, &[0.0, 1.0], workers, true)?
        .ok_or_else(|| Error::OracleRefused("compare needs an oracle".into()))?;
    let base = opts.seed(cfg);
    let stride = cfg.alphas.len() as u64;
    let rows = map_indexed(cfg.n_repetitions, workers, |r| {
        let seed = base.wrapping_add(r as u64 * stride);
        let ladder = run_chain_ladder(&model, &cfg.alphas, &cfg.chain.chain_config(0.0, seed), 1)?;
        let means = ladder.iter().map(MeanU::from_batch).collect::<Result<Vec<_>>>()?;
        let naive = naive_exponential(&ladder[0])?;
        let gamma = gamma_ti_from_means(&means)?.last().expect("non-empty").to_estimate();
        let lower = bogoliubov_lower_from(means.last().expect("non-empty"))?;
        let upper = bogoliubov_upper_from(&means[0])?;
        Ok(CompareRow {
            repetition: r,
            seed,
            naive: naive.value,
            naive_se: naive.std_error,
            gamma_ti: gamma.value,
            gamma_ti_se: gamma.std_error,
            lower: lower.value,
            lower_se: lower.std_error,
            upper: upper.value,
            upper_se: upper.std_error,
            gamma_ti_in_bracket: within(gamma.value, &lower, &upper, VERDICT_N_SE),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let naive: Vec<f64> = rows.iter().map(|r| r.naive).collect();
    let gamma: Vec<f64> = rows.iter().map(|r| r.gamma_ti).collect();
    let contained = rows.iter().filter(|r| r.gamma_ti_in_bracket).count();
    Ok(CompareReport {
        schema_version: SCHEMA_VERSION,
        command: "compare".into(),
        model_kind: model.kind(),
        n_repetitions: cfg.n_repetitions,
        oracle_method: oracle.method,
        oracle_delta_f: oracle.delta_f,
        naive: EstimatorSummary::from_values(&naive, oracle.delta_f),
        gamma_ti: EstimatorSummary::from_values(&gamma, oracle.delta_f),
        containment_rate: contained as f64 / rows.len() as f64,
        rows,
    })
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARE_COLUMNS}\n");
        for r in &self.rows {
            out.push_str(&csv_row(&[
                r.repetition.to_string(),
                r.seed.to_string(),
                fmt_f(r.naive),
                fmt_f(r.naive_se),
                fmt_f(r.gamma_ti),
                fmt_f(r.gamma_ti_se),
                fmt_f(r.lower),
                fmt_f(r.lower_se),
                fmt_f(r.upper),
                fmt_f(r.upper_se),
                r.gamma_ti_in_bracket.to_string(),
            ]));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

/// 17 significant digits: parses back to the identical `f64`.
pub fn fmt_f(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f).unwrap_or_default()
}

fn csv_row(fields: &[String]) -> String {
    let mut s = fields.join(",");
    s.push('\n');
    s
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write_file(path: PathBuf, contents: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, contents)?;
    Ok(path)
}

fn output_path(prefix: &str, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_{suffix}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bounds,
    Curve,
    Oracle,
    Compare,
}

/// Runs `command` and writes its report files; returns the written paths.
pub fn run(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let prefix = opts.prefix(cfg);
    let mut written = Vec::new();
    match command {
        Command::Bounds => {
            let r = bounds_report(cfg, opts)?;
            written.push(write_file(output_path(prefix, "bounds.csv"), &r.to_csv())?);
            written.push(write_file(output_path(prefix, "bounds.json"), &to_json(&r)?)?);
        }
        Command::Curve => {
            let r = curve_report(cfg, opts)?;
            written.push(write_file(output_path(prefix, "curve.csv"), &r.to_csv())?);
            written.push(write_file(output_path(prefix, "curve.json"), &to_json(&r)?)?);
        }
        Command::Oracle => {
            let r = oracle_fixture(cfg, opts)?;
            written.push(write_file(output_path(prefix, "oracle.json"), &to_json(&r)?)?);
        }
        Command::Compare => {
            let r = compare_report(cfg, opts)?;
            written.push(write_file(output_path(prefix, "compare.csv"), &r.to_csv())?);
            written.push(write_file(output_path(prefix, "compare.json"), &to_json(&r)?)?);
        }
    }
    Ok(written)
}
