//! Run configuration: TOML sections for the chain, the function, truncation
//! and Monte Carlo parameters, and output placement.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use markov_poisson::chain::{LeakPolicy, RealFunction, TransitionKernel, TruncationOptions};
use markov_poisson::gallery::{self, GalleryChain};
use markov_poisson::regen::Numerator;

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub function: FunctionConfig,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    /// Gallery name: two_state | birth_death | reflected_walk |
    /// rails (alias example1) | current_age (alias example2).
    pub gallery: Option<String>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub p: Option<f64>,
    pub alpha: Option<f64>,
    pub cprime: Option<f64>,
    pub r: Option<Vec<f64>>,
    /// Increment law as `[[z, prob], ...]` for reflected_walk.
    pub increments: Option<Vec<(i64, f64)>>,
    /// Path to a `(row, col, prob)` triplet CSV; alternative to `gallery`.
    pub triplets: Option<PathBuf>,
    /// State count for a triplet chain.
    pub n_states: Option<usize>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            gallery: Some("two_state".into()),
            a: None,
            b: None,
            p: None,
            alpha: None,
            cprime: None,
            r: None,
            increments: None,
            triplets: None,
            n_states: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FunctionConfig {
    /// indicator | identity | poly | constant | csv.
    pub form: String,
    pub states: Option<Vec<usize>>,
    pub coeffs: Option<Vec<f64>>,
    pub value: Option<f64>,
    pub csv: Option<PathBuf>,
}

impl Default for FunctionConfig {
    fn default() -> Self {
        FunctionConfig {
            form: "indicator".into(),
            states: Some(vec![1]),
            coeffs: None,
            value: None,
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TruncationConfig {
    pub initial_size: usize,
    pub size_cap: usize,
    /// redirect_self | renormalize.
    pub policy: Option<String>,
    pub leak_cap: f64,
    pub probe_tol: f64,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig {
            initial_size: 64,
            size_cap: markov_poisson::constants::REFINE_SIZE_CAP,
            policy: None,
            leak_cap: 1.0,
            probe_tol: markov_poisson::constants::REFINE_PROBE_TOL,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Reference (regeneration) state.
    pub z: usize,
    /// Start state for transient and path quantities.
    pub x: usize,
    /// Horizon for transient means.
    pub n: usize,
    pub probes: Option<Vec<usize>>,
    pub horizon_cap: usize,
    /// Moment order for the moments command: 1 or 2.
    pub order: u8,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            z: 0,
            x: 0,
            n: 1000,
            probes: None,
            horizon_cap: markov_poisson::constants::GSTAR_HORIZON_CAP,
            order: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub seed: Option<u64>,
    pub cycles: usize,
    pub replications: usize,
    /// Path length for the CLT experiment.
    pub horizon: usize,
    /// Path length for the LIL experiment.
    pub n_max: u64,
    /// Cycle functional for `simulate`: sum_f | sum_abs_fc |
    /// sum_weighted_abs_fc | sum_weighted_fc | sum_fc_sq.
    pub numerator: String,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            seed: None,
            cycles: 100_000,
            replications: 2000,
            horizon: 10_000,
            n_max: 1_000_000,
            numerator: "sum_f".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    /// queue | drift.
    pub mode: String,
    /// Increment law for queue mode (defaults to the chain's, if it is a
    /// reflected walk).
    pub increments: Option<Vec<(i64, f64)>>,
    /// Polynomial coefficients of v and w for drift mode.
    pub v: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub k: Option<Vec<usize>>,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig { mode: "queue".into(), increments: None, v: None, w: None, k: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    /// Loads a TOML config; a missing file yields the defaults.
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        if !path.exists() {
            return Ok(RunConfig::default());
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.truncation.probe_tol <= 0.0 || self.truncation.leak_cap <= 0.0 {
            return Err(CliError::Input("tolerances must be positive".into()));
        }
        if self.truncation.initial_size < 2 {
            return Err(CliError::Input("truncation.initial_size must be at least 2".into()));
        }
        for file in [&self.chain.triplets, &self.function.csv].into_iter().flatten() {
            if !file.exists() {
                return Err(CliError::Input(format!(
                    "referenced file does not exist: {}",
                    file.display()
                )));
            }
        }
        Ok(())
    }

    pub fn truncation_options(&self) -> Result<TruncationOptions, CliError> {
        let policy = match self.truncation.policy.as_deref() {
            None | Some("redirect_self") => LeakPolicy::RedirectSelf,
            Some("renormalize") => LeakPolicy::Renormalize,
            Some(other) => {
                return Err(CliError::Input(format!("unknown leak policy '{other}'")))
            }
        };
        Ok(TruncationOptions { policy, leak_cap: self.truncation.leak_cap })
    }

    /// Builds the configured chain.
    pub fn build_chain(&self) -> Result<GalleryChain, CliError> {
        if let Some(path) = &self.chain.triplets {
            let n = self.chain.n_states.ok_or_else(|| {
                CliError::Input("chain.n_states is required with a triplet CSV".into())
            })?;
            let kernel = load_triplets(path, n)?;
            return Ok(GalleryChain {
                kernel: Arc::new(kernel),
                pi_closed: None,
                provenance: format!("triplets from {}", path.display()),
            });
        }
        let name = self.chain.gallery.as_deref().unwrap_or("two_state");
        let g = match name {
            "two_state" => gallery::two_state(
                self.chain.a.unwrap_or(0.5),
                self.chain.b.unwrap_or(0.5),
            ),
            "birth_death" => gallery::birth_death(self.chain.p.unwrap_or(0.3)),
            "reflected_walk" => {
                let inc = self.chain.increments.clone().ok_or_else(|| {
                    CliError::Input("reflected_walk needs chain.increments".into())
                })?;
                gallery::reflected_walk(&inc)
            }
            "rails" | "example1" => gallery::rails(
                self.chain.p.unwrap_or(0.3),
                self.chain.r.as_deref().unwrap_or(&[0.25, 0.125, 0.125]),
            ),
            "current_age" | "example2" => gallery::current_age(
                self.chain.alpha.unwrap_or(3.0),
                self.chain.cprime.unwrap_or(1.0),
            ),
            other => return Err(CliError::Input(format!("unknown gallery chain '{other}'"))),
        };
        g.map_err(CliError::from)
    }

    /// Builds the configured function f.
    pub fn build_function(&self) -> Result<RealFunction, CliError> {
        match self.function.form.as_str() {
            "indicator" => Ok(RealFunction::indicator(
                self.function.states.as_deref().unwrap_or(&[1]),
            )),
            "identity" => Ok(RealFunction::identity()),
            "poly" => {
                let coeffs = self.function.coeffs.as_deref().ok_or_else(|| {
                    CliError::Input("poly function needs function.coeffs".into())
                })?;
                Ok(RealFunction::poly(coeffs))
            }
            "constant" => Ok(RealFunction::constant(self.function.value.unwrap_or(1.0))),
            "csv" => {
                let path = self.function.csv.as_ref().ok_or_else(|| {
                    CliError::Input("csv function needs function.csv".into())
                })?;
                load_function_csv(path)
            }
            other => Err(CliError::Input(format!("unknown function form '{other}'"))),
        }
    }

    pub fn numerator(&self) -> Result<Numerator, CliError> {
        match self.mc.numerator.as_str() {
            "sum_f" => Ok(Numerator::SumF),
            "sum_abs_fc" => Ok(Numerator::SumAbsFc),
            "sum_weighted_abs_fc" => Ok(Numerator::SumWeightedAbsFc),
            "sum_weighted_fc" => Ok(Numerator::SumWeightedFc),
            "sum_fc_sq" => Ok(Numerator::SumFcSq),
            other => Err(CliError::Input(format!("unknown numerator '{other}'"))),
        }
    }

    /// Seed, mandatory for Monte Carlo commands.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.mc.seed.ok_or_else(|| {
            CliError::Input("mc.seed (or --seed) is required for Monte Carlo commands".into())
        })
    }
}

/// Reads a `(row, col, prob)` CSV; a `row,col,prob` header is allowed.
fn load_triplets(path: &Path, n: usize) -> Result<TransitionKernel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut triplets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("row")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{}: expected 'row,col,prob', got '{line}'",
                path.display(),
                lineno + 1
            )));
        }
        let parse = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse::<f64>().map_err(|e| {
                CliError::Input(format!(
                    "{}:{}: bad {what} '{s}': {e}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        let r = parse(fields[0], "row")? as usize;
        let c = parse(fields[1], "col")? as usize;
        let p = parse(fields[2], "prob")?;
        triplets.push((r, c, p));
    }
    TransitionKernel::from_triplets(
        format!("csv:{}", path.display()),
        n,
        &triplets,
    )
    .map_err(CliError::from)
}

/// Reads a `(state, value)` CSV into a dense function.
fn load_function_csv(path: &Path) -> Result<RealFunction, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("state")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(CliError::Input(format!(
                "{}:{}: expected 'state,value'",
                path.display(),
                lineno + 1
            )));
        }
        let s: usize = fields[0].parse().map_err(|e| {
            CliError::Input(format!("{}:{}: bad state: {e}", path.display(), lineno + 1))
        })?;
        let v: f64 = fields[1].parse().map_err(|e| {
            CliError::Input(format!("{}:{}: bad value: {e}", path.display(), lineno + 1))
        })?;
        pairs.push((s, v));
    }
    let n = pairs.iter().map(|&(s, _)| s + 1).max().unwrap_or(0);
    let mut values = vec![0.0f64; n];
    for (s, v) in pairs {
        values[s] = v;
    }
    Ok(RealFunction::dense(values))
}
