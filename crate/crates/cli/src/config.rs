//! Run configuration: a TOML manifest, overridden by command-line flags.

use std::path::{Path, PathBuf};

use rkhs_spectest::estimator::{FitConfig, Solver};
use rkhs_spectest::hypothesis::{CovarianceVariant, ProjRho};
use rkhs_spectest::simulation::{
    null_kernel_for, CorrelationShape, Design, DgpSpec, Hypothesis, InstrumentCoverage, McConfig, SetupOptions,
    Truncation,
};
use rkhs_spectest::{Loss, LossKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::kernels::TermSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Fit,
    Test,
    Simulate,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    #[default]
    AlignedText,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub test: TestConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default = "default_response")]
    pub response: String,
    /// All non-response columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default)]
    pub standardize: bool,
}

fn default_response() -> String {
    "y".into()
}

/// Kernels and estimator. Either a named hypothesis from the simulation
/// designs or explicit `null` / `alternative` term lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub loss: LossKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<Hypothesis>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub null: Vec<TermSpec>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub alternative: Vec<TermSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { loss: LossKind::RescaledSquare, hypothesis: None, null: vec![], alternative: vec![], fit: None }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentChoice {
    /// Series features when the alternative kernel is a coordinate series,
    /// normalised sample sections otherwise.
    #[default]
    Auto,
    Series,
    Sections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub instruments: InstrumentChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sections: Option<usize>,
    pub coverage: InstrumentCoverage,
    pub proj_rho: ProjRho,
    pub covariance: CovarianceVariant,
    pub null_draws: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            instruments: InstrumentChoice::Auto,
            sections: None,
            coverage: InstrumentCoverage::default(),
            proj_rho: ProjRho::default(),
            covariance: CovarianceVariant::default(),
            null_draws: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub design: Design,
    pub null: Hypothesis,
    pub n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub correlation: CorrelationShape,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<f64>,
}

fn default_k() -> usize {
    10
}

fn default_snr() -> f64 {
    1.0
}

fn default_replicates() -> usize {
    1000
}

fn default_sizes() -> Vec<f64> {
    vec![0.05]
}

/// Command-line values that take precedence over the manifest.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run manifest
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output file (stdout when absent); the resolved config is written next to it
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Worker threads for the parallel loops
    #[arg(long)]
    pub threads: Option<usize>,
    /// Data file (fit, test)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Response column (fit, test)
    #[arg(long)]
    pub response: Option<String>,
    /// Named hypothesis, e.g. Lin3, LinAll, BivLinAll
    #[arg(long)]
    pub hypothesis: Option<String>,
    /// Simulation design: Lin3, LinAll, NonLinear, Bivariate
    #[arg(long)]
    pub design: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Pairwise covariate correlation
    #[arg(long)]
    pub rho: Option<f64>,
    /// Signal to noise ratio
    #[arg(long)]
    pub snr: Option<f64>,
    /// Print the resolved configuration and exit
    #[arg(long)]
    pub echo_config: bool,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            seed: None,
            threads: None,
            output: OutputConfig::default(),
            data: None,
            model: ModelConfig::default(),
            test: TestConfig::default(),
            simulation: None,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| CliError::Config(format!("invalid config: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialise config: {e}")))
    }

    /// Manifest (if any) for `command`, with flags applied, defaults filled in
    /// and the result validated.
    pub fn load(command: Command, o: &Overrides) -> Result<Self> {
        let mut c = match &o.config {
            Some(p) => Self::from_file(p)?,
            None => Self::new(command),
        };
        if c.command != command {
            return Err(CliError::Config(format!(
                "config is for the '{}' command but '{}' was requested",
                c.command.name(),
                command.name()
            )));
        }
        c.apply(o)?;
        c.resolve()?;
        c.validate()?;
        Ok(c)
    }

    fn apply(&mut self, o: &Overrides) -> Result<()> {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.threads.is_some() {
            self.threads = o.threads;
        }
        if o.out.is_some() {
            self.output.path = o.out.clone();
        }
        if let Some(f) = o.format {
            self.output.format = f;
        }
        if let Some(h) = &o.hypothesis {
            self.model.hypothesis = Some(parse_name(h)?);
        }
        if let Some(path) = &o.data {
            match &mut self.data {
                Some(d) => d.path = path.clone(),
                None => {
                    self.data =
                        Some(DataConfig { path: path.clone(), response: default_response(), covariates: None, standardize: false })
                }
            }
        }
        if let Some(r) = &o.response {
            let d = self.data.as_mut().ok_or_else(|| CliError::Config("--response needs a data file".into()))?;
            d.response = r.clone();
        }
        let sim_flags = o.design.is_some() || o.n.is_some() || o.rho.is_some() || o.snr.is_some() || o.replicates.is_some();
        if sim_flags {
            if self.command != Command::Simulate {
                return Err(CliError::Config(
                    "--design, --n, --rho, --snr and --replicates only apply to simulate".into(),
                ));
            }
            if self.simulation.is_none() {
                let design: Design =
                    parse_name(o.design.as_deref().ok_or_else(|| CliError::Config("simulate needs --design or a config".into()))?)?;
                let null = self
                    .model
                    .hypothesis
                    .take()
                    .ok_or_else(|| CliError::Config("simulate needs --hypothesis or a config".into()))?;
                let n = o.n.ok_or_else(|| CliError::Config("simulate needs --n or a config".into()))?;
                self.simulation = Some(SimulationConfig {
                    design,
                    null,
                    n,
                    k: default_k(),
                    rho: 0.0,
                    correlation: CorrelationShape::default(),
                    snr: default_snr(),
                    truncation: Truncation::default(),
                    replicates: default_replicates(),
                    sizes: default_sizes(),
                });
            }
            let s = self.simulation.as_mut().expect("set above");
            if let Some(d) = &o.design {
                s.design = parse_name(d)?;
            }
            if let Some(n) = o.n {
                s.n = n;
            }
            if let Some(r) = o.rho {
                s.rho = r;
            }
            if let Some(v) = o.snr {
                s.snr = v;
            }
            if let Some(r) = o.replicates {
                s.replicates = r;
            }
        }
        if self.command == Command::Simulate {
            // a --hypothesis flag names the simulated null
            if let (Some(h), Some(s)) = (self.model.hypothesis.take(), self.simulation.as_mut()) {
                s.null = h;
            }
        }
        Ok(())
    }

    /// Fills in the estimator defaults so that the echoed config is complete.
    fn resolve(&mut self) -> Result<()> {
        if self.model.fit.is_some() {
            return Ok(());
        }
        let hypothesis = match self.command {
            Command::Simulate => self.simulation.as_ref().map(|s| (s.null, s.k)),
            // the preset's default estimator does not depend on the covariate count
            _ => self.model.hypothesis.map(|h| (h, 10)),
        };
        let fit = match hypothesis {
            Some((h, k)) => null_kernel_for(h, k, &self.setup_options())?.default_fit,
            None => FitConfig::default(),
        };
        self.model.fit = Some(fit);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }
        match self.command {
            Command::Simulate => {
                if self.simulation.is_none() {
                    return bad("simulate needs a [simulation] section".into());
                }
                if self.seed.is_none() {
                    return bad("simulate needs an explicit seed".into());
                }
                if self.data.is_some() {
                    return bad("simulate does not read a data file".into());
                }
                if self.model.hypothesis.is_some() || !self.model.null.is_empty() || !self.model.alternative.is_empty() {
                    return bad("simulate takes its kernels from simulation.null; remove model.hypothesis/null/alternative".into());
                }
            }
            Command::Fit | Command::Test => {
                let Some(d) = &self.data else {
                    return bad(format!("{} needs a [data] section or --data", self.command.name()));
                };
                if !d.path.is_file() {
                    return bad(format!("data file {} does not exist", d.path.display()));
                }
                if self.simulation.is_some() {
                    return bad(format!("{} does not use a [simulation] section", self.command.name()));
                }
                match (self.model.hypothesis.is_some(), self.model.null.is_empty()) {
                    (true, false) => return bad("give either model.hypothesis or model.null, not both".into()),
                    (false, true) => return bad("model.hypothesis or model.null is required".into()),
                    _ => {}
                }
                if self.model.hypothesis.is_some() && !self.model.alternative.is_empty() {
                    return bad("model.alternative cannot be combined with model.hypothesis".into());
                }
                if self.command == Command::Test && self.model.hypothesis.is_none() && self.model.alternative.is_empty() {
                    return bad("test needs model.alternative kernels for the instruments".into());
                }
            }
        }
        let fit = self.model.fit.as_ref().expect("resolved");
        fit.validate()?;
        let loss = self.model.loss;
        match fit.solver {
            Solver::Greedy if !loss.smooth() => {
                return bad(format!("the {} loss is not differentiable and cannot be used with the greedy solver", loss.name()))
            }
            Solver::RidgeClosedForm if !matches!(loss, LossKind::Square | LossKind::RescaledSquare) => {
                return bad(format!("the ridge solver needs a square loss, got {}", loss.name()))
            }
            _ => {}
        }
        if self.test.null_draws == 0 {
            return bad("test.null_draws must be positive".into());
        }
        if self.test.sections == Some(0) {
            return bad("test.sections must be positive".into());
        }
        if let Some(s) = &self.simulation {
            if s.replicates == 0 {
                return bad("simulation.replicates must be positive".into());
            }
            if s.sizes.is_empty() || s.sizes.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return bad("simulation.sizes must lie in (0, 1)".into());
            }
            self.dgp().expect("simulation present").validate()?;
        }
        Ok(())
    }

    pub fn setup_options(&self) -> SetupOptions {
        SetupOptions { coverage: self.test.coverage, sections: self.test.sections }
    }

    pub fn dgp(&self) -> Option<DgpSpec> {
        self.simulation.as_ref().map(|s| DgpSpec {
            design: s.design,
            n: s.n,
            k: s.k,
            pair_corr: s.rho,
            correlation: s.correlation,
            snr: s.snr,
            truncation: s.truncation,
        })
    }

    pub fn mc_config(&self) -> Option<McConfig> {
        let s = self.simulation.as_ref()?;
        let mut c = McConfig::new(self.dgp()?, s.null, s.replicates);
        c.sizes = s.sizes.clone();
        c.loss = self.model.loss;
        c.fit = self.model.fit.clone();
        c.setup = self.setup_options();
        c.proj_rho = self.test.proj_rho;
        c.covariance = self.test.covariance;
        c.null_draws = self.test.null_draws;
        c.seed = self.seed.unwrap_or_default();
        Some(c)
    }
}

fn parse_name<T: std::str::FromStr<Err = rkhs_spectest::Error>>(s: &str) -> Result<T> {
    s.parse().map_err(|e: rkhs_spectest::Error| CliError::Config(e.to_string()))
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Test => "test",
            Command::Simulate => "simulate",
        }
    }
}
