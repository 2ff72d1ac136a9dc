use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use linkerr::experiment::{desk_year_group, ReportFormat, FULL_SCALE_N};
use linkerr::popsim::{
    load_age_table, load_surname_table, synthetic_ages, synthetic_surnames, ColumnMap, DEFAULT_REFERENCE_YEAR,
};
use linkerr::{EstimatorId, LinkRule, PerturbationParams, PopulationModel, ScenarioConfig};
use serde::Deserialize;

pub const DATA_DIR_ENV: &str = "LINKERR_DATA_DIR";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Option<u8>,
    pub seed: Option<u64>,
    pub n_population: Option<usize>,
    pub replications: Option<usize>,
    #[serde(default = "default_pi")]
    pub pi_a: f64,
    #[serde(default = "default_pi")]
    pub pi_b: f64,
    #[serde(default = "default_tau")]
    pub tau: u32,
    #[serde(default = "default_g_max")]
    pub g_max: usize,
    /// Highest interaction order of the log-linear fit in `fit-multi`.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_clerical_m")]
    pub clerical_m: usize,
    pub year_group: Option<u32>,
    pub estimators: Option<Vec<EstimatorId>>,
    pub perturbation: Option<PerturbationParams>,
    pub rule: Option<LinkRule>,
    /// Replication index used by the single-stage commands.
    #[serde(default)]
    pub rep: u64,
    pub out_dir: Option<PathBuf>,
    pub census: Option<CensusConfig>,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusConfig {
    pub surnames: Option<PathBuf>,
    pub ages: Option<PathBuf>,
    #[serde(default = "default_reference_year")]
    pub reference_year: i32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { formats: default_formats() }
    }
}

fn default_pi() -> f64 {
    0.9
}
fn default_tau() -> u32 {
    10
}
fn default_g_max() -> usize {
    5
}
fn default_order() -> usize {
    2
}
fn default_clerical_m() -> usize {
    1000
}
fn default_reference_year() -> i32 {
    DEFAULT_REFERENCE_YEAR
}
fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Markdown]
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    Ok(toml::from_str(text)?)
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        None => String::new(),
    };
    parse_config(&text).with_context(|| match path {
        Some(p) => format!("invalid config {}", p.display()),
        None => "invalid config".to_string(),
    })
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scenario: Option<u8>,
    pub out: Option<PathBuf>,
    pub full_scale: bool,
}

impl RunConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if o.scenario.is_some() {
            self.scenario = o.scenario;
        }
        if o.out.is_some() {
            self.out_dir = o.out.clone();
        }
        if o.full_scale {
            self.n_population.get_or_insert(FULL_SCALE_N);
            self.replications.get_or_insert(100);
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn scenario_config(&self) -> Result<ScenarioConfig> {
        let custom = self.perturbation.is_some() || self.rule.is_some();
        let id = match (self.scenario, custom) {
            (Some(id), _) => id,
            (None, true) => 1,
            (None, false) => bail!("config needs `scenario` or a custom `perturbation` and `rule`"),
        };
        let n = self.n_population.unwrap_or(20_000);
        let mut cfg = ScenarioConfig::new(id, n, self.replications.unwrap_or(30), self.seed.unwrap_or(1))
            .with_context(|| format!("scenario {id}"))?;
        if custom {
            cfg.scenario = None;
            if let Some(p) = self.perturbation {
                cfg.params = p;
            }
            if let Some(r) = self.rule {
                cfg.rule = r;
            }
        }
        cfg.pi_a = self.pi_a;
        cfg.pi_b = self.pi_b;
        cfg.tau = self.tau;
        cfg.g_max = self.g_max;
        cfg.clerical_m = self.clerical_m;
        cfg.year_group = self.year_group.unwrap_or_else(|| desk_year_group(n));
        if let Some(e) = &self.estimators {
            cfg.estimators = e.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Census tables when configured, else the bundled synthetic ones.
    /// Relative paths resolve against `$LINKERR_DATA_DIR` when it is set.
    pub fn model(&self, cfg: &ScenarioConfig) -> Result<PopulationModel> {
        let census = self.census.as_ref();
        let resolve = |p: &Path| match std::env::var_os(DATA_DIR_ENV) {
            Some(dir) if p.is_relative() => PathBuf::from(dir).join(p),
            _ => p.to_path_buf(),
        };
        let surnames = match census.and_then(|c| c.surnames.as_deref()) {
            Some(p) => {
                let p = resolve(p);
                let f = std::fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                load_surname_table(f, &ColumnMap::census_surnames()).with_context(|| format!("loading {}", p.display()))?
            }
            None => synthetic_surnames().clone(),
        };
        let reference = census.map_or(DEFAULT_REFERENCE_YEAR, |c| c.reference_year);
        let years = match census.and_then(|c| c.ages.as_deref()) {
            Some(p) => {
                let p = resolve(p);
                let f = std::fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?;
                load_age_table(f, &ColumnMap::census_ages(), reference).with_context(|| format!("loading {}", p.display()))?
            }
            None => synthetic_ages(reference),
        };
        Ok(PopulationModel::new(surnames, years.grouped_years(cfg.year_group)?, cfg.params)?)
    }
}
