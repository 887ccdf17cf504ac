//! Effective run configuration: CLI flags over `A11YR_*` environment
//! variables over a TOML file over defaults.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use a11yfix_core::browser::{ViewportName, ViewportProfile, DEFAULT_BUDGET_MS};
use a11yfix_core::llm::{GatewayMode, DEFAULT_ENDPOINT, DEFAULT_MODEL};
use a11yfix_core::vision::DEFAULT_CACHE_DIR;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "A11YR_";
pub const DEFAULT_OUT_DIR: &str = "a11y-out";
pub const DEFAULT_PARALLELISM: usize = 4;
pub const DEFAULT_HTTP_TIMEOUT_S: u64 = 60;
pub const DEFAULT_LLM_TIMEOUT_S: u64 = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Audit,
    FixWeb,
    FixAngular,
    Report,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Audit => "audit",
            Mode::FixWeb => "fix_web",
            Mode::FixAngular => "fix_angular",
            Mode::Report => "report",
        }
    }
}

/// One layer of settings. Every field is optional so layers can be stacked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Layer {
    pub webdriver_url: Option<String>,
    pub model: Option<String>,
    pub vision_model: Option<String>,
    pub endpoint: Option<String>,
    pub gateway: Option<String>,
    pub cassette: Option<PathBuf>,
    pub image_cache: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub build_cmd: Option<String>,
    pub skip_build: Option<bool>,
    pub offline: Option<bool>,
    pub viewports: Option<Vec<String>>,
    pub stabilize_budget_ms: Option<u64>,
    pub http_timeout_s: Option<u64>,
    pub llm_timeout_s: Option<u64>,
    pub parallelism: Option<usize>,
}

macro_rules! overlay {
    ($top:expr, $below:expr, $($field:ident),*) => {
        Layer { $($field: $top.$field.clone().or_else(|| $below.$field.clone()),)* }
    };
}

impl Layer {
    /// `self` wins wherever it has a value.
    pub fn over(&self, below: &Layer) -> Layer {
        overlay!(
            self, below, webdriver_url, model, vision_model, endpoint, gateway, cassette, image_cache, out_dir,
            report, build_cmd, skip_build, offline, viewports, stabilize_budget_ms, http_timeout_s, llm_timeout_s,
            parallelism
        )
    }

    /// Reads `A11YR_<FIELD>` variables; the API credential is read elsewhere.
    pub fn from_env(env: &BTreeMap<String, String>) -> Result<Layer, ConfigError> {
        let get = |name: &str| env.get(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty()).cloned();
        fn parse<T: FromStr>(name: &str, v: Option<String>) -> Result<Option<T>, ConfigError> {
            v.map(|s| s.trim().parse().map_err(|_| ConfigError::Invalid(format!("{ENV_PREFIX}{name}: cannot parse {s:?}"))))
                .transpose()
        }
        Ok(Layer {
            webdriver_url: get("WEBDRIVER_URL"),
            model: get("MODEL"),
            vision_model: get("VISION_MODEL"),
            endpoint: get("ENDPOINT"),
            gateway: get("GATEWAY"),
            cassette: get("CASSETTE").map(PathBuf::from),
            image_cache: get("IMAGE_CACHE").map(PathBuf::from),
            out_dir: get("OUT_DIR").map(PathBuf::from),
            report: get("REPORT").map(PathBuf::from),
            build_cmd: get("BUILD_CMD"),
            skip_build: parse_flag("SKIP_BUILD", get("SKIP_BUILD"))?,
            offline: parse_flag("OFFLINE", get("OFFLINE"))?,
            viewports: get("VIEWPORTS").map(|v| v.split(',').map(|s| s.trim().to_string()).collect()),
            stabilize_budget_ms: parse("STABILIZE_BUDGET_MS", get("STABILIZE_BUDGET_MS"))?,
            http_timeout_s: parse("HTTP_TIMEOUT_S", get("HTTP_TIMEOUT_S"))?,
            llm_timeout_s: parse("LLM_TIMEOUT_S", get("LLM_TIMEOUT_S"))?,
            parallelism: parse("PARALLELISM", get("PARALLELISM"))?,
        })
    }

    pub fn from_toml(text: &str) -> Result<Layer, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File(e.message().to_string()))
    }
}

fn parse_flag(name: &str, v: Option<String>) -> Result<Option<bool>, ConfigError> {
    v.map(|s| match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(ConfigError::Invalid(format!("{ENV_PREFIX}{name}: expected a boolean, got {s:?}"))),
    })
    .transpose()
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("config file: {0}")]
    File(String),
    #[error("{0}")]
    Invalid(String),
}

/// The effective configuration, echoed into the run report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub targets: Vec<String>,
    pub webdriver_url: Option<String>,
    pub model_id: String,
    pub vision_model_id: Option<String>,
    pub endpoint: String,
    pub gateway_mode: GatewayMode,
    pub cassette_path: Option<PathBuf>,
    pub image_cache: PathBuf,
    pub out_dir: PathBuf,
    pub report_path: PathBuf,
    pub build_cmd: Option<String>,
    pub skip_build: bool,
    pub offline: bool,
    pub viewports: Vec<ViewportProfile>,
    pub stabilize_budget_ms: u64,
    pub http_timeout_s: u64,
    pub llm_timeout_s: u64,
    pub parallelism: usize,
}

/// Stacks the layers and validates the result.
pub fn load_config(mode: Mode, targets: Vec<String>, cli: &Layer, env: &Layer, file: &Layer) -> Result<RunConfig, ConfigError> {
    let l = cli.over(&env.over(file));
    let invalid = |m: String| Err(ConfigError::Invalid(m));
    let gateway_mode = match &l.gateway {
        Some(g) => GatewayMode::from_str(g).map_err(ConfigError::Invalid)?,
        None => GatewayMode::Replay,
    };
    let viewports = match &l.viewports {
        None => a11yfix_core::browser::DEFAULT_PROFILES.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| n.parse::<ViewportName>().map(ViewportProfile::named).map_err(ConfigError::Invalid))
            .collect::<Result<_, _>>()?,
    };
    let out_dir = l.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let config = RunConfig {
        mode,
        targets,
        webdriver_url: l.webdriver_url.clone(),
        model_id: l.model.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string()),
        vision_model_id: l.vision_model.clone(),
        endpoint: l.endpoint.clone().unwrap_or_else(|| DEFAULT_ENDPOINT.to_string()),
        gateway_mode,
        cassette_path: l.cassette.clone(),
        image_cache: l.image_cache.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR)),
        report_path: l.report.clone().unwrap_or_else(|| out_dir.join("report.json")),
        out_dir,
        build_cmd: l.build_cmd.clone(),
        skip_build: l.skip_build.unwrap_or(false),
        offline: l.offline.unwrap_or(false),
        viewports,
        stabilize_budget_ms: l.stabilize_budget_ms.unwrap_or(DEFAULT_BUDGET_MS),
        http_timeout_s: l.http_timeout_s.unwrap_or(DEFAULT_HTTP_TIMEOUT_S),
        llm_timeout_s: l.llm_timeout_s.unwrap_or(DEFAULT_LLM_TIMEOUT_S),
        parallelism: l.parallelism.unwrap_or(DEFAULT_PARALLELISM),
    };
    if config.targets.is_empty() {
        return invalid("no targets given".into());
    }
    if config.parallelism == 0 {
        return invalid("parallelism must be at least 1".into());
    }
    if let Some(u) = &config.webdriver_url {
        if url::Url::parse(u).is_err() {
            return invalid(format!("webdriver-url {u:?} is not a URL"));
        }
    }
    let needs_gateway = matches!(mode, Mode::FixWeb | Mode::FixAngular);
    if needs_gateway && config.gateway_mode != GatewayMode::Live && config.cassette_path.is_none() {
        return invalid(format!("gateway mode {:?} requires --cassette", config.gateway_mode));
    }
    if mode == Mode::FixWeb && !config.offline && config.webdriver_url.is_none() {
        return invalid("fix-web needs --webdriver-url unless --offline is set".into());
    }
    if mode == Mode::FixAngular && config.targets.len() != 1 {
        return invalid("fix-angular takes exactly one workspace directory".into());
    }
    if mode == Mode::Report && config.targets.len() != 1 {
        return invalid("report takes exactly one report file".into());
    }
    Ok(config)
}
