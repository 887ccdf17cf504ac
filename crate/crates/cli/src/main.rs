mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use a11yfix_core::llm::{api_key_from_env, Gateway, GatewayConfig};
use a11yfix_core::pipeline::{self, PipelineError, PipelineOptions};
use a11yfix_core::prompt::PromptEngine;
use a11yfix_core::verify::{emit_run_report, FatalKind, RunReport, TargetReport};
use clap::{Args, Parser, Subcommand};

use config::{load_config, ConfigError, Layer, Mode, RunConfig};

const EXIT_USAGE: u8 = 64;

/// WCAG 2.2 A/AA detection and LLM-assisted remediation for static pages
/// and Angular workspaces.
///
/// The API credential is read from A11YR_API_KEY or OPENAI_API_KEY only.
/// Every flag can also be set as A11YR_<FLAG> (upper case, underscores) or
/// in the TOML file given by --config; flags win over the environment,
/// which wins over the file.
#[derive(Debug, Parser)]
#[command(name = "a11yfix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Detect violations only; no model calls.
    Audit {
        /// Page URLs, local HTML files, or one Angular workspace directory.
        #[arg(required = true)]
        targets: Vec<String>,
    },
    /// Remediate static pages and write `<out-dir>/<host>/<path>.fixed.html`.
    FixWeb {
        #[arg(required = true)]
        targets: Vec<String>,
    },
    /// Remediate the components of an Angular workspace in place.
    FixAngular {
        /// Workspace root containing angular.json.
        root: PathBuf,
    },
    /// Summarize a run report and exit with its status.
    Report {
        path: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file [env: A11YR_CONFIG]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// W3C WebDriver endpoint, e.g. http://127.0.0.1:9515
    #[arg(long, global = true)]
    webdriver_url: Option<String>,
    /// Directory for downloaded images and their descriptions [default: .a11y-cache/images]
    #[arg(long, global = true)]
    image_cache: Option<PathBuf>,
    /// JSONL cassette of recorded model exchanges
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    /// live, record or replay [default: replay]
    #[arg(long, global = true)]
    gateway: Option<String>,
    /// Model id [default: gpt-4o]
    #[arg(long, global = true)]
    model: Option<String>,
    /// Model id for image and holistic prompts [default: --model]
    #[arg(long, global = true)]
    vision_model: Option<String>,
    /// Chat-completions base URL [default: https://api.openai.com/v1]
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Build command for fix-angular [default: from angular.json]
    #[arg(long, global = true)]
    build_cmd: Option<String>,
    /// Do not build; build integrity is reported as skipped
    #[arg(long, global = true)]
    skip_build: bool,
    /// Native rules on fetched HTML, without a browser
    #[arg(long, global = true)]
    offline: bool,
    /// Run report path [default: <out-dir>/report.json]
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    /// Output directory [default: a11y-out]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Comma-separated viewports: mobile, tablet, desktop [default: all]
    #[arg(long, global = true, value_delimiter = ',')]
    viewports: Option<Vec<String>>,
    /// Page stabilization budget in milliseconds [default: 30000]
    #[arg(long, global = true)]
    stabilize_budget_ms: Option<u64>,
    /// Timeout for page and image fetches and WebDriver calls, seconds [default: 60]
    #[arg(long, global = true)]
    http_timeout_s: Option<u64>,
    /// Timeout per model request, seconds [default: 120]
    #[arg(long, global = true)]
    llm_timeout_s: Option<u64>,
    /// Targets processed concurrently [default: 4]
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

impl Common {
    fn layer(&self) -> Layer {
        Layer {
            webdriver_url: self.webdriver_url.clone(),
            model: self.model.clone(),
            vision_model: self.vision_model.clone(),
            endpoint: self.endpoint.clone(),
            gateway: self.gateway.clone(),
            cassette: self.cassette.clone(),
            image_cache: self.image_cache.clone(),
            out_dir: self.out_dir.clone(),
            report: self.report.clone(),
            build_cmd: self.build_cmd.clone(),
            skip_build: self.skip_build.then_some(true),
            offline: self.offline.then_some(true),
            viewports: self.viewports.clone(),
            stabilize_budget_ms: self.stabilize_budget_ms,
            http_timeout_s: self.http_timeout_s,
            llm_timeout_s: self.llm_timeout_s,
            parallelism: self.parallelism,
        }
    }
}

fn usage(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("a11yfix: {message}");
    ExitCode::from(EXIT_USAGE)
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let env: BTreeMap<String, String> = std::env::vars().collect();
    let file_path = cli.common.config.clone().or_else(|| env.get("A11YR_CONFIG").map(PathBuf::from));
    let file = match &file_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| ConfigError::File(format!("{}: {e}", p.display())))?;
            Layer::from_toml(&text).map_err(|e| ConfigError::File(format!("{}: {e}", p.display())))?
        }
        None => Layer::default(),
    };
    let (mode, targets) = match &cli.command {
        Command::Audit { targets } => (Mode::Audit, targets.clone()),
        Command::FixWeb { targets } => (Mode::FixWeb, targets.clone()),
        Command::FixAngular { root } => (Mode::FixAngular, vec![root.to_string_lossy().into_owned()]),
        Command::Report { path } => (Mode::Report, vec![path.to_string_lossy().into_owned()]),
    };
    load_config(mode, targets, &cli.common.layer(), &Layer::from_env(&env)?, &file)
}

fn pipeline_options(c: &RunConfig) -> Result<PipelineOptions, String> {
    let webdriver_url = c
        .webdriver_url
        .as_deref()
        .map(url::Url::parse)
        .transpose()
        .map_err(|e| format!("webdriver-url: {e}"))?;
    Ok(PipelineOptions {
        out_dir: c.out_dir.clone(),
        webdriver_url,
        offline: c.offline,
        image_cache: c.image_cache.clone(),
        build_cmd: c.build_cmd.clone(),
        skip_build: c.skip_build,
        profiles: c.viewports.clone(),
        stabilize_budget_ms: c.stabilize_budget_ms,
        http_timeout: Duration::from_secs(c.http_timeout_s),
        parallelism: c.parallelism,
        run_id: pipeline::new_run_id(),
    })
}

fn gateway(c: &RunConfig) -> Result<Gateway, String> {
    let config = GatewayConfig {
        mode: c.gateway_mode,
        endpoint: c.endpoint.clone(),
        api_key: api_key_from_env(),
        model_id: c.model_id.clone(),
        vision_model_id: c.vision_model_id.clone(),
        cassette_path: c.cassette_path.clone(),
        timeout: Duration::from_secs(c.llm_timeout_s),
        ..GatewayConfig::default()
    };
    Gateway::new(config).map_err(|e| e.to_string())
}

fn is_workspace(target: &str) -> bool {
    Path::new(target).join(a11yfix_core::angular::MANIFEST).is_file()
}

fn run(config: &RunConfig) -> Result<(Vec<TargetReport>, serde_json::Value), (PipelineError, serde_json::Value)> {
    let opts = pipeline_options(config).map_err(|e| (PipelineError::Usage(e), serde_json::Value::Null))?;
    let engine = PromptEngine::default();
    if config.mode == Mode::Audit {
        let mut targets = Vec::new();
        for t in &config.targets {
            if is_workspace(t) {
                targets.extend(pipeline::audit_workspace(Path::new(t)).map_err(|e| (e, serde_json::Value::Null))?);
            } else {
                targets.push(pipeline::audit_page(t, &opts).map_err(|e| (e, serde_json::Value::Null))?.0);
            }
        }
        return Ok((targets, serde_json::json!({"calls": 0})));
    }
    let gw = gateway(config).map_err(|e| (PipelineError::Usage(e), serde_json::Value::Null))?;
    let result = match config.mode {
        Mode::FixWeb => pipeline::fix_pages(&config.targets, &opts, &gw, &engine),
        Mode::FixAngular => pipeline::fix_workspace(Path::new(&config.targets[0]), &opts, &gw, &engine, &[]),
        Mode::Audit | Mode::Report => unreachable!("handled above"),
    };
    let stats = serde_json::json!({
        "mode": config.gateway_mode,
        "model_id": config.model_id,
        "stats": gw.stats(),
    });
    result.map(|t| (t, stats.clone())).map_err(|e| (e, stats))
}

fn summarize(path: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", path.display())),
    };
    let report: RunReport = match serde_json::from_str(&text) {
        Ok(r) => r,
        Err(e) => return usage(format!("{} is not a run report: {e}", path.display())),
    };
    println!("mode {}  generated {}", report.mode, report.generated_at);
    println!("{:<60} {:>8} {:>8} {:>8} {:>8} verified", "target", "initial", "final", "RR%", "BI");
    for t in &report.targets {
        let rr = t.rr_percent.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        let bi = serde_json::to_value(t.bi).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        println!("{:<60} {:>8} {:>8} {:>8} {:>8} {}", t.source, t.v_initial, t.v_final, rr, bi, t.verified);
    }
    let s = &report.summary;
    let show = |p: Option<a11yfix_core::verify::Percent>| p.map(|p| p.to_string()).unwrap_or_else(|| "-".into());
    println!(
        "targets {}  verified {}  violations {} -> {}  RR mean {}  RR pooled {}",
        s.targets,
        s.verified,
        s.v_initial,
        s.v_final,
        show(s.rr_mean),
        show(s.rr_pooled)
    );
    if let Some(f) = &report.fatal {
        println!("fatal ({:?}): {}", f.kind, f.message);
    }
    ExitCode::from(report.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE);
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("A11YR_LOG").unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if config.mode == Mode::Report {
        return summarize(Path::new(&config.targets[0]));
    }
    let echoed = serde_json::to_value(&config).expect("config serializes");
    let report = match run(&config) {
        Ok((targets, gw)) => RunReport::new(config.mode.as_str(), echoed, targets, gw),
        Err((e, gw)) => {
            eprintln!("a11yfix: {e}");
            let kind = match e {
                PipelineError::Usage(_) => FatalKind::Usage,
                PipelineError::Environment(_) => FatalKind::Environment,
            };
            RunReport::new(config.mode.as_str(), echoed, vec![], gw).with_fatal(kind, e.to_string())
        }
    };
    if let Err(e) = emit_run_report(&report, &config.report_path) {
        eprintln!("a11yfix: cannot write report {}: {e}", config.report_path.display());
        return ExitCode::from(69);
    }
    let s = &report.summary;
    eprintln!(
        "{} target(s), {} verified, violations {} -> {}; report at {}",
        s.targets,
        s.verified,
        s.v_initial,
        s.v_final,
        config.report_path.display()
    );
    ExitCode::from(report.exit_code() as u8)
}
