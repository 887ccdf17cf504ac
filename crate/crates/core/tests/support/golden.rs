use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use a11yfix_core::angular;
use a11yfix_core::llm::{Gateway, StatsSnapshot};
use a11yfix_core::model::ViolationKey;
use a11yfix_core::patch_angular as pa;
use a11yfix_core::patch_static as ps;
use a11yfix_core::pipeline::{self, PipelineError, PipelineOptions};
use a11yfix_core::prompt::PromptEngine;
use a11yfix_core::rules;
use a11yfix_core::segments::UNCHANGED;
use a11yfix_core::verify::TargetReport;
use a11yfix_core::vision::{self, Describer, ImageCache};

use super::corpus::fixtures;
use super::scripted::{self, Prompt};

pub const ALT_TEXT: &str = "Harbour Bakery logo: a golden loaf above blue waves";
pub const VIEWPORT: &str = "<meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">";

fn substitute(text: &str, pairs: &[(&str, &str)]) -> String {
    pairs.iter().fold(text.to_string(), |acc, (from, to)| acc.replace(from, to))
}

pub fn static_responder(prompt: &Prompt) -> String {
    match prompt {
        Prompt::Vision => ALT_TEXT.to_string(),
        Prompt::Contrast(fragment) => fragment.replace("#aaaaaa", "#595959"),
        Prompt::General(fragment) => substitute(
            fragment,
            &[
                ("<html>", "<html lang=\"en\">"),
                ("aria-lable=", "aria-label="),
                ("class=\"menu\">", "class=\"menu\" aria-label=\"Menu\">"),
                ("class=\"close\"", "class=\"close\" aria-label=\"Close\""),
                ("name=\"email\">", "name=\"email\" aria-label=\"Email address\">"),
            ],
        ),
        Prompt::Merge { current } => {
            let mut merged = current.clone();
            if let Some(i) = merged.find("<head>") {
                merged.insert_str(i + "<head>".len(), VIEWPORT);
            }
            merged
        }
        other => panic!("unexpected prompt in the static scenario: {other:?}"),
    }
}

pub fn static_page() -> PathBuf {
    fixtures().join("golden/static/index.html")
}

pub struct StaticRun {
    pub report: TargetReport,
    pub original: String,
    pub patched: String,
    pub artifact: String,
    pub stats: StatsSnapshot,
    pub lookups: u64,
    pub network_fetches: u64,
    _scratch: tempfile::TempDir,
}

fn static_opts(scratch: &Path) -> PipelineOptions {
    PipelineOptions {
        out_dir: scratch.join("out"),
        offline: true,
        image_cache: scratch.join("images"),
        ..PipelineOptions::default()
    }
}

fn drive_static(gateway: &Gateway, scratch: &Path) -> (TargetReport, u64, u64) {
    let opts = static_opts(scratch);
    let cache = ImageCache::new(&opts.image_cache, Duration::from_secs(5));
    let describer = Describer::new(gateway, &cache);
    let target = static_page().to_string_lossy().into_owned();
    let report = pipeline::fix_page(&target, &opts, gateway, &PromptEngine::default(), &cache, &describer).unwrap();
    (report, describer.lookups(), cache.network_fetches())
}

pub fn record_static() {
    let scratch = tempfile::tempdir().unwrap();
    scripted::record(&scripted::cassette("golden_static.jsonl"), static_responder, |gw| {
        drive_static(gw, scratch.path());
    });
}

/// Replays the static golden page; also rebuilds the pre-merge document
/// so the retention check can compare against it.
pub fn run_static() -> StaticRun {
    let scratch = tempfile::tempdir().unwrap();
    let gateway = scripted::replay(&scripted::cassette("golden_static.jsonl"));
    let (report, lookups, network_fetches) = drive_static(&gateway, scratch.path());
    let html = std::fs::read_to_string(static_page()).unwrap();
    let original = a11yfix_core::dom::parse(&html).html().to_string();
    let source = pipeline::page_source(&static_page().to_string_lossy()).unwrap();
    let scan = pipeline::scan_options(&source);
    let baseline = rules::scan_with(&original, &scan);
    let cache = ImageCache::new(scratch.path().join("images"), Duration::from_secs(5));
    let describer = Describer::new(&gateway, &cache);
    let alts = cache
        .fetch_all(vision::collect_image_tasks(&baseline, &original, source.url.as_ref()))
        .into_iter()
        .filter_map(|task| {
            let v = baseline.violations().iter().find(|v| v.locator == task.locator)?;
            Some((v.key(), describer.describe_image(&task).ok()?))
        })
        .collect();
    let patched = ps::remediate_document(&original, &baseline, &scan, &gateway, &PromptEngine::default(), &alts).document;
    let artifact = std::fs::read_to_string(report.artifact.as_ref().expect("artifact written")).unwrap();
    StaticRun { report, original, patched, artifact, stats: gateway.stats(), lookups, network_fetches, _scratch: scratch }
}

pub fn workspace_fixture() -> PathBuf {
    fixtures().join("angular/storefront")
}

const HOME_FIXES: &[(&str, &str)] = &[
    ("<img src=\"assets/hero.jpg\">", "<img src=\"assets/hero.jpg\" alt=\"Loaves on a bakery shelf\">"),
    ("[(ngModel)]=\"query\">", "[(ngModel)]=\"query\" aria-label=\"Search products\">"),
    ("<button type=\"submit\"></button>", "<button type=\"submit\">Search</button>"),
];

const CARD_FIXES: &[(&str, &str)] = &[
    ("<img [src]=\"product.image\">", "<img [src]=\"product.image\" [alt]=\"product.name\">"),
    ("<a [href]=\"'/products/' + product.name\">", "<a [href]=\"'/products/' + product.name\" aria-label=\"View product\">"),
];

pub const REGRESSION: &str = "\n  <input type=\"email\" name=\"newsletter\">";

fn spa_answer(prompt: &Prompt, regress: bool) -> String {
    match prompt {
        Prompt::Template { path, content } if path.contains("home") => {
            let mut fixed = substitute(content, HOME_FIXES);
            if regress {
                fixed = fixed.replace("\n  </form>", &format!("{REGRESSION}\n  </form>"));
            }
            format!("<<<TEMPLATE>>>\n{fixed}")
        }
        Prompt::Template { path, content } if path.contains("product-card") => {
            format!("<<<TEMPLATE>>>\n{}", substitute(content, CARD_FIXES))
        }
        Prompt::Holistic { component, html, styles, .. } if component == "BannerComponent" => {
            let html = html
                .replace("<div class=\"cta\" (click)=\"open()\">", "<button type=\"button\" class=\"cta\" (click)=\"open()\">")
                .replace("offers</div>", "offers</button>");
            let styles = styles.replace("#aaaaaa", "#595959");
            format!("<<<TEMPLATE>>>\n{html}\n<<<TYPESCRIPT>>>\n{UNCHANGED}\n<<<STYLES>>>\n{styles}")
        }
        other => panic!("unexpected prompt in the workspace scenario: {other:?}"),
    }
}

pub fn spa_responder(prompt: &Prompt) -> String {
    spa_answer(prompt, false)
}

pub fn spa_regression_responder(prompt: &Prompt) -> String {
    spa_answer(prompt, true)
}

pub struct SpaRun {
    pub result: Result<Vec<TargetReport>, PipelineError>,
    pub before: std::collections::BTreeMap<PathBuf, String>,
    pub after: std::collections::BTreeMap<PathBuf, String>,
    pub seeded: BTreeSet<ViolationKey>,
    pub remaining: BTreeSet<ViolationKey>,
    pub triad_files: BTreeSet<PathBuf>,
    pub stats: StatsSnapshot,
    pub root: tempfile::TempDir,
}

fn workspace_keys(root: &Path) -> BTreeSet<ViolationKey> {
    let ws = angular::load_workspace(root).unwrap();
    angular::discover_components(&ws).triads.iter().flat_map(|t| angular::static_scan_component(t).keys()).collect()
}

fn drive_spa(gateway: &Gateway, root: &Path, build: &str) -> Result<Vec<TargetReport>, PipelineError> {
    let opts = PipelineOptions { build_cmd: Some(build.to_string()), run_id: "golden".into(), ..PipelineOptions::default() };
    pipeline::fix_workspace(root, &opts, gateway, &PromptEngine::default(), &[])
}

pub fn record_spa(cassette: &str, responder: fn(&Prompt) -> String) {
    let root = tempfile::tempdir().unwrap();
    scripted::copy_tree(&workspace_fixture(), root.path());
    scripted::record(&scripted::cassette(cassette), responder, |gw| {
        drive_spa(gw, root.path(), "true").unwrap();
    });
}

/// Copies the fixture workspace and remediates it against a replayed cassette.
pub fn run_spa(cassette: &str, build: &str) -> SpaRun {
    let root = tempfile::tempdir().unwrap();
    scripted::copy_tree(&workspace_fixture(), root.path());
    let ws = angular::load_workspace(root.path()).unwrap();
    let triad_files = angular::discover_components(&ws)
        .triads
        .iter()
        .flat_map(|t| t.files())
        .map(|p| p.strip_prefix(root.path()).unwrap().to_path_buf())
        .collect();
    let seeded = workspace_keys(root.path());
    let before = pa::digest_sweep(root.path()).unwrap();
    let gateway = scripted::replay(&scripted::cassette(cassette));
    let result = drive_spa(&gateway, root.path(), build);
    let after = pa::digest_sweep(root.path()).unwrap();
    let remaining = workspace_keys(root.path());
    SpaRun { result, before, after, seeded, remaining, triad_files, stats: gateway.stats(), root }
}
