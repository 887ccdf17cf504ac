use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use a11yfix_core::dom;
use a11yfix_core::model::{AuditReport, Violation};
use a11yfix_core::rules;
use serde::Deserialize;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub page: String,
    pub rule: String,
    pub selector: String,
}

#[derive(Debug, Deserialize)]
pub struct Manifest {
    pub sites: BTreeMap<String, Vec<String>>,
    pub violations: Vec<Expected>,
}

pub fn seeded_manifest() -> Manifest {
    let text = std::fs::read_to_string(fixtures().join("corpus/seeded/expected.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Every html file under `root`, relative, in sorted order.
pub fn pages_under(root: &Path) -> Vec<String> {
    let mut out: Vec<String> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.path().extension().is_some_and(|x| x == "html"))
        .map(|e| e.path().strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"))
        .collect();
    out.sort();
    out
}

/// Scans each page of a corpus. Pages in the same directory are siblings.
pub fn scan_corpus(root: &Path) -> BTreeMap<String, (String, AuditReport)> {
    let pages = pages_under(root);
    let mut out = BTreeMap::new();
    for page in &pages {
        let html = std::fs::read_to_string(root.join(page)).unwrap();
        let dir = Path::new(page).parent().map(Path::to_path_buf).unwrap_or_default();
        let siblings: Vec<String> = if dir.ends_with("standalone") {
            Vec::new()
        } else {
            pages
                .iter()
                .filter(|p| *p != page && Path::new(p).parent() == Some(dir.as_path()))
                .map(|p| std::fs::read_to_string(root.join(p)).unwrap())
                .collect()
        };
        let opts = rules::ScanOptions { pages: siblings, ..rules::ScanOptions::document(page.clone()) };
        let report = rules::scan_with(&html, &opts);
        out.insert(page.clone(), (html, report));
    }
    out
}

pub fn same_node(html: &str, selector: &str, v: &Violation) -> bool {
    let doc = dom::parse(html);
    let hits = dom::resolve(&doc, selector);
    assert_eq!(hits.len(), 1, "expected selector {selector} to match once");
    dom::dom_path(&hits[0]) == v.locator.dom_path
}

#[derive(Debug, Default)]
pub struct CorpusScore {
    pub expected: usize,
    pub found: usize,
    pub missed: Vec<String>,
    pub unexpected: Vec<String>,
    pub rules_covered: usize,
}

pub fn score_seeded() -> CorpusScore {
    let manifest = seeded_manifest();
    let scans = scan_corpus(&fixtures().join("corpus/seeded"));
    let mut score = CorpusScore { expected: manifest.violations.len(), ..CorpusScore::default() };
    let mut matched: BTreeMap<String, Vec<bool>> =
        scans.iter().map(|(p, (_, r))| (p.clone(), vec![false; r.len()])).collect();
    for e in &manifest.violations {
        let (html, report) = &scans[&e.page];
        let hit = report
            .violations()
            .iter()
            .position(|v| v.rule_id == e.rule && same_node(html, &e.selector, v));
        match hit {
            Some(i) => {
                score.found += 1;
                matched.get_mut(&e.page).unwrap()[i] = true;
            }
            None => score.missed.push(format!("{} {} {}", e.page, e.rule, e.selector)),
        }
    }
    for (page, (_, report)) in &scans {
        for (v, hit) in report.violations().iter().zip(&matched[page]) {
            if !hit {
                score.unexpected.push(format!("{page} {} {}", v.rule_id, v.locator.css_selector));
            }
        }
    }
    let covered: std::collections::BTreeSet<&str> = manifest.violations.iter().map(|e| e.rule.as_str()).collect();
    score.rules_covered = rules::catalog().iter().filter(|d| covered.contains(d.rule_id)).count();
    score
}

pub fn clean_findings() -> Vec<String> {
    scan_corpus(&fixtures().join("corpus/clean"))
        .into_iter()
        .flat_map(|(page, (_, report))| {
            report
                .violations()
                .iter()
                .map(|v| format!("{page} {} {}", v.rule_id, v.locator.css_selector))
                .collect::<Vec<_>>()
        })
        .collect()
}
