//! Re-scan deltas, remediation rate, structural diff and run reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dom;
use crate::model::{AuditReport, ModelError, ViolationKey};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A percentage held as integer hundredths, so `47.06` is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percent(i64);

impl Percent {
    pub fn from_hundredths(h: i64) -> Self {
        Percent(h)
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{:02}", self.0.abs() / 100, self.0.abs() % 100)
    }
}

impl Serialize for Percent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Percent((v * 100.0).round() as i64))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RateError {
    #[error("remediation rate is undefined when the initial violation count is zero")]
    Undefined,
}

// floor(num / den) for den > 0.
fn floor_div(num: i128, den: i128) -> i128 {
    num.div_euclid(den)
}

/// `num / den` rounded half up (towards positive infinity at exact halves).
fn round_half_up(num: i128, den: i128) -> i64 {
    floor_div(2 * num + den, 2 * den) as i64
}

/// `(v_initial - v_final) / v_initial * 100`, to two decimals, half up.
pub fn remediation_rate(v_initial: u64, v_final: u64) -> Result<Percent, RateError> {
    if v_initial == 0 {
        return Err(RateError::Undefined);
    }
    let fixed = v_initial as i128 - v_final as i128;
    Ok(Percent(round_half_up(fixed * 10_000, v_initial as i128)))
}

/// Mean of per-target rates, half up.
pub fn mean_rate(rates: &[Percent]) -> Option<Percent> {
    if rates.is_empty() {
        return None;
    }
    let sum: i128 = rates.iter().map(|p| p.0 as i128).sum();
    Some(Percent(round_half_up(sum, rates.len() as i128)))
}

/// Rate over summed counts of `(v_initial, v_final)` pairs.
pub fn pooled_rate(counts: &[(u64, u64)]) -> Result<Percent, RateError> {
    let initial = counts.iter().map(|c| c.0).sum();
    let fin = counts.iter().map(|c| c.1).sum();
    remediation_rate(initial, fin)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationDelta {
    pub fixed_keys: BTreeSet<ViolationKey>,
    pub remaining_keys: BTreeSet<ViolationKey>,
    pub introduced_keys: BTreeSet<ViolationKey>,
}

impl ViolationDelta {
    pub fn from_keys(before: &BTreeSet<ViolationKey>, after: &BTreeSet<ViolationKey>) -> Self {
        Self {
            fixed_keys: before.difference(after).cloned().collect(),
            remaining_keys: before.intersection(after).cloned().collect(),
            introduced_keys: after.difference(before).cloned().collect(),
        }
    }

    pub fn is_regression_free(&self) -> bool {
        self.introduced_keys.is_empty()
    }
}

pub fn compute_delta(before: &AuditReport, after: &AuditReport) -> Result<ViolationDelta, ModelError> {
    if before.source != after.source {
        return Err(ModelError::SourceMismatch { left: before.source.clone(), right: after.source.clone() });
    }
    Ok(ViolationDelta::from_keys(&before.keys(), &after.keys()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SfvKind {
    InteractiveRemoved,
    AttributeChanged,
    HandlerRemoved,
    FormControlCountChanged,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SfvFlag {
    pub kind: SfvKind,
    pub detail: String,
}

const INTERACTIVE_TAGS: [&str; 5] = ["a", "button", "input", "select", "textarea"];
const FORM_CONTROLS: [&str; 4] = ["input", "select", "textarea", "button"];
const WATCHED_ATTRS: [&str; 3] = ["href", "src", "type"];

pub fn is_handler_attr(name: &str) -> bool {
    let n = name.to_ascii_lowercase();
    (n.starts_with("on") && n.len() > 2 && !n.contains('-'))
        || (n.starts_with('(') && n.ends_with(')'))
        || n.starts_with("[(")
        || n.starts_with("on-")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ElementInfo {
    tag: String,
    interactive: bool,
    handlers: BTreeSet<String>,
    watched: BTreeMap<String, String>,
    label: String,
}

fn element_infos(html: &str) -> (Vec<ElementInfo>, usize) {
    let doc = dom::parse(html);
    let mut out = Vec::new();
    let mut controls = 0;
    for node in dom::elements(&doc) {
        let tag = dom::tag_of(&node).unwrap_or_default();
        if FORM_CONTROLS.contains(&tag.as_str()) {
            controls += 1;
        }
        let handlers: BTreeSet<String> = dom::attr_names(&node).into_iter().filter(|n| is_handler_attr(n)).collect();
        let watched = WATCHED_ATTRS
            .iter()
            .filter_map(|a| dom::attr(&node, a).map(|v| (a.to_string(), v)))
            .collect();
        let id = dom::attr(&node, "id").map(|i| format!("#{i}")).unwrap_or_default();
        out.push(ElementInfo {
            label: format!("<{tag}{id}>"),
            interactive: INTERACTIVE_TAGS.contains(&tag.as_str()) || !handlers.is_empty(),
            tag,
            handlers,
            watched,
        });
    }
    (out, controls)
}

/// Flags edits that may break behaviour: removed or renamed interactive
/// elements, changed href/src/type, removed event handlers and a changed
/// form-control count. Added attributes are never flagged.
pub fn structural_diff(before: &str, after: &str) -> Vec<SfvFlag> {
    let (old, old_controls) = element_infos(before);
    let (new, new_controls) = element_infos(after);
    let old_tags: Vec<&str> = old.iter().map(|e| e.tag.as_str()).collect();
    let new_tags: Vec<&str> = new.iter().map(|e| e.tag.as_str()).collect();
    let mut flags = BTreeSet::new();
    for op in similar::capture_diff_slices(similar::Algorithm::Myers, &old_tags, &new_tags) {
        match op {
            similar::DiffOp::Equal { old_index, new_index, len } => {
                for k in 0..len {
                    compare_pair(&old[old_index + k], &new[new_index + k], &mut flags);
                }
            }
            similar::DiffOp::Delete { old_index, old_len, .. } | similar::DiffOp::Replace { old_index, old_len, .. } => {
                for e in old[old_index..old_index + old_len].iter().filter(|e| e.interactive) {
                    flags.insert(SfvFlag {
                        kind: SfvKind::InteractiveRemoved,
                        detail: format!("interactive element removed: {}", e.label),
                    });
                }
            }
            similar::DiffOp::Insert { .. } => {}
        }
    }
    if old_controls != new_controls {
        flags.insert(SfvFlag {
            kind: SfvKind::FormControlCountChanged,
            detail: format!("form controls {old_controls} -> {new_controls}"),
        });
    }
    flags.into_iter().collect()
}

fn compare_pair(a: &ElementInfo, b: &ElementInfo, flags: &mut BTreeSet<SfvFlag>) {
    if !a.interactive {
        return;
    }
    for (name, value) in &a.watched {
        if b.watched.get(name) != Some(value) {
            flags.insert(SfvFlag {
                kind: SfvKind::AttributeChanged,
                detail: format!("{} {name} changed from {value:?} to {:?}", a.label, b.watched.get(name)),
            });
        }
    }
    for h in a.handlers.difference(&b.handlers) {
        flags.insert(SfvFlag { kind: SfvKind::HandlerRemoved, detail: format!("handler removed: {h} on {}", a.label) });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BuildIntegrity {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "skipped")]
    Skipped,
    #[serde(rename = "n/a")]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOutcome {
    pub command: String,
    pub exit_code: i32,
    pub duration_ms: u64,
    pub log_excerpt: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub v_initial: u64,
    pub v_final: u64,
    /// `None` when the rate is undefined.
    pub rr_percent: Option<Percent>,
    pub bi: BuildIntegrity,
    pub sfv_flags: Vec<SfvFlag>,
    pub runtime_ms: u64,
}

impl MetricsSummary {
    pub fn new(v_initial: u64, v_final: u64, bi: BuildIntegrity, sfv_flags: Vec<SfvFlag>, runtime_ms: u64) -> Self {
        Self { v_initial, v_final, rr_percent: remediation_rate(v_initial, v_final).ok(), bi, sfv_flags, runtime_ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Fixed,
    Rejected,
    Failed,
    RolledBack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationOutcome {
    pub key: ViolationKey,
    pub rule_id: String,
    pub criterion: String,
    pub selector: String,
    pub status: OutcomeStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    StaticPage,
    AngularComponent,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: u64,
    pub phases: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub source: String,
    pub kind: TargetKind,
    pub v_initial: u64,
    pub v_final: u64,
    pub rr_percent: Option<Percent>,
    pub bi: BuildIntegrity,
    pub verified: bool,
    pub sfv_flags: Vec<SfvFlag>,
    pub outcomes: Vec<ViolationOutcome>,
    pub introduced_keys: Vec<ViolationKey>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub build: Option<BuildOutcome>,
    pub errors: Vec<String>,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub targets: usize,
    pub verified: usize,
    pub v_initial: u64,
    pub v_final: u64,
    pub rr_mean: Option<Percent>,
    pub rr_pooled: Option<Percent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub mode: String,
    pub generated_at: chrono::DateTime<chrono::Utc>,
    pub config: serde_json::Value,
    pub targets: Vec<TargetReport>,
    pub summary: RunSummary,
    pub gateway: serde_json::Value,
    /// Set when the run stopped before finishing every target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fatal: Option<FatalError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FatalKind {
    Usage,
    Environment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FatalError {
    pub kind: FatalKind,
    pub message: String,
}

impl RunReport {
    pub fn new(mode: &str, config: serde_json::Value, targets: Vec<TargetReport>, gateway: serde_json::Value) -> Self {
        let rates: Vec<Percent> = targets.iter().filter_map(|t| t.rr_percent).collect();
        let counts: Vec<(u64, u64)> = targets.iter().map(|t| (t.v_initial, t.v_final)).collect();
        let summary = RunSummary {
            targets: targets.len(),
            verified: targets.iter().filter(|t| t.verified).count(),
            v_initial: counts.iter().map(|c| c.0).sum(),
            v_final: counts.iter().map(|c| c.1).sum(),
            rr_mean: mean_rate(&rates),
            rr_pooled: pooled_rate(&counts).ok(),
        };
        Self {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            mode: mode.to_string(),
            generated_at: chrono::Utc::now(),
            config,
            targets,
            summary,
            gateway,
            fatal: None,
        }
    }

    pub fn with_fatal(mut self, kind: FatalKind, message: impl Into<String>) -> Self {
        self.fatal = Some(FatalError { kind, message: message.into() });
        self
    }

    /// 64/69 for a fatal usage/environment error; otherwise 0 when every
    /// target verified, 2 when some did, 3 when none did.
    pub fn exit_code(&self) -> i32 {
        match &self.fatal {
            Some(FatalError { kind: FatalKind::Usage, .. }) => return 64,
            Some(FatalError { kind: FatalKind::Environment, .. }) => return 69,
            None => {}
        }
        match (self.summary.verified, self.summary.targets) {
            (v, t) if v == t => 0,
            (0, _) => 3,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn emit_run_report(report: &RunReport, out: &Path) -> std::io::Result<()> {
    crate::vision::write_atomic(out, report.to_json().as_bytes())
}

/// Report JSON with volatile fields (timestamps, timings, durations) zeroed,
/// for comparing runs.
pub fn normalized(report_json: &str) -> serde_json::Result<serde_json::Value> {
    let mut v: serde_json::Value = serde_json::from_str(report_json)?;
    fn scrub(v: &mut serde_json::Value) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, val) in map.iter_mut() {
                    if matches!(k.as_str(), "generated_at" | "timings" | "duration_ms" | "runtime_ms") {
                        *val = serde_json::Value::Null;
                    } else {
                        scrub(val);
                    }
                }
            }
            serde_json::Value::Array(items) => items.iter_mut().for_each(scrub),
            _ => {}
        }
    }
    scrub(&mut v);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rr(i: u64, f: u64) -> String {
        remediation_rate(i, f).unwrap().to_string()
    }

    #[test]
    fn rate_examples() {
        assert_eq!(rr(68, 36), "47.06");
        assert_eq!(rr(21, 11), "47.62");
        assert_eq!(rr(66, 20), "69.70");
        assert_eq!(rr(9, 9), "0.00");
        assert_eq!(rr(9, 0), "100.00");
        assert_eq!(remediation_rate(0, 0), Err(RateError::Undefined));
        // 1/8 = 12.5 bp exactly at a half: rounds up.
        assert_eq!(rr(8000, 7999), "0.01");
        assert_eq!(rr(8, 9), "-12.50");
    }

    #[test]
    fn means_round_half_up() {
        let p = |h| Percent::from_hundredths(h);
        assert_eq!(mean_rate(&[p(1), p(2)]), Some(p(2)));
        assert_eq!(mean_rate(&[]), None);
        assert_eq!(pooled_rate(&[(10, 5), (10, 0)]).unwrap().to_string(), "75.00");
    }

    #[test]
    fn percent_serializes_as_number() {
        let v = serde_json::to_value(Percent::from_hundredths(4706)).unwrap();
        assert_eq!(v, serde_json::json!(47.06));
        let back: Percent = serde_json::from_value(v).unwrap();
        assert_eq!(back.hundredths(), 4706);
    }

    fn keys(ids: &[u8]) -> BTreeSet<ViolationKey> {
        ids.iter().map(|i| serde_json::from_value(serde_json::json!(format!("k{i}"))).unwrap()).collect()
    }

    #[test]
    fn delta_examples() {
        let d = ViolationDelta::from_keys(&keys(&[1, 2, 3]), &keys(&[3]));
        assert_eq!(d.fixed_keys, keys(&[1, 2]));
        assert_eq!(d.remaining_keys, keys(&[3]));
        assert!(d.introduced_keys.is_empty());
        let d = ViolationDelta::from_keys(&keys(&[1]), &keys(&[1, 4]));
        assert_eq!(d.introduced_keys, keys(&[4]));
        assert!(!d.is_regression_free());
    }

    #[test]
    fn delta_rejects_mismatched_sources() {
        let a = AuditReport::empty("a", crate::model::Scanner::NativeRules);
        let b = AuditReport::empty("b", crate::model::Scanner::NativeRules);
        assert!(compute_delta(&a, &b).is_err());
        assert_eq!(compute_delta(&a, &a).unwrap(), ViolationDelta::default());
    }

    proptest! {
        #[test]
        fn delta_algebra(before in proptest::collection::vec(0u8..40, 0..30), after in proptest::collection::vec(0u8..40, 0..30)) {
            let (b, a) = (keys(&before), keys(&after));
            let d = ViolationDelta::from_keys(&b, &a);
            prop_assert_eq!(b.len(), d.fixed_keys.len() + d.remaining_keys.len());
            prop_assert_eq!(a.len(), d.remaining_keys.len() + d.introduced_keys.len());
            prop_assert!(d.fixed_keys.is_disjoint(&d.remaining_keys));
            prop_assert!(d.fixed_keys.is_disjoint(&d.introduced_keys));
            prop_assert!(d.remaining_keys.is_disjoint(&d.introduced_keys));
        }

        #[test]
        fn rate_matches_float_oracle(i in 1u64..100_000, f in 0u64..100_000) {
            prop_assume!(f <= i);
            let exact = (i - f) as f64 / i as f64 * 100.0;
            let got = remediation_rate(i, f).unwrap().as_f64();
            prop_assert!((got - exact).abs() <= 0.005 + 1e-9, "{} vs {}", got, exact);
            prop_assert!((0.0..=100.0).contains(&got));
        }

        #[test]
        fn diff_of_identical_documents_is_empty(n in 0usize..6, handler in any::<bool>()) {
            let mut html = String::from("<nav>");
            for k in 0..n {
                html.push_str(&format!("<a href=\"/p{k}\">p{k}</a>"));
            }
            if handler {
                html.push_str("<div (click)=\"go()\" onclick=\"x()\">x</div><input type=\"text\">");
            }
            html.push_str("</nav>");
            prop_assert!(structural_diff(&html, &html).is_empty());
        }
    }

    #[test]
    fn aria_additions_are_not_flagged() {
        let before = "<button>x</button><img src=\"a.png\"><p>t</p>";
        let after = "<button aria-label=\"Close\" role=\"button\">x</button><img src=\"a.png\" alt=\"A\"><p lang=\"en\">t</p>";
        assert!(structural_diff(before, after).is_empty());
    }

    #[test]
    fn removed_handler_is_flagged() {
        let before = r#"<div (click)="open()" class="card">x</div>"#;
        let after = r#"<div class="card" role="button" tabindex="0">x</div>"#;
        let flags = structural_diff(before, after);
        assert_eq!(flags.iter().map(|f| f.kind).collect::<Vec<_>>(), [SfvKind::HandlerRemoved], "{flags:?}");
        let before = r#"<button (click)="open()" (keydown)="k()">x</button>"#;
        let after = r#"<button (keydown)="k()">x</button>"#;
        let flags = structural_diff(before, after);
        assert_eq!(flags.iter().map(|f| f.kind).collect::<Vec<_>>(), [SfvKind::HandlerRemoved]);
        assert!(flags[0].detail.contains("(click)"));
    }

    #[test]
    fn removed_nav_link_is_flagged() {
        let before = r#"<nav><a href="/a">A</a><a href="/b">B</a></nav>"#;
        let after = r#"<nav><a href="/a">A</a></nav>"#;
        let flags = structural_diff(before, after);
        assert_eq!(flags.iter().map(|f| f.kind).collect::<Vec<_>>(), [SfvKind::InteractiveRemoved]);
    }

    #[test]
    fn changed_href_and_control_count() {
        let flags = structural_diff(r#"<a href="/a">A</a>"#, r#"<a href="/b">A</a>"#);
        assert_eq!(flags[0].kind, SfvKind::AttributeChanged);
        let flags = structural_diff("<form><input></form>", "<form><input><input></form>");
        assert_eq!(flags.iter().map(|f| f.kind).collect::<Vec<_>>(), [SfvKind::FormControlCountChanged]);
    }

    fn target(v0: u64, v1: u64, verified: bool) -> TargetReport {
        TargetReport {
            source: "s".into(),
            kind: TargetKind::StaticPage,
            v_initial: v0,
            v_final: v1,
            rr_percent: remediation_rate(v0, v1).ok(),
            bi: BuildIntegrity::NotApplicable,
            verified,
            sfv_flags: vec![],
            outcomes: vec![],
            introduced_keys: vec![],
            artifact: None,
            build: None,
            errors: vec![],
            timings: Timings::default(),
        }
    }

    #[test]
    fn exit_codes_follow_verification() {
        let all = RunReport::new("fix_web", serde_json::json!({}), vec![target(7, 0, true)], serde_json::json!({}));
        assert_eq!(all.exit_code(), 0);
        assert_eq!(all.summary.rr_mean.unwrap().to_string(), "100.00");
        let some = RunReport::new("fix_web", serde_json::json!({}), vec![target(7, 0, true), target(3, 3, false)], serde_json::json!({}));
        assert_eq!(some.exit_code(), 2);
        assert_eq!(some.summary.rr_pooled.unwrap().to_string(), "70.00");
        let none = RunReport::new("fix_web", serde_json::json!({}), vec![target(3, 3, false)], serde_json::json!({}));
        assert_eq!(none.exit_code(), 3);
        assert_eq!(all.clone().with_fatal(FatalKind::Environment, "no driver").exit_code(), 69);
        assert_eq!(all.with_fatal(FatalKind::Usage, "bad flag").exit_code(), 64);
    }

    #[test]
    fn report_json_is_stable_modulo_volatile_fields() {
        let a = RunReport::new("fix_web", serde_json::json!({"k": 1}), vec![target(7, 0, true)], serde_json::json!({}));
        let mut b = a.clone();
        b.generated_at += chrono::Duration::seconds(5);
        b.targets[0].timings.total_ms = 99;
        assert_ne!(a.to_json(), b.to_json());
        assert_eq!(normalized(&a.to_json()).unwrap(), normalized(&b.to_json()).unwrap());
        let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["targets"][0]["bi"], "n/a");
        assert_eq!(v["targets"][0]["rr_percent"], 100.0);
    }
}
