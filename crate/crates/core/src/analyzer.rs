//! Client side of the structural analyzer.
//!
//! The analyzer is an external process speaking a small JSON protocol: the
//! mode is passed as `--mode <mode>`, the source arrives on stdin, and exactly
//! one response document is written to stdout. `AST_DIFF` takes a JSON
//! envelope `{"before": .., "after": ..}` on stdin instead of raw source.
//!
//! [`FixtureAnalyzer`] replays recorded responses and is what the test suites
//! run against.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{BoundedRunner, CommandSpec};

pub const SCHEMA_ID: &str = "repairloop.analyzer/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AnalyzerMode {
    Features,
    UndefinedNames,
    Units,
    CanonicalDump,
    AstDiff,
}

impl AnalyzerMode {
    pub fn arg(self) -> &'static str {
        match self {
            Self::Features => "features",
            Self::UndefinedNames => "undefined-names",
            Self::Units => "units",
            Self::CanonicalDump => "canonical-dump",
            Self::AstDiff => "ast-diff",
        }
    }

    fn file_stem(self) -> &'static str {
        match self {
            Self::Features => "features",
            Self::UndefinedNames => "undefined_names",
            Self::Units => "units",
            Self::CanonicalDump => "canonical_dump",
            Self::AstDiff => "ast_diff",
        }
    }
}

/// Structural features of one source file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AstFeatures {
    pub function_count: u32,
    pub class_count: u32,
    pub max_loop_depth: u32,
    pub recursion: bool,
    pub class_usage: bool,
    pub common_libraries: BTreeMap<String, bool>,
    pub state_machine: bool,
    pub approx_cyclomatic: u32,
    pub import_names: BTreeSet<String>,
    /// Multiset of return-tuple arities, kept sorted.
    pub return_arities: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedName {
    pub name: String,
    pub line: u32,
}

/// A top-level function or class method.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub qualified_name: String,
    pub params: Vec<String>,
    /// First and last source line, 1-based and inclusive.
    pub span: (u32, u32),
}

impl Unit {
    /// Source lines covered by the unit.
    pub fn excerpt(&self, source: &str) -> String {
        let (start, end) = self.span;
        source
            .lines()
            .skip(start.saturating_sub(1) as usize)
            .take((end + 1).saturating_sub(start) as usize)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AstDiff {
    pub added: BTreeMap<String, u32>,
    pub removed: BTreeMap<String, u32>,
}

impl AstDiff {
    pub fn is_empty(&self) -> bool {
        self.added.values().all(|&n| n == 0) && self.removed.values().all(|&n| n == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerRequest {
    pub mode: AnalyzerMode,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second_source: Option<String>,
}

impl AnalyzerRequest {
    pub fn new(mode: AnalyzerMode, source: impl Into<String>) -> Self {
        Self {
            mode,
            source: source.into(),
            second_source: None,
        }
    }

    pub fn diff(before: impl Into<String>, after: impl Into<String>) -> Self {
        Self {
            mode: AnalyzerMode::AstDiff,
            source: before.into(),
            second_source: Some(after.into()),
        }
    }

    fn key(&self) -> (AnalyzerMode, String) {
        let mut bytes = self.source.as_bytes().to_vec();
        if let Some(second) = &self.second_source {
            bytes.push(0);
            bytes.extend_from_slice(second.as_bytes());
        }
        (self.mode, crate::skills::blake2b256_hex(&bytes))
    }

    fn stdin_payload(&self) -> Result<Vec<u8>> {
        match (&self.mode, &self.second_source) {
            (AnalyzerMode::AstDiff, Some(after)) => Ok(serde_json::to_vec(
                &serde_json::json!({ "before": self.source, "after": after }),
            )?),
            (AnalyzerMode::AstDiff, None) => Err(Error::AnalyzerProtocol(
                "AST_DIFF requires a second source".into(),
            )),
            _ => Ok(self.source.clone().into_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzerResponse {
    pub schema: String,
    pub ok: bool,
    pub mode: AnalyzerMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<AstFeatures>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undefined_names: Option<Vec<UndefinedName>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<Unit>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dumps: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diff: Option<AstDiff>,
}

impl AnalyzerResponse {
    fn empty(mode: AnalyzerMode) -> Self {
        Self {
            schema: SCHEMA_ID.to_string(),
            ok: true,
            mode,
            error: None,
            features: None,
            undefined_names: None,
            units: None,
            dumps: None,
            diff: None,
        }
    }

    pub fn features(f: AstFeatures) -> Self {
        Self {
            features: Some(f),
            ..Self::empty(AnalyzerMode::Features)
        }
    }

    pub fn undefined(names: Vec<UndefinedName>) -> Self {
        Self {
            undefined_names: Some(names),
            ..Self::empty(AnalyzerMode::UndefinedNames)
        }
    }

    pub fn units(units: Vec<Unit>) -> Self {
        Self {
            units: Some(units),
            ..Self::empty(AnalyzerMode::Units)
        }
    }

    pub fn dumps(dumps: Vec<String>) -> Self {
        Self {
            dumps: Some(dumps),
            ..Self::empty(AnalyzerMode::CanonicalDump)
        }
    }

    pub fn diff(diff: AstDiff) -> Self {
        Self {
            diff: Some(diff),
            ..Self::empty(AnalyzerMode::AstDiff)
        }
    }

    pub fn parse_failure(mode: AnalyzerMode, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            error: Some(message.into()),
            ..Self::empty(mode)
        }
    }

    /// Checks the schema id, the mode echo and that the payload matches it.
    pub fn validate(&self, expected: AnalyzerMode) -> Result<()> {
        if self.schema != SCHEMA_ID {
            return Err(Error::AnalyzerProtocol(format!(
                "unexpected schema `{}`",
                self.schema
            )));
        }
        if self.mode != expected {
            return Err(Error::AnalyzerProtocol(format!(
                "asked for {expected:?}, got {:?}",
                self.mode
            )));
        }
        if !self.ok {
            return Err(Error::ParseFailure(
                self.error.clone().unwrap_or_else(|| "unknown error".into()),
            ));
        }
        let present = match expected {
            AnalyzerMode::Features => self.features.is_some(),
            AnalyzerMode::UndefinedNames => self.undefined_names.is_some(),
            AnalyzerMode::Units => self.units.is_some(),
            AnalyzerMode::CanonicalDump => self.dumps.is_some(),
            AnalyzerMode::AstDiff => self.diff.is_some(),
        };
        if present {
            Ok(())
        } else {
            Err(Error::AnalyzerProtocol(format!("{expected:?} payload missing")))
        }
    }
}

pub trait Analyzer {
    fn analyze(&self, request: &AnalyzerRequest) -> Result<AnalyzerResponse>;

    fn features(&self, source: &str) -> Result<AstFeatures> {
        let resp = self.call(AnalyzerRequest::new(AnalyzerMode::Features, source))?;
        Ok(resp.features.unwrap_or_default())
    }

    fn undefined_names(&self, source: &str) -> Result<Vec<UndefinedName>> {
        let resp = self.call(AnalyzerRequest::new(AnalyzerMode::UndefinedNames, source))?;
        Ok(resp.undefined_names.unwrap_or_default())
    }

    fn units(&self, source: &str) -> Result<Vec<Unit>> {
        let resp = self.call(AnalyzerRequest::new(AnalyzerMode::Units, source))?;
        Ok(resp.units.unwrap_or_default())
    }

    /// One canonical dump per unit, in [`Analyzer::units`] order.
    fn canonical_dumps(&self, source: &str) -> Result<Vec<String>> {
        let resp = self.call(AnalyzerRequest::new(AnalyzerMode::CanonicalDump, source))?;
        Ok(resp.dumps.unwrap_or_default())
    }

    fn ast_diff(&self, before: &str, after: &str) -> Result<AstDiff> {
        let resp = self.call(AnalyzerRequest::diff(before, after))?;
        Ok(resp.diff.unwrap_or_default())
    }

    #[doc(hidden)]
    fn call(&self, request: AnalyzerRequest) -> Result<AnalyzerResponse> {
        let resp = self.analyze(&request)?;
        resp.validate(request.mode)?;
        Ok(resp)
    }
}

impl<A: Analyzer + ?Sized> Analyzer for &A {
    fn analyze(&self, request: &AnalyzerRequest) -> Result<AnalyzerResponse> {
        (**self).analyze(request)
    }
}

impl<A: Analyzer + ?Sized> Analyzer for Box<A> {
    fn analyze(&self, request: &AnalyzerRequest) -> Result<AnalyzerResponse> {
        (**self).analyze(request)
    }
}

/// Runs the analyzer as a bounded, allowlisted subprocess.
#[derive(Debug, Clone)]
pub struct SubprocessAnalyzer {
    runner: BoundedRunner,
    command: Vec<String>,
    timeout: Duration,
    output_cap: usize,
}

impl SubprocessAnalyzer {
    pub fn new(runner: BoundedRunner, command: Vec<String>) -> Self {
        Self {
            runner,
            command,
            timeout: Duration::from_secs(30),
            output_cap: 1 << 20,
        }
    }

    pub fn with_limits(mut self, timeout: Duration, output_cap: usize) -> Self {
        self.timeout = timeout;
        self.output_cap = output_cap;
        self
    }
}

impl Analyzer for SubprocessAnalyzer {
    fn analyze(&self, request: &AnalyzerRequest) -> Result<AnalyzerResponse> {
        let (program, rest) = self
            .command
            .split_first()
            .ok_or_else(|| Error::AnalyzerUnavailable("no analyzer command configured".into()))?;
        let cmd = CommandSpec::new(program.clone(), self.runner.root())
            .args(rest.iter().cloned())
            .args(["--mode", request.mode.arg()])
            .stdin(request.stdin_payload()?)
            .timeout(self.timeout)
            .output_cap(self.output_cap);
        let out = self.runner.run(&cmd).map_err(|e| match e {
            Error::SpawnFailure { .. } | Error::DisallowedCommand(_) | Error::Timeout { .. } => {
                Error::AnalyzerUnavailable(e.to_string())
            }
            other => other,
        })?;
        if out.truncated_bytes > 0 {
            return Err(Error::AnalyzerProtocol("response exceeded output cap".into()));
        }
        let resp: AnalyzerResponse = serde_json::from_str(out.stdout.trim())
            .map_err(|e| Error::AnalyzerProtocol(format!("{e}; stderr: {}", out.stderr.trim())))?;
        Ok(resp)
    }
}

/// Replays recorded analyzer responses keyed by mode and source digest.
#[derive(Debug, Clone, Default)]
pub struct FixtureAnalyzer {
    responses: HashMap<(AnalyzerMode, String), AnalyzerResponse>,
}

impl FixtureAnalyzer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, request: &AnalyzerRequest, response: AnalyzerResponse) {
        self.responses.insert(request.key(), response);
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// Loads a fixture directory.
    ///
    /// Each subdirectory holds `source.py` plus one recorded response per mode
    /// (`features.json`, `undefined_names.json`, `units.json`,
    /// `canonical_dump.json`). A `diffs/` subdirectory holds
    /// `<before>__<after>.json` AST_DIFF responses naming two sibling entries.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut fx = Self::new();
        let mut sources: BTreeMap<String, String> = BTreeMap::new();
        for entry in sorted_entries(dir)? {
            let name = file_name(&entry);
            if !entry.is_dir() || name == "diffs" {
                continue;
            }
            let source = std::fs::read_to_string(entry.join("source.py"))?;
            for mode in [
                AnalyzerMode::Features,
                AnalyzerMode::UndefinedNames,
                AnalyzerMode::Units,
                AnalyzerMode::CanonicalDump,
            ] {
                let path = entry.join(format!("{}.json", mode.file_stem()));
                if path.exists() {
                    let resp: AnalyzerResponse =
                        serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                    fx.record(&AnalyzerRequest::new(mode, source.clone()), resp);
                }
            }
            sources.insert(name, source);
        }
        let diffs = dir.join("diffs");
        if diffs.is_dir() {
            for path in sorted_entries(&diffs)? {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let (before, after) = stem.split_once("__").ok_or_else(|| {
                    Error::InvalidConfig(format!("diff fixture `{stem}` must be <before>__<after>"))
                })?;
                let lookup = |n: &str| {
                    sources.get(n).cloned().ok_or_else(|| {
                        Error::InvalidConfig(format!("diff fixture names unknown source `{n}`"))
                    })
                };
                let resp: AnalyzerResponse =
                    serde_json::from_str(&std::fs::read_to_string(&path)?)?;
                fx.record(&AnalyzerRequest::diff(lookup(before)?, lookup(after)?), resp);
            }
        }
        Ok(fx)
    }

    /// Merges another fixture set into this one.
    pub fn extend(&mut self, other: FixtureAnalyzer) {
        self.responses.extend(other.responses);
    }
}

impl Analyzer for FixtureAnalyzer {
    fn analyze(&self, request: &AnalyzerRequest) -> Result<AnalyzerResponse> {
        let key = request.key();
        self.responses.get(&key).cloned().ok_or_else(|| {
            Error::AnalyzerUnavailable(format!(
                "no recorded {:?} response for source {}",
                key.0,
                &key.1[..16]
            ))
        })
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Allowlist;

    #[test]
    fn fixture_replays_and_misses() {
        let mut fx = FixtureAnalyzer::new();
        let req = AnalyzerRequest::new(AnalyzerMode::UndefinedNames, "print(foo)\n");
        fx.record(
            &req,
            AnalyzerResponse::undefined(vec![UndefinedName {
                name: "foo".into(),
                line: 1,
            }]),
        );
        let names = fx.undefined_names("print(foo)\n").unwrap();
        assert_eq!(names[0].name, "foo");
        assert!(matches!(
            fx.undefined_names("print(bar)\n"),
            Err(Error::AnalyzerUnavailable(_))
        ));
    }

    #[test]
    fn parse_failure_surfaces() {
        let mut fx = FixtureAnalyzer::new();
        fx.record(
            &AnalyzerRequest::new(AnalyzerMode::Features, "def ("),
            AnalyzerResponse::parse_failure(AnalyzerMode::Features, "invalid syntax"),
        );
        assert!(matches!(fx.features("def ("), Err(Error::ParseFailure(_))));
    }

    #[test]
    fn mismatched_payload_is_a_protocol_error() {
        let mut fx = FixtureAnalyzer::new();
        fx.record(
            &AnalyzerRequest::new(AnalyzerMode::Units, "x = 1\n"),
            AnalyzerResponse::features(AstFeatures::default()),
        );
        assert!(matches!(fx.units("x = 1\n"), Err(Error::AnalyzerProtocol(_))));
    }

    #[test]
    fn unit_excerpt_uses_inclusive_span() {
        let unit = Unit {
            qualified_name: "g".into(),
            params: vec![],
            span: (2, 3),
        };
        assert_eq!(unit.excerpt("a\nb\nc\nd\n"), "b\nc");
    }

    #[test]
    fn subprocess_transport_round_trips() {
        // Stand-in analyzer: echoes a canned response for whatever mode it is given.
        let dir = tempfile::tempdir().unwrap();
        let script = r#"
import json, sys
mode = sys.argv[sys.argv.index("--mode") + 1]
src = sys.stdin.read()
print(json.dumps({"schema": "repairloop.analyzer/v1", "ok": True, "mode": "UNITS",
  "units": [{"qualified_name": "f", "params": ["x"], "span": [1, len(src.splitlines())]}]}))
"#;
        std::fs::write(dir.path().join("fake_analyzer.py"), script).unwrap();
        let runner = BoundedRunner::new(Allowlist::default(), dir.path());
        let analyzer = SubprocessAnalyzer::new(
            runner,
            vec!["python3".into(), "fake_analyzer.py".into()],
        );
        let units = analyzer.units("def f(x):\n    return x\n").unwrap();
        assert_eq!(units[0].params, vec!["x"]);
        assert_eq!(units[0].span, (1, 2));
    }

    #[test]
    fn missing_analyzer_program_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let runner = BoundedRunner::new(Allowlist::new(["no-such-analyzer"]), dir.path());
        let analyzer = SubprocessAnalyzer::new(runner, vec!["no-such-analyzer".into()]);
        assert!(matches!(
            analyzer.features("x = 1"),
            Err(Error::AnalyzerUnavailable(_))
        ));
    }
}
