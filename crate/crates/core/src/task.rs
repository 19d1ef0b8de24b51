use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::validator::Stage;

pub const DEFAULT_TARGET_FILE: &str = "algorithm.py";
pub const DEFAULT_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterfaceKind {
    Function,
    Class,
}

/// One obligation of the task's declared interface.
///
/// For functions `name` may be qualified (`Agent.act`) and `arity` counts every
/// parameter the analyzer reports, `self` included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceItem {
    pub name: String,
    pub kind: InterfaceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arity: Option<usize>,
}

/// Per-stage argv templates. `{file}` expands to the target file name and
/// `{module}` to its stem; both are relative to the workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageCommands {
    pub syntax: Vec<String>,
    pub import: Vec<String>,
    pub runtime: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub behavior: Option<Vec<String>>,
}

impl Default for StageCommands {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            syntax: s(&[
                "python3",
                "-c",
                "import sys; compile(open(sys.argv[1], encoding='utf-8').read(), sys.argv[1], 'exec')",
                "{file}",
            ]),
            import: s(&[
                "python3",
                "-c",
                "import importlib, sys; sys.path.insert(0, '.'); importlib.import_module(sys.argv[1])",
                "{module}",
            ]),
            runtime: s(&["python3", "{file}"]),
            behavior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    /// Explicit family label; derived from the prompt when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    pub prompt: String,
    #[serde(default = "default_target")]
    pub target_file: String,
    /// Applicable stages; defaults to every stage that has a command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stages: Option<Vec<Stage>>,
    #[serde(default)]
    pub interface: Vec<InterfaceItem>,
    #[serde(default)]
    pub commands: StageCommands,
    /// Files written into the workspace before the first attempt.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub support_files: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_source: Option<String>,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default, skip)]
    pub workspace: PathBuf,
}

fn default_target() -> String {
    DEFAULT_TARGET_FILE.to_string()
}

fn default_attempts() -> u32 {
    DEFAULT_ATTEMPTS
}

fn default_timeout_secs() -> f64 {
    crate::exec::DEFAULT_TIMEOUT.as_secs_f64()
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            family: None,
            prompt: prompt.into(),
            target_file: default_target(),
            stages: None,
            interface: Vec::new(),
            commands: StageCommands::default(),
            support_files: BTreeMap::new(),
            initial_source: None,
            attempts: DEFAULT_ATTEMPTS,
            timeout_secs: default_timeout_secs(),
            workspace: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let task: TaskSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.attempts < 1 {
            return Err(Error::InvalidConfig(format!(
                "task {}: attempt budget must be at least 1",
                self.id
            )));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "task {}: timeout must be positive",
                self.id
            )));
        }
        let target = Path::new(&self.target_file);
        if target.is_absolute()
            || target.components().count() != 1
            || self.target_file == ".."
        {
            return Err(Error::WorkspaceEscape(target.to_path_buf()));
        }
        if !self.applies(Stage::Syntax) {
            return Err(Error::InvalidConfig(format!(
                "task {}: the syntax stage cannot be disabled",
                self.id
            )));
        }
        if self.applies(Stage::Behavior) && self.commands.behavior.is_none() {
            return Err(Error::InvalidConfig(format!(
                "task {}: behavior stage enabled without a behavior command",
                self.id
            )));
        }
        Ok(())
    }

    pub fn with_workspace(mut self, workspace: impl Into<PathBuf>) -> Self {
        self.workspace = workspace.into();
        self
    }

    pub fn family_label(&self) -> String {
        self.family
            .clone()
            .unwrap_or_else(|| crate::memory::task_family(&self.prompt))
    }

    pub fn applies(&self, stage: Stage) -> bool {
        match &self.stages {
            Some(stages) => stages.contains(&stage),
            None => stage != Stage::Behavior || self.commands.behavior.is_some(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn target_path(&self) -> PathBuf {
        self.workspace.join(&self.target_file)
    }

    pub fn module_name(&self) -> &str {
        Path::new(&self.target_file)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("algorithm")
    }

    /// Expanded argv for a command-backed stage.
    pub fn command_for(&self, stage: Stage) -> Option<Vec<String>> {
        let template = match stage {
            Stage::Syntax => Some(&self.commands.syntax),
            Stage::Import => Some(&self.commands.import),
            Stage::Runtime => Some(&self.commands.runtime),
            Stage::Behavior => self.commands.behavior.as_ref(),
            Stage::UndefinedName | Stage::SpecContract => None,
        }?;
        Some(
            template
                .iter()
                .map(|arg| {
                    arg.replace("{file}", &self.target_file)
                        .replace("{module}", self.module_name())
                })
                .collect(),
        )
    }

    /// Creates the workspace and writes support files and the initial source.
    pub fn prepare_workspace(&self) -> Result<()> {
        std::fs::create_dir_all(&self.workspace)?;
        for (name, content) in &self.support_files {
            let path = crate::exec::ensure_inside(&self.workspace, Path::new(name))?;
            std::fs::write(path, content)?;
        }
        if let Some(src) = &self.initial_source {
            std::fs::write(self.target_path(), src)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_when_fields_missing() {
        let task: TaskSpec =
            serde_json::from_str(r#"{"id": "t", "prompt": "train a q learning agent"}"#).unwrap();
        assert_eq!(task.target_file, "algorithm.py");
        assert_eq!(task.attempts, 3);
        assert!(task.applies(Stage::Runtime));
        assert!(!task.applies(Stage::Behavior));
        assert_eq!(task.family_label(), "q_learning");
    }

    #[test]
    fn command_templates_expand() {
        let task = TaskSpec::new("t", "x");
        assert_eq!(
            task.command_for(Stage::Runtime).unwrap(),
            vec!["python3".to_string(), "algorithm.py".to_string()]
        );
        assert_eq!(task.command_for(Stage::Import).unwrap().last().unwrap(), "algorithm");
        assert!(task.command_for(Stage::UndefinedName).is_none());
    }

    #[test]
    fn rejects_escaping_target() {
        let mut task = TaskSpec::new("t", "x");
        task.target_file = "../evil.py".into();
        assert!(matches!(task.validate(), Err(Error::WorkspaceEscape(_))));
        task.target_file = "/tmp/evil.py".into();
        assert!(matches!(task.validate(), Err(Error::WorkspaceEscape(_))));
    }

    #[test]
    fn rejects_zero_budget_and_disabled_syntax() {
        let mut task = TaskSpec::new("t", "x");
        task.attempts = 0;
        assert!(task.validate().is_err());
        let mut task = TaskSpec::new("t", "x");
        task.stages = Some(vec![Stage::Runtime]);
        assert!(task.validate().is_err());
    }
}
