use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const GENERATOR_URL_ENV: &str = "REPAIRLOOP_GENERATOR_URL";
pub const GENERATOR_MODEL_ENV: &str = "REPAIRLOOP_MODEL";

/// Sampling preset passed through to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingProfile {
    pub name: String,
    pub temperature: f64,
    pub top_p: f64,
}

/// A frozen text generator. Its configuration is fixed at construction.
pub trait Generator {
    fn identity(&self) -> String;

    fn generate(&mut self, prompt: &str, profile: Option<&DecodingProfile>) -> Result<String>;
}

/// Replays numbered response files in order.
///
/// Files are ordered by their leading number (`1.md`, `2.md`, ...). A file
/// with the `.err` extension makes that call fail as if the endpoint were
/// unreachable; running past the last file fails the same way.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    dir: PathBuf,
    files: Vec<PathBuf>,
    next: usize,
}

impl ScriptedGenerator {
    pub fn new(dir: &Path) -> Result<Self> {
        let mut numbered = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if !path.is_file() {
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let digits: String = name.chars().take_while(char::is_ascii_digit).collect();
            if let Ok(n) = digits.parse::<u64>() {
                numbered.push((n, path));
            }
        }
        numbered.sort();
        Ok(Self {
            dir: dir.to_path_buf(),
            files: numbered.into_iter().map(|(_, p)| p).collect(),
            next: 0,
        })
    }

    pub fn remaining(&self) -> usize {
        self.files.len() - self.next
    }
}

impl Generator for ScriptedGenerator {
    fn identity(&self) -> String {
        format!("scripted:{}", self.dir.display())
    }

    fn generate(&mut self, _prompt: &str, _profile: Option<&DecodingProfile>) -> Result<String> {
        let Some(path) = self.files.get(self.next) else {
            return Err(Error::GeneratorUnreachable("response script exhausted".into()));
        };
        self.next += 1;
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "err") {
            return Err(Error::GeneratorUnreachable(text.trim().to_string()));
        }
        Ok(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpGeneratorConfig {
    /// Ollama-style `/api/generate` endpoint.
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
}

impl Default for HttpGeneratorConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:11434/api/generate".into(),
            model: "qwen2.5-coder:7b".into(),
            timeout_secs: 300.0,
        }
    }
}

impl HttpGeneratorConfig {
    /// Applies the endpoint and model environment overrides.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(GENERATOR_URL_ENV) {
            self.endpoint = url;
        }
        if let Ok(model) = std::env::var(GENERATOR_MODEL_ENV) {
            self.model = model;
        }
        self
    }
}

pub struct HttpGenerator {
    config: HttpGeneratorConfig,
    agent: ureq::Agent,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Result<Self> {
        if !(config.timeout_secs > 0.0) {
            return Err(Error::InvalidConfig("generator timeout must be positive".into()));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        Ok(Self { config, agent })
    }
}

#[derive(Deserialize)]
struct GenerateReply {
    response: String,
}

impl Generator for HttpGenerator {
    fn identity(&self) -> String {
        format!("http:{}@{}", self.config.model, self.config.endpoint)
    }

    fn generate(&mut self, prompt: &str, profile: Option<&DecodingProfile>) -> Result<String> {
        let mut body = serde_json::json!({
            "model": self.config.model,
            "prompt": prompt,
            "stream": false,
        });
        if let Some(p) = profile {
            body["options"] = serde_json::json!({ "temperature": p.temperature, "top_p": p.top_p });
        }
        let mut reply = self
            .agent
            .post(&self.config.endpoint)
            .send_json(&body)
            .map_err(|e| Error::GeneratorUnreachable(e.to_string()))?;
        let parsed: GenerateReply = reply
            .body_mut()
            .read_json()
            .map_err(|e| Error::GeneratorUnreachable(format!("malformed reply: {e}")))?;
        Ok(parsed.response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_order_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("10.md"), "ten").unwrap();
        std::fs::write(dir.path().join("2.md"), "two").unwrap();
        std::fs::write(dir.path().join("3.err"), "connection reset").unwrap();
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let mut g = ScriptedGenerator::new(dir.path()).unwrap();
        assert_eq!(g.remaining(), 3);
        assert_eq!(g.generate("p", None).unwrap(), "two");
        match g.generate("p", None) {
            Err(Error::GeneratorUnreachable(m)) => assert_eq!(m, "connection reset"),
            other => panic!("{other:?}"),
        }
        assert_eq!(g.generate("p", None).unwrap(), "ten");
        assert!(matches!(g.generate("p", None), Err(Error::GeneratorUnreachable(_))));
    }

    #[test]
    fn http_refused_connection_is_unreachable() {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let mut g = HttpGenerator::new(HttpGeneratorConfig {
            endpoint: format!("http://127.0.0.1:{port}/api/generate"),
            model: "m".into(),
            timeout_secs: 2.0,
        })
        .unwrap();
        assert!(matches!(g.generate("p", None), Err(Error::GeneratorUnreachable(_))));
    }
}
