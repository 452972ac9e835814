//! Run configuration: one JSON file, optionally patched with `key=value`
//! overrides. Relative paths are resolved against the configuration file's
//! directory.

use std::path::{Path, PathBuf};

use onto_decode::pipeline::{DcfCounting, DEFAULT_TASK_INSTRUCTION};
use onto_decode::DecodeConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmKind {
    #[default]
    Ngram,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub kind: LmKind,
    /// N-gram order.
    pub order: usize,
    /// Training text for the n-gram model, one sentence per line.
    pub corpus: Option<PathBuf>,
    /// Base URL of a server speaking the remote protocol.
    pub endpoint: Option<String>,
    /// Tokens requested per remote step.
    pub top_k: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            kind: LmKind::Ngram,
            order: 3,
            corpus: None,
            endpoint: None,
            top_k: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcfConfig {
    pub min_occ: usize,
    /// Domains to build, in order. Empty means every domain in the corpus,
    /// in order of first appearance.
    pub domains: Vec<String>,
    pub counting: DcfCounting,
}

impl Default for DcfConfig {
    fn default() -> Self {
        DcfConfig {
            min_occ: 1,
            domains: Vec::new(),
            counting: DcfCounting::DocumentFrequency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub k: usize,
    pub alpha: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { k: 30, alpha: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ontology_path: PathBuf,
    /// JSON-lines file of `{"id", "domain", "text"}` records.
    pub corpus_path: PathBuf,
    pub lm: LmConfig,
    pub decode: DecodeConfig,
    pub dcf: DcfConfig,
    pub prune: PruneConfig,
    pub output_dir: PathBuf,
    pub task_instruction: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ontology_path: PathBuf::new(),
            corpus_path: PathBuf::new(),
            lm: LmConfig::default(),
            decode: DecodeConfig::default(),
            dcf: DcfConfig::default(),
            prune: PruneConfig::default(),
            output_dir: PathBuf::from("out"),
            task_instruction: DEFAULT_TASK_INSTRUCTION.to_string(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies `overrides` and resolves
    /// relative paths.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::Parse {
                    path: p.to_path_buf(),
                    message: e.to_string(),
                })?
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let mut cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
        let base = path
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.ontology_path);
        fix(&mut self.corpus_path);
        fix(&mut self.output_dir);
        if let Some(c) = self.lm.corpus.as_mut() {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decode
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.prune.k == 0 {
            return Err(CliError::Config("prune.k must be at least 1".into()));
        }
        if self.dcf.min_occ == 0 {
            return Err(CliError::Config("dcf.min_occ must be at least 1".into()));
        }
        match self.lm.kind {
            LmKind::Ngram if self.lm.order == 0 => {
                Err(CliError::Config("lm.order must be at least 1".into()))
            }
            LmKind::Remote if self.lm.endpoint.is_none() => {
                Err(CliError::Config("lm.endpoint is required for a remote model".into()))
            }
            LmKind::Remote if self.lm.top_k == 0 => {
                Err(CliError::Config("lm.top_k must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }

    /// Fails unless `path` (the value of config field `field`) exists.
    pub fn require_path<'a>(&self, field: &str, path: &'a Path) -> Result<&'a Path> {
        if path.as_os_str().is_empty() {
            return Err(CliError::Usage(format!("{field} is not set")));
        }
        if !path.exists() {
            return Err(CliError::Usage(format!(
                "{field} {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }
}

/// Sets a dotted key, e.g. `decode.beam_size=4`. The value is parsed as JSON
/// and falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected key=value, got {assignment:?}")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = match node {
            Value::Object(m) => m,
            _ => return Err(CliError::Usage(format!("{key}: {part:?} is not inside an object"))),
        };
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}
