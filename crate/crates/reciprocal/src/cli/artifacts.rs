//! Run-directory plumbing: canonical artifact paths, the manifest index,
//! per-command metadata records, and readers for the dump formats the
//! commands exchange (run TSVs, event files).
//!
//! Nothing here writes timestamps, so identical commands produce
//! byte-identical artifacts.

use crate::cli::config::{DerivedSeeds, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::RecommendationRun;
use crate::types::Side;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

/// The output directory of one experiment, shared by all commands.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path) -> RunDir {
        RunDir { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn prepare_dir(&self) -> PathBuf {
        self.root.join("prepare")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn evaluate_dir(&self, mode: &str) -> PathBuf {
        self.root.join("evaluate").join(mode)
    }

    pub fn stream_dir(&self) -> PathBuf {
        self.root.join("stream")
    }

    pub fn adjust_dir(&self, mode: &str) -> PathBuf {
        self.root.join("adjust").join(mode)
    }

    /// Record `files` (relative to the run root) as the artifacts of
    /// `key`, replacing any previous entry.
    pub fn update_manifest(&self, key: &str, files: &[PathBuf]) -> Result<()> {
        let path = self.root.join("manifest.json");
        let mut manifest: BTreeMap<String, Vec<String>> = if path.exists() {
            serde_json::from_str(&std::fs::read_to_string(&path)?)?
        } else {
            BTreeMap::new()
        };
        let mut names: Vec<String> = files
            .iter()
            .map(|f| {
                f.strip_prefix(&self.root)
                    .unwrap_or(f)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        names.sort();
        manifest.insert(key.to_string(), names);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(())
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub root_seed: u64,
    pub derived_seeds: DerivedSeeds,
    /// The fully resolved configuration the command ran with.
    pub config: serde_json::Value,
    /// Command-specific facts (dataset sizes, artifact counts, ...).
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

impl Metadata {
    pub fn new(command: &str, config: &ExperimentConfig) -> Result<Metadata> {
        Ok(Metadata {
            command: command.to_string(),
            root_seed: config.seed,
            derived_seeds: DerivedSeeds::from_root(config.seed),
            config: serde_json::to_value(config)?,
            details: BTreeMap::new(),
        })
    }

    pub fn insert_detail<T: Serialize>(&mut self, key: &str, value: T) -> Result<()> {
        self.details.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn detail_usize(&self, key: &str) -> Result<usize> {
        self.details
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| {
                Error::Validation(format!("metadata lacks the numeric detail {key:?}"))
            })
    }

    /// A numeric field of the recorded configuration (e.g. the list
    /// length an evaluation actually ran with).
    pub fn config_usize(&self, key: &str) -> Result<usize> {
        self.config
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| {
                Error::Validation(format!("metadata config lacks the numeric field {key:?}"))
            })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Metadata> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Write a serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    }
}

/// Read one side of a run dump (`user  rank  counterpart  score` TSV)
/// back into per-user lists, checking that ranks are consecutive from 1.
fn load_run_side(path: &Path) -> Result<BTreeMap<u32, Vec<u32>>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Validation(format!("cannot open run dump {}: {e}", path.display()))
    })?;
    let mut lists: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let user: u32 = fields[0]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid user id {:?}", fields[0])))?;
        let rank: usize = fields[1]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid rank {:?}", fields[1])))?;
        let counterpart: u32 = fields[2].parse().map_err(|_| {
            parse_error(path, lineno, format!("invalid counterpart id {:?}", fields[2]))
        })?;
        fields[3]
            .parse::<f64>()
            .map_err(|_| parse_error(path, lineno, format!("invalid score {:?}", fields[3])))?;
        let list = lists.entry(user).or_default();
        if rank != list.len() + 1 {
            return Err(parse_error(
                path,
                lineno,
                format!("user {user}: expected rank {}, got {rank}", list.len() + 1),
            ));
        }
        list.push(counterpart);
    }
    Ok(lists)
}

/// Load both sides of a run dump into a `RecommendationRun` with list
/// length `k`.
pub fn load_run(path_a: &Path, path_b: &Path, k: usize) -> Result<RecommendationRun> {
    let mut run = RecommendationRun::new(k)?;
    for (side, path) in [(Side::A, path_a), (Side::B, path_b)] {
        for (user, list) in load_run_side(path)? {
            run.insert_list(side, user, list)?;
        }
    }
    Ok(run)
}

/// Write per-user lists without scores (`user  rank  counterpart`), the
/// dump format of adjusted runs.
pub fn write_lists_tsv(lists: &BTreeMap<u32, Vec<u32>>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (user, list) in lists {
        for (i, counterpart) in list.iter().enumerate() {
            writeln!(out, "{user}\t{}\t{counterpart}", i + 1)?;
        }
    }
    Ok(())
}

/// Read a stream-event file: one `side  user` pair per line, in replay
/// order.
pub fn load_events(path: &Path) -> Result<Vec<(Side, u32)>> {
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Validation(format!("cannot open events file {}: {e}", path.display()))
    })?;
    let mut events = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected `side<TAB>user`, got {} fields", fields.len()),
            ));
        }
        let side: Side = fields[0]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid side {:?}", fields[0])))?;
        let user: u32 = fields[1]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid user id {:?}", fields[1])))?;
        events.push((side, user));
    }
    Ok(events)
}
