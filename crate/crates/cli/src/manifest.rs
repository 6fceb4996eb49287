use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{self, Outcome};
use crate::{init_threads, Command, Exit};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output directory for outputs; absolute for inputs.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// The resolved model or process configuration.
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub wall_clock_seconds: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn digest_file(path: &Path) -> Result<(String, u64)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

fn describe(path: &Path, base: Option<&Path>) -> Result<FileDigest> {
    let (sha256, bytes) = digest_file(path)?;
    let shown = base.and_then(|b| path.strip_prefix(b).ok()).unwrap_or(path);
    Ok(FileDigest { path: shown.to_string_lossy().into_owned(), sha256, bytes })
}

fn manifest_path(outcome: &Outcome, out_dir: &Path) -> PathBuf {
    let stem = outcome.outputs[0].file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    out_dir.join(format!("{stem}.manifest.json"))
}

/// Runs `command`, writes its manifest and returns it with the command's
/// own exit status.
fn record(command: Command, seed: u64, threads: Option<usize>, out_dir: &Path) -> Result<(RunManifest, Option<Exit>)> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let out_dir = out_dir.canonicalize()?;
    let command = commands::resolve_inputs(command)?;
    let start = Instant::now();
    let outcome = commands::dispatch(&command, seed, &out_dir)?;
    let manifest = RunManifest {
        tool: "sfpe".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command,
        config: outcome.config.clone(),
        seed,
        threads,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        inputs: outcome.inputs.iter().map(|p| describe(p, None)).collect::<Result<_>>()?,
        outputs: outcome.outputs.iter().map(|p| describe(p, Some(&out_dir))).collect::<Result<_>>()?,
    };
    let path = manifest_path(&outcome, &out_dir);
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    for o in &manifest.outputs {
        println!("{}  {}", o.sha256, o.path);
    }
    println!("manifest: {}", path.display());
    Ok((manifest, outcome.status))
}

pub fn execute(command: Command, seed: u64, threads: Option<usize>, out_dir: &Path) -> Result<()> {
    let (_, status) = record(command, seed, threads, out_dir)?;
    match status {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct ReplayEntry<'a> {
    path: &'a str,
    expected: &'a str,
    actual: Option<String>,
    matches: bool,
}

/// Re-executes a manifest into `out_dir` (default: `replay/` next to the
/// manifest) and compares every output digest.
pub fn replay(path: &Path, out_dir: Option<PathBuf>, threads: Option<usize>) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let manifest: RunManifest = serde_json::from_str(&text).context("malformed manifest")?;
    for input in &manifest.inputs {
        let (sha, _) = digest_file(Path::new(&input.path))?;
        if sha != input.sha256 {
            return Err(Exit { code: 1, message: format!("input {} changed since the manifest was written", input.path) }.into());
        }
    }
    init_threads(threads.or(manifest.threads))?;
    let out_dir = out_dir.unwrap_or_else(|| path.parent().unwrap_or(Path::new(".")).join("replay"));
    let (fresh, _) = record(manifest.command.clone(), manifest.seed, manifest.threads, &out_dir)?;
    let entries: Vec<ReplayEntry> = manifest
        .outputs
        .iter()
        .map(|o| {
            let actual = fresh.outputs.iter().find(|f| f.path == o.path).map(|f| f.sha256.clone());
            ReplayEntry { path: &o.path, expected: &o.sha256, matches: actual.as_deref() == Some(o.sha256.as_str()), actual }
        })
        .collect();
    let ok = entries.iter().all(|e| e.matches);
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "reproduced": ok, "files": entries }))?);
    if ok {
        Ok(())
    } else {
        Err(Exit { code: 1, message: "replay produced different outputs".into() }.into())
    }
}
