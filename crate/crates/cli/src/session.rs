//! Shared plumbing of every subcommand: seed precedence, input digests,
//! atomic output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use btv_core::codec::write_atomic;
use btv_core::nn::{read_model, Model};
use btv_core::quant::{quantize, read_quantized, QuantizedModel};
use serde::Serialize;
use serde_json::Value;

use crate::error::{exit, CliError, CliResult};
use crate::manifest::{config_hash, FileDigest, RunManifest};

pub const SEED_ENV: &str = "BTV_SEED";

/// Global options shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub out_dir: PathBuf,
    pub seed_flag: Option<u64>,
    /// Raw value of `BTV_SEED`, if set.
    pub env_seed: Option<String>,
    pub threads: Option<usize>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSource {
    Flag,
    Env,
    Config,
    Default,
}

impl Context {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Context {
            out_dir: out_dir.into(),
            ..Context::default()
        }
    }

    /// Master seed by precedence: `--seed`, then `BTV_SEED`, then the config file.
    pub fn resolve_seed(&self, config: Option<u64>) -> CliResult<(u64, SeedSource)> {
        if let Some(s) = self.seed_flag {
            return Ok((s, SeedSource::Flag));
        }
        if let Some(raw) = &self.env_seed {
            let s = raw
                .trim()
                .parse()
                .map_err(|_| CliError::config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
            return Ok((s, SeedSource::Env));
        }
        Ok(match config {
            Some(s) => (s, SeedSource::Config),
            None => (0, SeedSource::Default),
        })
    }
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub exit_code: i32,
    /// Lines for standard output.
    pub stdout: Vec<String>,
    /// Diagnostics for standard error; printed even with `--quiet`.
    pub warnings: Vec<String>,
    pub manifest: RunManifest,
    pub manifest_path: PathBuf,
}

/// Bookkeeping of one subcommand run.
pub struct Session<'c> {
    ctx: &'c Context,
    command: &'static str,
    started: Instant,
    config_hash: Option<String>,
    seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    pub stdout: Vec<String>,
    pub warnings: Vec<String>,
}

impl<'c> Session<'c> {
    pub fn new(ctx: &'c Context, command: &'static str) -> Self {
        Session {
            ctx,
            command,
            started: Instant::now(),
            config_hash: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stdout: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn ctx(&self) -> &Context {
        self.ctx
    }

    pub fn set_config<T: Serialize>(&mut self, cfg: &T) -> CliResult<()> {
        self.config_hash = Some(config_hash(cfg)?);
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    /// Progress message on standard error, unless quiet.
    pub fn info(&self, msg: impl AsRef<str>) {
        if !self.ctx.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn print(&mut self, line: impl Into<String>) {
        self.stdout.push(line.into());
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path, what: &str) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::config(format!("{what}: cannot read `{}`: {e}", path.display())))?;
        self.inputs.push(FileDigest::of(path, &bytes));
        Ok(bytes)
    }

    /// Writes `bytes` atomically to `name` inside the output directory.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.ctx.out_dir.join(name);
        self.write_to(&path, bytes)?;
        Ok(path)
    }

    /// Writes `bytes` atomically to an explicit path.
    pub fn write_to(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(btv_core::Error::from)?;
        }
        write_atomic(path, bytes)?;
        self.outputs.push(FileDigest::of(path, bytes));
        Ok(())
    }

    /// Writes the manifest and closes the session.
    pub fn finish(self, exit_code: i32, details: Value) -> CliResult<Outcome> {
        let manifest = RunManifest {
            tool: "btv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            config_hash: self.config_hash.unwrap_or_default(),
            master_seed: self.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
            exit_code,
            details,
        };
        let name = match self.seed {
            Some(s) => format!("{}-s{s}.manifest.json", self.command),
            None => format!("{}.manifest.json", self.command),
        };
        let path = self.ctx.out_dir.join(name);
        fs::create_dir_all(&self.ctx.out_dir).map_err(btv_core::Error::from)?;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, text.as_bytes())?;
        Ok(Outcome {
            exit_code,
            stdout: self.stdout,
            warnings: self.warnings,
            manifest,
            manifest_path: path,
        })
    }

    pub fn ok(self, details: Value) -> CliResult<Outcome> {
        self.finish(exit::OK, details)
    }
}

/// A model file in either float or quantized form.
#[derive(Debug, Clone)]
pub enum ModelFile {
    Float(Model),
    Quantized(QuantizedModel),
}

impl ModelFile {
    pub fn parse(bytes: &[u8], path: &Path) -> CliResult<Self> {
        match bytes.get(..4) {
            Some(b"BTVQ") => Ok(ModelFile::Quantized(
                read_quantized(bytes).map_err(|e| CliError::input(path, e))?,
            )),
            _ => Ok(ModelFile::Float(read_model(bytes).map_err(|e| CliError::input(path, e))?)),
        }
    }

    pub fn read(session: &mut Session<'_>, path: &Path) -> CliResult<Self> {
        let bytes = session.read(path, "model")?;
        Self::parse(&bytes, path)
    }

    /// The network used for inference.
    pub fn model(&self) -> &Model {
        match self {
            ModelFile::Float(m) => m,
            ModelFile::Quantized(q) => q.as_model(),
        }
    }

    /// The quantized form, quantizing a float model on the fly.
    pub fn into_quantized(self) -> CliResult<QuantizedModel> {
        match self {
            ModelFile::Quantized(q) => Ok(q),
            ModelFile::Float(m) => Ok(quantize(&m)?),
        }
    }
}

/// File stem of `path` for naming derived outputs.
pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into())
}

/// Resolves `p` relative to the directory of the config file `base`.
pub fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence_is_flag_env_config() {
        let mut ctx = Context::new("o");
        assert_eq!(ctx.resolve_seed(None).unwrap(), (0, SeedSource::Default));
        assert_eq!(ctx.resolve_seed(Some(5)).unwrap(), (5, SeedSource::Config));
        ctx.env_seed = Some(" 7 ".into());
        assert_eq!(ctx.resolve_seed(Some(5)).unwrap(), (7, SeedSource::Env));
        ctx.seed_flag = Some(9);
        assert_eq!(ctx.resolve_seed(Some(5)).unwrap(), (9, SeedSource::Flag));
    }

    #[test]
    fn malformed_env_seed_is_a_config_error() {
        let ctx = Context {
            env_seed: Some("abc".into()),
            ..Context::new("o")
        };
        assert_eq!(ctx.resolve_seed(None).unwrap_err().exit_code(), exit::CONFIG);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        assert_eq!(relative_to(Path::new("cfg/a.toml"), Path::new("m.bin")), PathBuf::from("cfg/m.bin"));
        assert_eq!(relative_to(Path::new("a.toml"), Path::new("/x")), PathBuf::from("/x"));
    }
}
