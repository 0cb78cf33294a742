//! Reading inputs and writing outputs atomically (temp file + rename).

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use smmh::{Episode, ModelParams};

use crate::CliError;

pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(&path, e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(&path, e))?;
        tmp.persist(&path).map_err(|e| CliError::io(&path, e.error))?;
        if name != MANIFEST {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("JSON serialization cannot fail");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory CSV");
        for r in rows {
            w.write_record(r).expect("in-memory CSV");
        }
        let bytes = w.into_inner().expect("in-memory CSV");
        self.write(name, &bytes)
    }
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config: &'a C,
    pub inputs: Vec<(&'a str, String)>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
    pub wall_time_seconds: f64,
}

/// Writes `manifest.json` listing everything written so far.
pub fn finish<C: Serialize>(
    mut out: OutDir,
    command: &str,
    seed: u64,
    config: &C,
    inputs: Vec<(&str, &Path)>,
    notes: Vec<String>,
    started: Instant,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        inputs: inputs.into_iter().map(|(k, p)| (k, p.display().to_string())).collect(),
        outputs: out.written.clone(),
        notes,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    out.write_json(MANIFEST, &manifest)
}

/// Model files that fail to parse or validate map to exit code 2.
pub fn read_model(path: &Path) -> Result<ModelParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let model: ModelParams = serde_json::from_str(&text)
        .map_err(|e| CliError::from(smmh::Error::InvalidModel(vec![format!("{}: {e}", path.display())])))?;
    model.check()?;
    Ok(model)
}

/// JSON-lines episodes; blank lines are ignored. All episodes must agree on
/// the number of mark channels.
pub fn read_episodes(path: &Path) -> Result<Vec<Episode>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out: Vec<Episode> = Vec::new();
    let mut q: Option<usize> = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ep = Episode::from_json_line(&line).map_err(|e| match e {
            smmh::Error::Parameter(m) => CliError::usage(format!("{}:{}: {m}", path.display(), n + 1)),
            other => other.into(),
        })?;
        if let Some(k) = ep.n_channels() {
            if *q.get_or_insert(k) != k {
                return Err(smmh::Error::ShapeMismatch(format!(
                    "{}:{}: episode {} has {k} channels, earlier episodes have {}",
                    path.display(),
                    n + 1,
                    ep.id,
                    q.unwrap()
                ))
                .into());
            }
        }
        out.push(ep);
    }
    Ok(out)
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}
