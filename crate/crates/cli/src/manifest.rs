use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use panelcast_core::Error;

/// What produced a set of outputs. Everything except the timestamps is a
/// function of the inputs, so `run_id` is stable across identical reruns.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub run_id: String,
    /// SHA-256 of the config file, or of the empty string when none was given.
    pub config_digest: String,
    /// SHA-256 of the input data: the cube file, or the concatenated CSVs.
    pub data_digest: String,
    pub seeds: Vec<u64>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config_digest: String, data_digest: String, seeds: Vec<u64>) -> Self {
        let mut h = Sha256::new();
        for part in [command, &config_digest, &data_digest] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        for s in &seeds {
            h.update(s.to_le_bytes());
        }
        for a in &args {
            h.update(a.as_bytes());
            h.update([0]);
        }
        Self {
            command: command.to_string(),
            args,
            run_id: hex::encode(&h.finalize()[..8]),
            config_digest,
            data_digest,
            seeds,
            started: now(),
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    /// First line of every report this manifest covers.
    pub fn preamble(&self, manifest_path: &Path) -> String {
        format!("# manifest={} run_id={}", manifest_path.display(), self.run_id)
    }

    pub fn write(&mut self, path: &Path) -> Result<(), Error> {
        self.finished = now();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over the contents of `paths`, in order.
pub fn digest_files(paths: &[PathBuf]) -> Result<String, Error> {
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    for p in paths {
        let io = |e| Error::Io {
            path: p.clone(),
            source: e,
        };
        let mut f = std::fs::File::open(p).map_err(io)?;
        loop {
            let n = f.read(&mut buf).map_err(io)?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}
