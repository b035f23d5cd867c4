//! Line-delimited JSON lists of training / evaluation utterances.
//!
//! Each non-empty line is an object with `mixture`, `target` and
//! `enrollment` paths plus optional `noise` and `estimate`. Relative paths
//! resolve against the manifest's directory.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{wav_read, WavFile};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub mixture: PathBuf,
    pub target: PathBuf,
    pub enrollment: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    base: PathBuf,
}

/// Audio of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub sample_rate: u32,
    pub mixture: Vec<f32>,
    pub target: Vec<f32>,
    pub enrollment: Vec<f32>,
    pub estimate: Option<Vec<f32>>,
}

impl Manifest {
    pub fn new(records: Vec<Record>, base: impl Into<PathBuf>) -> Self {
        Self {
            records,
            base: base.into(),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { records, base })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut f, r).map_err(|e| Error::Manifest(e.to_string()))?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Reads every record's audio, checking that all files exist and share
    /// one sample rate.
    pub fn load(&self) -> Result<Vec<Utterance>> {
        let mut rate = None;
        let mut read = |p: &Path| -> Result<Vec<f32>> {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(Error::Manifest(format!("missing file {}", full.display())));
            }
            let WavFile {
                sample_rate,
                samples,
            } = wav_read(&full)?;
            match rate {
                None => rate = Some(sample_rate),
                Some(r) if r != sample_rate => {
                    return Err(Error::Manifest(format!(
                        "{} is {sample_rate} Hz, expected {r} Hz",
                        full.display()
                    )))
                }
                _ => {}
            }
            Ok(samples)
        };
        let mut out = Vec::with_capacity(self.records.len());
        for r in &self.records {
            if let Some(n) = &r.noise {
                read(n)?;
            }
            let u = Utterance {
                sample_rate: 0,
                mixture: read(&r.mixture)?,
                target: read(&r.target)?,
                enrollment: read(&r.enrollment)?,
                estimate: r.estimate.as_deref().map(&mut read).transpose()?,
            };
            out.push(u);
        }
        let rate = rate.unwrap_or(0);
        out.iter_mut().for_each(|u| u.sample_rate = rate);
        Ok(out)
    }
}
