//! On-disk layout for event data: one CSV per sequence (header `t`, one
//! timestamp per line) plus a JSON manifest carrying the window `T` and the
//! trigger support `T_phi`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hawkes::EventSequence;

pub const MANIFEST_FILE: &str = "manifest.json";

/// A set of sequences sharing one window and one trigger support.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sequences: Vec<EventSequence>,
    window: f64,
    support: f64,
}

impl Dataset {
    pub fn new(sequences: Vec<EventSequence>, window: f64, support: f64) -> Result<Self> {
        if !(window > 0.0) || !(support > 0.0) {
            return Err(invalid("window and trigger support must be positive"));
        }
        if let Some(bad) = sequences.iter().find(|s| s.window() != window) {
            return Err(invalid(format!(
                "sequence window {} differs from dataset window {window}",
                bad.window()
            )));
        }
        Ok(Self { sequences, window, support })
    }

    pub fn single(seq: EventSequence, support: f64) -> Result<Self> {
        let window = seq.window();
        Self::new(vec![seq], window, support)
    }

    pub fn sequences(&self) -> &[EventSequence] {
        &self.sequences
    }

    pub fn window(&self) -> f64 {
        self.window
    }

    pub fn support(&self) -> f64 {
        self.support
    }

    pub fn total_events(&self) -> usize {
        self.sequences.iter().map(EventSequence::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "T")]
    pub window: f64,
    #[serde(rename = "T_phi")]
    pub support: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

pub fn write_sequence_csv(path: &Path, seq: &EventSequence) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "t")?;
    for t in seq.times() {
        writeln!(out, "{t}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sequence_csv(path: &Path, window: f64) -> Result<EventSequence> {
    let file = fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let mut times = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let field = line.trim();
        if lineno == 0 {
            if field != "t" {
                return Err(Error::Format {
                    what: path.display().to_string(),
                    detail: format!("expected header `t`, found `{field}`"),
                });
            }
            continue;
        }
        if field.is_empty() {
            continue;
        }
        let t: f64 = field.parse().map_err(|_| Error::Format {
            what: path.display().to_string(),
            detail: format!("line {}: `{field}` is not a number", lineno + 1),
        })?;
        times.push(t);
    }
    EventSequence::new(times, window)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Which half of a dataset directory to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Load the train or test split of a dataset directory.
pub fn load_split(dir: &Path, split: Split) -> Result<(Manifest, Dataset)> {
    let manifest = read_manifest(dir)?;
    let files = match split {
        Split::Train => &manifest.train,
        Split::Test => &manifest.test,
    };
    let sequences = files
        .iter()
        .map(|f| read_sequence_csv(&dir.join(f), manifest.window))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(sequences, manifest.window, manifest.support)?;
    Ok((manifest, data))
}

pub fn sequence_file_name(split: Split, index: usize) -> String {
    match split {
        Split::Train => format!("train_{index:03}.csv"),
        Split::Test => format!("test_{index:03}.csv"),
    }
}
