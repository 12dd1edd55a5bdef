//! Line-delimited JSON manifest: one [`SampleRecord`] per line, sorted by id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Split;
use crate::elastic::ForceTriplet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    /// Meters.
    pub particle_radius: f64,
    pub m: usize,
    /// `[F, α, τ]` per contact, after the record's rotation.
    pub forces: Vec<ForceTriplet>,
    pub base_id: String,
    /// Radians applied to the base image and labels.
    pub rotation: f64,
    /// Relative to the dataset root.
    pub image_path: String,
    pub split: Split,
}

impl SampleRecord {
    pub fn is_base(&self) -> bool {
        self.id == self.base_id
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(mut records: Vec<SampleRecord>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        DatasetManifest { records }
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Records with `id == base_id`.
    pub fn base_records(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.is_base())
    }

    /// Fails if two records sharing a base id sit in different splits.
    pub fn check_split_leakage(&self) -> Result<()> {
        let mut seen: HashMap<&str, Split> = HashMap::new();
        for r in &self.records {
            match seen.insert(&r.base_id, r.split) {
                Some(prev) if prev != r.split => {
                    return Err(Error::Config(format!(
                        "base sample {} appears in splits {prev} and {}",
                        r.base_id, r.split
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut out = BufWriter::new(file);
    for r in &manifest.records {
        let line = serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?;
        out.write_all(line.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
        out.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    out.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(DatasetManifest::new(records))
}
