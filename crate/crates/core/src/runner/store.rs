use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use crate::error::{Error, Result};

use super::{CellKey, ExperimentRecord};

/// Serialized appender to the JSON-lines result store; each record is
/// flushed as one line.
pub struct StoreAppender {
    file: Mutex<File>,
}

impl StoreAppender {
    pub fn open(path: &Path, truncate: bool) -> Result<Self> {
        let mut opts = OpenOptions::new();
        opts.create(true);
        if truncate {
            opts.write(true).truncate(true);
        } else {
            opts.append(true);
        }
        Ok(Self {
            file: Mutex::new(opts.open(path)?),
        })
    }

    pub fn append(&self, record: &ExperimentRecord) -> Result<()> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        let mut f = self.file.lock().unwrap();
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

/// Reads every record in file order. Blank lines are ignored.
pub fn read_store(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.display().to_string(),
            row: i + 1,
            col: e.column(),
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Keeps the last record of each cell, in order of first appearance.
pub fn latest_by_cell(records: Vec<ExperimentRecord>) -> Vec<ExperimentRecord> {
    let mut slot: HashMap<CellKey, usize> = HashMap::new();
    let mut out: Vec<ExperimentRecord> = Vec::new();
    for r in records {
        match slot.get(&r.key) {
            Some(&i) => out[i] = r,
            None => {
                slot.insert(r.key.clone(), out.len());
                out.push(r);
            }
        }
    }
    out
}
