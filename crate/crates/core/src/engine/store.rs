//! On-disk layout: `<data dir>/<experiment id>/events.jsonl` plus a
//! periodically rewritten `snapshot.json`.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::event::Event;
use super::experiment::{Experiment, ExperimentSnapshot};
use super::EngineError;

const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

/// Append-only writer for one experiment's event log.
pub struct EventLog {
    dir: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    pub fn create(root: &Path, id: &str) -> Result<Self, EngineError> {
        let dir = root.join(id);
        fs::create_dir_all(&dir)?;
        Self::open(root, id)
    }

    pub fn open(root: &Path, id: &str) -> Result<Self, EngineError> {
        let dir = root.join(id);
        let file = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS))?;
        Ok(Self { dir, out: BufWriter::new(file) })
    }

    pub fn append(&mut self, events: &[Event]) -> Result<(), EngineError> {
        for e in events {
            serde_json::to_writer(&mut self.out, e).map_err(std::io::Error::from)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()?;
        Ok(())
    }

    pub fn write_snapshot(&self, snapshot: &ExperimentSnapshot) -> Result<(), EngineError> {
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(snapshot).map_err(std::io::Error::from)?)?;
        fs::rename(tmp, self.dir.join(SNAPSHOT))?;
        Ok(())
    }
}

/// Parses an event log. Any malformed line is fatal.
pub fn read_events(path: &Path) -> Result<Vec<Event>, EngineError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line)
            .map_err(|e| EngineError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
        events.push(event);
    }
    Ok(events)
}

pub fn load_all(root: &Path) -> Result<Vec<(String, Experiment)>, EngineError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        let path = entry.path().join(EVENTS);
        if !entry.file_type()?.is_dir() || !path.exists() {
            continue;
        }
        let events = read_events(&path)?;
        let exp = Experiment::replay(events)
            .map_err(|e| EngineError::Corrupt(format!("{}: {e}", path.display())))?;
        let dir_name = entry.file_name().to_string_lossy().into_owned();
        if exp.id() != dir_name {
            return Err(EngineError::Corrupt(format!("{} holds experiment {}", path.display(), exp.id())));
        }
        out.push((dir_name, exp));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
