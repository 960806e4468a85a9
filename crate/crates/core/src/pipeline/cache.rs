//! On-disk cache of intermediate artifacts, keyed by a fingerprint of the
//! configuration and input files.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AtStage, DataSource, PipelineConfig, PipelineError, Stage};
use crate::dataset::{read_table, Table};
use crate::seeds::label_hash;

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
    key: String,
}

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    key: String,
    value: T,
}

/// Hash of the config echo plus the contents of the data and graph files.
pub fn fingerprint(cfg: &PipelineConfig) -> Result<String, PipelineError> {
    let mut text = cfg.to_json();
    if let DataSource::Csv { path, .. } = &cfg.data {
        text.push_str(&String::from_utf8_lossy(&std::fs::read(path).at(Stage::Load)?));
    }
    if let Some(p) = &cfg.dag_path {
        text.push_str(&std::fs::read_to_string(p).at(Stage::Identify)?);
    }
    Ok(format!("{:016x}", label_hash(&text)))
}

impl Cache {
    pub fn open(dir: &Path, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        Ok(Cache {
            dir: dir.to_path_buf(),
            key: fingerprint(cfg)?,
        })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Stored value under `name` when its key matches; stale or unreadable
    /// entries count as absent.
    pub fn load<T: DeserializeOwned>(&self, name: &str) -> Option<T> {
        let text = std::fs::read_to_string(self.path(&format!("{name}.json"))).ok()?;
        let entry: Entry<T> = serde_json::from_str(&text).ok()?;
        (entry.key == self.key).then_some(entry.value)
    }

    pub fn store<T: Serialize>(&self, name: &str, value: &T) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.dir).at(Stage::Output)?;
        let entry = Entry {
            key: self.key.clone(),
            value,
        };
        let text = serde_json::to_string(&entry).expect("cache entry serializes");
        std::fs::write(self.path(&format!("{name}.json")), text).at(Stage::Output)
    }

    pub fn load_table(&self, name: &str, like: &Table) -> Option<Table> {
        let key = std::fs::read_to_string(self.path(&format!("{name}.key"))).ok()?;
        if key != self.key {
            return None;
        }
        let file = std::fs::File::open(self.path(&format!("{name}.csv"))).ok()?;
        read_table(file, &like.schema()).ok()
    }

    pub fn store_table(&self, name: &str, table: &Table) -> Result<(), PipelineError> {
        std::fs::create_dir_all(&self.dir).at(Stage::Output)?;
        let file = std::fs::File::create(self.path(&format!("{name}.csv"))).at(Stage::Output)?;
        table.write_csv(file).at(Stage::Output)?;
        std::fs::write(self.path(&format!("{name}.key")), &self.key).at(Stage::Output)
    }
}
