//! On-disk layout under the data directory:
//!
//! ```text
//! datasets/{id}/manifest.json, tables/*.csv, schema.json, dictionary.tsv, synonyms.tsv
//! documents/{id}/document.txt, parses.json
//! runs/{run_id}/run.json, report.json, details.json
//! ```
//!
//! Dataset and document ids are content hashes, so uploading the same
//! inputs twice is idempotent.

use std::io;
use std::path::{Path, PathBuf};

use claimcheck_core::pipeline::{ClaimDetails, DatasetSource, DocumentSource, PinSpec, VerifyConfig};
use claimcheck_core::Report;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset_id: String,
    pub document_id: String,
    pub config: VerifyConfig,
    pub pins: PinSpec,
    pub parent: Option<String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    tables: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn read_optional(path: &Path) -> io::Result<Option<String>> {
    match std::fs::read_to_string(path) {
        Ok(s) => Ok(Some(s)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<Option<T>> {
    match read_optional(path)? {
        None => Ok(None),
        Some(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    write_atomic(path, text.as_bytes())
}

/// Ids become path components; accept only plain identifiers.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn valid_table_name(name: &str) -> bool {
    valid_id(name)
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for sub in ["datasets", "documents", "runs"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(Store { root })
    }

    fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    fn document_dir(&self, id: &str) -> PathBuf {
        self.root.join("documents").join(id)
    }

    fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join("runs").join(id)
    }

    pub fn save_dataset(&self, source: &DatasetSource) -> io::Result<String> {
        if let Some((bad, _)) = source.tables.iter().find(|(n, _)| !valid_table_name(n)) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("invalid table name `{bad}`"),
            ));
        }
        let id = source.content_id();
        let dir = self.dataset_dir(&id);
        if dir.join("manifest.json").exists() {
            return Ok(id);
        }
        for (name, bytes) in &source.tables {
            write_atomic(&dir.join("tables").join(format!("{name}.csv")), bytes)?;
        }
        for (file, content) in [
            ("schema.json", &source.schema),
            ("dictionary.tsv", &source.dictionary),
            ("synonyms.tsv", &source.synonyms),
        ] {
            if let Some(c) = content {
                write_atomic(&dir.join(file), c.as_bytes())?;
            }
        }
        let manifest = DatasetManifest {
            tables: source.tables.iter().map(|(n, _)| n.clone()).collect(),
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(id)
    }

    pub fn load_dataset(&self, id: &str) -> io::Result<Option<DatasetSource>> {
        if !valid_id(id) {
            return Ok(None);
        }
        let dir = self.dataset_dir(id);
        let Some(manifest) = read_json::<DatasetManifest>(&dir.join("manifest.json"))? else {
            return Ok(None);
        };
        let tables = manifest
            .tables
            .iter()
            .map(|n| Ok((n.clone(), std::fs::read(dir.join("tables").join(format!("{n}.csv")))?)))
            .collect::<io::Result<_>>()?;
        Ok(Some(DatasetSource {
            tables,
            schema: read_optional(&dir.join("schema.json"))?,
            dictionary: read_optional(&dir.join("dictionary.tsv"))?,
            synonyms: read_optional(&dir.join("synonyms.tsv"))?,
        }))
    }

    pub fn save_document(&self, doc: &DocumentSource) -> io::Result<String> {
        let id = doc.content_id();
        let dir = self.document_dir(&id);
        if let Some(p) = &doc.parses {
            write_atomic(&dir.join("parses.json"), p.as_bytes())?;
        }
        write_atomic(&dir.join("document.txt"), doc.text.as_bytes())?;
        Ok(id)
    }

    pub fn load_document(&self, id: &str) -> io::Result<Option<DocumentSource>> {
        if !valid_id(id) {
            return Ok(None);
        }
        let dir = self.document_dir(id);
        let Some(text) = read_optional(&dir.join("document.txt"))? else {
            return Ok(None);
        };
        Ok(Some(DocumentSource {
            text,
            parses: read_optional(&dir.join("parses.json"))?,
        }))
    }

    pub fn save_run(&self, record: &RunRecord) -> io::Result<()> {
        write_json(&self.run_dir(&record.run_id).join("run.json"), record)
    }

    pub fn load_run(&self, id: &str) -> io::Result<Option<RunRecord>> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_json(&self.run_dir(id).join("run.json"))
    }

    /// Stores the finished report; an existing report is never replaced.
    pub fn save_result(&self, id: &str, report: &Report, details: &[ClaimDetails]) -> io::Result<()> {
        let dir = self.run_dir(id);
        if dir.join("report.json").exists() {
            return Err(io::Error::new(io::ErrorKind::AlreadyExists, "report already stored"));
        }
        write_json(&dir.join("details.json"), &details)?;
        write_atomic(&dir.join("report.json"), report.to_json().as_bytes())
    }

    pub fn load_report(&self, id: &str) -> io::Result<Option<Report>> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_json(&self.run_dir(id).join("report.json"))
    }

    pub fn load_details(&self, id: &str) -> io::Result<Option<Vec<ClaimDetails>>> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_json(&self.run_dir(id).join("details.json"))
    }
}
