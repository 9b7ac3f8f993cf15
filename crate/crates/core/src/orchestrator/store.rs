use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::canonicalizer::{read_jsonl, write_jsonl, ReviewDecision, ReviewQueue};
use crate::inventory::KeyInventory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionOrigin {
    /// Auto-accepted during a headless batch run.
    Auto,
    /// Submitted by a reviewer.
    Interactive,
    /// Direct alias registration outside the review queue.
    Admin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEdit {
    pub canonical: String,
    pub alias: String,
}

/// One line of the decision log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub seq: u64,
    pub origin: DecisionOrigin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<ReviewDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias: Option<AliasEdit>,
    pub version_before: u64,
    pub version_after: u64,
}

/// Directory of versioned inventory snapshots, the decision log and the
/// review queue:
///
/// ```text
/// root/inventory/v000000.json …
/// root/decisions.jsonl
/// root/queue.jsonl
/// ```
///
/// Snapshots are never rewritten. Every write goes through a temporary file
/// and a rename.
#[derive(Debug)]
pub struct InventoryStore {
    root: PathBuf,
    current: KeyInventory,
    versions: Vec<u64>,
    queue: ReviewQueue,
    log: Vec<DecisionRecord>,
}

fn snapshot_name(version: u64) -> String {
    format!("v{version:06}.json")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)
}

impl InventoryStore {
    /// Opens an existing store.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let root = root.as_ref().to_path_buf();
        let dir = root.join("inventory");
        if !dir.is_dir() {
            return Err(OrchestratorError::NotInitialized(root));
        }
        let mut versions = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(v) = name.strip_prefix('v').and_then(|n| n.strip_suffix(".json")).and_then(|n| n.parse().ok()) {
                versions.push(v);
            }
        }
        versions.sort_unstable();
        let Some(&latest) = versions.last() else {
            return Err(OrchestratorError::NotInitialized(root));
        };
        let current = KeyInventory::load(dir.join(snapshot_name(latest)))?;
        let log_path = root.join("decisions.jsonl");
        let log = if log_path.exists() { read_jsonl(BufReader::new(fs::File::open(log_path)?))? } else { Vec::new() };
        let queue = ReviewQueue::load(root.join("queue.jsonl"))?;
        Ok(Self { root, current, versions, queue, log })
    }

    /// Creates a store holding `initial` as its first snapshot.
    pub fn init(root: impl AsRef<Path>, initial: KeyInventory) -> Result<Self, OrchestratorError> {
        let root = root.as_ref().to_path_buf();
        let dir = root.join("inventory");
        if dir.is_dir() && fs::read_dir(&dir)?.next().is_some() {
            return Err(OrchestratorError::AlreadyInitialized(root));
        }
        if initial.restriction().is_some() {
            return Err(OrchestratorError::Invalid("a restricted view cannot seed a store".into()));
        }
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(snapshot_name(initial.version())), initial.to_json()?.as_bytes())?;
        Ok(Self { versions: vec![initial.version()], current: initial, root, queue: ReviewQueue::new(), log: Vec::new() })
    }

    pub fn open_or_init(root: impl AsRef<Path>, initial: impl FnOnce() -> Result<KeyInventory, OrchestratorError>) -> Result<Self, OrchestratorError> {
        match Self::open(&root) {
            Err(OrchestratorError::NotInitialized(_)) => Self::init(root, initial()?),
            other => other,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn current(&self) -> &KeyInventory {
        &self.current
    }

    pub fn versions(&self) -> &[u64] {
        &self.versions
    }

    pub fn snapshot_path(&self, version: u64) -> PathBuf {
        self.root.join("inventory").join(snapshot_name(version))
    }

    pub fn load_version(&self, version: u64) -> Result<KeyInventory, OrchestratorError> {
        if version == self.current.version() {
            return Ok(self.current.clone());
        }
        if self.versions.binary_search(&version).is_err() {
            return Err(OrchestratorError::UnknownVersion(version));
        }
        Ok(KeyInventory::load(self.snapshot_path(version))?)
    }

    pub fn queue(&self) -> &ReviewQueue {
        &self.queue
    }

    pub fn decisions(&self) -> &[DecisionRecord] {
        &self.log
    }

    pub fn next_seq(&self) -> u64 {
        self.log.len() as u64 + 1
    }

    /// Persists new snapshots, the queue and appended log records as one
    /// unit. `snapshots` must carry strictly increasing versions above the
    /// current one. If any write fails, snapshots written so far are removed
    /// and the in-memory state is left untouched.
    pub fn commit(
        &mut self,
        snapshots: Vec<KeyInventory>,
        queue: ReviewQueue,
        records: Vec<DecisionRecord>,
    ) -> Result<(), OrchestratorError> {
        let mut last = self.current.version();
        for s in &snapshots {
            if s.version() <= last {
                return Err(OrchestratorError::Invalid(format!("snapshot version {} does not advance past {last}", s.version())));
            }
            last = s.version();
        }
        let mut written = Vec::new();
        let result = (|| -> Result<(), OrchestratorError> {
            for s in &snapshots {
                let path = self.snapshot_path(s.version());
                if path.exists() {
                    return Err(OrchestratorError::Invalid(format!("snapshot {} already exists", path.display())));
                }
                write_atomic(&path, s.to_json()?.as_bytes())?;
                written.push(path);
            }
            let mut log = Vec::new();
            write_jsonl(&mut log, &self.log)?;
            write_jsonl(&mut log, &records)?;
            let mut q = Vec::new();
            queue.write(&mut q)?;
            write_atomic(&self.root.join("queue.jsonl"), &q)?;
            write_atomic(&self.root.join("decisions.jsonl"), &log)?;
            Ok(())
        })();
        if let Err(e) = result {
            for p in written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        self.versions.extend(snapshots.iter().map(KeyInventory::version));
        if let Some(s) = snapshots.into_iter().last() {
            self.current = s;
        }
        self.queue = queue;
        self.log.extend(records);
        Ok(())
    }

    /// Applies one review decision and persists it.
    pub fn decide(&mut self, decision: &ReviewDecision, origin: DecisionOrigin) -> Result<DecisionRecord, OrchestratorError> {
        let mut queue = self.queue.clone();
        let next = queue.decide(&self.current, decision)?;
        let record = DecisionRecord {
            seq: self.next_seq(),
            origin,
            batch_id: None,
            decision: Some(decision.clone()),
            alias: None,
            version_before: self.current.version(),
            version_after: next.version(),
        };
        let snapshots = if next.version() != self.current.version() { vec![next] } else { Vec::new() };
        self.commit(snapshots, queue, vec![record.clone()])?;
        Ok(record)
    }

    /// Registers an alias outside the review queue.
    pub fn register_alias(&mut self, canonical: &str, alias: &str) -> Result<DecisionRecord, OrchestratorError> {
        let next = self.current.register_alias(canonical, alias)?;
        let record = DecisionRecord {
            seq: self.next_seq(),
            origin: DecisionOrigin::Admin,
            batch_id: None,
            decision: None,
            alias: Some(AliasEdit { canonical: canonical.into(), alias: alias.into() }),
            version_before: self.current.version(),
            version_after: next.version(),
        };
        let snapshots = if next.version() != self.current.version() { vec![next] } else { Vec::new() };
        self.commit(snapshots, self.queue.clone(), vec![record.clone()])?;
        Ok(record)
    }
}
