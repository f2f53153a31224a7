//! On-disk formats: catalog and checkpoint JSON, JSON Lines datasets, CSV.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ufo_core::policy::Shape;
use ufo_core::{Catalog, Example, GroupId, InteractionDataset, InteractionSequence, ItemId, PolicyParams};

use crate::error::{CliError, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Write `bytes`, creating parent directories. Returns the SHA-256.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(bytes))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    write_bytes(path, &to_json(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

/// CSV rendered in memory: header plus rows.
pub fn csv_bytes<R: Serialize>(rows: &[R]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    w.into_inner().expect("in-memory writer")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogFile {
    pub n_items: usize,
    pub n_groups: usize,
    pub group_of: Vec<u32>,
    pub embed_seed: u64,
    pub d: usize,
}

impl From<&Catalog> for CatalogFile {
    fn from(c: &Catalog) -> Self {
        Self {
            n_items: c.n_items(),
            n_groups: c.n_groups(),
            group_of: c.assignment().iter().map(|g| g.0).collect(),
            embed_seed: c.embed_seed(),
            d: c.dim(),
        }
    }
}

impl CatalogFile {
    pub fn into_catalog(self) -> ufo_core::Result<Catalog> {
        if self.group_of.len() != self.n_items {
            return Err(ufo_core::Error::Structure(format!(
                "group_of has {} entries for {} items",
                self.group_of.len(),
                self.n_items
            )));
        }
        Catalog::from_assignment(
            self.group_of.into_iter().map(GroupId).collect(),
            self.n_groups,
            self.d,
            self.embed_seed,
        )
    }
}

/// Loaded catalog plus the checksum of its file, used as `catalog_ref`.
pub struct LoadedCatalog {
    pub catalog: Catalog,
    pub checksum: String,
}

pub fn load_catalog(path: &Path) -> Result<LoadedCatalog> {
    let bytes = read_bytes(path)?;
    let file: CatalogFile = serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e))?;
    let catalog = file.into_catalog().map_err(|e| CliError::format(path, e))?;
    Ok(LoadedCatalog { catalog, checksum: sha256_hex(&bytes) })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleLine {
    seq: Vec<u32>,
    target: u32,
}

pub fn dataset_jsonl(data: &InteractionDataset) -> Vec<u8> {
    let mut out = Vec::new();
    for ex in data.examples() {
        let line = ExampleLine { seq: ex.seq.items().iter().map(|i| i.0).collect(), target: ex.target.0 };
        serde_json::to_writer(&mut out, &line).expect("line serializes");
        out.push(b'\n');
    }
    out
}

pub fn load_dataset(path: &Path, catalog: &Catalog) -> Result<InteractionDataset> {
    let text = read_string(path)?;
    let mut examples = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let at = |m: String| CliError::format(path, format!("line {}: {m}", n + 1));
        let ex: ExampleLine = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let seq = InteractionSequence::new(ex.seq.into_iter().map(ItemId).collect())
            .map_err(|e| at(e.to_string()))?;
        examples.push(Example { seq, target: ItemId(ex.target) });
    }
    InteractionDataset::new(examples, catalog).map_err(|e| CliError::format(path, e))
}

/// Policy checkpoint. `parent` is the SHA-256 of the checkpoint file this one
/// was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub catalog_ref: String,
    pub parent: Option<String>,
    #[serde(rename = "A")]
    pub group_weights: Vec<Vec<f64>>,
    #[serde(rename = "a")]
    pub group_bias: Vec<f64>,
    #[serde(rename = "B")]
    pub item_weights: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub item_bias: Vec<f64>,
}

impl Checkpoint {
    pub fn new(params: &PolicyParams, catalog_ref: &str, parent: Option<String>) -> Self {
        let d = params.shape().dim;
        let rows = |m: &[f64]| m.chunks(d).map(<[f64]>::to_vec).collect();
        Self {
            version: 1,
            catalog_ref: catalog_ref.to_owned(),
            parent,
            group_weights: rows(params.group_weights()),
            group_bias: params.group_bias().to_vec(),
            item_weights: rows(params.item_weights()),
            item_bias: params.item_bias().to_vec(),
        }
    }

    pub fn params(&self) -> ufo_core::Result<PolicyParams> {
        let dim = self.group_weights.first().map(Vec::len).unwrap_or(0);
        if self.group_weights.iter().chain(&self.item_weights).any(|r| r.len() != dim) {
            return Err(ufo_core::Error::Structure("ragged weight matrix".into()));
        }
        let shape = Shape { n_items: self.item_bias.len(), n_groups: self.group_bias.len(), dim };
        PolicyParams::from_blocks(
            shape,
            &self.group_weights.concat(),
            &self.group_bias,
            &self.item_weights.concat(),
            &self.item_bias,
        )
    }
}

pub struct LoadedCheckpoint {
    pub params: PolicyParams,
    pub checkpoint: Checkpoint,
    pub checksum: String,
}

/// Load a checkpoint and check it belongs to `catalog`.
pub fn load_checkpoint(path: &Path, catalog: &LoadedCatalog) -> Result<LoadedCheckpoint> {
    let bytes = read_bytes(path)?;
    let checkpoint: Checkpoint = serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e))?;
    if checkpoint.version != 1 {
        return Err(CliError::format(path, format!("unsupported version {}", checkpoint.version)));
    }
    if checkpoint.catalog_ref != catalog.checksum {
        return Err(CliError::Config(format!("{} was written for a different catalog", path.display())));
    }
    let params = checkpoint.params().map_err(|e| CliError::format(path, e))?;
    params
        .check_catalog(&catalog.catalog)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(LoadedCheckpoint { params, checkpoint, checksum: sha256_hex(&bytes) })
}
