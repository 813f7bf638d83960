use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::blob::{self, BlobError, Precision};
use super::{DataDims, DataError, Dataset, EmbeddingBundle, Field, Label, Splits};

pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT: &str = "ken-dataset";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub label: i64,
    /// Field name to blob path, relative to the manifest's directory.
    pub tensors: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    #[serde(flatten)]
    pub dims: DataDims,
    pub samples: usize,
    pub split_seed: u64,
    pub splits: Splits,
    pub items: Vec<ManifestItem>,
}

fn id_is_file_safe(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Resolves a dataset location: a directory containing `manifest.json`, or
/// the manifest file itself.
fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    if source.kind() == std::io::ErrorKind::NotFound {
        DataError::MissingFile {
            path: path.to_path_buf(),
        }
    } else {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes `dataset` under `dir` as `manifest.json` plus one `f32` blob per tensor.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DataError> {
    let blob_dir = dir.join("blobs");
    fs::create_dir_all(&blob_dir).map_err(|e| io_err(&blob_dir, e))?;
    let mut items = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        if !id_is_file_safe(&s.id) {
            return Err(DataError::Splits(format!("id {:?} is not file-name safe", s.id)));
        }
        let mut tensors = BTreeMap::new();
        for f in Field::ALL {
            let rel = format!("blobs/{}.{}.kent", s.id, f.name());
            let path = dir.join(&rel);
            blob::write(&path, s.field(f), Precision::F32).map_err(|e| io_err(&path, e))?;
            tensors.insert(f.name().to_string(), rel);
        }
        items.push(ManifestItem {
            id: s.id.clone(),
            label: s.label.index() as i64,
            tensors,
        });
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: 1,
        name: dataset.name.clone(),
        dims: dataset.dims,
        samples: dataset.samples.len(),
        split_seed: dataset.split_seed,
        splits: dataset.splits.clone(),
        items,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn read_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |msg: String| DataError::Manifest {
        path: path.to_path_buf(),
        msg,
    };
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if m.format != FORMAT {
        return Err(bad(format!("format is {:?}, expected {FORMAT:?}", m.format)));
    }
    if m.items.len() != m.samples {
        return Err(bad(format!(
            "declares {} samples but lists {} items",
            m.samples,
            m.items.len()
        )));
    }
    let mut ids = BTreeSet::new();
    for it in &m.items {
        if !ids.insert(it.id.as_str()) {
            return Err(bad(format!("duplicate sample id {}", it.id)));
        }
    }
    m.dims.validate()?;
    Ok(m)
}

fn read_tensor(root: &Path, item: &ManifestItem, field: Field) -> Result<crate::tensor::Tensor, DataError> {
    let rel = item.tensors.get(field.name()).ok_or_else(|| DataError::Manifest {
        path: root.join(MANIFEST_FILE),
        msg: format!("sample {} lists no {} tensor", item.id, field.name()),
    })?;
    let path = root.join(rel);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let (t, _) = blob::decode(&bytes).map_err(|source| match source {
        BlobError::ByteLength { expected, actual } => DataError::ByteLength {
            id: item.id.clone(),
            tensor: field.name(),
            expected,
            actual,
        },
        source => DataError::Blob {
            id: item.id.clone(),
            tensor: field.name(),
            source,
        },
    })?;
    Ok(t)
}

/// Loads and fully validates the dataset at `path` (directory or manifest file).
pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let mpath = manifest_path(path);
    let manifest = read_manifest(&mpath)?;
    let root = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut samples = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let label = Label::from_index(item.label).ok_or_else(|| DataError::Label {
            id: item.id.clone(),
            label: item.label,
        })?;
        let read = |f| read_tensor(&root, item, f);
        let bundle = EmbeddingBundle {
            id: item.id.clone(),
            text: read(Field::Text)?,
            image: read(Field::Image)?,
            caption: read(Field::Caption)?,
            evidence: read(Field::Evidence)?,
            clip_text: read(Field::ClipText)?,
            clip_image: read(Field::ClipImage)?,
            label,
        };
        bundle.validate(&manifest.dims)?;
        samples.push(bundle);
    }
    let ds = Dataset {
        name: manifest.name,
        dims: manifest.dims,
        samples,
        splits: manifest.splits,
        split_seed: manifest.split_seed,
    };
    ds.splits.validate(ds.samples.iter().map(|s| s.id.as_str()))?;
    Ok(ds)
}

/// Loads every bundle referenced by a manifest.
pub fn load_bundle(manifest: &Path) -> Result<Vec<EmbeddingBundle>, DataError> {
    load_dataset(manifest).map(|d| d.samples)
}
