use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{mesh_structure, obj, ObbNode, TriangleMesh};

/// Network input of a pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// Box structure meshed with `subdivisions` rounds of refinement.
    Boxes { tree: ObbNode, subdivisions: usize },
    Mesh(TriangleMesh),
}

impl Source {
    pub fn mesh(&self) -> TriangleMesh {
        match self {
            Source::Boxes { tree, subdivisions } => mesh_structure(tree, *subdivisions),
            Source::Mesh(m) => m.clone(),
        }
    }
}

/// A (meshed box, target surface) training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetPair {
    pub id: String,
    pub source: Source,
    pub target: TriangleMesh,
}

impl DatasetPair {
    pub fn new(id: impl Into<String>, source: Source, target: TriangleMesh) -> Result<Self> {
        let id = id.into();
        if target.face_count() == 0 {
            return Err(Error::EmptyInput("target mesh has no faces"));
        }
        if source.mesh().face_count() == 0 {
            return Err(Error::EmptyInput("source mesh has no faces"));
        }
        if id.is_empty() || id.contains(['/', '\\']) {
            return Err(Error::Config(format!("pair id `{id}` is not a plain file stem")));
        }
        Ok(Self { id, source, target })
    }
}

/// On-disk description of a pair; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairManifest {
    pub id: String,
    pub source: SourceManifest,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceManifest {
    Boxes { tree: ObbNode, subdivisions: usize },
    Mesh { path: String },
}

/// Writes `<id>.source.obj`, `<id>.target.obj` and `<id>.json` for every
/// pair plus a `dataset.json` listing all manifests. Returns the path of
/// `dataset.json`.
pub fn save_dataset(dir: &Path, pairs: &[DatasetPair]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifests = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let source_name = format!("{}.source.obj", pair.id);
        let target_name = format!("{}.target.obj", pair.id);
        fs::write(dir.join(&source_name), obj::to_string(&pair.source.mesh()))?;
        fs::write(dir.join(&target_name), obj::to_string(&pair.target))?;
        let source = match &pair.source {
            Source::Boxes { tree, subdivisions } => SourceManifest::Boxes {
                tree: tree.clone(),
                subdivisions: *subdivisions,
            },
            Source::Mesh(_) => SourceManifest::Mesh { path: source_name },
        };
        let manifest = PairManifest {
            id: pair.id.clone(),
            source,
            target: target_name,
        };
        fs::write(
            dir.join(format!("{}.json", pair.id)),
            serde_json::to_string_pretty(&manifest)? + "\n",
        )?;
        manifests.push(manifest);
    }
    let path = dir.join("dataset.json");
    fs::write(&path, serde_json::to_string_pretty(&manifests)? + "\n")?;
    Ok(path)
}

/// Reads a `dataset.json` array or a single pair manifest.
pub fn load_dataset(path: &Path) -> Result<Vec<DatasetPair>> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let manifests: Vec<PairManifest> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    if manifests.is_empty() {
        return Err(Error::EmptyInput("dataset lists no pairs"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let read_obj = |rel: &str| -> Result<TriangleMesh> {
        let file = fs::File::open(base.join(rel))?;
        obj::read(std::io::BufReader::new(file))
    };
    manifests
        .into_iter()
        .map(|m| {
            let source = match m.source {
                SourceManifest::Boxes { tree, subdivisions } => Source::Boxes { tree, subdivisions },
                SourceManifest::Mesh { path } => Source::Mesh(read_obj(&path)?),
            };
            DatasetPair::new(m.id, source, read_obj(&m.target)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::make_fixtures;

    #[test]
    fn dataset_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs = make_fixtures("two-box-chair", 3).unwrap();
        pairs.push(
            DatasetPair::new("premeshed", Source::Mesh(pairs[0].source.mesh()), pairs[0].target.clone()).unwrap(),
        );
        let path = save_dataset(dir.path(), &pairs).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].source, pairs[0].source);
        assert_eq!(back[0].id, pairs[0].id);
        // OBJ text keeps 9 significant digits
        for (a, b) in back[1].target.vertices().iter().zip(pairs[1].target.vertices()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() <= 1e-8 * b[k].abs().max(1e-3));
            }
        }
        let single = load_dataset(&dir.path().join("premeshed.json")).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn ids_must_be_file_stems() {
        let pair = make_fixtures("cube-to-sphere", 0).unwrap().remove(0);
        assert!(DatasetPair::new("a/b", pair.source.clone(), pair.target.clone()).is_err());
        assert!(DatasetPair::new("", pair.source, pair.target).is_err());
    }
}
