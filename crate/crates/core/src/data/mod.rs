//! Dataset splits, manifest loading and the synthetic cross-domain benchmark.
//!
//! A manifest is a JSON object mapping split names to
//! `{"role": ..., "classes": {class_id: [relative image paths]}}`, with an
//! optional `"images_per_class"` that every class must then match exactly.
//! Paths resolve against the manifest's directory; images are decoded on
//! first use and cached.

mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::load_image;
use crate::tensor::Tensor;

pub use synth::{generate_synthetic, render_image, synthetic_splits, Domain, StyleCoefficients, SynthConfig, SynthModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRole {
    SourceTrain,
    TargetTrain,
    TargetTest,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::SourceTrain => "source-train",
            SplitRole::TargetTrain => "target-train",
            SplitRole::TargetTest => "target-test",
        })
    }
}

/// One image, identified by `id` and decoded lazily from `path`.
#[derive(Debug)]
pub struct ImageRef {
    id: String,
    path: Option<PathBuf>,
    cell: OnceLock<Arc<Tensor>>,
}

impl ImageRef {
    pub fn on_disk(id: impl Into<String>, path: PathBuf) -> Self {
        ImageRef {
            id: id.into(),
            path: Some(path),
            cell: OnceLock::new(),
        }
    }

    pub fn in_memory(id: impl Into<String>, image: Tensor) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Arc::new(image));
        ImageRef {
            id: id.into(),
            path: None,
            cell,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn is_loaded(&self) -> bool {
        self.cell.get().is_some()
    }

    pub fn load(&self) -> Result<Arc<Tensor>> {
        if let Some(t) = self.cell.get() {
            return Ok(t.clone());
        }
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("image `{}` has no source", self.id)))?;
        let t = Arc::new(load_image(path)?);
        Ok(self.cell.get_or_init(|| t).clone())
    }
}

#[derive(Debug)]
pub struct ClassImages {
    pub id: String,
    pub images: Vec<ImageRef>,
}

#[derive(Debug)]
pub struct DatasetSplit {
    pub name: String,
    pub role: SplitRole,
    pub classes: Vec<ClassImages>,
}

impl DatasetSplit {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_images(&self) -> usize {
        self.classes.iter().map(|c| c.images.len()).sum()
    }

    pub fn min_images_per_class(&self) -> usize {
        self.classes.iter().map(|c| c.images.len()).min().unwrap_or(0)
    }

    pub fn images(&self) -> impl Iterator<Item = (&ClassImages, &ImageRef)> {
        self.classes.iter().flat_map(|c| c.images.iter().map(move |i| (c, i)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub role: SplitRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_per_class: Option<usize>,
    pub classes: BTreeMap<String, Vec<String>>,
}

pub type Manifest = BTreeMap<String, SplitEntry>;

/// Checks the manifest's structural rules without touching any image.
pub fn validate_manifest(manifest: &Manifest) -> Result<()> {
    if manifest.is_empty() {
        return Err(Error::Manifest("manifest lists no splits".into()));
    }
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for (split, entry) in manifest {
        if entry.classes.is_empty() {
            return Err(Error::Manifest(format!("split `{split}` has no classes")));
        }
        for (class, paths) in &entry.classes {
            if paths.is_empty() {
                return Err(Error::Manifest(format!("class `{class}` in split `{split}` has no images")));
            }
            if let Some(n) = entry.images_per_class {
                if paths.len() != n {
                    return Err(Error::Manifest(format!(
                        "class `{class}` in split `{split}` has {} images, role {} requires {n}",
                        paths.len(),
                        entry.role
                    )));
                }
            }
            for p in paths {
                if let Some(prev) = owner.insert(p, split) {
                    return Err(Error::Manifest(if prev == split.as_str() {
                        format!("image `{p}` is listed twice in split `{split}`")
                    } else {
                        format!("image `{p}` appears in splits `{prev}` and `{split}`")
                    }));
                }
            }
        }
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?).map_err(|e| Error::io(path, e))
}

/// Splits described by a manifest file, keyed by split name; no image is decoded.
pub fn load_manifest(path: &Path) -> Result<BTreeMap<String, DatasetSplit>> {
    let manifest = read_manifest(path)?;
    validate_manifest(&manifest)?;
    let root = path.parent().unwrap_or(Path::new("."));
    Ok(manifest
        .into_iter()
        .map(|(name, entry)| {
            let classes = entry
                .classes
                .into_iter()
                .map(|(id, paths)| ClassImages {
                    id,
                    images: paths
                        .into_iter()
                        .map(|p| {
                            let full = root.join(&p);
                            ImageRef::on_disk(p, full)
                        })
                        .collect(),
                })
                .collect();
            let split = DatasetSplit {
                name: name.clone(),
                role: entry.role,
                classes,
            };
            (name, split)
        })
        .collect())
}

/// The three splits a training run needs.
#[derive(Debug)]
pub struct Benchmark {
    pub source: DatasetSplit,
    pub target_train: DatasetSplit,
    pub target_test: DatasetSplit,
}

impl Benchmark {
    /// Picks the single split of each role.
    pub fn from_splits(splits: BTreeMap<String, DatasetSplit>) -> Result<Self> {
        let mut by_role: BTreeMap<SplitRole, Vec<DatasetSplit>> = BTreeMap::new();
        for (_, s) in splits {
            by_role.entry(s.role).or_default().push(s);
        }
        let mut take = |role: SplitRole| -> Result<DatasetSplit> {
            let mut v = by_role.remove(&role).unwrap_or_default();
            match v.len() {
                1 => Ok(v.pop().expect("one split")),
                0 => Err(Error::Manifest(format!("no split with role {role}"))),
                n => Err(Error::Manifest(format!("{n} splits with role {role}, expected one"))),
            }
        };
        Ok(Benchmark {
            source: take(SplitRole::SourceTrain)?,
            target_train: take(SplitRole::TargetTrain)?,
            target_test: take(SplitRole::TargetTest)?,
        })
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        Self::from_splits(load_manifest(manifest)?)
    }

    pub fn split(&self, role: SplitRole) -> &DatasetSplit {
        match role {
            SplitRole::SourceTrain => &self.source,
            SplitRole::TargetTrain => &self.target_train,
            SplitRole::TargetTest => &self.target_test,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(role: SplitRole, classes: &[(&str, &[&str])]) -> SplitEntry {
        SplitEntry {
            role,
            images_per_class: None,
            classes: classes
                .iter()
                .map(|(c, ps)| (c.to_string(), ps.iter().map(|p| p.to_string()).collect()))
                .collect(),
        }
    }

    #[test]
    fn table_sized_source_split_stays_lazy() {
        let classes: BTreeMap<String, Vec<String>> = (0..64)
            .map(|c| (format!("n{c:02}"), (0..600).map(|i| format!("src/{c}/{i}.png")).collect()))
            .collect();
        let mut m = Manifest::new();
        m.insert(
            "mini".into(),
            SplitEntry {
                role: SplitRole::SourceTrain,
                images_per_class: Some(600),
                classes,
            },
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        write_manifest(&p, &m).unwrap();
        let splits = load_manifest(&p).unwrap();
        let s = &splits["mini"];
        assert_eq!(s.num_images(), 38400);
        assert_eq!(s.num_classes(), 64);
        assert!(s.images().all(|(_, i)| !i.is_loaded()));
    }

    #[test]
    fn shared_image_is_named() {
        let mut m = Manifest::new();
        m.insert("a".into(), entry(SplitRole::TargetTrain, &[("c1", &["x.png", "y.png"])]));
        m.insert("b".into(), entry(SplitRole::TargetTest, &[("c2", &["y.png"])]));
        let err = validate_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("y.png"), "{err}");
    }

    #[test]
    fn empty_class_is_named() {
        let mut m = Manifest::new();
        m.insert("a".into(), entry(SplitRole::SourceTrain, &[("lonely", &[])]));
        let err = validate_manifest(&m).unwrap_err().to_string();
        assert!(err.contains("lonely"), "{err}");
    }

    #[test]
    fn per_class_count_enforced() {
        let mut e = entry(SplitRole::TargetTrain, &[("c", &["1.png", "2.png"])]);
        e.images_per_class = Some(5);
        let mut m = Manifest::new();
        m.insert("t".into(), e);
        assert!(validate_manifest(&m).is_err());
    }

    #[test]
    fn missing_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(&dir.path().join("none.json")), Err(Error::Io { .. })));
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"s\": {\"role\": \"sideways\", \"classes\": {}}}").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest(_))));
    }
}
