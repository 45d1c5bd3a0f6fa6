//! Tab-separated dataset manifests.
//!
//! One record per line: `image<TAB>boundary<TAB>orientation`. Lines starting
//! with `#` are comments. Relative paths resolve against the manifest's
//! directory.

use std::fs;
use std::path::{Component, Path, PathBuf};

use super::{load_map, BinaryMap, GroundTruth, OrientationMap, ScalarMap};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub boundary: PathBuf,
    pub orientation: PathBuf,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn parse(text: &str, base: &Path, source: &Path) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::format(
                    source,
                    format!(
                        "line {}: expected 3 tab-separated paths, found {}",
                        lineno + 1,
                        fields.len()
                    ),
                ));
            }
            let resolve = |s: &str| {
                let p = Path::new(s);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            records.push(ManifestRecord {
                image: resolve(fields[0]),
                boundary: resolve(fields[1]),
                orientation: resolve(fields[2]),
            });
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, path)
    }

    /// Serializes with every path made relative to `base`, climbing with
    /// `..` where needed, so a dataset tree can be moved as a whole.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| relative_to(p, base).to_string_lossy().into_owned();
        let mut out = String::from("# image\tboundary\torientation\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                rel(&r.image),
                rel(&r.boundary),
                rel(&r.orientation)
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        fs::write(path, self.to_text(base)).map_err(|e| Error::io(path, e))
    }

    /// Loads record `i` as an image plus validated ground truth.
    pub fn load_record(&self, i: usize) -> Result<(ScalarMap, GroundTruth)> {
        let r = self
            .records
            .get(i)
            .ok_or_else(|| Error::param(format!("record {i} out of range")))?;
        let image = load_map(&r.image)?;
        let boundary = BinaryMap::new(load_map(&r.boundary)?)
            .map_err(|e| Error::validation(format!("{}: {e}", r.boundary.display())))?;
        let orientation = OrientationMap::new(load_map(&r.orientation)?);
        if !image.same_dims(&boundary) {
            return Err(Error::validation(format!(
                "{}: image is {}x{} but boundary is {}x{}",
                r.image.display(),
                image.width(),
                image.height(),
                boundary.width(),
                boundary.height()
            )));
        }
        let gt = GroundTruth::new(boundary, orientation)
            .map_err(|e| Error::validation(format!("{}: {e}", r.orientation.display())))?;
        Ok((image, gt))
    }

    /// Loads every record; fails on the first missing or inconsistent file.
    pub fn load_all(&self) -> Result<Vec<(ScalarMap, GroundTruth)>> {
        (0..self.len()).map(|i| self.load_record(i)).collect()
    }

    /// Checks that every referenced file exists and that each record's maps
    /// share dimensions.
    pub fn validate(&self) -> Result<()> {
        self.load_all().map(|_| ())
    }
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    if let Ok(r) = path.strip_prefix(base) {
        return r.to_path_buf();
    }
    let (Ok(p), Ok(b)) = (std::path::absolute(path), std::path::absolute(base)) else {
        return path.to_path_buf();
    };
    let (pc, bc): (Vec<_>, Vec<_>) = (p.components().collect(), b.components().collect());
    let common = pc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    // sharing only the filesystem root: keep it absolute
    if pc[..common].iter().all(|c| matches!(c, Component::RootDir | Component::Prefix(_))) {
        return p;
    }
    let mut out: PathBuf = bc[common..].iter().map(|_| Component::ParentDir).collect();
    out.extend(&pc[common..]);
    out
}
