use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use super::HarnessError;

/// One manifest line. `source` names the original clip a row derives
/// from; for original clips it equals the clip id (the file stem).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub path: String,
    pub label: String,
    pub class: usize,
    pub fold: usize,
    pub source: String,
}

impl ManifestRow {
    pub fn clip_id(&self) -> String {
        clip_id_of(&self.path)
    }

    pub fn is_original(&self) -> bool {
        self.clip_id() == self.source
    }
}

pub fn clip_id_of(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// CSV clip list with header `path,label,fold` and an optional trailing
/// `source` column. Relative paths resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub class_names: Vec<String>,
    pub folds: usize,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest, HarnessError> {
        let file = std::fs::File::open(path).map_err(|e| HarnessError::Manifest(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(file, base)
    }

    pub fn parse<R: Read>(reader: R, base_dir: PathBuf) -> Result<Manifest, HarnessError> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = csv.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(pi), Some(li), Some(fi)) = (col("path"), col("label"), col("fold")) else {
            return Err(HarnessError::Manifest(format!(
                "header must contain path,label,fold; found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        };
        let si = col("source");
        let mut raw = Vec::new();
        for (n, record) in csv.records().enumerate() {
            let record = record?;
            let line = n + 2;
            let get = |i: usize| record.get(i).unwrap_or("").to_string();
            let path = get(pi);
            if path.is_empty() {
                return Err(HarnessError::Manifest(format!("line {line}: empty path")));
            }
            let fold: usize = get(fi)
                .parse()
                .ok()
                .filter(|&f| f >= 1)
                .ok_or_else(|| HarnessError::Manifest(format!("line {line}: fold must be an integer >= 1")))?;
            let source = si
                .map(get)
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| clip_id_of(&path));
            raw.push((path, get(li), fold, source));
        }
        if raw.is_empty() {
            return Err(HarnessError::Manifest("manifest has no rows".into()));
        }
        let class_names: Vec<String> = raw
            .iter()
            .map(|r| r.1.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let folds = raw.iter().map(|r| r.2).max().unwrap_or(0);
        for f in 1..=folds {
            if !raw.iter().any(|r| r.2 == f) {
                return Err(HarnessError::Manifest(format!("fold {f} of 1..{folds} has no clips")));
            }
        }
        let rows = raw
            .into_iter()
            .map(|(path, label, fold, source)| ManifestRow {
                class: class_names.binary_search(&label).expect("label collected"),
                path,
                label,
                fold,
                source,
            })
            .collect();
        Ok(Manifest {
            rows,
            class_names,
            folds,
            base_dir,
        })
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        self.base_dir.join(&row.path)
    }

    /// Writes `path,label,fold,source`.
    pub fn write<W: Write>(&self, w: W) -> Result<(), HarnessError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["path", "label", "fold", "source"])?;
        for r in &self.rows {
            csv.write_record([r.path.as_str(), &r.label, &r.fold.to_string(), &r.source])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }
}
