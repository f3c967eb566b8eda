//! CSV fold manifests: `path,label,patient_id,fold,split`, UTF-8, LF.
//! Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::DataError;

pub const MANIFEST_HEADER: &str = "path,label,patient_id,fold,split";

/// Class A is healthy, class B unhealthy (the positive class for metrics).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    A,
    B,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::A, Label::B];

    pub fn class_index(self) -> usize {
        match self {
            Label::A => 0,
            Label::B => 1,
        }
    }

    pub fn from_class_index(k: usize) -> Option<Self> {
        match k {
            0 => Some(Label::A),
            1 => Some(Label::B),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::A => "A",
            Label::B => "B",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Label::A),
            "B" | "b" => Ok(Label::B),
            other => Err(format!("label `{other}` is not A or B")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("split `{other}` is not train, val or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    /// Path as written in the manifest.
    pub path: PathBuf,
    /// `path` resolved against the manifest directory.
    pub resolved: PathBuf,
    pub label: Label,
    pub patient_id: String,
    pub split: Split,
    pub fold: usize,
}

impl Sample {
    /// Mask written next to class-B synthetic images, when present.
    pub fn mask_path(&self) -> PathBuf {
        let stem = self.resolved.file_stem().unwrap_or_default().to_string_lossy();
        self.resolved.with_file_name(format!("{stem}.mask.pgm"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldManifest {
    pub fold: usize,
    pub samples: Vec<Sample>,
}

impl FoldManifest {
    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn count(&self, split: Split, label: Label) -> usize {
        self.samples
            .iter()
            .filter(|s| s.split == split && s.label == label)
            .count()
    }

    /// `(split, label) -> count` for every combination.
    pub fn counts(&self) -> BTreeMap<(Split, Label), usize> {
        let mut out = BTreeMap::new();
        for split in Split::ALL {
            for label in Label::ALL {
                out.insert((split, label), self.count(split, label));
            }
        }
        out
    }

    /// No patient may appear in two splits of one fold.
    pub fn check_patient_disjoint(&self) -> Result<(), DataError> {
        let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for s in &self.samples {
            seen.entry(&s.patient_id).or_default().insert(s.split);
        }
        match seen.into_iter().find(|(_, splits)| splits.len() > 1) {
            Some((patient, splits)) => Err(DataError::PatientLeak {
                fold: self.fold,
                patient_id: patient.to_string(),
                splits: splits.iter().map(Split::to_string).collect::<Vec<_>>().join("+"),
            }),
            None => Ok(()),
        }
    }
}

fn parse_line(line: &str, lineno: usize, base: &Path) -> Result<Sample, DataError> {
    let err = |message: String| DataError::ParseError {
        line: lineno,
        message,
    };
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 5 {
        return Err(err(format!("expected 5 fields, found {}", fields.len())));
    }
    let path = PathBuf::from(fields[0]);
    if fields[0].is_empty() {
        return Err(err("empty path".into()));
    }
    let label = fields[1].parse().map_err(err)?;
    let patient_id = fields[2].to_string();
    if patient_id.is_empty() {
        return Err(err("empty patient_id".into()));
    }
    let fold = fields[3]
        .parse()
        .map_err(|_| err(format!("fold `{}` is not an integer", fields[3])))?;
    let split = fields[4].parse().map_err(err)?;
    let resolved = if path.is_absolute() {
        path.clone()
    } else {
        base.join(&path)
    };
    Ok(Sample {
        path,
        resolved,
        label,
        patient_id,
        split,
        fold,
    })
}

/// Parses manifest text. Image existence is not checked here.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<FoldManifest>, DataError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((_, h)) => {
            return Err(DataError::ParseError {
                line: 1,
                message: format!("header `{h}` is not `{MANIFEST_HEADER}`"),
            })
        }
        None => {
            return Err(DataError::ParseError {
                line: 1,
                message: "empty manifest".into(),
            })
        }
    }
    let mut folds: BTreeMap<usize, Vec<Sample>> = BTreeMap::new();
    for (i, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let s = parse_line(line, i + 1, base)?;
        folds.entry(s.fold).or_default().push(s);
    }
    let manifests: Vec<FoldManifest> = folds
        .into_iter()
        .map(|(fold, samples)| FoldManifest { fold, samples })
        .collect();
    for m in &manifests {
        m.check_patient_disjoint()?;
    }
    Ok(manifests)
}

/// Loads every fold of a manifest, enforcing patient disjointness and
/// checking that each image exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<FoldManifest>, DataError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::IoFailure(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let folds = parse_manifest(&text, base)?;
    for m in &folds {
        for s in &m.samples {
            if !s.resolved.is_file() {
                return Err(DataError::MissingImage(s.resolved.clone()));
            }
        }
    }
    Ok(folds)
}

/// Loads a single fold.
pub fn load_fold(path: impl AsRef<Path>, fold: usize) -> Result<FoldManifest, DataError> {
    load_manifest(path)?
        .into_iter()
        .find(|m| m.fold == fold)
        .ok_or(DataError::FoldNotFound(fold))
}

pub fn render_manifest(folds: &[FoldManifest]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for m in folds {
        for s in &m.samples {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.path.to_string_lossy().replace('\\', "/"),
                s.label,
                s.patient_id,
                s.fold,
                s.split
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "/data";

    #[test]
    fn accepts_disjoint_patients() {
        let text = "path,label,patient_id,fold,split\n\
                    a.ppm,A,p1,1,train\n\
                    b.ppm,B,p1,1,train\n\
                    c.ppm,A,p2,1,val\n\
                    d.ppm,B,p2,1,val\n";
        let folds = parse_manifest(text, Path::new(BASE)).unwrap();
        assert_eq!(folds.len(), 1);
        let m = &folds[0];
        assert_eq!(m.count(Split::Train, Label::B), 1);
        assert_eq!(m.split(Split::Val).len(), 2);
        assert_eq!(m.samples[0].resolved, PathBuf::from("/data/a.ppm"));
    }

    #[test]
    fn rejects_patient_in_two_splits() {
        let text = "path,label,patient_id,fold,split\n\
                    a.ppm,A,p7,1,train\n\
                    b.ppm,A,p7,1,test\n";
        match parse_manifest(text, Path::new(BASE)) {
            Err(DataError::PatientLeak { patient_id, .. }) => assert_eq!(patient_id, "p7"),
            other => panic!("{other:?}"),
        }
        // the same patient in different folds is fine
        let text = "path,label,patient_id,fold,split\n\
                    a.ppm,A,p7,1,train\n\
                    b.ppm,A,p7,2,test\n";
        assert!(parse_manifest(text, Path::new(BASE)).is_ok());
    }

    #[test]
    fn header_missing_column() {
        let text = "path,label,patient_id,split\na.ppm,A,p1,train\n";
        assert!(matches!(
            parse_manifest(text, Path::new(BASE)),
            Err(DataError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "path,label,patient_id,fold,split\n\
                    a.ppm,A,p1,1,train\n\
                    b.ppm,C,p1,1,train\n";
        assert!(matches!(
            parse_manifest(text, Path::new(BASE)),
            Err(DataError::ParseError { line: 3, .. })
        ));
        let text = "path,label,patient_id,fold,split\na.ppm,A,p1,x,train\n";
        assert!(matches!(
            parse_manifest(text, Path::new(BASE)),
            Err(DataError::ParseError { line: 2, .. })
        ));
    }

    #[test]
    fn missing_image_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mpath = dir.path().join("m.csv");
        fs::write(&mpath, "path,label,patient_id,fold,split\nnope.ppm,A,p1,1,train\n").unwrap();
        assert!(matches!(load_manifest(&mpath), Err(DataError::MissingImage(_))));
    }

    #[test]
    fn render_round_trips() {
        let text = "path,label,patient_id,fold,split\n\
                    x/a.ppm,A,p1,1,train\n\
                    x/b.ppm,B,p2,1,test\n";
        let folds = parse_manifest(text, Path::new(BASE)).unwrap();
        assert_eq!(render_manifest(&folds), text);
    }
}
