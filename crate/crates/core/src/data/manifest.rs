use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

/// One line of a JSON-lines manifest. `path` is relative to the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: usize,
    pub class_name: String,
    pub split: Option<Split>,
    pub orientation_deg: f64,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

/// How records are grouped before a split assigns them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// All orientations of one base image land in the same split.
    #[default]
    GroupBySource,
    /// Every record is assigned independently; orientations of one base
    /// image may straddle the split.
    PerSample,
}

impl std::str::FromStr for SplitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "group-by-source" => Ok(SplitMode::GroupBySource),
            "per-sample" => Ok(SplitMode::PerSample),
            other => Err(Error::Parse(format!(
                "unknown split mode `{other}` (expected group-by-source or per-sample)"
            ))),
        }
    }
}

impl DatasetManifest {
    pub fn new(class_names: Vec<String>, records: Vec<ManifestRecord>) -> Result<Self> {
        for r in &records {
            match class_names.get(r.label) {
                None => {
                    return Err(Error::LabelOutOfRange {
                        label: r.label,
                        classes: class_names.len(),
                    })
                }
                Some(name) if *name != r.class_name => {
                    return Err(Error::Data(format!(
                        "{}: class name `{}` disagrees with label {} (`{name}`)",
                        r.path, r.class_name, r.label
                    )))
                }
                _ => {}
            }
        }
        Ok(DatasetManifest { class_names, records })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    pub fn count(&self, split: Split) -> usize {
        self.records_in(split).count()
    }

    pub fn per_class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in self.records_in(split) {
            counts[r.label] += 1;
        }
        counts
    }

    /// Every record is assigned, every class is in the training split.
    pub fn validate_splits(&self) -> Result<()> {
        if let Some(r) = self.records.iter().find(|r| r.split.is_none()) {
            return Err(Error::Data(format!("{} has no split assignment", r.path)));
        }
        if let Some(c) = self.per_class_counts(Split::Train).iter().position(|&n| n == 0) {
            return Err(Error::Data(format!("class `{}` missing from the train split", self.class_names[c])));
        }
        debug_assert_eq!(self.len(), self.count(Split::Train) + self.count(Split::Test));
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Class names are recovered from the records; every label below the
    /// largest one must appear at least once.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<ManifestRecord>(l)
                    .map_err(|e| Error::Parse(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut names: BTreeMap<usize, String> = BTreeMap::new();
        for r in &records {
            names.entry(r.label).or_insert_with(|| r.class_name.clone());
        }
        let num_classes = names.keys().next_back().map_or(0, |&l| l + 1);
        let class_names = (0..num_classes)
            .map(|l| {
                names
                    .remove(&l)
                    .ok_or_else(|| Error::Data(format!("manifest has no record for label {l}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(class_names, records)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::fs::DirEntry>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Scan `root/<class_name>/<image>`; classes are labelled in lexicographic
/// order of their directory names. Records are unsplit base images at 0°.
pub fn build_manifest(root: &Path) -> Result<DatasetManifest> {
    let mut class_names = Vec::new();
    let mut records = Vec::new();
    for class_dir in sorted_entries(root)? {
        if !class_dir.path().is_dir() {
            continue;
        }
        let class_name = class_dir.file_name().to_string_lossy().into_owned();
        let label = class_names.len();
        let before = records.len();
        for file in sorted_entries(&class_dir.path())? {
            let path = file.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
            if !path.is_file() || !is_image {
                continue;
            }
            let file_name = file.file_name().to_string_lossy().into_owned();
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            records.push(ManifestRecord {
                path: format!("{class_name}/{file_name}"),
                label,
                class_name: class_name.clone(),
                split: None,
                orientation_deg: 0.0,
                source_id: format!("{class_name}/{stem}"),
            });
        }
        if records.len() == before {
            return Err(Error::Data(format!("class directory `{class_name}` contains no images")));
        }
        class_names.push(class_name);
    }
    if class_names.is_empty() {
        return Err(Error::Data(format!("no class directories under {}", root.display())));
    }
    DatasetManifest::new(class_names, records)
}

/// Stratified, seeded train/test assignment.
///
/// Records are grouped (by `(label, source_id)` or individually, per `mode`)
/// and whole groups are assigned. Test groups are spread over classes as
/// evenly as capacity allows: per-class test group counts differ by at most
/// one. Every class must end up in both splits.
pub fn split_dataset(
    manifest: &DatasetManifest,
    train_count: usize,
    test_count: usize,
    seed: u64,
    mode: SplitMode,
) -> Result<DatasetManifest> {
    let total = manifest.len();
    if train_count + test_count != total {
        return Err(Error::Data(format!(
            "split {train_count}/{test_count} does not add up to {total} records"
        )));
    }

    // class -> groups (record indices), in first-appearance order
    let classes = manifest.num_classes();
    let mut groups: Vec<Vec<Vec<usize>>> = vec![Vec::new(); classes];
    let mut index: BTreeMap<(usize, &str), usize> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        match mode {
            SplitMode::PerSample => groups[r.label].push(vec![i]),
            SplitMode::GroupBySource => {
                let slot = *index.entry((r.label, r.source_id.as_str())).or_insert_with(|| {
                    groups[r.label].push(Vec::new());
                    groups[r.label].len() - 1
                });
                groups[r.label][slot].push(i);
            }
        }
    }
    let group_size = groups.iter().flatten().map(Vec::len).next().unwrap_or(1);
    if groups.iter().flatten().any(|g| g.len() != group_size) {
        return Err(Error::Data("base images have differing orientation counts".into()));
    }
    if !test_count.is_multiple_of(group_size) {
        return Err(Error::Data(format!(
            "test count {test_count} is not a multiple of the group size {group_size}"
        )));
    }
    let test_groups = test_count / group_size;

    if let Some(c) = groups.iter().position(|g| g.len() < 2) {
        return Err(Error::Data(format!(
            "class `{}` has {} group(s); both splits need one",
            manifest.class_names[c],
            groups[c].len()
        )));
    }
    if test_groups < classes {
        return Err(Error::Data(format!(
            "test count {test_count} cannot give each of {classes} classes a test sample"
        )));
    }
    let capacity: usize = groups.iter().map(|g| g.len() - 1).sum();
    if test_groups > capacity {
        return Err(Error::Data(format!(
            "test count {test_count} leaves some class without training samples"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..classes).collect();
    order.shuffle(&mut rng);

    // even allocation, remainder to a seeded subset, overflow re-spread
    let mut quota = vec![test_groups / classes; classes];
    let mut remaining = test_groups - quota.iter().sum::<usize>();
    while remaining > 0 {
        let level = order.iter().map(|&c| quota[c]).min().expect("classes > 0");
        let mut progressed = false;
        for &c in &order {
            if remaining == 0 {
                break;
            }
            if quota[c] == level && quota[c] < groups[c].len() - 1 {
                quota[c] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            // lowest level is saturated; move on to classes with room
            for &c in &order {
                if remaining > 0 && quota[c] < groups[c].len() - 1 {
                    quota[c] += 1;
                    remaining -= 1;
                }
            }
        }
    }
    for c in 0..classes {
        quota[c] = quota[c].min(groups[c].len() - 1);
    }

    let mut out = manifest.clone();
    for (c, class_groups) in groups.iter_mut().enumerate() {
        class_groups.shuffle(&mut rng);
        for (g, members) in class_groups.iter().enumerate() {
            let split = if g < quota[c] { Split::Test } else { Split::Train };
            for &i in members {
                out.records[i].split = Some(split);
            }
        }
    }
    debug_assert_eq!(out.count(Split::Test), test_count);
    Ok(out)
}
