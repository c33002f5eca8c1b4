use std::path::{Path, PathBuf};

use super::{
    augment, build_manifest, preprocess, read_image, split_dataset, write_gray_png, DatasetManifest,
    ManifestRecord, Sample, Split, SplitMode, INPUT_SHAPE, ORIENTATIONS,
};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::Tensor;

/// Preprocessed samples of a split manifest plus the training-set mean
/// used to zero-centre network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub input_mean: f64,
}

fn load_sample(base: &Path, record: &ManifestRecord) -> Result<Sample> {
    let raw = read_image(&base.join(&record.path))?;
    let image = if raw.shape() == [1, INPUT_SHAPE.height, INPUT_SHAPE.width] {
        raw
    } else {
        preprocess(&raw)?
    };
    Ok(Sample {
        image,
        label: record.label,
        orientation_deg: record.orientation_deg,
        split: record.split,
        source_id: record.source_id.clone(),
    })
}

/// Mean pixel over all `samples`; zero for an empty set.
pub fn mean_intensity(samples: &[Sample]) -> f64 {
    let (sum, n) = samples
        .iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x.image.data().iter().sum::<f64>(), n + x.image.len()));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl Dataset {
    /// Training mean is taken from the train split only.
    pub fn from_samples(class_names: Vec<String>, samples: Vec<Sample>) -> Result<Self> {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for s in samples {
            s.validate(class_names.len())?;
            match s.split {
                Some(Split::Train) => train.push(s),
                Some(Split::Test) => test.push(s),
                None => return Err(Error::Data(format!("{} has no split assignment", s.source_id))),
            }
        }
        let input_mean = mean_intensity(&train);
        Ok(Dataset {
            class_names,
            train,
            test,
            input_mean,
        })
    }

    /// Load every record of `manifest`, resolving paths against `base`.
    pub fn load(manifest: &DatasetManifest, base: &Path, exec: Execution) -> Result<Self> {
        manifest.validate_splits()?;
        let samples = par::map(exec, &manifest.records, |r| load_sample(base, r))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(manifest.class_names.clone(), samples)
    }

    /// Load a JSON-lines manifest; paths are relative to its directory.
    pub fn open(manifest_path: &Path, exec: Execution) -> Result<Self> {
        let manifest = DatasetManifest::read_jsonl(manifest_path)?;
        Self::load(&manifest, manifest_base(manifest_path), exec)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn samples(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    /// `(image − mean, label)` pairs for `split`.
    pub fn inputs(&self, split: Split, mean: f64) -> Vec<(Tensor, usize)> {
        self.samples(split)
            .iter()
            .map(|s| (s.image.map(|v| v - mean), s.label))
            .collect()
    }
}

pub(crate) fn manifest_base(manifest_path: &Path) -> &Path {
    manifest_path.parent().unwrap_or(Path::new("."))
}

/// Load one split of a manifest without requiring the other to be present.
pub fn load_split(manifest_path: &Path, split: Split, exec: Execution) -> Result<(Vec<String>, Vec<Sample>)> {
    let manifest = DatasetManifest::read_jsonl(manifest_path)?;
    let base = manifest_base(manifest_path);
    let records: Vec<&ManifestRecord> = manifest.records_in(split).collect();
    if records.is_empty() {
        return Err(Error::Data(format!("{} has no {split} records", manifest_path.display())));
    }
    let samples = par::map(exec, &records, |r| load_sample(base, r))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest.class_names, samples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    pub mode: SplitMode,
    pub angles: Vec<f64>,
    pub exec: Execution,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            train: 2450,
            test: 250,
            seed: 0,
            mode: SplitMode::GroupBySource,
            angles: ORIENTATIONS.to_vec(),
            exec: Execution::default(),
        }
    }
}

fn angle_tag(deg: f64) -> String {
    let sign = if deg < 0.0 { 'm' } else { 'p' };
    format!("{sign}{:03}", deg.abs().round() as i64)
}

/// Scan `root/<class>/<image>`, preprocess every base image to 50×50
/// grayscale, write each orientation to `out/images/<class>/`, and assign a
/// seeded stratified split. Writes and returns `out/manifest.jsonl`.
pub fn prepare(root: &Path, out: &Path, opts: &PrepareOptions) -> Result<DatasetManifest> {
    if opts.angles.is_empty() {
        return Err(Error::Config("at least one orientation angle is required".into()));
    }
    let base = build_manifest(root)?;

    let mut expanded = Vec::with_capacity(base.len() * opts.angles.len());
    for r in &base.records {
        let stem = Path::new(&r.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for &angle in &opts.angles {
            expanded.push(ManifestRecord {
                path: format!("images/{}/{stem}_{}.png", r.class_name, angle_tag(angle)),
                label: r.label,
                class_name: r.class_name.clone(),
                split: None,
                orientation_deg: angle,
                source_id: r.source_id.clone(),
            });
        }
    }
    let expanded = DatasetManifest::new(base.class_names.clone(), expanded)?;
    let manifest = split_dataset(&expanded, opts.train, opts.test, opts.seed, opts.mode)?;

    for class in &manifest.class_names {
        let dir = out.join("images").join(class);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let n = opts.angles.len();
    let jobs: Vec<(usize, &ManifestRecord)> = base.records.iter().enumerate().collect();
    par::map(opts.exec, &jobs, |&(i, r)| -> Result<()> {
        let image = preprocess(&read_image(&root.join(&r.path))?)?;
        let sample = Sample {
            image,
            label: r.label,
            orientation_deg: 0.0,
            split: None,
            source_id: r.source_id.clone(),
        };
        for (k, rotated) in augment(&sample, &opts.angles)?.iter().enumerate() {
            let target: PathBuf = out.join(&manifest.records[i * n + k].path);
            write_gray_png(&rotated.image, &target)?;
        }
        Ok(())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    manifest.write_jsonl(&out.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Accuracy of assigning each test sample to the class whose mean training
/// image is closest in Euclidean distance.
pub fn nearest_centroid_accuracy(train: &[Sample], test: &[Sample], num_classes: usize) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("nearest-centroid needs non-empty train and test sets".into()));
    }
    let len = train[0].image.len();
    let mut centroids = vec![vec![0.0; len]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for s in train {
        if s.label >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: s.label,
                classes: num_classes,
            });
        }
        counts[s.label] += 1;
        for (c, v) in centroids[s.label].iter_mut().zip(s.image.data()) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let correct = test
        .iter()
        .filter(|s| {
            let predicted = (0..num_classes)
                .filter(|&k| counts[k] > 0)
                .map(|k| {
                    let d: f64 = centroids[k].iter().zip(s.image.data()).map(|(a, b)| (a - b) * (a - b)).sum();
                    (k, d)
                })
                .fold((usize::MAX, f64::INFINITY), |best, (k, d)| if d < best.1 { (k, d) } else { best })
                .0;
            predicted == s.label
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(label: usize, value: f64, split: Split) -> Sample {
        Sample {
            image: Tensor::filled(&[1, 50, 50], value).unwrap(),
            label,
            orientation_deg: 0.0,
            split: Some(split),
            source_id: format!("{label}-{value}"),
        }
    }

    #[test]
    fn mean_comes_from_train_only() {
        let ds = Dataset::from_samples(
            vec!["a".into(), "b".into()],
            vec![
                sample(0, 0.2, Split::Train),
                sample(1, 0.4, Split::Train),
                sample(0, 1.0, Split::Test),
            ],
        )
        .unwrap();
        assert!((ds.input_mean - 0.3).abs() < 1e-12);
        let test = ds.inputs(Split::Test, ds.input_mean);
        assert!(test[0].0.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn unsplit_samples_are_rejected() {
        let mut s = sample(0, 0.5, Split::Train);
        s.split = None;
        assert!(Dataset::from_samples(vec!["a".into()], vec![s]).is_err());
    }

    #[test]
    fn centroid_classifier_on_separable_constants() {
        let train = vec![sample(0, 0.1, Split::Train), sample(1, 0.9, Split::Train)];
        let test = vec![sample(0, 0.2, Split::Test), sample(1, 0.6, Split::Test), sample(1, 0.3, Split::Test)];
        let acc = nearest_centroid_accuracy(&train, &test, 2).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn angle_tags_are_distinct() {
        let tags: Vec<String> = ORIENTATIONS.iter().map(|&a| angle_tag(a)).collect();
        assert_eq!(tags, ["m030", "m015", "p000", "p015", "p030"]);
    }

    #[test]
    fn prepare_writes_augmented_split_tree() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        for (c, class) in ["a", "b", "c"].iter().enumerate() {
            std::fs::create_dir(src.path().join(class)).unwrap();
            for i in 0..3 {
                let v = (c * 3 + i) as f64 / 10.0;
                let img = Tensor::from_fn(&[1, 64, 40], |k| if k % 7 == 0 { v } else { 1.0 - v }).unwrap();
                write_gray_png(&img, &src.path().join(class).join(format!("{i}.png"))).unwrap();
            }
        }
        let opts = PrepareOptions {
            train: 30,
            test: 15,
            ..PrepareOptions::default()
        };
        let m = prepare(src.path(), out.path(), &opts).unwrap();
        assert_eq!(m.len(), 45);
        assert_eq!(m.per_class_counts(Split::Test), vec![5, 5, 5]);
        let ds = Dataset::open(&out.path().join("manifest.jsonl"), Execution::Sequential).unwrap();
        assert_eq!((ds.train.len(), ds.test.len()), (30, 15));
        assert!(ds.train.iter().chain(&ds.test).all(|s| s.image.shape() == [1, 50, 50]));

        let again = tempfile::tempdir().unwrap();
        prepare(src.path(), again.path(), &opts).unwrap();
        for r in &m.records {
            let a = std::fs::read(out.path().join(&r.path)).unwrap();
            let b = std::fs::read(again.path().join(&r.path)).unwrap();
            assert_eq!(a, b, "{}", r.path);
        }
    }
}
