//! Procedural glyph corpus.
//!
//! Nine stroke skeletons combined with three dot patterns give up to 27
//! classes. Every base image is drawn from its own ChaCha stream (keyed by
//! class and index), so images can be rendered in any order and still come
//! out bit-identical for a given seed. Intensities are snapped to 8-bit
//! levels so a tree written to disk reads back exactly.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    augment, augment_five, nearest_centroid_accuracy, quantize, split_dataset, write_gray_png, Dataset, DatasetManifest,
    ManifestRecord, PrepareOptions, Sample, Split, SplitMode, INPUT_SHAPE,
};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::tensor::Tensor;

const SKELETONS: [&str; 9] = ["bar", "bowl", "ring", "hook", "angle", "wave", "seven", "loop", "teeth"];
const MARKS: [&str; 3] = ["", "_dot", "_dots"];
const DOT_DEPTH: f64 = 1.45;

pub const MAX_CLASSES: usize = SKELETONS.len() * MARKS.len();

/// Pixels per glyph unit; skeletons live in `[-1, 1]²`.
const UNIT: f64 = 13.0;
const MAX_SHIFT: f64 = 3.0;
const SCALE_JITTER: f64 = 0.10;
const NOISE_SIGMA: f64 = 0.05;
const WOBBLE_SIGMA: f64 = 0.08;
const CONTRAST: std::ops::RangeInclusive<f64> = 0.45..=0.85;
const MAX_BACKGROUND: f64 = 0.1;
const MAX_CLUTTER: usize = 2;
const DOT_RADIUS: f64 = 0.28;
const DOT_HEIGHT: f64 = -1.45;

/// Minimum nearest-centroid accuracy a generated corpus must reach.
pub const SEPARABILITY_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            classes: MAX_CLASSES,
            per_class: 20,
            seed: 0,
        }
    }
}

impl SynthOptions {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > MAX_CLASSES {
            return Err(Error::Config(format!(
                "synthetic class count must be in 1..={MAX_CLASSES}, got {}",
                self.classes
            )));
        }
        if self.per_class == 0 {
            return Err(Error::Config("need at least one base image per class".into()));
        }
        Ok(())
    }
}

/// Directory names, ordered so that lexicographic order equals label order.
pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| format!("{c:02}_{}{}", SKELETONS[c % SKELETONS.len()], MARKS[c / SKELETONS.len()]))
        .collect()
}

type Point = (f64, f64);
type Polyline = Vec<Point>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64) -> Polyline {
    const STEPS: usize = 24;
    (0..=STEPS)
        .map(|i| {
            let t = from + (to - from) * i as f64 / STEPS as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn skeleton(kind: usize) -> Vec<Polyline> {
    match kind {
        0 => vec![vec![(0.0, -1.0), (0.0, 1.0)]],
        1 => vec![arc(0.0, -0.2, 0.9, 0.8, 0.0, PI)],
        2 => vec![arc(0.0, 0.0, 0.7, 0.7, 0.0, 2.0 * PI)],
        3 => vec![arc(0.0, 0.0, 0.75, 0.85, 0.3 * PI, 1.7 * PI)],
        4 => vec![vec![(0.7, -0.9), (-0.6, 0.0), (0.7, 0.9)]],
        5 => vec![(0..=24)
            .map(|i| {
                let x = -0.9 + 1.8 * i as f64 / 24.0;
                (x, 0.45 * (PI * x / 0.6).sin())
            })
            .collect()],
        6 => vec![vec![(-0.7, -0.7), (0.6, -0.7), (-0.2, 0.9)]],
        7 => vec![
            arc(0.3, -0.35, 0.35, 0.35, 0.0, 2.0 * PI),
            vec![(0.65, -0.35), (0.5, 0.4), (-0.1, 0.85), (-0.7, 0.8)],
        ],
        8 => vec![vec![(-0.9, -0.6), (-0.45, 0.6), (0.0, -0.2), (0.45, 0.6), (0.9, -0.6)]],
        _ => unreachable!("skeleton index is reduced modulo the table size"),
    }
}

fn dots(marks: usize) -> Vec<Point> {
    match marks {
        0 => vec![],
        1 => vec![(0.0, DOT_HEIGHT)],
        _ => vec![(-0.3, DOT_DEPTH), (0.3, DOT_DEPTH)],
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// One-pixel linear ramp around an edge at signed distance 0.
fn coverage(distance_px: f64, half_width_px: f64) -> f64 {
    (0.5 - (distance_px - half_width_px)).clamp(0.0, 1.0)
}

/// Render base image `index` of class `class`.
pub fn render_glyph(class: usize, index: usize, per_class: usize, seed: u64) -> Result<Tensor> {
    if class >= MAX_CLASSES {
        return Err(Error::LabelOutOfRange {
            label: class,
            classes: MAX_CLASSES,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class * per_class + index) as u64);
    let wobble = Normal::new(0.0, WOBBLE_SIGMA).expect("finite sigma");
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("finite sigma");

    let strokes: Vec<Polyline> = skeleton(class % SKELETONS.len())
        .into_iter()
        .map(|line| {
            line.into_iter()
                .map(|(x, y)| (x + wobble.sample(&mut rng), y + wobble.sample(&mut rng)))
                .collect()
        })
        .collect();
    let marks = dots(class / SKELETONS.len());
    let scale = UNIT * (1.0 + rng.random_range(-SCALE_JITTER..=SCALE_JITTER));
    let shift = (rng.random_range(-MAX_SHIFT..=MAX_SHIFT), rng.random_range(-MAX_SHIFT..=MAX_SHIFT));
    let half_width = rng.random_range(1.5..=2.6);
    let background = rng.random_range(0.0..=MAX_BACKGROUND);
    let contrast = rng.random_range(CONTRAST);

    let (h, w) = (INPUT_SHAPE.height, INPUT_SHAPE.width);
    // short stray strokes in pixel coordinates
    let clutter: Vec<(Point, Point, f64)> = (0..rng.random_range(0..=MAX_CLUTTER))
        .map(|_| {
            let a = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
            let (len, dir) = (rng.random_range(4.0..10.0), rng.random_range(0.0..PI));
            let b = (a.0 + len * f64::cos(dir), a.1 + len * f64::sin(dir));
            (a, b, rng.random_range(0.6..1.0))
        })
        .collect();

    let (mid_y, mid_x) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (cy, cx) = (mid_y + shift.1, mid_x + shift.0);
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let p = ((x as f64 - cx) / scale, (y as f64 - cy) / scale);
            let stroke = strokes
                .iter()
                .flat_map(|line| line.windows(2).map(|s| segment_distance(p, s[0], s[1])))
                .fold(f64::INFINITY, f64::min);
            let mut ink = coverage(stroke * scale, half_width);
            for &d in &marks {
                ink = ink.max(coverage(segment_distance(p, d, d) * scale, DOT_RADIUS * scale));
            }
            for &(a, b, hw) in &clutter {
                ink = ink.max(coverage(segment_distance((x as f64, y as f64), a, b), hw));
            }
            let v = background + contrast * ink + noise.sample(&mut rng);
            data.push(quantize(v) as f64 / 255.0);
        }
    }
    Tensor::new(vec![1, h, w], data)
}

/// All base images (0°, unsplit), class-major.
pub fn generate(opts: &SynthOptions, exec: Execution) -> Result<Vec<Sample>> {
    opts.validate()?;
    let names = class_names(opts.classes);
    let jobs: Vec<(usize, usize)> = (0..opts.classes)
        .flat_map(|c| (0..opts.per_class).map(move |i| (c, i)))
        .collect();
    par::map(exec, &jobs, |&(c, i)| {
        Ok(Sample {
            image: render_glyph(c, i, opts.per_class, opts.seed)?,
            label: c,
            orientation_deg: 0.0,
            split: None,
            source_id: format!("{}/{i:02}", names[c]),
        })
    })
    .into_iter()
    .collect()
}

/// Nearest-centroid accuracy after five-way augmentation and a grouped
/// split holding out roughly 250/2700 of the base images. `None` when some
/// class has fewer than two base images.
pub fn centroid_separability(base: &[Sample], classes: usize, seed: u64) -> Result<Option<f64>> {
    let names = class_names(classes);
    let mut per_class = vec![0usize; classes];
    for s in base {
        per_class[s.label] += 1;
    }
    if per_class.iter().any(|&n| n < 2) {
        return Ok(None);
    }
    let augmented: Vec<Sample> = base
        .iter()
        .map(augment_five)
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let records = augmented
        .iter()
        .enumerate()
        .map(|(i, s)| ManifestRecord {
            path: i.to_string(),
            label: s.label,
            class_name: names[s.label].clone(),
            split: None,
            orientation_deg: s.orientation_deg,
            source_id: s.source_id.clone(),
        })
        .collect();
    let manifest = DatasetManifest::new(names, records)?;
    let groups = base.len();
    let test_groups = ((groups as f64 * 250.0 / 2700.0).round() as usize)
        .clamp(classes, groups - classes);
    let split = split_dataset(
        &manifest,
        (groups - test_groups) * 5,
        test_groups * 5,
        seed,
        SplitMode::GroupBySource,
    )?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, s) in split.records.iter().zip(augmented) {
        match r.split {
            Some(Split::Test) => test.push(s),
            _ => train.push(s),
        }
    }
    nearest_centroid_accuracy(&train, &test, classes).map(Some)
}

/// The augmented, split corpus held in memory. Pixels equal those produced
/// by writing the tree, preparing it and loading the result.
pub fn corpus(opts: &SynthOptions, prepare: &PrepareOptions) -> Result<Dataset> {
    let base = generate(opts, prepare.exec)?;
    let names = class_names(opts.classes);
    let n = prepare.angles.len();
    let rotated: Vec<Vec<Sample>> = par::map(prepare.exec, &base, |s| {
        let mut out = augment(s, &prepare.angles)?;
        for r in &mut out {
            r.image = r.image.map(|v| quantize(v) as f64 / 255.0);
        }
        Ok(out)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut samples: Vec<Sample> = rotated.into_iter().flatten().collect();
    let records = samples
        .iter()
        .map(|s| ManifestRecord {
            path: String::new(),
            label: s.label,
            class_name: names[s.label].clone(),
            split: None,
            orientation_deg: s.orientation_deg,
            source_id: s.source_id.clone(),
        })
        .collect();
    let manifest = DatasetManifest::new(names.clone(), records)?;
    let split = split_dataset(&manifest, prepare.train, prepare.test, prepare.seed, prepare.mode)?;
    debug_assert_eq!(split.len(), base.len() * n);
    for (s, r) in samples.iter_mut().zip(&split.records) {
        s.split = r.split;
    }
    Dataset::from_samples(names, samples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub manifest: DatasetManifest,
    pub centroid_accuracy: Option<f64>,
}

/// Write `out/<class>/<nn>.png` plus an unsplit `out/manifest.jsonl`. Fails
/// if the classes are not separable by a nearest-centroid classifier.
pub fn write_tree(out: &Path, opts: &SynthOptions, exec: Execution) -> Result<SynthSummary> {
    let samples = generate(opts, exec)?;
    let centroid_accuracy = centroid_separability(&samples, opts.classes, opts.seed)?;
    if let Some(acc) = centroid_accuracy {
        if acc <= SEPARABILITY_FLOOR {
            return Err(Error::Data(format!(
                "synthetic classes not separable: nearest-centroid accuracy {:.1}%",
                100.0 * acc
            )));
        }
    }
    let names = class_names(opts.classes);
    for name in &names {
        let dir = out.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let records: Vec<ManifestRecord> = samples
        .iter()
        .map(|s| ManifestRecord {
            path: format!("{}.png", s.source_id),
            label: s.label,
            class_name: names[s.label].clone(),
            split: None,
            orientation_deg: 0.0,
            source_id: s.source_id.clone(),
        })
        .collect();
    par::map(exec, &samples, |s| write_gray_png(&s.image, &out.join(format!("{}.png", s.source_id))))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(names, records)?;
    manifest.write_jsonl(&out.join("manifest.jsonl"))?;
    Ok(SynthSummary {
        manifest,
        centroid_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_manifest, read_image};

    #[test]
    fn names_sort_in_label_order() {
        let names = class_names(MAX_CLASSES);
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        assert_eq!(names.len(), 27);
        assert_eq!(names[0], "00_bar");
        assert_eq!(names[26], "26_teeth_dots");
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = render_glyph(13, 4, 20, 7).unwrap();
        assert_eq!(a, render_glyph(13, 4, 20, 7).unwrap());
        assert_ne!(a, render_glyph(13, 5, 20, 7).unwrap());
        assert_ne!(a, render_glyph(13, 4, 20, 8).unwrap());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(a.data().iter().all(|&v| (v * 255.0).round() / 255.0 == v));
    }

    #[test]
    fn glyph_has_ink_and_background() {
        for c in 0..MAX_CLASSES {
            let g = render_glyph(c, 0, 20, 1).unwrap();
            let (lo, hi) = g.data().iter().fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            assert!(hi - lo > 0.3, "class {c}: contrast {}", hi - lo);
            let bright = g.data().iter().filter(|&&v| v > (lo + hi) / 2.0).count();
            assert!(bright > 40 && bright < 1250, "class {c}: {bright} ink pixels");
        }
    }

    #[test]
    fn dot_classes_differ_from_plain() {
        let plain = render_glyph(0, 0, 1, 3).unwrap();
        let dotted = render_glyph(9, 0, 1, 3).unwrap();
        let top = |t: &Tensor| {
            let mid = t.data().iter().fold(0.0f64, |m, &v| m.max(v)) / 2.0;
            t.data()[..50 * 10].iter().filter(|&&v| v > mid).count()
        };
        assert!(top(&dotted) > top(&plain));
    }

    #[test]
    fn generate_is_order_independent() {
        let opts = SynthOptions {
            classes: 4,
            per_class: 3,
            seed: 5,
        };
        let par = generate(&opts, Execution::Parallel).unwrap();
        let seq = generate(&opts, Execution::Sequential).unwrap();
        assert_eq!(par, seq);
        assert_eq!(par.len(), 12);
        assert_eq!(par[7].image, render_glyph(2, 1, 3, 5).unwrap());
    }

    #[test]
    fn tree_reads_back_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthOptions {
            classes: 3,
            per_class: 2,
            seed: 11,
        };
        let summary = write_tree(dir.path(), &opts, Execution::Parallel).unwrap();
        assert_eq!(summary.manifest.len(), 6);
        let scanned = build_manifest(dir.path()).unwrap();
        assert_eq!(scanned.class_names, summary.manifest.class_names);
        let samples = generate(&opts, Execution::Sequential).unwrap();
        for (r, s) in summary.manifest.records.iter().zip(&samples) {
            assert_eq!(read_image(&dir.path().join(&r.path)).unwrap(), s.image);
        }
    }

    #[test]
    fn rejects_bad_options() {
        for (classes, per_class) in [(0, 20), (28, 20), (27, 0)] {
            assert!(SynthOptions { classes, per_class, seed: 0 }.validate().is_err());
        }
    }
}
