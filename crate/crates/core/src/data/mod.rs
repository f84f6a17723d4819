//! Dataset format, loading, stratified splitting, the released-dataset
//! importer, and the synthetic gesture generator.
//!
//! Native on-disk layout: a directory holding `manifest` (structured text)
//! and `frames.csv` with header `label,c00..c77`, one row per frame, counts
//! as decimal integers. Lossless for photon counts and diffable.

mod import;
mod synth;

pub use import::import_released;
pub use synth::{synth_generate, SyntheticGestureConfig};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::fsutil::write_atomic_str;
use crate::imaging::{Frame, FRAME_DIM};
use crate::rng::{stream, tag};

/// Ten gesture classes plus the no-gesture class.
pub const CLASS_NAMES: [&str; 11] = [
    "fist", "thumb", "point", "peace", "three", "four", "open", "horns", "call", "pinch", "none",
];

/// Index of the background-only class.
pub const NO_GESTURE: usize = 10;

/// Describes a stored dataset: class names, per-class frame counts, and
/// generation provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    /// `released` or `synthetic`.
    pub source: String,
    pub classes: Vec<String>,
    pub frame_counts: Vec<u64>,
    #[serde(with = "crate::serde_seed::option", default)]
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), Error> {
        if self.classes.len() < 2 {
            return Err(Error::Validation(format!(
                "manifest needs at least 2 classes, got {}",
                self.classes.len()
            )));
        }
        if self.frame_counts.len() != self.classes.len() {
            return Err(Error::Validation(format!(
                "manifest lists {} classes but {} frame counts",
                self.classes.len(),
                self.frame_counts.len()
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total_frames(&self) -> u64 {
        self.frame_counts.iter().sum()
    }
}

/// Per-class frame counts tallied from labeled frames.
pub fn tally_counts(frames: &[Frame], k: usize) -> Result<Vec<u64>, Error> {
    let mut counts = vec![0u64; k];
    for (i, f) in frames.iter().enumerate() {
        let label = f
            .label
            .ok_or_else(|| Error::Data(format!("frame {i} has no label")))?;
        if label >= k {
            return Err(Error::Validation(format!(
                "frame {i} has label {label}, outside {k} classes"
            )));
        }
        counts[label] += 1;
    }
    Ok(counts)
}

fn csv_header() -> String {
    let mut h = String::from("label");
    for r in 0..FRAME_DIM {
        for c in 0..FRAME_DIM {
            h.push_str(&format!(",c{r}{c}"));
        }
    }
    h
}

/// Serializes frames to the native CSV text.
pub fn frames_to_csv(frames: &[Frame]) -> Result<String, Error> {
    let mut out = csv_header();
    out.push('\n');
    for (i, f) in frames.iter().enumerate() {
        let label = f
            .label
            .ok_or_else(|| Error::Data(format!("frame {i} has no label")))?;
        out.push_str(&label.to_string());
        for &c in f.counts() {
            out.push(',');
            out.push_str(&c.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses the native CSV text; `k` bounds the label range.
pub fn frames_from_csv(text: &str, k: usize) -> Result<Vec<Frame>, Error> {
    let expected_header = csv_header();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line == expected_header => {}
        Some((_, line)) => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header {expected_header:?}, got {line:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty frames.csv".into(),
            })
        }
    }

    let mut frames = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap_or_default();
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad label {label_field:?}"),
        })?;
        let mut counts = Vec::with_capacity(FRAME_DIM * FRAME_DIM);
        for field in fields {
            let c: u32 = field.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad count {field:?}"),
            })?;
            counts.push(c);
        }
        if counts.len() != FRAME_DIM * FRAME_DIM {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "expected {} counts, got {}",
                    FRAME_DIM * FRAME_DIM,
                    counts.len()
                ),
            });
        }
        if label >= k {
            return Err(Error::Validation(format!(
                "line {line_no}: label {label} outside {k} classes"
            )));
        }
        frames.push(Frame::new(counts, Some(label))?);
    }
    Ok(frames)
}

/// Writes `manifest` and `frames.csv` into `dir` atomically.
pub fn save_dataset(dir: &Path, frames: &[Frame], manifest: &DatasetManifest) -> Result<(), Error> {
    manifest.validate()?;
    let manifest_text = toml::to_string(manifest)
        .map_err(|e| Error::Format(format!("manifest encode: {e}")))?;
    write_atomic_str(&dir.join("manifest"), &manifest_text)?;
    write_atomic_str(&dir.join("frames.csv"), &frames_to_csv(frames)?)?;
    Ok(())
}

/// Loads a native dataset directory, validating labels against the
/// manifest's class list and the stored per-class counts.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Frame>, DatasetManifest), Error> {
    let manifest_path = dir.join("manifest");
    if !manifest_path.is_file() {
        return Err(Error::Format(format!(
            "missing manifest in {}",
            dir.display()
        )));
    }
    let manifest_text = std::fs::read_to_string(&manifest_path)?;
    let manifest: DatasetManifest = toml::from_str(&manifest_text)
        .map_err(|e| Error::Format(format!("manifest decode: {e}")))?;
    manifest.validate()?;

    let csv_path = dir.join("frames.csv");
    if !csv_path.is_file() {
        return Err(Error::Format(format!(
            "missing frames.csv in {}",
            dir.display()
        )));
    }
    let text = std::fs::read_to_string(&csv_path)?;
    let frames = frames_from_csv(&text, manifest.num_classes())?;

    let counts = tally_counts(&frames, manifest.num_classes())?;
    if counts != manifest.frame_counts {
        return Err(Error::Validation(format!(
            "manifest frame counts {:?} disagree with frames.csv {:?}",
            manifest.frame_counts, counts
        )));
    }
    Ok((frames, manifest))
}

/// Stratified shuffle-split. Part A receives `floor(ratio · n)` frames of
/// each class, clamped so both parts stay non-empty per class.
pub fn split(
    frames: &[Frame],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<Frame>, Vec<Frame>), Error> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Domain(format!("split ratio {ratio} must lie in (0, 1)")));
    }
    let mut by_class: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, f) in frames.iter().enumerate() {
        let label = f
            .label
            .ok_or_else(|| Error::Data(format!("frame {i} has no label")))?;
        match by_class.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push(i),
            None => by_class.push((label, vec![i])),
        }
    }
    by_class.sort_by_key(|(l, _)| *l);

    let mut part_a = Vec::new();
    let mut part_b = Vec::new();
    for (label, mut indices) in by_class {
        let n = indices.len();
        if n < 2 {
            return Err(Error::Data(format!(
                "class {label} has {n} frame(s); both split parts need at least one"
            )));
        }
        let mut rng = stream(seed, &[tag("split"), label as u64]);
        fisher_yates(&mut indices, &mut rng);
        let n_a = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
        for &i in &indices[..n_a] {
            part_a.push(frames[i].clone());
        }
        for &i in &indices[n_a..] {
            part_b.push(frames[i].clone());
        }
    }
    Ok((part_a, part_b))
}

pub(crate) fn fisher_yates<T>(items: &mut [T], rng: &mut rand_chacha::ChaCha8Rng) {
    use rand::RngExt;
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
