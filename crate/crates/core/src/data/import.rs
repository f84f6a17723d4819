//! Importer for a local copy of the released gesture recordings. All
//! knowledge of that layout lives here; the rest of the crate only sees
//! the native format.
//!
//! Expected structure: one subdirectory per class, named by class (see
//! [`CLASS_NAMES`]), each holding `.txt` files of 8 lines × 8 whitespace-
//! separated non-negative integers (one photon-count frame per file).

use std::path::Path;

use super::{tally_counts, DatasetManifest, CLASS_NAMES};
use crate::error::Error;
use crate::imaging::{Frame, FRAME_DIM};

const LAYOUT_HELP: &str = "expected one directory per class named after it \
(fist, thumb, point, peace, three, four, open, horns, call, pinch, none), \
each containing .txt files of 8 lines with 8 whitespace-separated counts";

fn parse_frame_file(path: &Path) -> Result<Vec<u32>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut counts = Vec::with_capacity(FRAME_DIM * FRAME_DIM);
    for token in text.split_whitespace() {
        let c: u32 = token.parse().map_err(|_| {
            Error::Import(format!(
                "{}: bad count {token:?}; {LAYOUT_HELP}",
                path.display()
            ))
        })?;
        counts.push(c);
    }
    if counts.len() != FRAME_DIM * FRAME_DIM {
        return Err(Error::Import(format!(
            "{}: expected {} counts, got {}; {LAYOUT_HELP}",
            path.display(),
            FRAME_DIM * FRAME_DIM,
            counts.len()
        )));
    }
    Ok(counts)
}

/// Converts one split directory (train or test) of the released dataset
/// into native frames plus a manifest with per-class counts.
pub fn import_released(dir: &Path) -> Result<(Vec<Frame>, DatasetManifest), Error> {
    if !dir.is_dir() {
        return Err(Error::Import(format!(
            "{} is not a directory; {LAYOUT_HELP}",
            dir.display()
        )));
    }

    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    let mut class_dirs: Vec<Option<std::path::PathBuf>> = vec![None; CLASS_NAMES.len()];
    let mut recognized = 0usize;
    for entry in entries {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with('.') {
            continue;
        }
        let Some(class) = CLASS_NAMES.iter().position(|&c| c == name) else {
            return Err(Error::Import(format!(
                "unrecognized entry {name:?} in {}; {LAYOUT_HELP}",
                dir.display()
            )));
        };
        if !entry.path().is_dir() {
            return Err(Error::Import(format!(
                "{name:?} is not a directory; {LAYOUT_HELP}"
            )));
        }
        class_dirs[class] = Some(entry.path());
        recognized += 1;
    }
    if recognized < 2 {
        return Err(Error::Import(format!(
            "found {recognized} class directories in {}; {LAYOUT_HELP}",
            dir.display()
        )));
    }

    let mut frames = Vec::new();
    for (class, class_dir) in class_dirs.iter().enumerate() {
        let Some(class_dir) = class_dir else { continue };
        let mut files: Vec<_> = std::fs::read_dir(class_dir)?.collect::<Result<_, _>>()?;
        files.sort_by_key(|e| e.file_name());
        for file in files {
            let path = file.path();
            let name = file.file_name();
            let name = name.to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            if !name.ends_with(".txt") || !path.is_file() {
                return Err(Error::Import(format!(
                    "unexpected entry {name:?} in {}; {LAYOUT_HELP}",
                    class_dir.display()
                )));
            }
            frames.push(Frame::new(parse_frame_file(&path)?, Some(class))?);
        }
    }

    let manifest = DatasetManifest {
        version: 1,
        source: "released".into(),
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        frame_counts: tally_counts(&frames, CLASS_NAMES.len())?,
        seed: None,
    };
    Ok((frames, manifest))
}
