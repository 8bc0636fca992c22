//! Dataset discovery: index files or directory-of-class-folders trees.
//!
//! Supported layouts for `load_manifest(path)`:
//! - a manifest file (`<relative-path>\t<label>` per line), all entries train;
//! - a directory with `train.tsv` and optionally `test.tsv`;
//! - a directory with `manifest.tsv`;
//! - a directory with `train/` and `test/` class-folder trees;
//! - a directory whose subdirectories are class folders.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;

use crate::data::sample::ImageSample;
use crate::error::{OpgError, Result};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp", "pgm", "ppm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub label: usize,
    pub partition: Partition,
}

/// Lazily-decoded dataset index.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<Entry>,
    num_classes: usize,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn has_test_partition(&self) -> bool {
        self.entries.iter().any(|e| e.partition == Partition::Test)
    }

    /// Entries of one class, in index order.
    pub fn class_entries(&self, label: usize) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.label == label)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let meta = fs::metadata(path).map_err(|e| OpgError::io(path, e))?;
    let (root, entries, names) = if meta.is_file() {
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let entries = read_index(path, &root, Partition::Train)?;
        (root, entries, None)
    } else {
        let root = path.to_path_buf();
        let train_tsv = root.join("train.tsv");
        let manifest_tsv = root.join("manifest.tsv");
        if train_tsv.is_file() {
            let mut entries = read_index(&train_tsv, &root, Partition::Train)?;
            let test_tsv = root.join("test.tsv");
            if test_tsv.is_file() {
                entries.extend(read_index(&test_tsv, &root, Partition::Test)?);
            }
            (root, entries, None)
        } else if manifest_tsv.is_file() {
            let entries = read_index(&manifest_tsv, &root, Partition::Train)?;
            (root, entries, None)
        } else if root.join("train").is_dir() && root.join("test").is_dir() {
            let (mut entries, names) = scan_class_folders(&root.join("train"), Partition::Train)?;
            let (test, test_names) = scan_class_folders(&root.join("test"), Partition::Test)?;
            if test_names != names {
                return Err(OpgError::validation("train/ and test/ class folders differ"));
            }
            entries.extend(test);
            (root, entries, Some(names))
        } else {
            let (entries, names) = scan_class_folders(&root, Partition::Train)?;
            (root, entries, Some(names))
        }
    };

    if entries.is_empty() {
        return Err(OpgError::validation(format!(
            "no samples found under {}",
            path.display()
        )));
    }
    let labels: BTreeSet<usize> = entries.iter().map(|e| e.label).collect();
    let num_classes = labels.iter().next_back().map_or(0, |m| m + 1);
    if let Some(missing) = (0..num_classes).find(|c| !labels.contains(c)) {
        return Err(OpgError::validation(format!(
            "labels are not contiguous: class {missing} has no samples"
        )));
    }
    let class_names = names.unwrap_or_else(|| (0..num_classes).map(|c| c.to_string()).collect());
    Ok(Dataset {
        root,
        entries,
        num_classes,
        class_names,
    })
}

fn read_index(file: &Path, root: &Path, partition: Partition) -> Result<Vec<Entry>> {
    let text = fs::read_to_string(file).map_err(|e| OpgError::io(file, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (rel, label) = line.rsplit_once('\t').ok_or_else(|| {
            OpgError::validation(format!(
                "{}:{}: expected `<path>\\t<label>`",
                file.display(),
                lineno + 1
            ))
        })?;
        let label: usize = label.trim().parse().map_err(|_| {
            OpgError::validation(format!(
                "{}:{}: label `{label}` is not a non-negative integer",
                file.display(),
                lineno + 1
            ))
        })?;
        out.push(Entry {
            path: root.join(rel),
            label,
            partition,
        });
    }
    Ok(out)
}

fn scan_class_folders(dir: &Path, partition: Partition) -> Result<(Vec<Entry>, Vec<String>)> {
    let mut class_dirs: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| OpgError::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    // Numeric folder names sort numerically, everything else lexicographically.
    if class_dirs.iter().all(|(n, _)| n.parse::<u64>().is_ok()) {
        class_dirs.sort_by_key(|(n, _)| n.parse::<u64>().unwrap_or(u64::MAX));
    } else {
        class_dirs.sort();
    }
    let mut entries = Vec::new();
    for (label, (_, cdir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<PathBuf> = fs::read_dir(cdir)
            .map_err(|e| OpgError::io(cdir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .is_some_and(|x| IMAGE_EXTENSIONS.contains(&x.to_ascii_lowercase().as_str()))
            })
            .collect();
        files.sort();
        entries.extend(files.into_iter().map(|path| Entry { path, label, partition }));
    }
    Ok((entries, class_dirs.into_iter().map(|(n, _)| n).collect()))
}

/// Decodes an image file into `[0, 1]` pixels. Grayscale stays one channel;
/// everything else becomes RGB.
pub fn decode_image(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| OpgError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let grey = matches!(
        img.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if grey {
        let buf = img.to_luma8();
        let (w, h) = buf.dimensions();
        let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok(Array3::from_shape_vec((h as usize, w as usize, 1), data).expect("luma buffer"))
    } else {
        let buf = img.to_rgb8();
        let (w, h) = buf.dimensions();
        let data = buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Ok(Array3::from_shape_vec((h as usize, w as usize, 3), data).expect("rgb buffer"))
    }
}

/// Decodes entries in parallel; the output order matches the input order.
pub fn decode_entries(entries: &[&Entry], relabel: impl Fn(usize) -> usize + Sync) -> Result<Vec<ImageSample>> {
    entries
        .par_iter()
        .map(|e| ImageSample::original(decode_image(&e.path)?, relabel(e.label)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(path: &Path, v: u8) {
        let img = image::RgbImage::from_pixel(4, 4, image::Rgb([v, v, v]));
        img.save(path).unwrap();
    }

    #[test]
    fn class_folders_report_class_count() {
        let dir = tempfile::tempdir().unwrap();
        for c in 0..10 {
            let cdir = dir.path().join(format!("class_{c:02}"));
            fs::create_dir(&cdir).unwrap();
            write_png(&cdir.join("a.png"), c * 10);
        }
        let ds = load_manifest(dir.path()).unwrap();
        assert_eq!(ds.num_classes(), 10);
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.class_names()[3], "class_03");
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(matches!(err, OpgError::Validation(_)), "{err}");
    }

    #[test]
    fn label_gap_names_missing_class() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("manifest.tsv"), "a.png\t0\nb.png\t1\nc.png\t3\n").unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("class 2"), "{err}");
    }

    #[test]
    fn missing_path_is_io_error() {
        let err = load_manifest("/definitely/not/here").unwrap_err();
        assert!(matches!(err, OpgError::Io { .. }));
    }

    #[test]
    fn train_and_test_index_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.tsv"), "x/a.png\t0\nx/b.png\t1\n").unwrap();
        fs::write(dir.path().join("test.tsv"), "y/c.png\t1\n").unwrap();
        let ds = load_manifest(dir.path()).unwrap();
        assert!(ds.has_test_partition());
        assert_eq!(ds.class_entries(1).count(), 2);
        assert_eq!(ds.entries()[0].path, dir.path().join("x/a.png"));
    }

    #[test]
    fn decode_normalizes_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.png");
        write_png(&p, 255);
        let px = decode_image(&p).unwrap();
        assert_eq!(px.dim(), (4, 4, 3));
        assert!(px.iter().all(|&v| v == 1.0));
    }
}
