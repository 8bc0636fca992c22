//! Procedural benchmark of small upright objects on plain backgrounds.
//!
//! Every class has a canonical "up", so quarter turns of a seen image look
//! unlike any upright class. Images are written as PNG class-folder trees
//! with `train/` and `test/` partitions.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::SplitSpec;
use crate::error::{OpgError, Result};
use crate::rng;

pub const CLASS_NAMES: [&str; 6] = ["tree", "house", "snowman", "car", "flag", "mushroom"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    pub noise_std: f32,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            size: 16,
            train_per_class: 210,
            test_per_class: 90,
            seed: 123,
            noise_std: 0.03,
        }
    }
}

struct Canvas {
    img: Array3<f32>,
    size: usize,
}

impl Canvas {
    fn paint(&mut self, color: [f32; 3], inside: impl Fn(f32, f32) -> bool) {
        for y in 0..self.size {
            for x in 0..self.size {
                if inside(x as f32 + 0.5, y as f32 + 0.5) {
                    for (c, &v) in color.iter().enumerate() {
                        self.img[[y, x, c]] = v;
                    }
                }
            }
        }
    }
}

fn rect(x0: f32, x1: f32, y0: f32, y1: f32) -> impl Fn(f32, f32) -> bool {
    move |x, y| x >= x0 && x < x1 && y >= y0 && y < y1
}

fn disk(cx: f32, cy: f32, r: f32) -> impl Fn(f32, f32) -> bool {
    move |x, y| (x - cx).powi(2) + (y - cy).powi(2) < r * r
}

/// Renders one `size x size x 3` image of class `class` in `[0, 1]`.
pub fn render<R: Rng + ?Sized>(class: usize, size: usize, noise_std: f32, rng: &mut R) -> Result<Array3<f32>> {
    if class >= CLASS_NAMES.len() {
        return Err(OpgError::validation(format!("unknown benchmark class {class}")));
    }
    let s = size as f32;
    let horizon = rng.gen_range(0.6..0.8) * s;
    let mut bg = [0.0f32; 3];
    bg.iter_mut().for_each(|v| *v = rng.gen_range(0.2..0.8));
    let cx = rng.gen_range(0.35..0.65) * s;
    let sc = rng.gen_range(0.8..1.15) * s / 16.0;
    let base = horizon + rng.gen_range(-0.5..1.0);
    let mut col = [0.0f32; 3];
    col.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));

    let mut cv = Canvas {
        img: Array3::from_shape_fn((size, size, 3), |(_, _, c)| bg[c]),
        size,
    };
    match class {
        0 => {
            let leaf = 0.5 + 0.2 * rng.gen_range(0.0f32..1.0);
            cv.paint([0.45, 0.28, 0.1], rect(cx - sc, cx + sc, base - 5.0 * sc, base));
            cv.paint([0.1, leaf, 0.1], disk(cx, base - 8.0 * sc, 3.5 * sc));
        }
        1 => {
            cv.paint(col, rect(cx - 4.0 * sc, cx + 4.0 * sc, base - 5.0 * sc, base));
            let top = base - 10.0 * sc;
            cv.paint([0.6, 0.15, 0.1], move |x, y| {
                y < base - 5.0 * sc && y > top && (x - cx).abs() < (y - top) * 0.9
            });
        }
        2 => {
            cv.paint([0.95; 3], disk(cx, base - 3.0 * sc, 3.0 * sc));
            cv.paint([0.95; 3], disk(cx, base - 8.0 * sc, 2.0 * sc));
        }
        3 => {
            let roof = col.map(|v| v * 0.8);
            cv.paint(
                col,
                rect(cx - 5.0 * sc, cx + 5.0 * sc, base - 4.0 * sc, base - 1.5 * sc),
            );
            cv.paint(
                roof,
                rect(cx - 3.0 * sc, cx + 2.0 * sc, base - 6.0 * sc, base - 4.0 * sc),
            );
            cv.paint([0.1; 3], disk(cx - 3.0 * sc, base - 1.2 * sc, 1.3 * sc));
            cv.paint([0.1; 3], disk(cx + 3.0 * sc, base - 1.2 * sc, 1.3 * sc));
        }
        4 => {
            cv.paint([0.3; 3], rect(cx - 0.5 * sc, cx + 0.5 * sc, base - 11.0 * sc, base));
            cv.paint(
                col,
                rect(cx + 0.5 * sc, cx + 5.0 * sc, base - 11.0 * sc, base - 8.0 * sc),
            );
        }
        _ => {
            cv.paint([0.9, 0.85, 0.7], rect(cx - sc, cx + sc, base - 4.0 * sc, base));
            let cap = disk(cx, base - 4.0 * sc, 4.0 * sc);
            cv.paint([0.8, 0.1, 0.1], move |x, y| cap(x, y) && y < base - 4.0 * sc);
        }
    }
    let mut img = cv.img;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0f32, noise_std).expect("finite std");
        img.mapv_inplace(|v| v + normal.sample(rng));
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(img)
}

fn to_png(img: &Array3<f32>, path: &Path) -> Result<()> {
    let (h, w, _) = img.dim();
    let raw: Vec<u8> = img.iter().map(|v| (v * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).expect("rgb buffer size");
    buf.save(path).map_err(|e| OpgError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Default evaluation splits over the six classes: three seen, two unseen.
pub fn default_splits() -> Vec<SplitSpec> {
    let plans: [(&[usize], &[usize]); 3] = [(&[0, 1, 2], &[3, 4]), (&[3, 4, 5], &[0, 1]), (&[0, 2, 4], &[1, 3])];
    plans
        .iter()
        .enumerate()
        .map(|(i, (seen, unseen))| SplitSpec::new("shapes16", i as u32, seen.to_vec(), unseen.to_vec()))
        .collect::<Result<_>>()
        .expect("static splits are valid")
}

/// Writes the benchmark under `dir` and returns the paths of the split files.
pub fn write_benchmark(dir: &Path, spec: &BenchSpec) -> Result<Vec<PathBuf>> {
    if spec.size < 8 || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(OpgError::validation(
            "benchmark needs size >= 8 and at least one image per partition",
        ));
    }
    for (part_tag, (part, n)) in [("train", spec.train_per_class), ("test", spec.test_per_class)]
        .into_iter()
        .enumerate()
    {
        for (class, name) in CLASS_NAMES.iter().enumerate() {
            let cdir = dir.join(part).join(format!("{class}_{name}"));
            fs::create_dir_all(&cdir).map_err(|e| OpgError::io(&cdir, e))?;
            let mut rng = rng::stream(spec.seed, &[part_tag as u64, class as u64]);
            for i in 0..n {
                let img = render(class, spec.size, spec.noise_std, &mut rng)?;
                to_png(&img, &cdir.join(format!("{i:05}.png")))?;
            }
        }
    }
    let sdir = dir.join("splits");
    fs::create_dir_all(&sdir).map_err(|e| OpgError::io(&sdir, e))?;
    let mut out = Vec::new();
    for split in default_splits() {
        let p = sdir.join(format!("split{}.toml", split.split_index));
        fs::write(&p, split.to_toml()).map_err(|e| OpgError::io(&p, e))?;
        out.push(p);
    }
    Ok(out)
}
