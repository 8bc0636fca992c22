//! Training augmentations and pseudo-unseen generation.
//!
//! Pseudo-unseen samples are seen training images pushed off the training
//! distribution by a shifting transform, 90x rotations by default. Standard
//! augmentation (random crop + horizontal flip) never rotates.

use ndarray::{s, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Batch, ImageSample, Origin, RotationTag};
use crate::error::{OpgError, Result};

pub const DEFAULT_BLUR_SIGMA: f32 = 1.0;
pub const DEFAULT_NOISE_STD: f32 = 0.1;
pub const DEFAULT_JITTER_STRENGTH: f32 = 0.4;
pub const DEFAULT_CUTOUT_FRACTION: f32 = 0.25;

/// The distribution-shifting transform used to make pseudo-unseen samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentKind {
    Rot90x,
    RotRange { lo: f32, hi: f32 },
    GaussianBlur { sigma: f32 },
    GaussianNoise { std: f32 },
    ColorJitter { strength: f32 },
    Cutout { fraction: f32 },
}

impl AugmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::Rot90x => "rot90x",
            AugmentKind::RotRange { .. } => "rot_range",
            AugmentKind::GaussianBlur { .. } => "gaussian_blur",
            AugmentKind::GaussianNoise { .. } => "gaussian_noise",
            AugmentKind::ColorJitter { .. } => "color_jitter",
            AugmentKind::Cutout { .. } => "cutout",
        }
    }

    /// Every kind with its default parameters, in ablation order.
    pub fn ablation_set() -> Vec<AugmentKind> {
        vec![
            AugmentKind::Rot90x,
            AugmentKind::RotRange { lo: 30.0, hi: 60.0 },
            AugmentKind::GaussianBlur {
                sigma: DEFAULT_BLUR_SIGMA,
            },
            AugmentKind::GaussianNoise { std: DEFAULT_NOISE_STD },
            AugmentKind::ColorJitter {
                strength: DEFAULT_JITTER_STRENGTH,
            },
            AugmentKind::Cutout {
                fraction: DEFAULT_CUTOUT_FRACTION,
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            kind: AugmentKind::Rot90x,
            rng_seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f32| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(OpgError::config(
                    format!("augment.pseudo_unseen.kind.{name}"),
                    format!("must be > 0, got {v}"),
                ))
            }
        };
        match self.kind {
            AugmentKind::Rot90x => Ok(()),
            AugmentKind::RotRange { lo, hi } => {
                if 0.0 < lo && lo <= hi && hi < 90.0 {
                    Ok(())
                } else {
                    Err(OpgError::config(
                        "augment.pseudo_unseen.kind",
                        format!("rot_range needs 0 < lo <= hi < 90, got ({lo}, {hi})"),
                    ))
                }
            }
            AugmentKind::GaussianBlur { sigma } => positive("sigma", sigma),
            AugmentKind::GaussianNoise { std } => positive("std", std),
            AugmentKind::ColorJitter { strength } => positive("strength", strength),
            AugmentKind::Cutout { fraction } => {
                positive("fraction", fraction)?;
                if fraction <= 1.0 {
                    Ok(())
                } else {
                    Err(OpgError::config("augment.pseudo_unseen.kind.fraction", "must be <= 1"))
                }
            }
        }
    }
}

/// Counter-clockwise rotation by `90 * k` degrees of a square image.
pub fn rot90_pixels(pixels: &Array3<f32>, k: u8) -> Result<Array3<f32>> {
    let (h, w, c) = pixels.dim();
    if h != w {
        return Err(OpgError::Shape {
            expected: "square image".into(),
            got: format!("{h}x{w}"),
        });
    }
    let n = h;
    let mut out = Array3::zeros((n, n, c));
    for i in 0..n {
        for j in 0..n {
            let (si, sj) = match k % 4 {
                0 => (i, j),
                1 => (j, n - 1 - i),
                2 => (n - 1 - i, n - 1 - j),
                _ => (n - 1 - j, i),
            };
            out.slice_mut(s![i, j, ..]).assign(&pixels.slice(s![si, sj, ..]));
        }
    }
    Ok(out)
}

pub fn rotate90x(sample: &ImageSample, k: u8) -> Result<ImageSample> {
    if sample.origin != Origin::Original {
        return Err(OpgError::validation("rotate90x expects an original sample"));
    }
    let rotation = RotationTag::from_quarter_turns(k)
        .ok_or_else(|| OpgError::validation(format!("quarter turns must be 1..=3, got {k}")))?;
    Ok(ImageSample {
        pixels: rot90_pixels(&sample.pixels, k)?,
        label: sample.label,
        origin: Origin::PseudoUnseen,
        rotation,
    })
}

/// Maps a continuous coordinate into `[0, n-1]` by mirror reflection at the edges.
fn reflect(mut x: f32, n: usize) -> f32 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f32;
    let period = 2.0 * max;
    x = x.rem_euclid(period);
    if x > max {
        period - x
    } else {
        x
    }
}

/// Rotates counter-clockwise by `degrees` about the image center using
/// bilinear sampling. Source coordinates falling outside the frame are
/// mirrored back in, which matches reflect-padding the image, rotating and
/// center-cropping back to the original size.
pub fn rotate_pixels(pixels: &Array3<f32>, degrees: f32) -> Array3<f32> {
    let (h, w, c) = pixels.dim();
    let (sin, cos) = (degrees.to_radians() as f64).sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = cy - y as f64;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - (-sin * dx + cos * dy);
            let sx = reflect(sx as f32, w);
            let sy = reflect(sy as f32, h);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f32;
            let fy = sy - y0 as f32;
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * pixels[[y0, x0, ch]] + fx * pixels[[y0, x1, ch]])
                    + fy * ((1.0 - fx) * pixels[[y1, x0, ch]] + fx * pixels[[y1, x1, ch]]);
                out[[y, x, ch]] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn reflect_index(i: i64, n: usize) -> usize {
    reflect(i as f32, n).round() as usize
}

pub fn gaussian_blur(pixels: &Array3<f32>, sigma: f32) -> Array3<f32> {
    let (h, w, c) = pixels.dim();
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = Array3::<f32>::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[[y, x, ch]] = k
                    .iter()
                    .enumerate()
                    .map(|(t, &kv)| kv * pixels[[y, reflect_index(x as i64 + t as i64 - r, w), ch]])
                    .sum();
            }
        }
    }
    let mut out = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v: f32 = k
                    .iter()
                    .enumerate()
                    .map(|(t, &kv)| kv * tmp[[reflect_index(y as i64 + t as i64 - r, h), x, ch]])
                    .sum();
                out[[y, x, ch]] = v.clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn gaussian_noise<R: Rng + ?Sized>(pixels: &Array3<f32>, std: f32, rng: &mut R) -> Array3<f32> {
    let normal = Normal::new(0.0f32, std).expect("std > 0");
    pixels.mapv(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
}

/// Random brightness, contrast and saturation, each scaled by a factor in
/// `[1 - strength, 1 + strength]`.
pub fn color_jitter<R: Rng + ?Sized>(pixels: &Array3<f32>, strength: f32, rng: &mut R) -> Array3<f32> {
    let lo = (1.0 - strength).max(0.0);
    let hi = 1.0 + strength;
    let brightness = rng.gen_range(lo..=hi);
    let contrast = rng.gen_range(lo..=hi);
    let saturation = rng.gen_range(lo..=hi);
    let (h, w, c) = pixels.dim();
    let mut out = pixels.mapv(|v| (v * brightness).clamp(0.0, 1.0));
    let mean = out.mean().unwrap_or(0.0);
    out.mapv_inplace(|v| ((v - mean) * contrast + mean).clamp(0.0, 1.0));
    if c == 3 {
        for y in 0..h {
            for x in 0..w {
                let px = out.slice(s![y, x, ..]).to_owned();
                let grey = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
                for ch in 0..3 {
                    out[[y, x, ch]] = (grey + (px[ch] - grey) * saturation).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Zeroes a square patch covering `fraction` of the image area.
pub fn cutout<R: Rng + ?Sized>(pixels: &Array3<f32>, fraction: f32, rng: &mut R) -> Array3<f32> {
    let (h, w, _) = pixels.dim();
    let side = ((fraction * (h * w) as f32).sqrt().round() as usize).clamp(1, h.min(w));
    let y0 = rng.gen_range(0..=h - side);
    let x0 = rng.gen_range(0..=w - side);
    let mut out = pixels.clone();
    out.slice_mut(s![y0..y0 + side, x0..x0 + side, ..]).fill(0.0);
    out
}

/// Applies the shift in `spec` to one original sample.
pub fn shift_sample<R: Rng + ?Sized>(sample: &ImageSample, spec: &AugmentSpec, rng: &mut R) -> Result<ImageSample> {
    if sample.origin != Origin::Original {
        return Err(OpgError::validation(
            "pseudo-unseen generation expects original samples",
        ));
    }
    let (pixels, rotation) = match spec.kind {
        AugmentKind::Rot90x => return rotate90x(sample, rng.gen_range(1..=3)),
        AugmentKind::RotRange { lo, hi } => {
            let angle = rng.gen_range(lo..=hi);
            (rotate_pixels(&sample.pixels, angle), RotationTag::Arbitrary(angle))
        }
        AugmentKind::GaussianBlur { sigma } => (gaussian_blur(&sample.pixels, sigma), RotationTag::Photometric),
        AugmentKind::GaussianNoise { std } => (gaussian_noise(&sample.pixels, std, rng), RotationTag::Photometric),
        AugmentKind::ColorJitter { strength } => {
            (color_jitter(&sample.pixels, strength, rng), RotationTag::Photometric)
        }
        AugmentKind::Cutout { fraction } => (cutout(&sample.pixels, fraction, rng), RotationTag::Photometric),
    };
    Ok(ImageSample {
        pixels,
        label: sample.label,
        origin: Origin::PseudoUnseen,
        rotation,
    })
}

/// Builds the pseudo-unseen batch: one shifted copy per input sample, same order.
pub fn generate_pseudo_batch<R: Rng + ?Sized>(batch: &Batch, spec: &AugmentSpec, rng: &mut R) -> Result<Batch> {
    let out = batch
        .samples()
        .iter()
        .map(|s| shift_sample(s, spec, rng))
        .collect::<Result<Vec<_>>>()?;
    Batch::new(out)
}

/// Standard training augmentation: zero-padded random crop and horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardAugment {
    pub enabled: bool,
    pub crop_padding: usize,
    pub flip: bool,
}

impl Default for StandardAugment {
    fn default() -> Self {
        StandardAugment {
            enabled: true,
            crop_padding: 4,
            flip: true,
        }
    }
}

/// What a standard augmentation draw did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropFlip {
    pub dy: usize,
    pub dx: usize,
    pub flipped: bool,
}

pub fn hflip(pixels: &Array3<f32>) -> Array3<f32> {
    pixels.slice(s![.., ..;-1, ..]).to_owned()
}

impl StandardAugment {
    pub fn apply<R: Rng + ?Sized>(&self, sample: &ImageSample, rng: &mut R) -> ImageSample {
        self.apply_traced(sample, rng).0
    }

    pub fn apply_traced<R: Rng + ?Sized>(&self, sample: &ImageSample, rng: &mut R) -> (ImageSample, Option<CropFlip>) {
        if !self.enabled {
            return (sample.clone(), None);
        }
        let p = self.crop_padding;
        let (h, w, c) = sample.dims();
        let dy = rng.gen_range(0..=2 * p);
        let dx = rng.gen_range(0..=2 * p);
        let flipped = self.flip && rng.gen_bool(0.5);
        let mut pixels = if p == 0 {
            sample.pixels.clone()
        } else {
            let mut padded = Array3::zeros((h + 2 * p, w + 2 * p, c));
            padded.slice_mut(s![p..p + h, p..p + w, ..]).assign(&sample.pixels);
            padded.slice(s![dy..dy + h, dx..dx + w, ..]).to_owned()
        };
        if flipped {
            pixels = hflip(&pixels);
        }
        let out = ImageSample {
            pixels,
            ..sample.clone()
        };
        (out, Some(CropFlip { dy, dx, flipped }))
    }
}

pub fn standard_augment<R: Rng + ?Sized>(sample: &ImageSample, cfg: &StandardAugment, rng: &mut R) -> ImageSample {
    cfg.apply(sample, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr3, Array};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Array3<f32> {
        Array::from_shape_fn((h, w, c), |_| rng.gen_range(0.0f32..=1.0))
    }

    fn sample(px: Array3<f32>) -> ImageSample {
        ImageSample::original(px, 0).unwrap()
    }

    #[test]
    fn rot180_of_2x2() {
        let px = arr3(&[[[0.1f32], [0.2]], [[0.3], [0.4]]]);
        let out = rot90_pixels(&px, 2).unwrap();
        assert_eq!(out, arr3(&[[[0.4f32], [0.3]], [[0.2], [0.1]]]));
    }

    #[test]
    fn rotation_group_has_order_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let px = random_image(&mut rng, 7, 7, 3);
        let mut cur = px.clone();
        for _ in 0..4 {
            cur = rot90_pixels(&cur, 1).unwrap();
        }
        assert_eq!(cur, px);
        let back = rot90_pixels(&rot90_pixels(&px, 1).unwrap(), 3).unwrap();
        assert_eq!(back, px);
    }

    #[test]
    fn rotate90x_marks_pseudo_unseen() {
        let s = sample(Array3::from_elem((4, 4, 1), 0.5));
        let r = rotate90x(&s, 3).unwrap();
        assert_eq!(r.origin, Origin::PseudoUnseen);
        assert_eq!(r.rotation, RotationTag::R270);
        r.validate().unwrap();
        assert!(rotate90x(&r, 1).is_err());
    }

    #[test]
    fn rotate90x_rejects_non_square() {
        let s = sample(Array3::from_elem((4, 5, 1), 0.5));
        assert!(matches!(rotate90x(&s, 1), Err(OpgError::Shape { .. })));
    }

    #[test]
    fn arbitrary_rotation_by_90_matches_quarter_turn() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let px = random_image(&mut rng, 6, 6, 2);
        let a = rotate_pixels(&px, 90.0);
        let b = rot90_pixels(&px, 1).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-4);
        }
    }

    #[test]
    fn arbitrary_rotation_has_no_black_corners() {
        let px = Array3::from_elem((9, 9, 3), 0.6f32);
        let out = rotate_pixels(&px, 45.0);
        assert!(out.iter().all(|v| (v - 0.6).abs() < 1e-5));
    }

    #[test]
    fn pseudo_batch_keeps_size_and_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = Batch::new((0..4).map(|_| sample(random_image(&mut rng, 5, 5, 3))).collect()).unwrap();
        let out = generate_pseudo_batch(&batch, &AugmentSpec::default(), &mut rng).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.samples().iter().all(|s| s.origin == Origin::PseudoUnseen));
        assert!(out.samples().iter().all(|s| s.rotation.quarter_turns().is_some()));
    }

    #[test]
    fn rot_range_angles_are_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = Batch::new((0..64).map(|_| sample(random_image(&mut rng, 5, 5, 1))).collect()).unwrap();
        let spec = AugmentSpec {
            kind: AugmentKind::RotRange { lo: 30.0, hi: 60.0 },
            rng_seed: 0,
        };
        let out = generate_pseudo_batch(&batch, &spec, &mut rng).unwrap();
        for s in out.samples() {
            match s.rotation {
                RotationTag::Arbitrary(a) => assert!((30.0..=60.0).contains(&a)),
                other => panic!("unexpected tag {other:?}"),
            }
        }
    }

    #[test]
    fn pseudo_batch_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = Batch::new((0..8).map(|_| sample(random_image(&mut rng, 6, 6, 3))).collect()).unwrap();
        for kind in AugmentKind::ablation_set() {
            let spec = AugmentSpec { kind, rng_seed: 4 };
            let a = generate_pseudo_batch(&batch, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            let b = generate_pseudo_batch(&batch, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(a, b, "{}", kind.name());
        }
    }

    #[test]
    fn pseudo_batch_rejects_pseudo_input() {
        let s = rotate90x(&sample(Array3::from_elem((3, 3, 1), 0.2)), 1).unwrap();
        let batch = Batch::new(vec![s]).unwrap();
        assert!(generate_pseudo_batch(&batch, &AugmentSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = [
            AugmentKind::RotRange { lo: 0.0, hi: 30.0 },
            AugmentKind::RotRange { lo: 50.0, hi: 40.0 },
            AugmentKind::RotRange { lo: 10.0, hi: 90.0 },
            AugmentKind::GaussianBlur { sigma: 0.0 },
            AugmentKind::GaussianNoise { std: -1.0 },
            AugmentKind::ColorJitter { strength: 0.0 },
            AugmentKind::Cutout { fraction: 0.0 },
        ];
        for kind in bad {
            assert!(AugmentSpec { kind, rng_seed: 0 }.validate().is_err(), "{kind:?}");
        }
        for kind in AugmentKind::ablation_set() {
            AugmentSpec { kind, rng_seed: 0 }.validate().unwrap();
        }
    }

    #[test]
    fn disabled_standard_augment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample(random_image(&mut rng, 8, 8, 3));
        let cfg = StandardAugment {
            enabled: false,
            ..Default::default()
        };
        assert_eq!(standard_augment(&s, &cfg, &mut rng), s);
    }

    #[test]
    fn flip_is_an_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let px = random_image(&mut rng, 5, 6, 3);
        assert_eq!(hflip(&hflip(&px)), px);
    }

    #[test]
    fn flip_rate_is_about_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let s = sample(Array3::from_elem((8, 8, 1), 0.5));
        let cfg = StandardAugment::default();
        let flips = (0..1000)
            .filter(|_| cfg.apply_traced(&s, &mut rng).1.unwrap().flipped)
            .count();
        let rate = flips as f64 / 1000.0;
        assert!((0.45..=0.55).contains(&rate), "{rate}");
    }

    #[test]
    fn standard_augment_never_rotates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let s = sample(random_image(&mut rng, 8, 8, 3));
        let cfg = StandardAugment {
            crop_padding: 0,
            ..Default::default()
        };
        for _ in 0..50 {
            let (out, trace) = cfg.apply_traced(&s, &mut rng);
            assert_eq!(out.origin, Origin::Original);
            let expect = if trace.unwrap().flipped {
                hflip(&s.pixels)
            } else {
                s.pixels.clone()
            };
            assert_eq!(out.pixels, expect);
        }
    }

    proptest! {
        #[test]
        fn rot90_permutes_pixel_values(seed in any::<u64>(), n in 1usize..9, k in 1u8..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let px = random_image(&mut rng, n, n, 2);
            let out = rot90_pixels(&px, k).unwrap();
            let mut a: Vec<u32> = px.iter().map(|v| v.to_bits()).collect();
            let mut b: Vec<u32> = out.iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn shifted_pixels_stay_in_unit_range(seed in any::<u64>(), which in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample(random_image(&mut rng, 7, 7, 3));
            let spec = AugmentSpec { kind: AugmentKind::ablation_set()[which], rng_seed: 0 };
            let out = shift_sample(&s, &spec, &mut rng).unwrap();
            prop_assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out.origin, Origin::PseudoUnseen);
        }
    }
}
