//! Synthetic segmentation data: bright ellipses or irregular blobs on a
//! darker noisy background, with exact binary masks.

use std::f64::consts::TAU;
use std::path::Path;

use image::GrayImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{load_dataset, DatasetManifest};
use crate::error::{Error, Result};

/// Supersampling factor per axis for anti-aliased edges.
const AA: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Ellipses,
    Blobs,
    /// Each object is an ellipse or a blob with equal probability.
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub family: ShapeFamily,
    /// Inclusive range of objects per image.
    pub objects: [usize; 2],
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(count: usize, size: usize, seed: u64) -> Self {
        SynthSpec {
            count,
            size,
            family: ShapeFamily::Mixed,
            objects: [1, 3],
            noise: 0.08,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("synthetic count must be >= 1".into()));
        }
        if self.size < 8 {
            return Err(Error::Config(format!("synthetic size must be >= 8, got {}", self.size)));
        }
        let [lo, hi] = self.objects;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("invalid objects range [{lo}, {hi}]")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, cos: f64, sin: f64 },
    /// Star-shaped: radius `r0 * (1 + sum a_k cos(k t + p_k))`.
    Blob { cy: f64, cx: f64, r0: f64, harmonics: Vec<(f64, f64, f64)> },
}

impl Shape {
    fn sample(rng: &mut ChaCha8Rng, s: f64, blob: bool) -> Shape {
        let cy = rng.random_range(0.2 * s..0.8 * s);
        let cx = rng.random_range(0.2 * s..0.8 * s);
        if blob {
            let r0 = rng.random_range(0.09 * s..0.18 * s);
            let harmonics = (2..=4)
                .map(|k| (k as f64, rng.random_range(0.0..0.18), rng.random_range(0.0..TAU)))
                .collect();
            Shape::Blob { cy, cx, r0, harmonics }
        } else {
            let (sin, cos) = rng.random_range(0.0..TAU).sin_cos();
            Shape::Ellipse {
                cy,
                cx,
                ry: rng.random_range(0.07 * s..0.2 * s),
                rx: rng.random_range(0.07 * s..0.2 * s),
                cos,
                sin,
            }
        }
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Shape::Ellipse { cy, cx, ry, rx, cos, sin } => {
                let (dy, dx) = (y - cy, x - cx);
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Blob { cy, cx, r0, harmonics } => {
                let (dy, dx) = (y - cy, x - cx);
                let t = dy.atan2(dx);
                let r = r0 * (1.0 + harmonics.iter().map(|(k, a, p)| a * (k * t + p).cos()).sum::<f64>());
                dx.hypot(dy) <= r
            }
        }
    }
}

/// Renders image `idx` of the spec: grayscale intensities in `[0,1]` and the
/// binary mask, both row-major `s x s`.
pub fn render(spec: &SynthSpec, idx: usize) -> (Vec<f64>, Vec<u8>) {
    let s = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(idx as u64);
    let bg = rng.random_range(0.15..0.35);
    let fg = rng.random_range(0.6..0.85);
    let k = rng.random_range(spec.objects[0]..=spec.objects[1]);
    let shapes: Vec<Shape> = (0..k)
        .map(|_| {
            let blob = match spec.family {
                ShapeFamily::Ellipses => false,
                ShapeFamily::Blobs => true,
                ShapeFamily::Mixed => rng.random_bool(0.5),
            };
            Shape::sample(&mut rng, s as f64, blob)
        })
        .collect();
    let inside = |y: f64, x: f64| shapes.iter().any(|sh| sh.contains(y, x));
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let mut img = vec![0.0; s * s];
    let mut mask = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            let mut hits = 0;
            for sy in 0..AA {
                for sx in 0..AA {
                    let py = y as f64 + (sy as f64 + 0.5) / AA as f64;
                    let px = x as f64 + (sx as f64 + 0.5) / AA as f64;
                    hits += inside(py, px) as usize;
                }
            }
            // A pixel belongs to the mask when at least half of it is covered.
            mask[y * s + x] = (2 * hits >= AA * AA) as u8;
            let cover = hits as f64 / (AA * AA) as f64;
            let n = if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            img[y * s + x] = (bg + (fg - bg) * cover + n).clamp(0.0, 1.0);
        }
    }
    (img, mask)
}

/// Writes `images/synth_XXXXX.png` and `masks/synth_XXXXX.png` under
/// `out_root` and returns the scanned manifest.
pub fn generate_synthetic(spec: &SynthSpec, out_root: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let root = out_root.as_ref();
    let (img_dir, mask_dir) = (root.join("images"), root.join("masks"));
    std::fs::create_dir_all(&img_dir)?;
    std::fs::create_dir_all(&mask_dir)?;
    let s = spec.size as u32;
    for i in 0..spec.count {
        let (img, mask) = render(spec, i);
        let img = GrayImage::from_raw(s, s, img.iter().map(|v| (v * 255.0).round() as u8).collect())
            .expect("s*s pixels");
        let mask = GrayImage::from_raw(s, s, mask.iter().map(|&m| m * 255).collect())
            .expect("s*s pixels");
        let name = format!("synth_{i:05}.png");
        img.save(img_dir.join(&name))?;
        mask.save(mask_dir.join(&name))?;
    }
    load_dataset(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_image, load_mask};

    #[test]
    fn noise_free_foreground_matches_mask() {
        let spec = SynthSpec {
            noise: 0.0,
            ..SynthSpec::new(4, 32, 7)
        };
        for i in 0..spec.count {
            let (img, mask) = render(&spec, i);
            let s = spec.size;
            let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
            for y in 0..s {
                for x in 0..s {
                    let m = mask[y * s + x];
                    let v = img[y * s + x];
                    if m == 1 {
                        assert!(v > lo, "mask pixel at background level");
                    } else if v > lo {
                        // Only anti-aliased edge pixels: a 4-neighbour is foreground.
                        let nb = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|(dy, dx)| {
                            let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                            (0..s as i64).contains(&yy)
                                && (0..s as i64).contains(&xx)
                                && mask[yy as usize * s + xx as usize] == 1
                        });
                        assert!(nb, "foreground outside the mask border at ({y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn writes_deterministic_pngs() {
        let spec = SynthSpec::new(3, 16, 1);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = generate_synthetic(&spec, a.path()).unwrap();
        generate_synthetic(&spec, b.path()).unwrap();
        assert_eq!(m.records.len(), 3);
        for r in &m.records {
            let other = b.path().join("images").join(r.image.file_name().unwrap());
            assert_eq!(std::fs::read(&r.image).unwrap(), std::fs::read(other).unwrap());
            let mask = load_mask(r.mask.as_ref().unwrap(), 16).unwrap();
            assert!(mask.iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(mask.iter().any(|&v| v == 1.0));
            assert_eq!(load_image(&r.image, 16, 1).unwrap().len(), 256);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SynthSpec::new(0, 32, 0).validate().is_err());
        assert!(SynthSpec { objects: [2, 1], ..SynthSpec::new(1, 32, 0) }.validate().is_err());
        assert!(SynthSpec { noise: -1.0, ..SynthSpec::new(1, 32, 0) }.validate().is_err());
    }
}
