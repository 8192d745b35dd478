use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{LabelGrid, Shape, Tensor};

use super::dataset::Sample;
use super::image_io::{class_intensity, save_gray_png};

const BACKGROUND: f64 = 0.1;
const OUTER: f64 = 0.9;
const INNER: f64 = 0.5;
const NOISE_STD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("synthetic sample count must be >= 1"));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(16) || !self.width.is_multiple_of(16) {
            return Err(Error::config(format!(
                "synthetic size {}x{} must be positive and divisible by 16",
                self.height, self.width
            )));
        }
        if !(2..=3).contains(&self.classes) {
            return Err(Error::config(format!(
                "synthetic data supports 2 or 3 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Dark background with a bright rotated ellipse (class 1). With three
/// classes a concentric ellipse at half the radii and mid intensity is
/// class 2. Gaussian noise is added to the image only; masks are exact.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let (h, w) = (spec.height as f64, spec.width as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    (0..spec.n)
        .map(|i| {
            let cy = rng.random_range(0.4 * h..0.6 * h);
            let cx = rng.random_range(0.4 * w..0.6 * w);
            let ry = rng.random_range(0.2 * h..0.3 * h);
            let rx = rng.random_range(0.2 * w..0.3 * w);
            let (sin, cos) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
            let mut image = Vec::with_capacity(spec.height * spec.width);
            let mut labels = Vec::with_capacity(spec.height * spec.width);
            for y in 0..spec.height {
                for x in 0..spec.width {
                    let dy = y as f64 + 0.5 - cy;
                    let dx = x as f64 + 0.5 - cx;
                    let u = (dx * cos + dy * sin) / rx;
                    let v = (-dx * sin + dy * cos) / ry;
                    let r2 = u * u + v * v;
                    let (label, base) = if spec.classes == 3 && r2 <= 0.25 {
                        (2, INNER)
                    } else if r2 <= 1.0 {
                        (1, OUTER)
                    } else {
                        (0, BACKGROUND)
                    };
                    labels.push(label);
                    image.push((base + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32);
                }
            }
            Sample::new(
                format!("synth_{i:04}"),
                Tensor::from_vec(Shape::new(1, 1, spec.height, spec.width), image)?,
                LabelGrid::new(1, spec.height, spec.width, labels)?,
                spec.classes,
            )
        })
        .collect()
}

/// Writes `images/<id>.png` (8-bit, round(255·v)) and `masks/<id>.png`
/// (class c as round(255·c/(k−1))).
pub fn write_dataset(samples: &[Sample], dir: &Path, k: usize) -> Result<()> {
    for s in samples {
        let [_, _, h, w] = s.image.shape().dims();
        let img = s
            .image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        save_gray_png(&dir.join("images").join(format!("{}.png", s.id)), w, h, img)?;
        let mask = s.mask.labels().iter().map(|&c| class_intensity(c, k)).collect();
        save_gray_png(&dir.join("masks").join(format!("{}.png", s.id)), w, h, mask)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_thresholds, load_dataset_dir};

    fn spec(classes: usize, seed: u64) -> SynthSpec {
        SynthSpec {
            n: 8,
            height: 64,
            width: 64,
            classes,
            seed,
        }
    }

    fn counts(s: &Sample, k: usize) -> Vec<usize> {
        (0..k)
            .map(|c| s.mask.labels().iter().filter(|&&l| l == c).count())
            .collect()
    }

    #[test]
    fn binary_samples_have_foreground() {
        let data = synth_generate(&spec(2, 3)).unwrap();
        assert_eq!(data.len(), 8);
        assert!(data.iter().all(|s| counts(s, 2)[1] > 0));
    }

    #[test]
    fn three_class_samples_are_nested_and_imbalanced() {
        for s in synth_generate(&spec(3, 5)).unwrap() {
            let c = counts(&s, 3);
            assert!(c[2] > 0 && c[2] < c[1] && c[1] < c[0], "{c:?}");
        }
    }

    #[test]
    fn seeded_and_bitwise_reproducible() {
        let a = synth_generate(&spec(3, 11)).unwrap();
        let b = synth_generate(&spec(3, 11)).unwrap();
        let c = synth_generate(&spec(3, 12)).unwrap();
        let bits = |d: &[Sample]| {
            d.iter()
                .flat_map(|s| s.image.data().iter().map(|v| v.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(
            a.iter().map(|s| &s.mask).collect::<Vec<_>>(),
            b.iter().map(|s| &s.mask).collect::<Vec<_>>()
        );
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut s = spec(2, 0);
        s.height = 60;
        assert!(matches!(synth_generate(&s), Err(Error::Config(_))));
        s.height = 64;
        s.classes = 4;
        assert!(matches!(synth_generate(&s), Err(Error::Config(_))));
    }

    #[test]
    fn written_dataset_reloads_with_identical_masks() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_generate(&SynthSpec {
            n: 3,
            height: 32,
            width: 48,
            classes: 3,
            seed: 2,
        })
        .unwrap();
        write_dataset(&data, dir.path(), 3).unwrap();
        let back = load_dataset_dir(dir.path(), 32, 48, 3, &default_thresholds(3)).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.mask, b.mask);
            let err = a
                .image
                .data()
                .iter()
                .zip(b.image.data())
                .map(|(x, y)| (x - y).abs())
                .fold(0f32, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn mismatched_stems_reported() {
        let dir = tempfile::tempdir().unwrap();
        let data = synth_generate(&SynthSpec {
            n: 2,
            height: 16,
            width: 16,
            classes: 2,
            seed: 2,
        })
        .unwrap();
        write_dataset(&data, dir.path(), 2).unwrap();
        std::fs::rename(
            dir.path().join("masks/synth_0001.png"),
            dir.path().join("masks/other.png"),
        )
        .unwrap();
        let err = load_dataset_dir(dir.path(), 16, 16, 2, &[128.0]).unwrap_err();
        assert!(
            matches!(err, Error::Ingest { .. }) && err.to_string().contains("synth_0001"),
            "{err}"
        );
    }
}
