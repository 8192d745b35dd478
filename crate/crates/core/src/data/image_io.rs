use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::atomic::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{LabelGrid, Shape, Tensor};

/// Single-channel raster with intensities on the 0..=255 scale.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

fn luminance(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// Decodes a PNG or portable any-map. Colour images are reduced to
/// luminance; alpha is ignored.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let ingest = |message: String| Error::Ingest {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| ingest(e.to_string()))?;
    let format = image::guess_format(&bytes).map_err(|e| ingest(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(ingest(format!(
            "unsupported format {format:?}; convert to PNG or PGM/PPM"
        )));
    }
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| ingest(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0] as f64).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(|v| v as f64 / 257.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p.0[0], p.0[1], p.0[2]))
            .collect(),
    };
    Ok(GrayImage { height, width, pixels })
}

fn sample_coord(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(src - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, th: usize, tw: usize) -> Vec<f64> {
    assert_eq!(src.len(), h * w);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let cols: Vec<_> = (0..tw).map(|x| sample_coord(x, w, tw)).collect();
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = sample_coord(y, h, th);
        for &(x0, x1, fx) in &cols {
            let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
            let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

/// Nearest-neighbour resampling; output values are always source values.
pub fn resize_nearest<T: Copy>(src: &[T], h: usize, w: usize, th: usize, tw: usize) -> Vec<T> {
    assert_eq!(src.len(), h * w);
    let pick = |i: usize, s: usize, d: usize| (((i as f64 + 0.5) * s as f64 / d as f64) as usize).min(s - 1);
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let sy = pick(y, h, th);
        for x in 0..tw {
            out.push(src[sy * w + pick(x, w, tw)]);
        }
    }
    out
}

/// Grayscale image resized to `h`×`w`, scaled to [0, 1], shaped (1, 1, h, w).
pub fn load_and_preprocess(path: &Path, h: usize, w: usize) -> Result<Tensor<f32>> {
    let img = load_gray(path)?;
    let resized = if (img.height, img.width) == (h, w) {
        img.pixels
    } else {
        resize_bilinear(&img.pixels, img.height, img.width, h, w)
    };
    let data = resized
        .into_iter()
        .map(|v| (v / 255.0).clamp(0.0, 1.0) as f32)
        .collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

/// Ceiling of the midpoints between consecutive [`class_intensity`] values:
/// {128} for two classes, {64, 192} for three.
pub fn default_thresholds(k: usize) -> Vec<f64> {
    (1..k)
        .map(|c| ((class_intensity(c - 1, k) as f64 + class_intensity(c, k) as f64) / 2.0).ceil())
        .collect()
}

fn check_thresholds(k: usize, thresholds: &[f64]) -> Result<()> {
    if k < 2 {
        return Err(Error::config(format!("num_classes must be >= 2, got {k}")));
    }
    if thresholds.len() != k - 1 {
        return Err(Error::config(format!(
            "{k} classes need {} mask thresholds, got {}",
            k - 1,
            thresholds.len()
        )));
    }
    if thresholds.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::config(format!(
            "mask thresholds {thresholds:?} are not strictly increasing"
        )));
    }
    Ok(())
}

/// Label of each pixel = number of thresholds strictly below its intensity.
pub fn labels_from_intensity(pixels: &[f64], k: usize, thresholds: &[f64]) -> Result<Vec<usize>> {
    check_thresholds(k, thresholds)?;
    Ok(pixels
        .iter()
        .map(|&v| thresholds.iter().filter(|&&t| t < v).count())
        .collect())
}

/// Loads a mask, labels it by intensity, then resizes the labels with
/// nearest-neighbour sampling to `h`×`w`.
pub fn mask_from_intensity(path: &Path, k: usize, thresholds: &[f64], h: usize, w: usize) -> Result<LabelGrid> {
    check_thresholds(k, thresholds)?;
    let img = load_gray(path)?;
    let labels = labels_from_intensity(&img.pixels, k, thresholds)?;
    let labels = resize_nearest(&labels, img.height, img.width, h, w);
    LabelGrid::new(1, h, w, labels)
}

/// Intensity written for class `c` of `k`: round(255·c/(k−1)).
pub fn class_intensity(c: usize, k: usize) -> u8 {
    (255.0 * c as f64 / (k - 1).max(1) as f64).round() as u8
}

/// Writes an 8-bit grayscale PNG atomically.
pub fn save_gray_png(path: &Path, width: usize, height: usize, pixels: Vec<u8>) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .ok_or_else(|| Error::Internal(format!("pixel buffer does not match {width}x{height}")))?;
    let mut bytes = Cursor::new(Vec::new());
    buf.write_to(&mut bytes, ImageFormat::Png)
        .map_err(|e| Error::Internal(format!("PNG encoding failed: {e}")))?;
    write_atomic(path, bytes.get_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let src: Vec<f64> = (0..12).map(|v| v as f64 * 17.0).collect();
        assert_eq!(resize_bilinear(&src, 3, 4, 3, 4), src);
    }

    #[test]
    fn constants_survive_resizing() {
        let src = vec![93.0; 5 * 7];
        assert!(resize_bilinear(&src, 5, 7, 12, 3).iter().all(|&v| v == 93.0));
    }

    #[test]
    fn checkerboard_upsample_matches_hand_weights() {
        let src = [0.0, 255.0, 255.0, 0.0];
        let out = resize_bilinear(&src, 2, 2, 4, 4);
        // Sample points for a 2→4 resize land at 0, 0.25, 0.75, 1 (clamped).
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (y, &sy) in coords.iter().enumerate() {
            for (x, &sx) in coords.iter().enumerate() {
                let expected = 255.0 * ((1.0 - sy) * sx + sy * (1.0 - sx));
                assert!((out[y * 4 + x] - expected).abs() < 1e-12, "({y},{x})");
            }
        }
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            let v = out[y * 4 + x] / 255.0;
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn nearest_keeps_source_values() {
        let src = [0usize, 1, 2, 1];
        let out = resize_nearest(&src, 2, 2, 5, 3);
        assert!(out.iter().all(|v| src.contains(v)));
        assert_eq!(resize_nearest(&src, 2, 2, 2, 2), src);
    }

    #[test]
    fn three_class_thresholds() {
        let t = default_thresholds(3);
        assert_eq!(t, vec![64.0, 192.0]);
        assert_eq!(
            labels_from_intensity(&[0.0, 128.0, 255.0], 3, &t).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn binary_thresholds() {
        let t = default_thresholds(2);
        assert_eq!(t, vec![128.0]);
        assert_eq!(labels_from_intensity(&[0.0, 255.0, 0.0], 2, &t).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn threshold_count_and_order_checked() {
        assert!(matches!(
            labels_from_intensity(&[0.0], 3, &[64.0]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            labels_from_intensity(&[0.0], 3, &[192.0, 64.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn class_intensities() {
        assert_eq!(
            (0..3).map(|c| class_intensity(c, 3)).collect::<Vec<_>>(),
            vec![0, 128, 255]
        );
        assert_eq!((0..2).map(|c| class_intensity(c, 2)).collect::<Vec<_>>(), vec![0, 255]);
    }

    #[test]
    fn png_round_trip_and_rgb_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        save_gray_png(&p, 3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let t = load_and_preprocess(&p, 2, 3).unwrap();
        assert_eq!(t.data()[1], 10.0 / 255.0);

        let rgb = dir.path().join("c.ppm");
        std::fs::write(&rgb, b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        let g = load_gray(&rgb).unwrap();
        assert!((g.pixels[0] - 0.299 * 255.0).abs() < 1e-9);
    }

    #[test]
    fn unreadable_file_names_path() {
        let err = load_gray(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }
}
