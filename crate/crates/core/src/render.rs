//! Rasterisation of the fringe pattern and the augmentation chain.
//!
//! Axis convention: `+x` to the right, `+y` up, row 0 at the top. Pixel
//! centres are laid out symmetrically about the disk centre, so the
//! centre of column `c` is `(c + 0.5 - side/2) * pixel_size`.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elastic::{ForceList, ForceTriplet, ParticleSpec, StressField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSpec {
    /// Meters per pixel.
    pub pixel_size: f64,
}

impl Default for ImageSpec {
    fn default() -> Self {
        ImageSpec { pixel_size: 0.00019 }
    }
}

impl ImageSpec {
    /// Side of the tight square frame around a disk of `radius`.
    pub fn side(&self, radius: f64) -> usize {
        ((2.0 * radius / self.pixel_size).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::Config("pixel_size must be positive".into()));
        }
        Ok(())
    }
}

/// Row-major 8-bit grayscale image with its physical pixel size.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityImage {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub pixels: Vec<u8>,
}

impl IntensityImage {
    pub fn new(width: usize, height: usize, pixel_size: f64, pixels: Vec<u8>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(IntensityImage { width, height, pixel_size, pixels })
    }

    pub fn zeros(width: usize, height: usize, pixel_size: f64) -> Self {
        IntensityImage { width, height, pixel_size, pixels: vec![0; width * height] }
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn total(&self) -> u64 {
        self.pixels.iter().map(|&p| p as u64).sum()
    }

    /// PNG encoding (8-bit, single channel).
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::Image("pixel buffer does not match dimensions".into()))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes = self.encode_png()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Loads a PNG as 8-bit luma; PNG carries no reliable physical scale,
    /// so the pixel size is supplied by the caller.
    pub fn read_png(path: &Path, pixel_size: f64) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        IntensityImage::new(w as usize, h as usize, pixel_size, img.into_raw())
    }
}

/// Physical centre of pixel `(col, row)` in a `width × height` frame.
#[inline]
pub fn pixel_center(col: usize, row: usize, width: usize, height: usize, pixel_size: f64) -> (f64, f64) {
    let x = (col as f64 + 0.5 - 0.5 * width as f64) * pixel_size;
    let y = (0.5 * height as f64 - row as f64 - 0.5) * pixel_size;
    (x, y)
}

#[inline]
fn quantize(v: f64) -> u8 {
    // f64::round is half away from zero
    v.round().clamp(0.0, 255.0) as u8
}

/// Pixel centres that fall inside the disk, with their linear indices.
#[derive(Debug, Clone)]
pub struct DiskRaster {
    pub side: usize,
    pub pixel_size: f64,
    pub points: Vec<(usize, f64, f64)>,
}

impl DiskRaster {
    pub fn new(particle: &ParticleSpec, spec: &ImageSpec) -> Self {
        let side = spec.side(particle.radius);
        let r2 = particle.radius * particle.radius;
        let mut points = Vec::new();
        for row in 0..side {
            for col in 0..side {
                let (x, y) = pixel_center(col, row, side, side, spec.pixel_size);
                if x * x + y * y <= r2 {
                    points.push((row * side + col, x, y));
                }
            }
        }
        DiskRaster { side, pixel_size: spec.pixel_size, points }
    }

    /// Continuous intensities at the in-disk points, in `points` order.
    pub fn intensities(&self, field: &StressField) -> Vec<f64> {
        self.points.iter().map(|&(_, x, y)| field.intensity_at(x, y)).collect()
    }
}

/// Renders the 8-bit fringe pattern of `forces`; pixels outside the disk are 0.
pub fn render(forces: &ForceList, particle: &ParticleSpec, spec: &ImageSpec) -> IntensityImage {
    render_forces(forces.as_slice(), particle, spec)
}

/// Same as [`render`] for an unchecked slice of contacts.
pub fn render_forces(forces: &[ForceTriplet], particle: &ParticleSpec, spec: &ImageSpec) -> IntensityImage {
    let side = spec.side(particle.radius);
    let field = StressField::new(forces, particle);
    let r2 = particle.radius * particle.radius;
    let mut pixels = vec![0u8; side * side];
    pixels.par_chunks_mut(side).enumerate().for_each(|(row, line)| {
        for (col, px) in line.iter_mut().enumerate() {
            let (x, y) = pixel_center(col, row, side, side, spec.pixel_size);
            if x * x + y * y <= r2 {
                *px = quantize(field.intensity_at(x, y));
            }
        }
    });
    IntensityImage { width: side, height: side, pixel_size: spec.pixel_size, pixels }
}

/// Counterclockwise rotation about the image centre, nearest-neighbour,
/// inverse-mapped; samples from outside the frame are 0.
pub fn rotate_image(img: &IntensityImage, angle: f64) -> Result<IntensityImage> {
    if !img.is_square() {
        return Err(Error::Image(format!(
            "rotation needs a square image, got {}x{}",
            img.width, img.height
        )));
    }
    let n = img.width;
    let half = 0.5 * n as f64;
    let (s, c) = angle.sin_cos();
    let mut out = vec![0u8; n * n];
    for row in 0..n {
        let v = half - row as f64 - 0.5;
        for col in 0..n {
            let u = col as f64 + 0.5 - half;
            let us = c * u + s * v;
            let vs = -s * u + c * v;
            let sc = (us + half).floor();
            let sr = (half - vs).floor();
            if sc >= 0.0 && sr >= 0.0 && sc < n as f64 && sr < n as f64 {
                out[row * n + col] = img.get(sc as usize, sr as usize);
            }
        }
    }
    Ok(IntensityImage { width: n, height: n, pixel_size: img.pixel_size, pixels: out })
}

/// Nearest-neighbour resampling to `target × target`; the source index is
/// `floor(dst * src / target)` on each axis.
pub fn resize_nearest(img: &IntensityImage, target: usize) -> Result<IntensityImage> {
    if target == 0 {
        return Err(Error::Image("target side must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(target * target);
    for row in 0..target {
        let sr = row * img.height / target;
        for col in 0..target {
            let sc = col * img.width / target;
            out.push(img.get(sc, sr));
        }
    }
    let pixel_size = img.pixel_size * img.width as f64 / target as f64;
    Ok(IntensityImage { width: target, height: target, pixel_size, pixels: out })
}

/// Normalised 1-D Gaussian weights for offsets `0..=radius`, `radius = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let raw: Vec<f64> = (0..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = raw[0] + 2.0 * raw[1..].iter().sum::<f64>();
    raw.into_iter().map(|w| w / total).collect()
}

/// Mirror index with the edge sample repeated (`d c b a | a b c d`).
#[inline]
fn reflect(mut i: isize, n: isize) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian blur of a row-major `w × h` plane with reflect edges.
pub fn blur_plane(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = kernel.len() as isize - 1;
    let (wi, hi) = (w as isize, h as isize);

    let mut horizontal = vec![0.0f64; values.len()];
    for row in 0..h {
        let line = &values[row * w..(row + 1) * w];
        for col in 0..wi {
            let mut acc = kernel[0] * line[col as usize];
            for k in 1..=radius {
                acc += kernel[k as usize] * (line[reflect(col - k, wi)] + line[reflect(col + k, wi)]);
            }
            horizontal[row * w + col as usize] = acc;
        }
    }

    let mut out = vec![0.0f64; values.len()];
    for row in 0..hi {
        for col in 0..w {
            let at = |r: usize| horizontal[r * w + col];
            let mut acc = kernel[0] * at(row as usize);
            for k in 1..=radius {
                acc += kernel[k as usize] * (at(reflect(row - k, hi)) + at(reflect(row + k, hi)));
            }
            out[row as usize * w + col] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with reflect edges, accumulated in `f64`.
pub fn gaussian_blur(img: &IntensityImage, sigma: f64) -> Result<IntensityImage> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Image(format!("blur sigma must be positive, got {sigma}")));
    }
    let plane: Vec<f64> = img.pixels.iter().map(|&v| v as f64).collect();
    let pixels = blur_plane(&plane, img.width, img.height, sigma).into_iter().map(quantize).collect();
    Ok(IntensityImage { width: img.width, height: img.height, pixel_size: img.pixel_size, pixels })
}

/// Parameters of the rotate → resize → blur chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSpec {
    pub target_side: usize,
    pub blur_sigma: f64,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec { target_side: 128, blur_sigma: 1.0 }
    }
}

/// Rotate by `angle`, resize to the target side, then blur.
pub fn preprocess(img: &IntensityImage, angle: f64, spec: &PreprocessSpec) -> Result<IntensityImage> {
    let rotated = rotate_image(img, angle)?;
    let resized = resize_nearest(&rotated, spec.target_side)?;
    gaussian_blur(&resized, spec.blur_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pair(f: f64) -> ForceList {
        ForceList::new(vec![
            ForceTriplet::new(f, 0.0, 0.0).unwrap(),
            ForceTriplet::new(f, PI, 0.0).unwrap(),
        ])
        .unwrap()
    }

    fn ramp(n: usize) -> IntensityImage {
        let pixels = (0..n * n).map(|i| (i * 7 % 251) as u8).collect();
        IntensityImage::new(n, n, 1.0, pixels).unwrap()
    }

    #[test]
    fn frame_sides() {
        let spec = ImageSpec::default();
        assert_eq!(spec.side(0.008), 85);
        assert_eq!(spec.side(0.004), 43);
    }

    #[test]
    fn diametral_pair_centre_pixel() {
        let img = render(&pair(0.1), &ParticleSpec::default(), &ImageSpec::default());
        assert_eq!((img.width, img.height), (85, 85));
        assert_eq!(img.get(42, 42), 244);
        // corners lie outside the disk
        assert_eq!(img.get(0, 0), 0);
        assert_eq!(img.get(84, 84), 0);
    }

    #[test]
    fn background_stays_zero() {
        let particle = ParticleSpec::default();
        let spec = ImageSpec::default();
        let img = render(&pair(0.6), &particle, &spec);
        for row in 0..img.height {
            for col in 0..img.width {
                let (x, y) = pixel_center(col, row, img.width, img.height, spec.pixel_size);
                if x.hypot(y) > particle.radius {
                    assert_eq!(img.get(col, row), 0);
                }
            }
        }
    }

    #[test]
    fn half_turn_equivariance_on_pair() {
        let particle = ParticleSpec::default();
        let spec = ImageSpec::default();
        let list = ForceList::new(vec![
            ForceTriplet::new(0.3, 0.4, 0.1).unwrap(),
            ForceTriplet::new(0.3, 0.4 + PI + 0.2, -0.1).unwrap(),
        ])
        .unwrap();
        let a = render(&list.rotated(PI), &particle, &spec);
        let b = rotate_image(&render(&list, &particle, &spec), PI).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_identities() {
        let img = ramp(9);
        assert_eq!(rotate_image(&img, 0.0).unwrap(), img);
        let twice = rotate_image(&rotate_image(&img, PI).unwrap(), PI).unwrap();
        assert_eq!(twice, img);
        let quarter = rotate_image(&img, FRAC_PI_2).unwrap();
        for row in 0..9 {
            for col in 0..9 {
                // counterclockwise: the top row moves to the left column
                assert_eq!(quarter.get(row, 8 - col), img.get(col, row));
            }
        }
        let even = ramp(8);
        let q4 = (0..4).fold(even.clone(), |acc, _| rotate_image(&acc, FRAC_PI_2).unwrap());
        assert_eq!(q4, even);
        let wide = IntensityImage::zeros(4, 3, 1.0);
        assert!(rotate_image(&wide, 0.3).is_err());
    }

    #[test]
    fn resize_examples() {
        let img = ramp(7);
        assert_eq!(resize_nearest(&img, 7).unwrap(), img);
        let checker = IntensityImage::new(2, 2, 1.0, vec![0, 255, 255, 0]).unwrap();
        let big = resize_nearest(&checker, 4).unwrap();
        assert_eq!(
            big.pixels,
            vec![0, 0, 255, 255, 0, 0, 255, 255, 255, 255, 0, 0, 255, 255, 0, 0]
        );
        let raw = render(&pair(0.4), &ParticleSpec::default(), &ImageSpec::default());
        let up = resize_nearest(&raw, 128).unwrap();
        assert_eq!((up.width, up.height), (128, 128));
        let present: std::collections::HashSet<u8> = raw.pixels.iter().copied().collect();
        assert!(up.pixels.iter().all(|p| present.contains(p)));
        assert!(resize_nearest(&raw, 0).is_err());
    }

    #[test]
    fn blur_examples() {
        let flat = IntensityImage::new(16, 16, 1.0, vec![93; 256]).unwrap();
        assert_eq!(gaussian_blur(&flat, 1.0).unwrap(), flat);
        assert_eq!(gaussian_blur(&IntensityImage::zeros(5, 5, 1.0), 1.0).unwrap().total(), 0);

        let mut impulse = IntensityImage::zeros(21, 21, 1.0);
        impulse.pixels[10 * 21 + 10] = 255;
        let blurred = gaussian_blur(&impulse, 1.0).unwrap();
        // independent centre weight: 1 / Σ_{|j|≤3} exp(-j²/2)
        let w0 = 1.0 / (1.0 + 2.0 * ((-0.5f64).exp() + (-2.0f64).exp() + (-4.5f64).exp()));
        assert_eq!(blurred.get(10, 10), (255.0 * w0 * w0).round() as u8);
        assert_eq!(blurred.get(10, 10), 41);
        let diff = blurred.total() as i64 - impulse.total() as i64;
        assert!(diff.abs() as f64 <= 0.5 * 21.0 * 21.0);
        assert!(gaussian_blur(&impulse, 0.0).is_err());
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(-7, 2), 1);
    }

    #[test]
    fn preprocess_shape_and_identity_path() {
        let raw = render(&pair(0.3), &ParticleSpec::default(), &ImageSpec::default());
        let spec = PreprocessSpec::default();
        let out = preprocess(&raw, 0.0, &spec).unwrap();
        assert_eq!((out.width, out.height), (128, 128));
        let manual = gaussian_blur(&resize_nearest(&raw, 128).unwrap(), 1.0).unwrap();
        assert_eq!(out, manual);
        assert_eq!(preprocess(&raw, 1.3, &spec).unwrap(), preprocess(&raw, 1.3, &spec).unwrap());
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = render(&pair(0.2), &ParticleSpec::with_radius(0.004).unwrap(), &ImageSpec::default());
        img.write_png(&path).unwrap();
        assert_eq!(IntensityImage::read_png(&path, 0.00019).unwrap(), img);
    }
}
