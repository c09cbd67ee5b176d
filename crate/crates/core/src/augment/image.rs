use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Row-major raster with real-valued channels (0..=255 for 8-bit sources)
/// and a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        ImageGrid {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
            valid: vec![true; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::new(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    img.set(x, y, c, f(x, y, c));
                }
            }
        }
        img
    }

    pub fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "pixel buffer has {} values, expected {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            channels,
            data,
            valid: vec![true; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set_valid(&mut self, x: usize, y: usize, valid: bool) {
        self.valid[y * self.width + x] = valid;
    }

    pub fn mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn invalid_count(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }

    /// Mean of each channel over valid pixels only.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.channels];
        let mut count = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_valid(x, y) {
                    count += 1;
                    for (c, s) in sums.iter_mut().enumerate() {
                        *s += self.get(x, y, c);
                    }
                }
            }
        }
        if count > 0 {
            sums.iter_mut().for_each(|s| *s /= count as f64);
        }
        sums
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// integers). `None` outside the grid or when a contributing neighbour is
    /// invalid.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) -> bool {
        const SNAP: f64 = 1e-6;
        let snap = |t: f64| {
            let r = t.round();
            if (t - r).abs() < SNAP {
                r
            } else {
                t
            }
        };
        let (u, v) = (snap(u), snap(v));
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64)
        {
            return false;
        }
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        if taps
            .iter()
            .any(|&(x, y, w)| w > 0.0 && !self.is_valid(x, y))
        {
            return false;
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o = taps
                .iter()
                .filter(|t| t.2 > 0.0)
                .map(|&(x, y, w)| w * self.get(x, y, c))
                .sum();
        }
        true
    }

    pub fn from_dynamic(img: &DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                let data = g.as_raw().iter().map(|&v| v as f64).collect();
                ImageGrid::from_raw(w as usize, h as usize, 1, data).expect("buffer size matches")
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                let data = rgb.as_raw().iter().map(|&v| v as f64).collect();
                ImageGrid::from_raw(w as usize, h as usize, 3, data).expect("buffer size matches")
            }
        }
    }

    /// Rounds and clamps to 8 bits. Invalid pixels are written as 0.
    pub fn to_dynamic(&self) -> Result<DynamicImage> {
        let bytes: Vec<u8> = (0..self.width * self.height)
            .flat_map(|p| {
                let valid = self.valid[p];
                self.data[p * self.channels..(p + 1) * self.channels]
                    .iter()
                    .map(move |&v| {
                        if valid {
                            v.round().clamp(0.0, 255.0) as u8
                        } else {
                            0
                        }
                    })
            })
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => GrayImage::from_raw(w, h, bytes).map(DynamicImage::ImageLuma8),
            3 => RgbImage::from_raw(w, h, bytes).map(DynamicImage::ImageRgb8),
            c => return Err(Error::Image(format!("cannot encode {c}-channel image"))),
        }
        .ok_or_else(|| Error::Image("pixel buffer does not match dimensions".into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img =
            image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_dynamic()?
            .save(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Largest absolute per-value difference against `other` after 8-bit
    /// rounding, over pixels valid in both.
    pub fn max_abs_diff_u8(&self, other: &ImageGrid) -> f64 {
        assert_eq!(
            (self.width, self.height, self.channels),
            (other.width, other.height, other.channels)
        );
        let q = |v: f64| v.round().clamp(0.0, 255.0);
        let mut worst: f64 = 0.0;
        for p in 0..self.width * self.height {
            if !(self.valid[p] && other.valid[p]) {
                continue;
            }
            for c in 0..self.channels {
                let i = p * self.channels + c;
                worst = worst.max((q(self.data[i]) - q(other.data[i])).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoint() {
        let img = ImageGrid::from_fn(2, 1, 1, |x, _, _| x as f64 * 10.0);
        let mut out = [0.0];
        assert!(img.sample_bilinear(0.5, 0.0, &mut out));
        assert_eq!(out[0], 5.0);
        assert!(!img.sample_bilinear(1.5, 0.0, &mut out));
        assert!(!img.sample_bilinear(-0.1, 0.0, &mut out));
    }

    #[test]
    fn invalid_neighbour_blocks_sample() {
        let mut img = ImageGrid::filled(3, 3, 1, 1.0);
        img.set_valid(1, 1, false);
        let mut out = [0.0];
        assert!(!img.sample_bilinear(0.5, 0.5, &mut out));
        assert!(img.sample_bilinear(0.0, 0.0, &mut out));
    }

    #[test]
    fn means_skip_masked_pixels() {
        let mut img = ImageGrid::from_fn(2, 1, 1, |x, _, _| if x == 0 { 4.0 } else { 100.0 });
        img.set_valid(1, 0, false);
        assert_eq!(img.channel_means(), vec![4.0]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = ImageGrid::from_fn(4, 3, 3, |x, y, c| (x * 40 + y * 10 + c) as f64);
        img.save(&path).unwrap();
        let back = ImageGrid::load(&path).unwrap();
        assert_eq!(back, img);
    }
}
