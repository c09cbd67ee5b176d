use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Gaussian width in heatmap pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Peak `1 / sqrt(2πσ²)`.
    #[default]
    Density,
    /// Peak 1.
    UnitPeak,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height x width`.
    pub values: Vec<f64>,
    pub center: (f64, f64),
    pub sigma: f64,
    pub normalization: Normalization,
    /// The keypoint does not round to a cell of the grid.
    pub out_of_bounds: bool,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// First cell holding the maximum value, as `(x, y)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn peak_value(&self) -> f64 {
        match self.normalization {
            Normalization::Density => {
                1.0 / (2.0 * std::f64::consts::PI * self.sigma * self.sigma).sqrt()
            }
            Normalization::UnitPeak => 1.0,
        }
    }

    /// Value of the underlying continuous Gaussian at `(x, y)`.
    pub fn value_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center.0;
        let dy = y - self.center.1;
        self.peak_value() * (-(dx * dx + dy * dy) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

pub fn gaussian_heatmap(
    keypoint: (f64, f64),
    dims: (usize, usize),
    sigma: f64,
    normalization: Normalization,
) -> Result<Heatmap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("sigma must be > 0, got {sigma}")));
    }
    let (width, height) = dims;
    let (rx, ry) = (keypoint.0.round(), keypoint.1.round());
    let out_of_bounds = !(rx >= 0.0 && ry >= 0.0 && rx < width as f64 && ry < height as f64);
    let mut map = Heatmap {
        width,
        height,
        values: Vec::with_capacity(width * height),
        center: keypoint,
        sigma,
        normalization,
        out_of_bounds,
    };
    for y in 0..height {
        for x in 0..width {
            let v = map.value_at(x as f64, y as f64);
            map.values.push(v);
        }
    }
    Ok(map)
}
