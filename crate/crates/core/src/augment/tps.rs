//! Thin-plate spline fitting and backward image warping.

use nalgebra::{DMatrix, DVector};

use super::image::ImageGrid;
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// `U(r) = r² log r²` with `U(0) = 0`, written in terms of `r²`.
#[inline]
pub fn radial_basis(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

#[inline]
fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// 2-D thin-plate spline `f(p) = a0 + ax·x + ay·y + Σ wᵢ U(|p − srcᵢ|)`,
/// one such map per output coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinPlateTransform {
    pub control_src: Vec<Point>,
    pub control_dst: Vec<Point>,
    /// `[a0, ax, ay]` for the output x (index 0) and y (index 1).
    pub affine: [[f64; 3]; 2],
    /// Bending weight of every control point, for output x and y.
    pub bending_weights: Vec<[f64; 2]>,
    pub regularization: f64,
}

impl ThinPlateTransform {
    pub fn identity() -> Self {
        ThinPlateTransform {
            control_src: Vec::new(),
            control_dst: Vec::new(),
            affine: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            bending_weights: Vec::new(),
            regularization: 0.0,
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            let a = self.affine[d];
            *o = a[0] + a[1] * p[0] + a[2] * p[1];
        }
        for (src, w) in self.control_src.iter().zip(&self.bending_weights) {
            let u = radial_basis(dist2(p, *src));
            out[0] += w[0] * u;
            out[1] += w[1] * u;
        }
        out
    }

    /// Residuals of `Σw`, `Σw·x`, `Σw·y` for both output dimensions.
    pub fn side_condition_residuals(&self) -> [[f64; 3]; 2] {
        let mut r = [[0.0; 3]; 2];
        for (src, w) in self.control_src.iter().zip(&self.bending_weights) {
            for d in 0..2 {
                r[d][0] += w[d];
                r[d][1] += w[d] * src[0];
                r[d][2] += w[d] * src[1];
            }
        }
        r
    }

    pub fn max_bending_weight(&self) -> f64 {
        self.bending_weights
            .iter()
            .flat_map(|w| w.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }
}

/// Fits the spline mapping each `src[i]` to `dst[i]`; `lambda` adds
/// `λI` to the radial block (0 interpolates exactly).
pub fn tps_fit(src: &[Point], dst: &[Point], lambda: f64) -> Result<ThinPlateTransform> {
    let n = src.len();
    if n != dst.len() {
        return Err(Error::Shape(format!(
            "{n} source points but {} destination points",
            dst.len()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!(
            "regularization must be >= 0, got {lambda}"
        )));
    }
    if n < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 control points, got {n}"
        )));
    }
    if src
        .iter()
        .chain(dst)
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err(Error::Numeric("non-finite control point".into()));
    }

    // Work relative to the centroid with unit spread so the collinearity
    // test is scale free.
    let cx = src.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let cy = src.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in src {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let spread = (sxx + syy).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if dist2(src[i], src[j]) <= 1e-18 * spread {
                return Err(Error::Degenerate(format!(
                    "control points {i} and {j} coincide at ({}, {})",
                    src[i][0], src[i][1]
                )));
            }
        }
    }
    if (sxx * syy - sxy * sxy) <= 1e-12 * spread * spread {
        return Err(Error::Degenerate("control points are collinear".into()));
    }

    let size = n + 3;
    let mut system = DMatrix::<f64>::zeros(size, size);
    for i in 0..n {
        for j in 0..n {
            system[(i, j)] = radial_basis(dist2(src[i], src[j]));
        }
        system[(i, i)] += lambda;
        let row = [1.0, src[i][0], src[i][1]];
        for (c, &v) in row.iter().enumerate() {
            system[(i, n + c)] = v;
            system[(n + c, i)] = v;
        }
    }
    let mut rhs = DMatrix::<f64>::zeros(size, 2);
    for i in 0..n {
        rhs[(i, 0)] = dst[i][0];
        rhs[(i, 1)] = dst[i][1];
    }

    let lu = system.clone().lu();
    let mut sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("thin-plate system is singular".into()))?;
    // One step of iterative refinement tightens interpolation on large or
    // poorly scaled control sets.
    let residual = &rhs - &system * &sol;
    if let Some(correction) = lu.solve(&residual) {
        sol += correction;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("thin-plate system is singular".into()));
    }

    let bending_weights = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
    let col = |d: usize| -> DVector<f64> { sol.column(d).rows(n, 3).into_owned() };
    let (ax, ay) = (col(0), col(1));
    Ok(ThinPlateTransform {
        control_src: src.to_vec(),
        control_dst: dst.to_vec(),
        affine: [[ax[0], ax[1], ax[2]], [ay[0], ay[1], ay[2]]],
        bending_weights,
        regularization: lambda,
    })
}

/// Backward warp: output pixel `p` takes the input value at `map.apply(p)`.
/// Pass the spline fitted from output control points to input control
/// points. Pixels whose source falls outside the input are marked invalid.
pub fn warp_image(img: &ImageGrid, map: &ThinPlateTransform) -> ImageGrid {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = ImageGrid::new(w, h, ch);
    let mut buf = vec![0.0; ch];
    for y in 0..h {
        for x in 0..w {
            let [u, v] = map.apply([x as f64, y as f64]);
            if img.sample_bilinear(u, v, &mut buf) {
                for (c, &val) in buf.iter().enumerate() {
                    out.set(x, y, c, val);
                }
            } else {
                out.set_valid(x, y, false);
            }
        }
    }
    out
}
