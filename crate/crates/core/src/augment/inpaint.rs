//! Fast-marching hole filling after Telea.
//!
//! Invalid pixels are filled in order of their arrival time `T` from the
//! hole boundary. Each one becomes a normalised weighted average of
//! first-order extrapolations `I(q) + ∇I(q)·(p − q)` from already known
//! pixels `q` within the radius, weighted by level-set direction, distance
//! and arrival-time proximity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::image::ImageGrid;
use crate::error::{Error, Result};

pub const DEFAULT_INPAINT_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    t: f64,
    seq: u64,
    idx: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // Min-heap on (t, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

const FAR: f64 = 1e6;

struct Marcher {
    w: usize,
    h: usize,
    flags: Vec<Flag>,
    t: Vec<f64>,
}

impl Marcher {
    fn flag(&self, x: isize, y: isize) -> Option<Flag> {
        if x < 0 || y < 0 || x >= self.w as isize || y >= self.h as isize {
            None
        } else {
            Some(self.flags[y as usize * self.w + x as usize])
        }
    }

    fn time(&self, x: isize, y: isize) -> f64 {
        self.t[y as usize * self.w + x as usize]
    }

    /// Eikonal update from the two neighbours `a` and `b`.
    fn solve(&self, a: (isize, isize), b: (isize, isize)) -> f64 {
        let known = |p: (isize, isize)| self.flag(p.0, p.1) == Some(Flag::Known);
        match (known(a), known(b)) {
            (true, true) => {
                let (ta, tb) = (self.time(a.0, a.1), self.time(b.0, b.1));
                let disc = 2.0 - (ta - tb) * (ta - tb);
                if disc >= 0.0 {
                    let r = disc.sqrt();
                    let s = (ta + tb - r) * 0.5;
                    if s >= ta && s >= tb {
                        return s;
                    }
                    let s = s + r;
                    if s >= ta && s >= tb {
                        return s;
                    }
                }
                1.0 + ta.min(tb)
            }
            (true, false) => 1.0 + self.time(a.0, a.1),
            (false, true) => 1.0 + self.time(b.0, b.1),
            (false, false) => FAR,
        }
    }

    fn arrival(&self, x: isize, y: isize) -> f64 {
        [
            self.solve((x, y - 1), (x - 1, y)),
            self.solve((x + 1, y), (x, y - 1)),
            self.solve((x - 1, y), (x, y + 1)),
            self.solve((x + 1, y), (x, y + 1)),
        ]
        .into_iter()
        .fold(FAR, f64::min)
    }

    fn not_inside(&self, x: isize, y: isize) -> bool {
        matches!(self.flag(x, y), Some(Flag::Known) | Some(Flag::Band))
    }

    /// Central difference of `f` where both neighbours are usable, otherwise
    /// one-sided, otherwise zero.
    fn diff(
        &self,
        x: isize,
        y: isize,
        dx: isize,
        dy: isize,
        f: impl Fn(isize, isize) -> f64,
    ) -> f64 {
        let fwd = self.not_inside(x + dx, y + dy);
        let bwd = self.not_inside(x - dx, y - dy);
        match (fwd, bwd) {
            (true, true) => (f(x + dx, y + dy) - f(x - dx, y - dy)) * 0.5,
            (true, false) => f(x + dx, y + dy) - f(x, y),
            (false, true) => f(x, y) - f(x - dx, y - dy),
            (false, false) => 0.0,
        }
    }
}

pub fn inpaint_telea(img: &ImageGrid, radius: f64) -> Result<ImageGrid> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if radius.is_nan() || radius < 1.0 {
        return Err(Error::Parameter(format!(
            "inpaint radius must be >= 1, got {radius}"
        )));
    }
    let holes = img.invalid_count();
    if holes == 0 {
        return Ok(img.clone());
    }
    if holes == w * h {
        return Err(Error::CannotInpaint("every pixel is masked".into()));
    }

    let mut out = img.clone();
    let mut m = Marcher {
        w,
        h,
        flags: vec![Flag::Known; w * h],
        t: vec![0.0; w * h],
    };
    for i in 0..w * h {
        if !img.mask()[i] {
            m.flags[i] = Flag::Inside;
            m.t[i] = FAR;
        }
    }

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    const NEIGHBOURS: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if m.flag(x, y) != Some(Flag::Known) {
                continue;
            }
            if NEIGHBOURS
                .iter()
                .any(|(dx, dy)| m.flag(x + dx, y + dy) == Some(Flag::Inside))
            {
                let idx = y as usize * w + x as usize;
                m.flags[idx] = Flag::Band;
                heap.push(Entry { t: 0.0, seq, idx });
                seq += 1;
            }
        }
    }

    let r = radius.ceil() as isize;
    let r2 = radius * radius;
    let mut acc = vec![0.0; ch];
    while let Some(Entry { idx, .. }) = heap.pop() {
        if m.flags[idx] == Flag::Known {
            continue;
        }
        m.flags[idx] = Flag::Known;
        let (px, py) = ((idx % w) as isize, (idx / w) as isize);
        for (dx, dy) in NEIGHBOURS {
            let (x, y) = (px + dx, py + dy);
            if m.flag(x, y) != Some(Flag::Inside) {
                continue;
            }
            let nidx = y as usize * w + x as usize;
            let tp = m.arrival(x, y);
            m.t[nidx] = tp;

            let gtx = m.diff(x, y, 1, 0, |a, b| m.time(a, b));
            let gty = m.diff(x, y, 0, 1, |a, b| m.time(a, b));
            let gnorm = (gtx * gtx + gty * gty).sqrt();

            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut wsum = 0.0;
            for qy in (y - r)..=(y + r) {
                for qx in (x - r)..=(x + r) {
                    if !m.not_inside(qx, qy) {
                        continue;
                    }
                    let (rx, ry) = ((x - qx) as f64, (y - qy) as f64);
                    let len2 = rx * rx + ry * ry;
                    if len2 > r2 || len2 == 0.0 {
                        continue;
                    }
                    let len = len2.sqrt();
                    let dir = if gnorm > 0.0 {
                        ((rx * gtx + ry * gty) / (len * gnorm)).abs().max(1e-6)
                    } else {
                        1e-6
                    };
                    let dst = 1.0 / len2;
                    let lev = 1.0 / (1.0 + (m.time(qx, qy) - tp).abs());
                    let weight = dir * dst * lev;
                    wsum += weight;
                    for (c, a) in acc.iter_mut().enumerate() {
                        let value = |a: isize, b: isize| out.get(a as usize, b as usize, c);
                        let gx = m.diff(qx, qy, 1, 0, value);
                        let gy = m.diff(qx, qy, 0, 1, value);
                        *a += weight * (out.get(qx as usize, qy as usize, c) + gx * rx + gy * ry);
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(x as usize, y as usize, c, a / wsum);
            }
            out.set_valid(x as usize, y as usize, true);
            m.flags[nidx] = Flag::Band;
            heap.push(Entry {
                t: tp,
                seq,
                idx: nidx,
            });
            seq += 1;
        }
    }
    Ok(out)
}
