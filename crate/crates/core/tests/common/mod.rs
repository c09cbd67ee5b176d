#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use posedpp::{BBox, KernelMatrix, Keypoint, PoseInstance};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `G Gᵀ` for a Gaussian `n x d` factor; rank `min(n, d)`.
pub fn random_psd(n: usize, d: usize, rng: &mut ChaCha8Rng) -> KernelMatrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let g = DMatrix::from_fn(n, d, |_, _| normal.sample(rng));
    let k = &g * g.transpose();
    KernelMatrix::from_matrix((&k + k.transpose()) * 0.5).unwrap()
}

pub fn random_diagonal(n: usize, rng: &mut ChaCha8Rng) -> KernelMatrix {
    let diag: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..10.0)).collect();
    KernelMatrix::from_diagonal(&diag)
}

/// Naive `log det` by LU, the oracle for incremental implementations.
pub fn naive_log_det(k: &KernelMatrix, s: &[usize]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    k.submatrix(s).determinant().ln()
}

pub fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Pose with keypoints uniform in a 100 x 100 box, all visible.
pub fn random_pose(id: &str, class: &str, joints: usize, rng: &mut ChaCha8Rng) -> PoseInstance {
    let kps = (0..joints)
        .map(|_| {
            Keypoint::new(
                rng.random_range(0.0..100.0),
                rng.random_range(0.0..100.0),
                1,
            )
        })
        .collect();
    PoseInstance::new(id, class, kps, BBox::new(0.0, 0.0, 100.0, 100.0))
}

/// Poses drawn around `blobs` random template poses with isotropic noise of
/// `spread` pixels in a 100 x 100 box. Returns the poses and blob labels.
pub fn blob_poses(
    n: usize,
    blobs: usize,
    spread: f64,
    joints: usize,
    class: &str,
    rng: &mut ChaCha8Rng,
) -> (Vec<PoseInstance>, Vec<usize>) {
    let centers: Vec<Vec<(f64, f64)>> = (0..blobs)
        .map(|_| {
            (0..joints)
                .map(|_| (rng.random_range(10.0..90.0), rng.random_range(10.0..90.0)))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, spread).unwrap();
    let mut poses = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let b = rng.random_range(0..blobs);
        let kps = centers[b]
            .iter()
            .map(|&(x, y)| {
                let px = (x + noise.sample(rng)).clamp(0.0, 100.0);
                let py = (y + noise.sample(rng)).clamp(0.0, 100.0);
                Keypoint::new(px, py, 1)
            })
            .collect();
        poses.push(PoseInstance::new(
            format!("{class}-{i}"),
            class,
            kps,
            BBox::new(0.0, 0.0, 100.0, 100.0),
        ));
        labels.push(b);
    }
    (poses, labels)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}
