//! Test oracles and random instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rcpca::dataset::{build_blockset, Block, BlockSet, Scaling};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Centered blocks with uniform(-1, 1) entries.
pub fn random_blockset(rng: &mut ChaCha8Rng, n: usize, widths: &[usize]) -> BlockSet {
    let blocks = widths
        .iter()
        .enumerate()
        .map(|(b, &p)| {
            let raw = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
            Block::from_raw(format!("b{b}"), raw, None, Scaling::None).unwrap()
        })
        .collect();
    build_blockset(blocks).unwrap()
}

/// Blocks sharing one latent variable, so components are strongly related.
pub fn correlated_blockset(rng: &mut ChaCha8Rng, n: usize, widths: &[usize], noise: f64) -> BlockSet {
    let latent: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let blocks = widths
        .iter()
        .enumerate()
        .map(|(b, &p)| {
            let loadings: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let raw = DMatrix::from_fn(n, p, |i, j| {
                latent[i] * loadings[j] + noise * rng.random_range(-1.0..1.0)
            });
            Block::from_raw(format!("b{b}"), raw, None, Scaling::None).unwrap()
        })
        .collect();
    build_blockset(blocks).unwrap()
}

/// Cyclic Jacobi eigensolver for symmetric matrices. Returns eigenvalues in
/// decreasing order with matching eigenvector columns. Independent of the
/// library's eigen routines.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let scale: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum::<f64>() + off;
        if off <= 1e-32 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| v.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// `|a'b| / (|a| |b|)`.
pub fn abs_cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).abs()
}

/// `|A y - (y'Ay / y'y) y| / (y'Ay / y'y)`.
pub fn eigen_residual(a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let ay = a * y;
    let lambda = y.dot(&ay) / y.dot(y);
    (ay - y * lambda).norm() / (lambda * y.norm())
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..1.0));
        let norm = v.norm();
        if norm > 1e-3 {
            return v / norm;
        }
    }
}

#[test]
fn jacobi_matches_known_spectrum() {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
    let (values, vectors) = jacobi_eigen(&a);
    assert!((values[0] - 5.0).abs() < 1e-12);
    assert!((values[1] - 3.0).abs() < 1e-12);
    assert!((values[2] - 1.0).abs() < 1e-12);
    let top = vectors.column(1).into_owned();
    let r = 0.5f64.sqrt();
    assert!((top[0].abs() - r).abs() < 1e-12 && (top[1].abs() - r).abs() < 1e-12);
}
