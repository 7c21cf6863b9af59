#![allow(clippy::needless_range_loop)]

//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use std::f64::consts::PI;

use hda_core::classifier::{Activation, BuiltinNet, ClassifierHandle, DenseLayer};
use hda_core::synthetic::{generate, train_mlp, SyntheticData, SyntheticSpec, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Desk {
    pub data: SyntheticData,
    pub h: ClassifierHandle,
}

/// Default synthetic dataset plus the MLP trained on it.
pub fn desk() -> Desk {
    let data = generate(&SyntheticSpec::default()).expect("synthetic data");
    let net = train_mlp(&data.dataset, &TrainConfig::default()).expect("training");
    Desk {
        data,
        h: ClassifierHandle::builtin(net),
    }
}

/// Two-class net on a `1×1×width` input with logits `[0, w·x + b]`.
pub fn linear_net(w: &[f64], b: f64) -> ClassifierHandle {
    let width = w.len();
    let mut weight = vec![0.0; width];
    weight.extend_from_slice(w);
    ClassifierHandle::builtin(
        BuiltinNet::new(
            [1, 1, width],
            vec![DenseLayer::new(width, 2, weight, vec![0.0, b], Activation::Identity).unwrap()],
        )
        .unwrap(),
    )
}

/// `J = p1 − p0` for seed label 0 of [`linear_net`], evaluated in closed form.
pub fn linear_loss(z: f64) -> f64 {
    (z / 2.0).tanh()
}

pub fn random_net(layers: &[usize], side: usize, seed: u64) -> BuiltinNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (i, pair) in layers.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        let weight = (0..a * b).map(|_| rng.random_range(-1.0..1.0) / (a as f64).sqrt()).collect();
        let bias = (0..b).map(|_| rng.random_range(-0.1..0.1)).collect();
        let act = if i + 2 == layers.len() {
            Activation::Identity
        } else {
            Activation::Relu
        };
        out.push(DenseLayer::new(a, b, weight, bias, act).unwrap());
    }
    BuiltinNet::new([1, side, side], out).unwrap()
}

/// Mixture of diagonal Gaussians summed term by term with the textbook pdf.
pub fn brute_kde(centers: &[f64], bandwidths: &[f64], dim: usize, z: &[f64]) -> f64 {
    let n = centers.len() / dim;
    let mut total = 0.0;
    for i in 0..n {
        let mut p = 1.0;
        for j in 0..dim {
            let h = bandwidths[i * dim + j];
            let u = (z[j] - centers[i * dim + j]) / h;
            p *= (-0.5 * u * u).exp() / (h * (2.0 * PI).sqrt());
        }
        total += p;
    }
    total / n as f64
}

/// Eigenvalues (descending) and row eigenvectors of a symmetric matrix by
/// cyclic Jacobi rotations.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y][y].total_cmp(&a[x][x]));
    let values = order.iter().map(|&k| a[k][k]).collect();
    let vectors = order.iter().map(|&k| (0..n).map(|i| v[i][k]).collect()).collect();
    (values, vectors)
}

/// Population covariance of `[n, dim]` rows.
pub fn covariance(data: &[f64], dim: usize) -> Vec<Vec<f64>> {
    let n = data.len() / dim;
    let mean: Vec<f64> = (0..dim).map(|j| data.iter().skip(j).step_by(dim).sum::<f64>() / n as f64).collect();
    let mut c = vec![vec![0.0; dim]; dim];
    for row in data.chunks_exact(dim) {
        for a in 0..dim {
            for b in 0..dim {
                c[a][b] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    c.iter_mut().flatten().for_each(|v| *v /= n as f64);
    c
}

/// Central finite-difference gradient of `J` for a builtin net.
pub fn fd_gradient(net: &BuiltinNet, x: &[f64], y: usize, eps: f64) -> Vec<f64> {
    let loss = |v: &[f64]| {
        let p = net.probs(v);
        let other = p.iter().enumerate().filter(|(i, _)| *i != y).map(|(_, &q)| q).fold(f64::MIN, f64::max);
        other - p[y]
    };
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += eps;
            b[i] -= eps;
            (loss(&a) - loss(&b)) / (2.0 * eps)
        })
        .collect()
}

pub fn pixels_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| f64::from(v)).collect()
}
