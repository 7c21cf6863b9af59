//! Black-box classifier access.
//!
//! A [`ClassifierHandle`] wraps either the in-process [`BuiltinNet`] or an
//! external model server speaking the line-delimited JSON protocol in
//! [`protocol`]. Every prediction goes through the handle so that query
//! budgets are accounted for in one place.

mod builtin;
pub mod protocol;
mod server;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

pub use builtin::{load_manifest, save_manifest, softmax, Activation, BuiltinNet, DenseLayer};
pub use server::ServerOptions;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use server::ServerConnection;

pub const DEFAULT_BATCH_CAP: usize = 256;
/// Server rows whose sum is this close to 1 are re-normalized; others fail.
pub const SERVER_SUM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Builtin,
    Subprocess,
}

enum Backend {
    Builtin(BuiltinNet),
    Server(ServerConnection),
}

/// Row-major `[rows, classes]` probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Probs {
    classes: usize,
    data: Vec<f64>,
}

impl Probs {
    pub fn new(classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || !data.len().is_multiple_of(classes) {
            return Err(Error::DimensionMismatch {
                expected: classes,
                found: data.len(),
            });
        }
        Ok(Probs { classes, data })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.classes)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.iter_rows().map(argmax).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f64(vec![self.rows(), self.classes], &self.data).expect("consistent shape")
    }

    fn extend(&mut self, other: Probs) {
        self.data.extend(other.data);
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Handle to a model under test.
pub struct ClassifierHandle {
    backend: Backend,
    class_count: usize,
    input_shape: [usize; 3],
    supports_gradient: bool,
    batch_cap: usize,
    queries: AtomicU64,
    gradient_queries: AtomicU64,
}

impl std::fmt::Debug for ClassifierHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassifierHandle")
            .field("kind", &self.kind())
            .field("class_count", &self.class_count)
            .field("input_shape", &self.input_shape)
            .field("supports_gradient", &self.supports_gradient)
            .field("queries", &self.query_count())
            .finish()
    }
}

impl ClassifierHandle {
    pub fn builtin(net: BuiltinNet) -> Self {
        ClassifierHandle {
            class_count: net.class_count(),
            input_shape: net.input_shape(),
            supports_gradient: true,
            backend: Backend::Builtin(net),
            batch_cap: DEFAULT_BATCH_CAP,
            queries: AtomicU64::new(0),
            gradient_queries: AtomicU64::new(0),
        }
    }

    /// Spawns `cmd` through the shell and completes the handshake.
    pub fn spawn_server(cmd: &str) -> Result<Self> {
        Self::spawn_server_with(cmd, ServerOptions::default())
    }

    pub fn spawn_server_with(cmd: &str, opts: ServerOptions) -> Result<Self> {
        let (conn, info) = ServerConnection::spawn(cmd, opts)?;
        Ok(ClassifierHandle {
            class_count: info.classes,
            input_shape: info.input_shape,
            supports_gradient: info.gradient,
            backend: Backend::Server(conn),
            batch_cap: DEFAULT_BATCH_CAP,
            queries: AtomicU64::new(0),
            gradient_queries: AtomicU64::new(0),
        })
    }

    pub fn with_batch_cap(mut self, cap: usize) -> Self {
        self.batch_cap = cap.max(1);
        self
    }

    pub fn kind(&self) -> BackendKind {
        match self.backend {
            Backend::Builtin(_) => BackendKind::Builtin,
            Backend::Server(_) => BackendKind::Subprocess,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn supports_gradient(&self) -> bool {
        self.supports_gradient
    }

    /// Total rows submitted for prediction so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn gradient_query_count(&self) -> u64 {
        self.gradient_queries.load(Ordering::Relaxed)
    }

    pub fn builtin_net(&self) -> Option<&BuiltinNet> {
        match &self.backend {
            Backend::Builtin(net) => Some(net),
            Backend::Server(_) => None,
        }
    }

    /// Class probabilities for a `[b, c, h, w]` batch.
    pub fn predict_probs(&self, batch: &Tensor) -> Result<Probs> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::invalid(format!(
                "batch shape {:?} does not match model input {:?}",
                s, self.input_shape
            )));
        }
        self.predict_flat(batch.data(), s[0])
    }

    /// Same as [`predict_probs`](Self::predict_probs) on `rows` images laid
    /// out back to back in `data`.
    pub fn predict_flat(&self, data: &[f32], rows: usize) -> Result<Probs> {
        let width = self.input_len();
        if data.len() != rows * width {
            return Err(Error::DimensionMismatch {
                expected: rows * width,
                found: data.len(),
            });
        }
        let mut out = Probs {
            classes: self.class_count,
            data: Vec::with_capacity(rows * self.class_count),
        };
        for chunk in data.chunks(self.batch_cap * width) {
            let b = chunk.len() / width;
            self.queries.fetch_add(b as u64, Ordering::Relaxed);
            let part = match &self.backend {
                Backend::Builtin(net) => net.predict_batch(chunk, b),
                Backend::Server(conn) => {
                    let raw = conn.predict(chunk, b, self.input_shape)?;
                    check_server_rows(raw, self.class_count)?
                }
            };
            out.extend(part);
        }
        Ok(out)
    }

    pub fn predict_label(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.predict_probs(batch)?.labels())
    }

    /// Gradient of the prediction loss with respect to the pixels of a
    /// single image `x` with true class `y`.
    pub fn loss_gradient(&self, x: &[f32], y: usize) -> Result<Vec<f32>> {
        if !self.supports_gradient {
            return Err(Error::GradientUnsupported);
        }
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                found: x.len(),
            });
        }
        if y >= self.class_count {
            return Err(Error::invalid(format!(
                "label {y} out of range for {} classes",
                self.class_count
            )));
        }
        self.gradient_queries.fetch_add(1, Ordering::Relaxed);
        match &self.backend {
            Backend::Builtin(net) => {
                let xf: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
                let (_, g) = net.loss_and_gradient(&xf, y);
                Ok(g.into_iter().map(|v| v as f32).collect())
            }
            Backend::Server(conn) => conn.gradient(x, y, self.input_shape),
        }
    }

    /// Request timeout for server-backed handles; no-op for builtin nets.
    pub fn set_timeout(&self, timeout: Duration) {
        if let Backend::Server(conn) = &self.backend {
            conn.set_timeout(timeout);
        }
    }
}

fn check_server_rows(rows: Vec<Vec<f64>>, classes: usize) -> Result<Probs> {
    let mut data = Vec::with_capacity(rows.len() * classes);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != classes {
            return Err(Error::Server(format!(
                "row {i} has {} entries, expected {classes}",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > SERVER_SUM_TOLERANCE {
            return Err(Error::NotProbability { row: i, sum });
        }
        data.extend(row.iter().map(|v| v / sum));
    }
    Probs::new(classes, data)
}
