//! Named parameter storage with deterministic initialization and a flat,
//! insertion-ordered serialization layout.
//!
//! Models declare parameters once, in a fixed order, with explicit shapes;
//! everything else (gradients, optimizer moments, checkpoints, gradient
//! checking) works over that declaration. Gradient stores are just
//! zero-initialized stores with identical structure.

use crate::error::{Error, Result};
use crate::nn::mat::Mat;
use crate::rng::DetRng;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Initialization scheme for one parameter array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Uniform on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Scaled fan-in: uniform on `±1/sqrt(rows)`, the default for dense
    /// weights where `rows` is the input dimension.
    FanIn,
}

/// Named, shaped, ordered f64 parameter arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Mat)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a parameter. Names are unique; shapes are fixed afterwards.
    /// Initialization draws from `rng` in declaration order, so a model's
    /// full initialization is a pure function of its seed.
    pub fn add(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut DetRng,
    ) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidParam(format!("duplicate parameter {name}")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParam(format!("empty shape {rows}x{cols} for {name}")));
        }
        let mat = match init {
            Init::Zeros => Mat::zeros(rows, cols),
            Init::Const(v) => Mat::from_fn(rows, cols, |_, _| v),
            Init::Uniform { lo, hi } => Mat::from_fn(rows, cols, |_, _| rng.uniform(lo, hi)),
            Init::FanIn => {
                let s = 1.0 / (rows as f64).sqrt();
                Mat::from_fn(rows, cols, |_, _| rng.uniform(-s, s))
            }
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), mat));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| Error::InvalidParam(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Mat> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.entries[i].1),
            None => Err(Error::InvalidParam(format!("unknown parameter {name}"))),
        }
    }

    /// Accumulates `grad` into the named entry (gradient accumulation).
    pub fn accum(&mut self, name: &str, grad: &Mat) -> Result<()> {
        let m = self.get_mut(name)?;
        if (m.rows(), m.cols()) != (grad.rows(), grad.cols()) {
            return Err(Error::ShapeMismatch(format!(
                "{name}: {}x{} += {}x{}",
                m.rows(),
                m.cols(),
                grad.rows(),
                grad.cols()
            )));
        }
        m.add_assign(grad);
        Ok(())
    }

    /// Adds every entry of `other` into this store (same structure).
    pub fn accum_all(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_structure(other)?;
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.add_assign(b);
        }
        Ok(())
    }

    /// Multiplies every scalar by `s`.
    pub fn scale_all(&mut self, s: f64) {
        for (_, m) in &mut self.entries {
            m.scale(s);
        }
    }

    /// Sets every scalar to zero, keeping structure.
    pub fn zero_all(&mut self) {
        for (_, m) in &mut self.entries {
            m.data_mut().fill(0.0);
        }
    }

    /// A store with identical names/shapes, all zeros (for gradients and
    /// optimizer moments).
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Mat::zeros(m.rows(), m.cols())))
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn check_same_structure(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Incompatible(format!(
                "stores have {} vs {} entries",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((na, ma), (nb, mb)) in self.entries.iter().zip(&other.entries) {
            if na != nb || (ma.rows(), ma.cols()) != (mb.rows(), mb.cols()) {
                return Err(Error::Incompatible(format!(
                    "entry mismatch: {na} {}x{} vs {nb} {}x{}",
                    ma.rows(),
                    ma.cols(),
                    mb.rows(),
                    mb.cols()
                )));
            }
        }
        Ok(())
    }

    /// Number of named entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across entries.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Entries in declaration (= serialization) order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub(crate) fn entries_mut(&mut self) -> impl Iterator<Item = (&str, &mut Mat)> {
        self.entries.iter_mut().map(|(n, m)| (n.as_str(), m))
    }

    /// All scalars concatenated in declaration order.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, m) in &self.entries {
            out.extend_from_slice(m.data());
        }
        out
    }

    /// Loads scalars from a flat declaration-order array.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::ShapeMismatch(format!(
                "flat length {} != parameter count {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        for (_, m) in &mut self.entries {
            let n = m.data().len();
            m.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Scalar at a flat declaration-order index (gradient checking).
    pub fn scalar_at(&self, i: usize) -> f64 {
        let (entry, off) = self.locate(i);
        self.entries[entry].1.data()[off]
    }

    pub fn set_scalar_at(&mut self, i: usize, v: f64) {
        let (entry, off) = self.locate(i);
        self.entries[entry].1.data_mut()[off] = v;
    }

    /// Name owning the scalar at flat index `i`.
    pub fn name_at(&self, i: usize) -> &str {
        let (entry, _) = self.locate(i);
        &self.entries[entry].0
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (idx, (_, m)) in self.entries.iter().enumerate() {
            if i < m.data().len() {
                return (idx, i);
            }
            i -= m.data().len();
        }
        panic!("flat index out of range");
    }
}
