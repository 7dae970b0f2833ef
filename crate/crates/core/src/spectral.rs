//! Multidimensional graph Fourier transform over a temporal × spatial
//! product graph.
//!
//! The product-graph eigenbasis factorizes into the eigenbases of the two
//! factor graphs, so a channel `F` (temporal × spatial) transforms as
//! `F̂ = U_Tᵀ · F · U_S`. Everything is real: Laplacians are symmetric, so
//! complex conjugation is the identity.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::eigen::{eigendecompose, Spectrum};
use crate::error::{GftnnError, Result};
use crate::graph::{laplacian, Graph};
use crate::linalg::Matrix;

/// Eigenbases of the temporal and spatial factor graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductBasis {
    pub temporal: Spectrum,
    pub spatial: Spectrum,
}

impl ProductBasis {
    pub fn from_graphs(temporal: &Graph, spatial: &Graph) -> Result<ProductBasis> {
        Ok(ProductBasis {
            temporal: eigendecompose(&laplacian(temporal))?,
            spatial: eigendecompose(&laplacian(spatial))?,
        })
    }

    pub fn n_temporal(&self) -> usize {
        self.temporal.len()
    }

    pub fn n_spatial(&self) -> usize {
        self.spatial.len()
    }
}

/// Graph signal with `K` feature channels on an `N1 × N2` product graph.
///
/// Stored row-major in `(k, i1, i2)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    k: usize,
    n1: usize,
    n2: usize,
    values: Vec<f64>,
}

impl FeatureTensor {
    pub fn new(k: usize, n1: usize, n2: usize, values: Vec<f64>) -> Result<FeatureTensor> {
        if values.len() != k * n1 * n2 {
            return Err(GftnnError::Dimension(format!(
                "{} values for a {k}x{n1}x{n2} tensor",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GftnnError::Data(format!("non-finite tensor entry at {i}")));
        }
        Ok(FeatureTensor { k, n1, n2, values })
    }

    pub fn zeros(k: usize, n1: usize, n2: usize) -> FeatureTensor {
        FeatureTensor {
            k,
            n1,
            n2,
            values: vec![0.0; k * n1 * n2],
        }
    }

    pub fn from_channels(channels: &[Matrix]) -> Result<FeatureTensor> {
        let first = channels
            .first()
            .ok_or_else(|| GftnnError::Dimension("no channels".into()))?;
        let (n1, n2) = (first.rows(), first.cols());
        let mut values = Vec::with_capacity(channels.len() * n1 * n2);
        for c in channels {
            if (c.rows(), c.cols()) != (n1, n2) {
                return Err(GftnnError::Dimension(format!(
                    "channel {}x{} differs from {n1}x{n2}",
                    c.rows(),
                    c.cols()
                )));
            }
            values.extend_from_slice(c.as_slice());
        }
        FeatureTensor::new(channels.len(), n1, n2, values)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.k, self.n1, self.n2)
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, i1: usize, i2: usize) -> f64 {
        self.values[(k * self.n1 + i1) * self.n2 + i2]
    }

    pub fn set(&mut self, k: usize, i1: usize, i2: usize, value: f64) {
        self.values[(k * self.n1 + i1) * self.n2 + i2] = value;
    }

    pub fn channel(&self, k: usize) -> Matrix {
        let len = self.n1 * self.n2;
        Matrix::from_row_major(self.n1, self.n2, self.values[k * len..(k + 1) * len].to_vec())
    }

    /// Keeps only the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<FeatureTensor> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.k) {
            return Err(GftnnError::IndexOutOfRange {
                index: bad,
                len: self.k,
            });
        }
        let mats: Vec<Matrix> = channels.iter().map(|&c| self.channel(c)).collect();
        FeatureTensor::from_channels(&mats)
    }

    pub fn channel_norm(&self, k: usize) -> f64 {
        let len = self.n1 * self.n2;
        self.values[k * len..(k + 1) * len]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &FeatureTensor) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(f: &FeatureTensor, basis: &ProductBasis) -> Result<()> {
    if f.n1 != basis.n_temporal() || f.n2 != basis.n_spatial() {
        return Err(GftnnError::Dimension(format!(
            "tensor is {}x{} but basis is {}x{}",
            f.n1,
            f.n2,
            basis.n_temporal(),
            basis.n_spatial()
        )));
    }
    Ok(())
}

fn check_p(p: usize, n1: usize) -> Result<()> {
    if p == 0 || p > n1 {
        return Err(GftnnError::InvalidSize(format!(
            "p = {p} outside [1, {n1}]"
        )));
    }
    Ok(())
}

/// Two-dimensional GFT of a single-channel signal.
pub fn gft_2d(f: &FeatureTensor, basis: &ProductBasis) -> Result<FeatureTensor> {
    if f.k != 1 {
        return Err(GftnnError::Dimension(format!(
            "gft_2d expects one channel, got {}",
            f.k
        )));
    }
    gft_extended(f, basis)
}

/// Channel-wise GFT of a `K`-feature signal.
pub fn gft_extended(f: &FeatureTensor, basis: &ProductBasis) -> Result<FeatureTensor> {
    check_shape(f, basis)?;
    let channels: Vec<Matrix> = (0..f.k)
        .map(|k| {
            basis
                .temporal
                .eigenvectors
                .t_matmul(&f.channel(k))
                .matmul(&basis.spatial.eigenvectors)
        })
        .collect();
    FeatureTensor::from_channels(&channels)
}

/// Inverse GFT using only the `p` lowest temporal frequencies.
///
/// All spatial eigenpairs are retained; `p = N1` is the exact inverse.
pub fn inverse_gft(fhat: &FeatureTensor, basis: &ProductBasis, p: usize) -> Result<FeatureTensor> {
    check_shape(fhat, basis)?;
    check_p(p, fhat.n1)?;
    let (n1, n2) = (fhat.n1, fhat.n2);
    let u_t = &basis.temporal.eigenvectors;
    let u_s_t = basis.spatial.eigenvectors.transpose();
    let u_t_low = Matrix::from_fn(n1, p, |i, l| u_t[(i, l)]);
    let channels: Vec<Matrix> = (0..fhat.k)
        .map(|k| {
            let full = fhat.channel(k);
            let low = Matrix::from_fn(p, n2, |l, j| full[(l, j)]);
            u_t_low.matmul(&low).matmul(&u_s_t)
        })
        .collect();
    FeatureTensor::from_channels(&channels)
}

/// Flattens the coefficients with temporal index `< p` in `(k, l1, l2)` order.
pub fn truncate_spectrum(fhat: &FeatureTensor, p: usize) -> Result<Vec<f64>> {
    check_p(p, fhat.n1)?;
    let mut out = Vec::with_capacity(fhat.k * p * fhat.n2);
    let len = fhat.n1 * fhat.n2;
    for k in 0..fhat.k {
        out.extend_from_slice(&fhat.values[k * len..k * len + p * fhat.n2]);
    }
    Ok(out)
}

/// Writes `axis,index,eigenvalue` rows for both factor spectra.
pub fn write_eigenvalues_csv<W: Write>(basis: &ProductBasis, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["axis", "index", "eigenvalue"])?;
    for (axis, spectrum) in [("temporal", &basis.temporal), ("spatial", &basis.spatial)] {
        for (i, v) in spectrum.eigenvalues.iter().enumerate() {
            w.write_record([axis.to_string(), i.to_string(), format!("{v:?}")])?;
        }
    }
    w.flush().map_err(|e| GftnnError::io("<csv>", e))?;
    Ok(())
}

/// Writes `k,l1,l2,value` rows for a coefficient tensor.
pub fn write_coefficients_csv<W: Write>(fhat: &FeatureTensor, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "l1", "l2", "value"])?;
    for k in 0..fhat.k {
        for l1 in 0..fhat.n1 {
            for l2 in 0..fhat.n2 {
                w.write_record([
                    k.to_string(),
                    l1.to_string(),
                    l2.to_string(),
                    format!("{:?}", fhat.get(k, l1, l2)),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| GftnnError::io("<csv>", e))?;
    Ok(())
}
