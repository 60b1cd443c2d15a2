//! Deterministic tensor and Fourier substrate.
//!
//! All arithmetic is `f64`. Grids are row-major by (channel, row, column) and
//! are validated to hold finite values on construction.

mod fft;
mod io;
mod rng;

pub use fft::{fft2, fft2_complex, fftshift, ifft2, ifftshift, is_pow2};
pub use io::{
    read_complex, read_complex_from, read_latent, read_latent_from, write_complex,
    write_complex_to, write_latent, write_latent_to, COMPLEX_MAGIC, LATENT_MAGIC,
};
pub use rng::{sample_gaussian, RngStream};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real-valued `C×H×W` latent tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        check_dims(channels, height, width)?;
        Ok(Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        let mut g = Self::zeros(channels, height, width)?;
        if !value.is_finite() {
            return Err(Error::invalid("fill value must be finite"));
        }
        g.data.fill(value);
        Ok(g)
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(channels, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent entries must be finite"));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a grid without the finiteness scan. Callers that produce values
    /// from arithmetic on finite inputs check [`LatentGrid::is_finite`] where
    /// overflow is possible.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &LatentGrid) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn ensure_same_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )))
        }
    }

    /// A grid of the same shape with every entry mapped through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> LatentGrid {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::from_raw(self.channels, self.height, self.width, data)
    }

    /// `a·self + b·other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &LatentGrid, b: f64) -> LatentGrid {
        debug_assert!(self.same_shape(other));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Self::from_raw(self.channels, self.height, self.width, data)
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: f64, other: &LatentGrid) {
        debug_assert!(self.same_shape(other));
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.data {
            *x *= a;
        }
    }

    pub fn sub(&self, other: &LatentGrid) -> LatentGrid {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn dot(&self, other: &LatentGrid) -> f64 {
        self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn norms(&self) -> Norms {
        Norms::of_real(&self.data)
    }
}

/// Complex `H×W` plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(1, height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(1, height, width)?;
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("complex entries must be finite"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Real plane lifted to the complex domain.
    pub fn from_real(height: usize, width: usize, plane: &[f64]) -> Result<Self> {
        Self::from_vec(
            height,
            width,
            plane.iter().map(|&re| Complex64::new(re, 0.0)).collect(),
        )
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[row * self.width + col] = value;
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    pub fn norms(&self) -> Norms {
        Norms::of_complex(&self.data)
    }
}

/// `l1`, squared `l2` and `linf` norms; complex entries contribute their modulus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2sq: f64,
    pub linf: f64,
}

impl Norms {
    pub fn of_real(values: &[f64]) -> Self {
        values.iter().fold(Norms::default(), |acc, &v| acc.push(v.abs()))
    }

    pub fn of_complex(values: &[Complex64]) -> Self {
        values.iter().fold(Norms::default(), |acc, z| acc.push(z.norm()))
    }

    fn push(self, modulus: f64) -> Self {
        Norms {
            l1: self.l1 + modulus,
            l2sq: self.l2sq + modulus * modulus,
            linf: self.linf.max(modulus),
        }
    }
}

fn check_dims(channels: usize, height: usize, width: usize) -> Result<()> {
    if channels == 0 || height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "dimensions must be positive, got {channels}x{height}x{width}"
        )));
    }
    Ok(())
}
