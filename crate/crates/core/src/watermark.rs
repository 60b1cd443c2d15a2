//! Tree-ring watermark: ring masks, ring keys, Fourier-space embedding and
//! key recovery.
//!
//! Masks live in the fftshifted frame and are centred on the DC bin
//! `(H/2, W/2)`, so the mask is closed under the conjugate-partner map of a
//! real plane's spectrum. Masked vectors (keys, recovered keys) are ordered by
//! row-major position in that frame.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, fft2, fftshift, ifft2, ifftshift, ComplexGrid, LatentGrid, RngStream};

/// Stream used to draw keys from a key seed.
pub const KEY_STREAM: u64 = 0x6b6579;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KeyPattern {
    /// One complex value per ring. Real-part truncation after embedding
    /// leaves a key-dependent residual.
    RingConstant,
    /// Ring values paired with their conjugates across the DC bin, so the
    /// embedded spectrum stays Hermitian and embedding is lossless.
    #[default]
    HermitianRingConstant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RingMask {
    height: usize,
    width: usize,
    channel: usize,
    radius: f64,
    member: Vec<bool>,
    positions: Vec<(usize, usize)>,
}

impl RingMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.member[row * self.width + col]
    }

    /// Member positions in the shifted frame, row-major.
    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.height / 2) as f64, (self.width / 2) as f64)
    }

    pub fn distance(&self, row: usize, col: usize) -> f64 {
        let (cr, cc) = self.center();
        (row as f64 - cr).hypot(col as f64 - cc)
    }

    /// Integer ring index `⌊distance⌋`.
    pub fn ring_index(&self, row: usize, col: usize) -> usize {
        self.distance(row, col).floor() as usize
    }

    pub fn ring_count(&self) -> usize {
        self.radius.floor() as usize + 1
    }

    /// Mask as a `1×H×W` 0/1 grid.
    pub fn to_grid(&self) -> LatentGrid {
        let data = self.member.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        LatentGrid::from_raw(1, self.height, self.width, data)
    }

    /// Conjugate partner of a shifted-frame position.
    fn partner(&self, row: usize, col: usize) -> (usize, usize) {
        ((self.height - row) % self.height, (self.width - col) % self.width)
    }

    fn check_latent(&self, x: &LatentGrid) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::invalid(format!(
                "mask is {}x{}, latent plane is {}x{}",
                self.height,
                self.width,
                x.height(),
                x.width()
            )));
        }
        if self.channel >= x.channels() {
            return Err(Error::invalid(format!(
                "watermark channel {} out of range for {} channels",
                self.channel,
                x.channels()
            )));
        }
        Ok(())
    }
}

pub fn make_ring_mask(height: usize, width: usize, radius: f64, channel: usize) -> Result<RingMask> {
    if !grid::is_pow2(height) || !grid::is_pow2(width) {
        return Err(Error::UnsupportedSize { height, width });
    }
    if !radius.is_finite() || radius < 1.0 {
        return Err(Error::invalid(format!("radius must be at least 1, got {radius}")));
    }
    if radius >= height.min(width) as f64 / 2.0 {
        return Err(Error::invalid(format!(
            "radius {radius} exceeds half-extent of {height}x{width} plane"
        )));
    }
    let (cr, cc) = ((height / 2) as f64, (width / 2) as f64);
    let mut member = vec![false; height * width];
    let mut positions = Vec::new();
    for i in 0..height {
        for j in 0..width {
            if (i as f64 - cr).hypot(j as f64 - cc) <= radius {
                member[i * width + j] = true;
                positions.push((i, j));
            }
        }
    }
    Ok(RingMask {
        height,
        width,
        channel,
        radius,
        member,
        positions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WatermarkKey {
    height: usize,
    width: usize,
    pattern: KeyPattern,
    seed: u64,
    ring_values: Vec<Complex64>,
    values: Vec<Complex64>,
}

impl WatermarkKey {
    pub fn pattern(&self) -> KeyPattern {
        self.pattern
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ring_values(&self) -> &[Complex64] {
        &self.ring_values
    }

    /// One value per masked position, in mask order.
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn mean_modulus(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).sum::<f64>() / self.values.len() as f64
    }

    /// Key as a full shifted-frame plane, zero off the mask.
    pub fn to_grid(&self, mask: &RingMask) -> ComplexGrid {
        scatter(mask, &self.values)
    }
}

/// Draws one complex value per integer ring, `(a + b·i)·√(HW/2)` with `a, b`
/// standard normal, so each value has the expected squared modulus `H·W` of an
/// unnormalized FFT coefficient of unit Gaussian noise.
pub fn make_ring_key(mask: &RingMask, rng: &mut RngStream, pattern: KeyPattern) -> Result<WatermarkKey> {
    if mask.is_empty() {
        return Err(Error::invalid("cannot draw a key for an empty mask"));
    }
    let scale = ((mask.height * mask.width) as f64 / 2.0).sqrt();
    let ring_values: Vec<Complex64> = (0..mask.ring_count())
        .map(|_| {
            let re = rng.normal();
            let im = rng.normal();
            Complex64::new(re, im) * scale
        })
        .collect();

    let (hc, wc) = ((mask.height / 2) as isize, (mask.width / 2) as isize);
    let values = mask
        .positions
        .iter()
        .map(|&(i, j)| {
            let v = ring_values[mask.ring_index(i, j)];
            match pattern {
                KeyPattern::RingConstant => v,
                KeyPattern::HermitianRingConstant => {
                    let (du, dv) = (i as isize - hc, j as isize - wc);
                    if mask.partner(i, j) == (i, j) {
                        Complex64::new(v.re, 0.0)
                    } else if du > 0 || (du == 0 && dv > 0) {
                        v
                    } else {
                        v.conj()
                    }
                }
            }
        })
        .collect();

    Ok(WatermarkKey {
        height: mask.height,
        width: mask.width,
        pattern,
        seed: rng.seed(),
        ring_values,
        values,
    })
}

fn check_key(key: &WatermarkKey, mask: &RingMask) -> Result<()> {
    if key.height != mask.height || key.width != mask.width || key.values.len() != mask.len() {
        return Err(Error::invalid("key and mask dimensions differ"));
    }
    Ok(())
}

fn scatter(mask: &RingMask, values: &[Complex64]) -> ComplexGrid {
    let mut g = ComplexGrid::from_raw(
        mask.height,
        mask.width,
        vec![Complex64::new(0.0, 0.0); mask.height * mask.width],
    );
    for (&(i, j), &v) in mask.positions.iter().zip(values) {
        g.set(i, j, v);
    }
    g
}

/// Centred spectrum of one channel.
pub fn shifted_spectrum(x: &LatentGrid, channel: usize) -> Result<ComplexGrid> {
    Ok(fftshift(&fft2(x.plane(channel), x.height(), x.width())?))
}

/// Overwrites the masked bins of channel `mask.channel()`'s centred spectrum
/// with the key and returns the real part of the inverse transform. Other
/// channels are copied unchanged.
pub fn embed(x_t: &LatentGrid, key: &WatermarkKey, mask: &RingMask) -> Result<LatentGrid> {
    mask.check_latent(x_t)?;
    check_key(key, mask)?;
    let mut spectrum = shifted_spectrum(x_t, mask.channel)?;
    for (&(i, j), &v) in mask.positions.iter().zip(&key.values) {
        spectrum.set(i, j, v);
    }
    let plane = ifft2(&ifftshift(&spectrum))?.real_part();
    let mut out = x_t.clone();
    out.plane_mut(mask.channel).copy_from_slice(&plane);
    Ok(out)
}

/// `ŵ`: the masked bins of the centred spectrum of channel `mask.channel()`.
pub fn recover_key(x_hat: &LatentGrid, mask: &RingMask) -> Result<Vec<Complex64>> {
    mask.check_latent(x_hat)?;
    let spectrum = shifted_spectrum(x_hat, mask.channel)?;
    Ok(mask.positions.iter().map(|&(i, j)| spectrum.get(i, j)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionMetrics {
    /// `(1/n)·Σ|ŵᵢ − wᵢ|` over the mask, in Fourier-space units.
    pub mean_l1: f64,
    pub nmae: f64,
    pub nmse: f64,
}

fn check_pair(recovered: &[Complex64], key: &[Complex64]) -> Result<()> {
    if recovered.len() != key.len() {
        return Err(Error::invalid(format!(
            "recovered key has {} entries, key has {}",
            recovered.len(),
            key.len()
        )));
    }
    if key.is_empty() {
        return Err(Error::invalid("empty masked vectors"));
    }
    Ok(())
}

/// Mean modulus of the masked difference; defined even for an all-zero key.
pub fn mean_l1_distance(recovered: &[Complex64], key: &[Complex64]) -> Result<f64> {
    check_pair(recovered, key)?;
    let sum: f64 = recovered.iter().zip(key).map(|(a, b)| (a - b).norm()).sum();
    Ok(sum / key.len() as f64)
}

pub fn extraction_metrics(recovered: &[Complex64], key: &[Complex64]) -> Result<ExtractionMetrics> {
    check_pair(recovered, key)?;
    let (mut d1, mut d2, mut w1, mut w2) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in recovered.iter().zip(key) {
        let d = (a - b).norm();
        let m = b.norm();
        d1 += d;
        d2 += d * d;
        w1 += m;
        w2 += m * m;
    }
    if w1 == 0.0 {
        return Err(Error::DivisionByZero("normalized metrics need a nonzero key"));
    }
    Ok(ExtractionMetrics {
        mean_l1: d1 / key.len() as f64,
        nmae: d1 / w1,
        nmse: d2 / w2,
    })
}

/// Mask + key pair; what a detector needs to score a latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Watermark {
    pub mask: RingMask,
    pub key: WatermarkKey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeySidecar {
    pub seed: u64,
    pub pattern: KeyPattern,
    pub radius: f64,
    pub channel: usize,
}

impl Watermark {
    pub fn generate(
        height: usize,
        width: usize,
        radius: f64,
        channel: usize,
        key_seed: u64,
        pattern: KeyPattern,
    ) -> Result<Self> {
        let mask = make_ring_mask(height, width, radius, channel)?;
        let key = make_ring_key(&mask, &mut RngStream::new(key_seed, KEY_STREAM), pattern)?;
        Ok(Self { mask, key })
    }

    pub fn embed(&self, x_t: &LatentGrid) -> Result<LatentGrid> {
        embed(x_t, &self.key, &self.mask)
    }

    pub fn recover(&self, x_hat: &LatentGrid) -> Result<Vec<Complex64>> {
        recover_key(x_hat, &self.mask)
    }

    pub fn score(&self, x_hat: &LatentGrid) -> Result<ExtractionMetrics> {
        extraction_metrics(&self.recover(x_hat)?, self.key.values())
    }

    pub fn sidecar(&self) -> KeySidecar {
        KeySidecar {
            seed: self.key.seed,
            pattern: self.key.pattern,
            radius: self.mask.radius,
            channel: self.mask.channel,
        }
    }

    /// Paths of the mask (`RLT1`), key (`RLC1`) and JSON sidecar for a stem.
    pub fn paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let with = |suffix: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        (with(".mask.rlt"), with(".key.rlc"), with(".key.json"))
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        let (mask_path, key_path, json_path) = Self::paths(stem);
        grid::write_latent(mask_path, &self.mask.to_grid())?;
        grid::write_complex(key_path, &self.key.to_grid(&self.mask))?;
        fs::write(json_path, serde_json::to_string_pretty(&self.sidecar())? + "\n")?;
        Ok(())
    }

    /// Loads a saved watermark. Mask and key are rebuilt from the sidecar and
    /// must agree bit-for-bit with the stored grids.
    pub fn load(stem: &Path) -> Result<Self> {
        let (mask_path, key_path, json_path) = Self::paths(stem);
        let sidecar: KeySidecar = serde_json::from_str(&fs::read_to_string(json_path)?)?;
        let key_grid = grid::read_complex(key_path)?;
        let mask = make_ring_mask(key_grid.height(), key_grid.width(), sidecar.radius, sidecar.channel)?;
        if grid::read_latent(mask_path)? != mask.to_grid() {
            return Err(Error::Format("stored mask disagrees with sidecar radius".into()));
        }
        let key = make_ring_key(&mask, &mut RngStream::new(sidecar.seed, KEY_STREAM), sidecar.pattern)?;
        if key.to_grid(&mask) != key_grid {
            return Err(Error::Format("stored key does not match its seed and pattern".into()));
        }
        Ok(Self { mask, key })
    }
}
