//! Latent-space perturbations applied between generation and inversion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{sample_gaussian, LatentGrid, RngStream};

pub const DEFAULT_BLUR_SIGMA: f64 = 1.0;
pub const DEFAULT_BLUR_RADIUS: usize = 2;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackKind {
    None,
    GaussianBlur { sigma: f64, kernel_radius: usize },
    AdditiveNoise { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    #[serde(flatten)]
    pub kind: AttackKind,
    /// Mixed into the per-trial stream of stochastic attacks.
    #[serde(default)]
    pub seed: u64,
}

impl AttackSpec {
    pub const NONE: AttackSpec = AttackSpec {
        kind: AttackKind::None,
        seed: 0,
    };

    pub fn blur(sigma: f64, kernel_radius: usize) -> Self {
        Self {
            kind: AttackKind::GaussianBlur { sigma, kernel_radius },
            seed: 0,
        }
    }

    pub fn noise(sigma: f64) -> Self {
        Self {
            kind: AttackKind::AdditiveNoise { sigma },
            seed: 0,
        }
    }

    pub fn default_blur() -> Self {
        Self::blur(DEFAULT_BLUR_SIGMA, DEFAULT_BLUR_RADIUS)
    }

    pub fn default_noise() -> Self {
        Self::noise(DEFAULT_NOISE_SIGMA)
    }

    /// Short label used in CSV rows.
    pub fn tag(&self) -> &'static str {
        match self.kind {
            AttackKind::None => "none",
            AttackKind::GaussianBlur { .. } => "blur",
            AttackKind::AdditiveNoise { .. } => "noise",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AttackKind::None => Ok(()),
            AttackKind::GaussianBlur { sigma, kernel_radius } => {
                check_sigma(sigma)?;
                if kernel_radius == 0 {
                    return Err(Error::invalid("blur kernel_radius must be at least 1"));
                }
                Ok(())
            }
            AttackKind::AdditiveNoise { sigma } => check_sigma(sigma),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("attack sigma must be >= 0, got {sigma}")))
    }
}

pub fn apply_attack(x: &LatentGrid, spec: &AttackSpec, rng: &mut RngStream) -> Result<LatentGrid> {
    spec.validate()?;
    match spec.kind {
        AttackKind::None => Ok(x.clone()),
        AttackKind::GaussianBlur { sigma, kernel_radius } => gaussian_blur(x, sigma, kernel_radius),
        AttackKind::AdditiveNoise { sigma } => {
            let (c, h, w) = x.shape();
            let eps = sample_gaussian(rng, c, h, w)?;
            Ok(x.lincomb(1.0, &eps, sigma))
        }
    }
}

/// Normalized 1D taps `exp(−d²/2σ²)` for `d ∈ [−r, r]`. `σ = 0` is the identity.
pub fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|d| {
            if sigma == 0.0 {
                if d == 0 { 1.0 } else { 0.0 }
            } else {
                (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()
            }
        })
        .collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / z).collect()
}

/// Mirror index without repeating the edge: `-1 → 1`, `n → n − 2`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Separable Gaussian blur per channel with reflect padding.
pub fn gaussian_blur(x: &LatentGrid, sigma: f64, radius: usize) -> Result<LatentGrid> {
    check_sigma(sigma)?;
    if radius == 0 {
        return Err(Error::invalid("blur kernel_radius must be at least 1"));
    }
    let taps = gaussian_taps(sigma, radius);
    let r = radius as isize;
    let (c, h, w) = x.shape();
    let mut out = LatentGrid::zeros(c, h, w)?;
    let mut tmp = vec![0.0; h * w];
    for ch in 0..c {
        let src = x.plane(ch);
        for i in 0..h {
            for j in 0..w {
                tmp[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * src[i * w + reflect(j as isize + k as isize - r, w)])
                    .sum();
            }
        }
        let dst = out.plane_mut(ch);
        for i in 0..h {
            for j in 0..w {
                dst[i * w + j] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * tmp[reflect(i as isize + k as isize - r, h) * w + j])
                    .sum();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fft2;
    use proptest::prelude::*;

    fn rng() -> RngStream {
        RngStream::new(3, 0)
    }

    #[test]
    fn none_is_identity() {
        let x = sample_gaussian(&mut rng(), 2, 8, 8).unwrap();
        assert_eq!(apply_attack(&x, &AttackSpec::NONE, &mut rng()).unwrap(), x);
    }

    #[test]
    fn blur_keeps_constants() {
        let x = LatentGrid::filled(2, 8, 8, 1.7).unwrap();
        let y = gaussian_blur(&x, 1.0, 2).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-14);
    }

    #[test]
    fn blurred_delta_is_the_kernel() {
        let mut x = LatentGrid::zeros(1, 8, 8).unwrap();
        x.set(0, 4, 4, 1.0);
        let y = gaussian_blur(&x, 1.0, 1).unwrap();
        let z: f64 = (-1i32..=1)
            .flat_map(|a| (-1i32..=1).map(move |b| (-((a * a + b * b) as f64) / 2.0).exp()))
            .sum();
        for i in 0..8usize {
            for j in 0..8usize {
                let (di, dj) = (i as i32 - 4, j as i32 - 4);
                let want = if di.abs() <= 1 && dj.abs() <= 1 {
                    (-((di * di + dj * dj) as f64) / 2.0).exp() / z
                } else {
                    0.0
                };
                assert!((y.get(0, i, j) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-2, 1), 0);
    }

    #[test]
    fn noise_variance() {
        let x = LatentGrid::zeros(4, 64, 64).unwrap();
        let y = apply_attack(&x, &AttackSpec::default_noise(), &mut rng()).unwrap();
        let mse = y.sq_norm() / y.len() as f64;
        assert!((mse / 0.01 - 1.0).abs() < 0.1, "{mse}");
    }

    #[test]
    fn rejects_bad_specs() {
        let x = LatentGrid::zeros(1, 4, 4).unwrap();
        assert!(apply_attack(&x, &AttackSpec::noise(-0.1), &mut rng()).is_err());
        assert!(apply_attack(&x, &AttackSpec::blur(1.0, 0), &mut rng()).is_err());
        assert!(apply_attack(&x, &AttackSpec::blur(f64::NAN, 1), &mut rng()).is_err());
    }

    #[test]
    fn deterministic_given_stream() {
        let x = LatentGrid::zeros(1, 8, 8).unwrap();
        let s = AttackSpec::default_noise();
        let a = apply_attack(&x, &s, &mut RngStream::new(9, 4)).unwrap();
        let b = apply_attack(&x, &s, &mut RngStream::new(9, 4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_json_shape() {
        let s = AttackSpec::default_blur();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"kind":"gaussian_blur","sigma":1.0,"kernel_radius":2,"seed":0}"#);
        let back: AttackSpec = serde_json::from_str(r#"{"kind":"none"}"#).unwrap();
        assert_eq!(back, AttackSpec::NONE);
    }

    proptest! {
        #[test]
        fn blur_is_linear(seed in any::<u64>(), a in -3.0f64..3.0) {
            let mut r = RngStream::new(seed, 0);
            let x = sample_gaussian(&mut r, 1, 8, 8).unwrap();
            let y = sample_gaussian(&mut r, 1, 8, 8).unwrap();
            let lhs = gaussian_blur(&x.lincomb(a, &y, 1.0), 1.0, 2).unwrap();
            let rhs = gaussian_blur(&x, 1.0, 2).unwrap().lincomb(a, &gaussian_blur(&y, 1.0, 2).unwrap(), 1.0);
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn blur_is_shift_equivariant_away_from_edges(i in 4usize..12, j in 4usize..12) {
            let mut a = LatentGrid::zeros(1, 16, 16).unwrap();
            a.set(0, i, j, 1.0);
            let mut b = LatentGrid::zeros(1, 16, 16).unwrap();
            b.set(0, i + 1, j - 1, 1.0);
            let ba = gaussian_blur(&a, 1.0, 2).unwrap();
            let bb = gaussian_blur(&b, 1.0, 2).unwrap();
            for di in 0..5usize {
                for dj in 0..5usize {
                    let (p, q) = (i - 2 + di, j - 2 + dj);
                    prop_assert!((ba.get(0, p, q) - bb.get(0, p + 1, q - 1)).abs() < 1e-15);
                }
            }
        }

        #[test]
        fn blur_never_raises_high_frequencies(seed in any::<u64>()) {
            // Circular blur is a pure multiplier in (0, 1]; reflect padding only
            // perturbs the borders, so compare against the circular version.
            let x = sample_gaussian(&mut RngStream::new(seed, 0), 1, 16, 16).unwrap();
            let taps = gaussian_taps(1.0, 2);
            let mut circ = vec![0.0; 256];
            let p = x.plane(0);
            for i in 0..16usize {
                for j in 0..16usize {
                    let mut acc = 0.0;
                    for (a, ta) in taps.iter().enumerate() {
                        for (b, tb) in taps.iter().enumerate() {
                            acc += ta * tb * p[((i + 16 + a - 2) % 16) * 16 + (j + 16 + b - 2) % 16];
                        }
                    }
                    circ[i * 16 + j] = acc;
                }
            }
            let fx = fft2(p, 16, 16).unwrap();
            let fy = fft2(&circ, 16, 16).unwrap();
            for i in 0..16 {
                for j in 0..16 {
                    prop_assert!(fy.get(i, j).norm() <= fx.get(i, j).norm() + 1e-12);
                }
            }
        }
    }
}
