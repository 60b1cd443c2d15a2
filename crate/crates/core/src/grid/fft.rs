//! 2D discrete Fourier transforms on power-of-two planes.
//!
//! Convention: the forward transform is unnormalized,
//! `X[u,v] = Σ x[i,j]·exp(-2πi(ui/H + vj/W))`, and the inverse carries the
//! full `1/(H·W)` factor. Watermark key magnitudes are scaled against this
//! convention.

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::ComplexGrid;
use crate::error::{Error, Result};

pub fn is_pow2(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

fn check_pow2(height: usize, width: usize) -> Result<()> {
    if is_pow2(height) && is_pow2(width) {
        Ok(())
    } else {
        Err(Error::UnsupportedSize { height, width })
    }
}

/// Forward transform of a real `height×width` plane.
pub fn fft2(plane: &[f64], height: usize, width: usize) -> Result<ComplexGrid> {
    check_pow2(height, width)?;
    let g = ComplexGrid::from_real(height, width, plane)?;
    Ok(transform(g, FftDirection::Forward))
}

/// Forward transform of a complex plane.
pub fn fft2_complex(grid: &ComplexGrid) -> Result<ComplexGrid> {
    check_pow2(grid.height(), grid.width())?;
    Ok(transform(grid.clone(), FftDirection::Forward))
}

/// Inverse transform, normalized by `1/(H·W)`.
pub fn ifft2(grid: &ComplexGrid) -> Result<ComplexGrid> {
    check_pow2(grid.height(), grid.width())?;
    let mut out = transform(grid.clone(), FftDirection::Inverse);
    let scale = 1.0 / (grid.height() * grid.width()) as f64;
    for z in out.data_mut() {
        *z *= scale;
    }
    Ok(out)
}

fn transform(mut grid: ComplexGrid, direction: FftDirection) -> ComplexGrid {
    let (h, w) = (grid.height(), grid.width());
    let mut planner = FftPlanner::<f64>::new();

    let row_fft = planner.plan_fft(w, direction);
    row_fft.process(grid.data_mut());

    let col_fft = planner.plan_fft(h, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for (i, c) in column.iter_mut().enumerate() {
            *c = grid.get(i, j);
        }
        col_fft.process(&mut column);
        for (i, &c) in column.iter().enumerate() {
            grid.set(i, j, c);
        }
    }
    grid
}

/// Moves the zero-frequency bin from `(0,0)` to `(H/2, W/2)`.
pub fn fftshift(grid: &ComplexGrid) -> ComplexGrid {
    roll(grid, grid.height() / 2, grid.width() / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift(grid: &ComplexGrid) -> ComplexGrid {
    let (h, w) = (grid.height(), grid.width());
    roll(grid, h - h / 2, w - w / 2)
}

fn roll(grid: &ComplexGrid, dr: usize, dc: usize) -> ComplexGrid {
    let (h, w) = (grid.height(), grid.width());
    let mut data = vec![Complex64::new(0.0, 0.0); h * w];
    for i in 0..h {
        for j in 0..w {
            data[((i + dr) % h) * w + (j + dc) % w] = grid.get(i, j);
        }
    }
    ComplexGrid::from_raw(h, w, data)
}
