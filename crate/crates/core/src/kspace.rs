//! Complex grids, multi-coil k-space containers and the centered orthonormal
//! Fourier transform used throughout the crate.
//!
//! Grids are row-major with `rows` frequency-encode samples and `cols`
//! phase-encode samples. The transforms place the DC sample at
//! `(rows / 2, cols / 2)` (integer division) for even and odd sizes alike and
//! scale by `1 / sqrt(rows * cols)`, so they are unitary.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexGrid {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("grid dimensions must be positive, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "grid {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        assert!(rows > 0 && cols > 0, "grid dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> C64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: C64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidData("grid contains non-finite values".into()))
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(C64, C64) -> C64) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// One k-space (or image) grid per receiver coil.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCoilKSpace {
    grids: Vec<ComplexGrid>,
}

impl MultiCoilKSpace {
    pub fn new(grids: Vec<ComplexGrid>) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Shape("at least one coil is required".into()))?;
        let shape = first.shape();
        if let Some(bad) = grids.iter().find(|g| g.shape() != shape) {
            return Err(Error::Shape(format!(
                "coil grids disagree: {}x{} vs {}x{}",
                shape.0,
                shape.1,
                bad.rows(),
                bad.cols()
            )));
        }
        Ok(Self { grids })
    }

    pub fn zeros(coils: usize, rows: usize, cols: usize) -> Self {
        assert!(coils > 0, "at least one coil is required");
        Self {
            grids: (0..coils).map(|_| ComplexGrid::zeros(rows, cols)).collect(),
        }
    }

    pub fn coils(&self) -> usize {
        self.grids.len()
    }

    pub fn rows(&self) -> usize {
        self.grids[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.grids[0].cols()
    }

    /// `(coils, rows, cols)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.coils(), self.rows(), self.cols())
    }

    pub fn grids(&self) -> &[ComplexGrid] {
        &self.grids
    }

    pub fn grids_mut(&mut self) -> &mut [ComplexGrid] {
        &mut self.grids
    }

    pub fn grid(&self, coil: usize) -> &ComplexGrid {
        &self.grids[coil]
    }

    pub fn into_grids(self) -> Vec<ComplexGrid> {
        self.grids
    }

    pub fn norm_sqr(&self) -> f64 {
        self.grids.iter().map(ComplexGrid::norm_sqr).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grids.iter().all(ComplexGrid::is_finite)
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "multi-coil dims {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(C64, C64) -> C64 + Copy) -> Result<Self> {
        self.check_same_dims(other)?;
        let grids = self
            .grids
            .iter()
            .zip(&other.grids)
            .map(|(a, b)| a.zip_map(b, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grids })
    }

    pub fn map(&self, f: impl Fn(C64) -> C64 + Copy) -> Self {
        Self {
            grids: self.grids.iter().map(|g| g.map(f)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|a| a * s)
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &Self, s: f64) -> Result<Self> {
        self.zip_map(other, |a, b| a + b * s)
    }

    /// Relative L2 distance `‖self − other‖ / ‖other‖` (absolute when `other` is zero).
    pub fn rel_diff(&self, other: &Self) -> Result<f64> {
        let num = self.sub(other)?.norm();
        let den = other.norm();
        Ok(if den > 0.0 { num / den } else { num })
    }

    /// Iterates `(coil, row, col, value)`.
    pub fn iter_indexed(&self) -> impl Iterator<Item = (usize, usize, usize, C64)> + '_ {
        let cols = self.cols();
        self.grids.iter().enumerate().flat_map(move |(c, g)| {
            g.data()
                .iter()
                .enumerate()
                .map(move |(i, &v)| (c, i / cols, i % cols, v))
        })
    }
}

/// The `B` simultaneously excited slices, each a multi-coil k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceStack {
    slices: Vec<MultiCoilKSpace>,
}

impl SliceStack {
    pub fn new(slices: Vec<MultiCoilKSpace>) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::Shape("a slice stack needs at least one slice".into()))?;
        let dims = first.dims();
        if slices.iter().any(|s| s.dims() != dims) {
            return Err(Error::Shape("slices in a stack must share coils, rows and cols".into()));
        }
        Ok(Self { slices })
    }

    /// Multiband factor.
    pub fn b(&self) -> usize {
        self.slices.len()
    }

    pub fn slices(&self) -> &[MultiCoilKSpace] {
        &self.slices
    }

    pub fn slice(&self, s: usize) -> Result<&MultiCoilKSpace> {
        self.slices
            .get(s)
            .ok_or_else(|| Error::Index(format!("slice {s} of {}", self.slices.len())))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.slices[0].dims()
    }

    pub fn into_slices(self) -> Vec<MultiCoilKSpace> {
        self.slices
    }
}

/// Nonnegative real image (RSS magnitude).
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeImage {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl MagnitudeImage {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "image {rows}x{cols} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidData("magnitude values must be finite and nonnegative".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Divides every pixel by `s` (> 0).
    pub fn scaled_down(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v / s).collect(),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Centered unitary 1D transform of every line along one axis.
///
/// A centered index `i` holds coordinate `i - n/2`; the line is rotated so
/// coordinate 0 sits at index 0, transformed, and rotated back.
fn transform_axis(grid: &mut ComplexGrid, along_cols: bool, inverse: bool) {
    let (rows, cols) = grid.shape();
    let (n, lines) = if along_cols { (cols, rows) } else { (rows, cols) };
    let half = n / 2;
    let fft = plan(n, inverse);
    let scale = 1.0 / (n as f64).sqrt();
    let mut buf = vec![C64::new(0.0, 0.0); n];
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let data = grid.data_mut();
    for line in 0..lines {
        let idx = |i: usize| {
            if along_cols {
                line * cols + i
            } else {
                i * cols + line
            }
        };
        for i in 0..n {
            buf[(i + n - half) % n] = data[idx(i)];
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for i in 0..n {
            data[idx(i)] = buf[(i + n - half) % n] * scale;
        }
    }
}

fn transform2(grid: &ComplexGrid, inverse: bool) -> Result<ComplexGrid> {
    grid.ensure_finite()?;
    let mut out = grid.clone();
    transform_axis(&mut out, true, inverse);
    transform_axis(&mut out, false, inverse);
    Ok(out)
}

/// Image → k-space, centered and orthonormal.
pub fn fft2_centered(img: &ComplexGrid) -> Result<ComplexGrid> {
    transform2(img, false)
}

/// k-space → image, centered and orthonormal.
pub fn ifft2_centered(k: &ComplexGrid) -> Result<ComplexGrid> {
    transform2(k, true)
}

pub fn fft2_coils(img: &MultiCoilKSpace) -> Result<MultiCoilKSpace> {
    MultiCoilKSpace::new(img.grids().iter().map(fft2_centered).collect::<Result<_>>()?)
}

pub fn ifft2_coils(k: &MultiCoilKSpace) -> Result<MultiCoilKSpace> {
    MultiCoilKSpace::new(k.grids().iter().map(ifft2_centered).collect::<Result<_>>()?)
}

/// Per-coil inverse transform followed by root-sum-of-squares combination.
pub fn rss_combine(k: &MultiCoilKSpace) -> Result<MagnitudeImage> {
    let images = ifft2_coils(k)?;
    let (rows, cols) = (k.rows(), k.cols());
    let mut acc = vec![0.0; rows * cols];
    for g in images.grids() {
        for (a, v) in acc.iter_mut().zip(g.data()) {
            *a += v.norm_sqr();
        }
    }
    MagnitudeImage::new(rows, cols, acc.into_iter().map(f64::sqrt).collect())
}

/// Scales the image so its maximum is 1; returns the divisor.
pub fn normalize_magnitude(img: &MagnitudeImage) -> Result<(MagnitudeImage, f64)> {
    let scale = img.max();
    if scale <= 0.0 {
        return Err(Error::Degenerate("cannot normalize an all-zero image".into()));
    }
    Ok((img.scaled_down(scale), scale))
}
