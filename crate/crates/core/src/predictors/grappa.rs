//! Linear k-space kernels: slice-GRAPPA separation kernels, the ACS-band
//! anchor kernels and in-plane GRAPPA completion kernels.
//!
//! Every kernel maps a neighbourhood of multi-coil source samples to the
//! multi-coil target sample at its centre. Calibration solves the
//! ridge-regularized normal equations over the positions of the ACS band where
//! the whole neighbourhood is available; application zero-pads the grid border.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{ComplexGrid, MultiCoilKSpace, SliceStack, C64};
use crate::operators::{caipi_inverse, CaipiScheme, SamplingMask};

pub const DEFAULT_WINDOW: (usize, usize) = (5, 5);
/// Ridge weight relative to the mean diagonal of the normal matrix.
pub const DEFAULT_RIDGE: f64 = 1e-4;
/// Source lines used by an in-plane completion kernel.
pub const INPLANE_SOURCE_LINES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelOptions {
    /// Odd `(rows, cols)` tap counts.
    pub window: (usize, usize),
    /// Spacing of the column taps, in phase-encode lines.
    pub col_stride: usize,
    pub ridge: f64,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            col_stride: 1,
            ridge: DEFAULT_RIDGE,
        }
    }
}

impl KernelOptions {
    fn validate(&self) -> Result<()> {
        let (wr, wc) = self.window;
        if wr == 0 || wc == 0 || wr % 2 == 0 || wc % 2 == 0 {
            return Err(Error::Argument(format!("kernel window {wr}x{wc} must be odd")));
        }
        if self.col_stride == 0 {
            return Err(Error::Argument("column stride must be positive".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Argument(format!("ridge {} must be >= 0", self.ridge)));
        }
        Ok(())
    }

    /// Tap offsets `(row, col)` in the order weights are stored.
    pub fn taps(&self) -> Vec<(isize, isize)> {
        let hr = (self.window.0 / 2) as isize;
        let hc = (self.window.1 / 2) as isize;
        let stride = self.col_stride as isize;
        let mut taps = Vec::with_capacity(self.window.0 * self.window.1);
        for dr in -hr..=hr {
            for dc in -hc..=hc {
                taps.push((dr, dc * stride));
            }
        }
        taps
    }
}

/// Complex weights `w[out][in][tap]` over a fixed tap layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights {
    pub in_coils: usize,
    pub out_coils: usize,
    pub taps: Vec<(isize, isize)>,
    /// Row-major `out_coils × (in_coils · taps)`, stored as `(re, im)`.
    weights: Vec<(f64, f64)>,
}

impl KernelWeights {
    pub fn new(in_coils: usize, out_coils: usize, taps: Vec<(isize, isize)>, weights: Vec<C64>) -> Result<Self> {
        if weights.len() != out_coils * in_coils * taps.len() {
            return Err(Error::Shape(format!(
                "kernel needs {} weights, got {}",
                out_coils * in_coils * taps.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(w.re.is_finite() && w.im.is_finite())) {
            return Err(Error::InvalidData("kernel weights must be finite".into()));
        }
        Ok(Self {
            in_coils,
            out_coils,
            taps,
            weights: weights.into_iter().map(|w| (w.re, w.im)).collect(),
        })
    }

    pub fn zeros(in_coils: usize, out_coils: usize, taps: Vec<(isize, isize)>) -> Self {
        let n = in_coils * out_coils * taps.len();
        Self::new(in_coils, out_coils, taps, vec![C64::new(0.0, 0.0); n]).unwrap()
    }

    /// Each output coil copies its own input coil at tap `(0, 0)`.
    pub fn identity(coils: usize, taps: Vec<(isize, isize)>) -> Result<Self> {
        let centre = taps
            .iter()
            .position(|&t| t == (0, 0))
            .ok_or_else(|| Error::Argument("tap layout has no centre tap".into()))?;
        let mut k = Self::zeros(coils, coils, taps);
        for c in 0..coils {
            k.set(c, c, centre, C64::new(1.0, 0.0));
        }
        Ok(k)
    }

    #[inline]
    pub fn get(&self, out: usize, inp: usize, tap: usize) -> C64 {
        let (re, im) = self.weights[(out * self.in_coils + inp) * self.taps.len() + tap];
        C64::new(re, im)
    }

    pub fn set(&mut self, out: usize, inp: usize, tap: usize, w: C64) {
        let n = self.taps.len();
        self.weights[(out * self.in_coils + inp) * n + tap] = (w.re, w.im);
    }

    pub fn values(&self) -> impl Iterator<Item = C64> + '_ {
        self.weights.iter().map(|&(re, im)| C64::new(re, im))
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|w| w.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn rel_diff(&self, other: &Self) -> f64 {
        let num: f64 = self.values().zip(other.values()).map(|(a, b)| (a - b).norm_sqr()).sum();
        (num / other.norm().powi(2).max(f64::MIN_POSITIVE)).sqrt()
    }

    /// Kernel output at `(r, c)`, zero outside the grid.
    fn apply_at(&self, src: &MultiCoilKSpace, r: usize, c: usize, out: &mut [C64]) {
        let (rows, cols) = (src.rows() as isize, src.cols() as isize);
        out.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (ti, &(dr, dc)) in self.taps.iter().enumerate() {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || rr >= rows || cc < 0 || cc >= cols {
                continue;
            }
            let idx = rr as usize * cols as usize + cc as usize;
            for i in 0..self.in_coils {
                let s = src.grid(i).data()[idx];
                if s.re == 0.0 && s.im == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().enumerate() {
                    *v += self.get(o, i, ti) * s;
                }
            }
        }
    }

    /// Applies the kernel at every position where `select(r, c)` holds;
    /// other outputs are zero.
    pub fn apply_where(&self, src: &MultiCoilKSpace, select: impl Fn(usize, usize) -> bool) -> Result<MultiCoilKSpace> {
        if src.coils() != self.in_coils {
            return Err(Error::Shape(format!(
                "kernel expects {} input coils, got {}",
                self.in_coils,
                src.coils()
            )));
        }
        let (rows, cols) = (src.rows(), src.cols());
        let mut out: Vec<ComplexGrid> = (0..self.out_coils).map(|_| ComplexGrid::zeros(rows, cols)).collect();
        let mut buf = vec![C64::new(0.0, 0.0); self.out_coils];
        for r in 0..rows {
            for c in 0..cols {
                if !select(r, c) {
                    continue;
                }
                self.apply_at(src, r, c, &mut buf);
                for (o, g) in out.iter_mut().enumerate() {
                    g.set(r, c, buf[o]);
                }
            }
        }
        MultiCoilKSpace::new(out)
    }
}

/// Ridge-regularized least squares fit of `target ≈ kernel(source)` over the
/// given positions. Returns the weights and the relative residual.
pub fn fit_kernel(
    source: &MultiCoilKSpace,
    target: &MultiCoilKSpace,
    taps: Vec<(isize, isize)>,
    positions: &[(usize, usize)],
    ridge: f64,
) -> Result<(KernelWeights, f64)> {
    if (source.rows(), source.cols()) != (target.rows(), target.cols()) {
        return Err(Error::Shape("calibration source and target grids differ".into()));
    }
    let in_coils = source.coils();
    let out_coils = target.coils();
    let unknowns = in_coils * taps.len();
    if positions.len() < unknowns {
        return Err(Error::Calibration(format!(
            "underdetermined calibration: {} ACS positions for {} taps per output coil (need at least {})",
            positions.len(),
            unknowns,
            unknowns
        )));
    }
    let cols = source.cols() as isize;
    let rows = source.rows() as isize;
    let mut a = DMatrix::<C64>::zeros(positions.len(), unknowns);
    let mut b = DMatrix::<C64>::zeros(positions.len(), out_coils);
    for (p, &(r, c)) in positions.iter().enumerate() {
        for (ti, &(dr, dc)) in taps.iter().enumerate() {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || rr >= rows || cc < 0 || cc >= cols {
                continue;
            }
            let idx = (rr * cols + cc) as usize;
            for i in 0..in_coils {
                a[(p, i * taps.len() + ti)] = source.grid(i).data()[idx];
            }
        }
        for o in 0..out_coils {
            b[(p, o)] = target.grid(o).get(r, c);
        }
    }
    let mut normal = a.ad_mul(&a);
    let rhs = a.ad_mul(&b);
    let mean_diag = (0..unknowns).map(|i| normal[(i, i)].re).sum::<f64>() / unknowns as f64;
    if !(mean_diag > 0.0) {
        return Err(Error::Solver("calibration data are all zero".into()));
    }
    let lambda = ridge * mean_diag;
    for i in 0..unknowns {
        normal[(i, i)] += C64::new(lambda, 0.0);
    }
    let chol = normal.cholesky().ok_or_else(|| rank_error(ridge))?;
    let diag: Vec<f64> = (0..unknowns).map(|i| chol.l_dirty()[(i, i)].re).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(rank_error(ridge));
    }
    let x = chol.solve(&rhs);

    let fit = &a * &x;
    let resid = (&fit - &b).norm();
    let scale = b.norm();
    let residual = if scale > 0.0 { resid / scale } else { resid };

    let mut weights = Vec::with_capacity(out_coils * unknowns);
    for o in 0..out_coils {
        for u in 0..unknowns {
            weights.push(x[(u, o)]);
        }
    }
    Ok((KernelWeights::new(in_coils, out_coils, taps, weights)?, residual))
}

fn rank_error(ridge: f64) -> Error {
    if ridge == 0.0 {
        Error::Solver("calibration system is rank deficient; use ridge > 0".into())
    } else {
        Error::Solver("calibration system is numerically singular; increase ridge".into())
    }
}

/// Interior positions of the ACS band where every tap lands inside the band.
pub fn calibration_positions(rows: usize, acs: &Range<usize>, taps: &[(isize, isize)]) -> Vec<(usize, usize)> {
    let (rlo, rhi) = taps.iter().fold((0isize, 0isize), |(lo, hi), &(dr, _)| (lo.min(dr), hi.max(dr)));
    let (clo, chi) = taps.iter().fold((0isize, 0isize), |(lo, hi), &(_, dc)| (lo.min(dc), hi.max(dc)));
    let mut out = Vec::new();
    for r in 0..rows as isize {
        if r + rlo < 0 || r + rhi >= rows as isize {
            continue;
        }
        for c in acs.start as isize..acs.end as isize {
            if c + clo < acs.start as isize || c + chi >= acs.end as isize {
                continue;
            }
            out.push((r as usize, c as usize));
        }
    }
    out
}

/// Slice-GRAPPA kernel mapping the target-aligned collapsed k-space to one
/// slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrappaKernel {
    pub target: usize,
    pub options: KernelOptions,
    pub weights: KernelWeights,
    /// Relative calibration residual over interior ACS positions.
    pub residual: f64,
}

impl GrappaKernel {
    pub fn identity(target: usize, coils: usize, options: KernelOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            target,
            options,
            weights: KernelWeights::identity(coils, options.taps())?,
            residual: 0.0,
        })
    }

    pub fn zeros(target: usize, coils: usize, options: KernelOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            target,
            options,
            weights: KernelWeights::zeros(coils, coils, options.taps()),
            residual: 0.0,
        })
    }
}

/// Fits one slice-GRAPPA kernel per slice from the ACS band.
///
/// `acs_collapsed` is the collapsed multiband k-space and `acs_slices` the
/// single-slice reference data; only the `acs` columns of either are read.
/// A single-slice scheme gets the identity kernel, with its residual measured
/// on the same ACS positions.
pub fn grappa_calibrate(
    acs_collapsed: &MultiCoilKSpace,
    acs_slices: &SliceStack,
    scheme: &CaipiScheme,
    acs: Range<usize>,
    options: KernelOptions,
) -> Result<Vec<GrappaKernel>> {
    options.validate()?;
    if acs.is_empty() {
        return Err(Error::Degenerate("empty ACS band".into()));
    }
    if acs_slices.b() != scheme.b() {
        return Err(Error::Shape(format!(
            "{} reference slices for a {}-slice scheme",
            acs_slices.b(),
            scheme.b()
        )));
    }
    let taps = options.taps();
    let positions = calibration_positions(acs_collapsed.rows(), &acs, &taps);
    if scheme.b() == 1 {
        // single-band data: nothing to separate
        if positions.is_empty() {
            return Err(Error::Calibration(format!(
                "ACS band {acs:?} leaves no interior position for a {}x{} window",
                options.window.0, options.window.1
            )));
        }
        let source = caipi_inverse(acs_collapsed, scheme, 0)?;
        let target = acs_slices.slice(0)?;
        source.check_same_dims(target)?;
        let (mut diff, mut norm) = (0.0, 0.0);
        for &(r, c) in &positions {
            for (g, t) in source.grids().iter().zip(target.grids()) {
                diff += (g.get(r, c) - t.get(r, c)).norm_sqr();
                norm += t.get(r, c).norm_sqr();
            }
        }
        let mut kernel = GrappaKernel::identity(0, source.coils(), options)?;
        kernel.residual = if norm > 0.0 { (diff / norm).sqrt() } else { diff.sqrt() };
        return Ok(vec![kernel]);
    }
    (0..scheme.b())
        .map(|s| {
            let source = caipi_inverse(acs_collapsed, scheme, s)?;
            let (weights, residual) = fit_kernel(&source, acs_slices.slice(s)?, taps.clone(), &positions, options.ridge)
                .map_err(|e| Error::Slice { slice: s, source: Box::new(e) })?;
            Ok(GrappaKernel {
                target: s,
                options,
                weights,
                residual,
            })
        })
        .collect()
}

/// Applies a slice-GRAPPA kernel at every grid position.
pub fn slice_grappa_apply(k_aligned: &MultiCoilKSpace, kernel: &GrappaKernel) -> Result<MultiCoilKSpace> {
    kernel.weights.apply_where(k_aligned, |_, _| true)
}

/// In-plane GRAPPA kernel synthesizing lines at `missing_offset` (relative to
/// the sampling lattice) from acquired lines of the same slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InPlaneKernel {
    pub slice: usize,
    pub missing_offset: usize,
    pub weights: KernelWeights,
    pub residual: f64,
}

fn inplane_taps(period: usize, missing_offset: usize, window_rows: usize) -> Vec<(isize, isize)> {
    let hr = (window_rows / 2) as isize;
    let first = -((INPLANE_SOURCE_LINES as isize) / 2 - 1);
    let mut taps = Vec::new();
    for dr in -hr..=hr {
        for k in 0..INPLANE_SOURCE_LINES as isize {
            taps.push((dr, -(missing_offset as isize) + (first + k) * period as isize));
        }
    }
    taps
}

/// Calibrates in-plane completion kernels for every missing lattice offset.
pub fn inplane_calibrate(
    reference: &MultiCoilKSpace,
    slice: usize,
    period: usize,
    acs: Range<usize>,
    window_rows: usize,
    ridge: f64,
) -> Result<Vec<InPlaneKernel>> {
    (1..period)
        .map(|m| {
            let taps = inplane_taps(period, m, window_rows);
            let positions = calibration_positions(reference.rows(), &acs, &taps);
            let (weights, residual) = fit_kernel(reference, reference, taps, &positions, ridge)?;
            Ok(InPlaneKernel {
                slice,
                missing_offset: m,
                weights,
                residual,
            })
        })
        .collect()
}

/// Fills every non-acquired line of `k` with the in-plane kernels; acquired
/// entries are copied unchanged.
pub fn inplane_complete(
    k: &MultiCoilKSpace,
    mask: &SamplingMask,
    kernels: &[InPlaneKernel],
    period: usize,
    offset: usize,
) -> Result<MultiCoilKSpace> {
    if period <= 1 || mask.is_all_ones() {
        return Ok(k.clone());
    }
    let cols = mask.cols();
    let mut out = k.clone();
    for kernel in kernels {
        let m = kernel.missing_offset;
        let filled = kernel.weights.apply_where(k, |r, c| {
            !mask.is_kept(r, c) && (c + cols * period - offset) % period == m
        })?;
        for (og, fg) in out.grids_mut().iter_mut().zip(filled.grids()) {
            for (i, v) in og.data_mut().iter_mut().enumerate() {
                let (r, c) = (i / cols, i % cols);
                if !mask.is_kept(r, c) && (c + cols * period - offset) % period == m {
                    *v = fg.data()[i];
                }
            }
        }
    }
    Ok(out)
}

/// All kernels needed by the calibrated predictors, the anchor and the
/// slice-GRAPPA baseline for one acquisition geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    /// Slice separation kernels with column stride equal to the acceleration.
    pub slice: Vec<GrappaKernel>,
    /// Contiguous-window separation kernels for the fully sampled ACS band.
    pub anchor: Vec<GrappaKernel>,
    /// Per slice, one in-plane kernel per missing lattice offset.
    pub inplane: Vec<Vec<InPlaneKernel>>,
    pub period: usize,
    pub offset: usize,
    pub acs: Range<usize>,
}

impl KernelSet {
    /// Calibrates every kernel from the ACS band of the collapsed measurement
    /// and single-slice reference data.
    pub fn calibrate(
        acs_collapsed: &MultiCoilKSpace,
        acs_slices: &SliceStack,
        scheme: &CaipiScheme,
        mask: &SamplingMask,
        options: KernelOptions,
    ) -> Result<Self> {
        let acs = mask.acs();
        if acs.is_empty() {
            return Err(Error::Degenerate("empty ACS band".into()));
        }
        let (period, offset) = mask
            .uniform_period()
            .ok_or_else(|| Error::UnsupportedMask("kernel calibration needs a uniform line mask".into()))?;
        let anchor_opts = KernelOptions { col_stride: 1, ..options };
        let anchor = grappa_calibrate(acs_collapsed, acs_slices, scheme, acs.clone(), anchor_opts)?;
        let slice = if period == 1 {
            anchor.clone()
        } else {
            let opts = KernelOptions { col_stride: period, ..options };
            grappa_calibrate(acs_collapsed, acs_slices, scheme, acs.clone(), opts)?
        };
        let inplane = (0..scheme.b())
            .map(|s| inplane_calibrate(acs_slices.slice(s)?, s, period, acs.clone(), options.window.0, options.ridge))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slice,
            anchor,
            inplane,
            period,
            offset,
            acs,
        })
    }

    pub fn b(&self) -> usize {
        self.slice.len()
    }

    pub fn slice_kernel(&self, s: usize) -> Result<&GrappaKernel> {
        self.slice
            .get(s)
            .ok_or_else(|| Error::Config(format!("no slice kernel for slice {s}")))
    }

    pub fn anchor_kernel(&self, s: usize) -> Result<&GrappaKernel> {
        self.anchor
            .get(s)
            .ok_or_else(|| Error::Config(format!("no anchor kernel for slice {s}")))
    }

    /// Slice separation estimate of slice `s` from its target-aligned
    /// measurement, restricted to acquired entries.
    pub fn separate(&self, y_aligned: &MultiCoilKSpace, mask: &SamplingMask, s: usize) -> Result<MultiCoilKSpace> {
        let kernel = self.slice_kernel(s)?;
        kernel.weights.apply_where(y_aligned, |r, c| mask.is_kept(r, c))
    }

    /// In-plane completion of a separated slice estimate.
    pub fn complete(&self, k: &MultiCoilKSpace, mask: &SamplingMask, s: usize) -> Result<MultiCoilKSpace> {
        let kernels = self
            .inplane
            .get(s)
            .ok_or_else(|| Error::Config(format!("no in-plane kernels for slice {s}")))?;
        inplane_complete(k, mask, kernels, self.period, self.offset)
    }

    /// Worst relative calibration residual across all kernels.
    pub fn max_residual(&self) -> f64 {
        let a = self.slice.iter().chain(&self.anchor).map(|k| k.residual);
        let b = self.inplane.iter().flatten().map(|k| k.residual);
        a.chain(b).fold(0.0, f64::max)
    }
}

/// Low-frequency anchor of every slice: anchor kernels applied to the
/// target-aligned measurement, zero outside the ACS lines.
pub fn low_frequency_anchor(
    y: &MultiCoilKSpace,
    mask: &SamplingMask,
    scheme: &CaipiScheme,
    kernels: &KernelSet,
) -> Result<Vec<MultiCoilKSpace>> {
    let acs = mask.acs();
    if acs.is_empty() {
        return Err(Error::Degenerate("empty ACS band".into()));
    }
    (0..scheme.b())
        .map(|s| {
            let aligned = caipi_inverse(y, scheme, s)?;
            kernels.anchor_kernel(s)?.weights.apply_where(&aligned, |_, c| acs.contains(&c))
        })
        .collect()
}
