//! Acquisition operators: CAIPI phase modulation, slice collapse, Cartesian
//! masking and the stage-specific degradation terms.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kspace::{ComplexGrid, MultiCoilKSpace, SliceStack, C64};

/// Per-slice FOV shift fractions along the phase-encoding (column) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CaipiScheme {
    shifts: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl CaipiScheme {
    pub fn new(shifts: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        if shifts.is_empty() {
            return Err(Error::Argument("a CAIPI scheme needs at least one slice".into()));
        }
        if let Some(f) = shifts.iter().find(|f| !(f.is_finite() && **f > -1.0 && **f <= 1.0)) {
            return Err(Error::Argument(format!("shift fraction {f} outside (-1, 1]")));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::Argument("scheme grid dimensions must be positive".into()));
        }
        Ok(Self { shifts, rows, cols })
    }

    pub fn b(&self) -> usize {
        self.shifts.len()
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn shift(&self, s: usize) -> Result<f64> {
        self.shifts
            .get(s)
            .copied()
            .ok_or_else(|| Error::Index(format!("slice {s} of {}", self.shifts.len())))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Image-domain shift of slice `s` in whole pixels, if it is an integer.
    pub fn pixel_shift(&self, s: usize) -> Result<Option<i64>> {
        let m = self.shift(s)? * self.cols as f64;
        let r = m.round();
        Ok(((m - r).abs() < 1e-9).then_some(r as i64))
    }

    fn check(&self, k: &MultiCoilKSpace) -> Result<()> {
        if (k.rows(), k.cols()) != (self.rows, self.cols) {
            return Err(Error::Shape(format!(
                "k-space {}x{} does not match scheme {}x{}",
                k.rows(),
                k.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// Column phase factors `exp(sign * 2πi f j')`, `j' = j - cols/2`.
    fn ramp(&self, fraction: f64, sign: f64) -> Vec<C64> {
        let half = (self.cols / 2) as f64;
        (0..self.cols)
            .map(|j| C64::from_polar(1.0, sign * 2.0 * PI * fraction * (j as f64 - half)))
            .collect()
    }
}

fn apply_ramp(k: &MultiCoilKSpace, ramp: &[C64]) -> MultiCoilKSpace {
    let cols = ramp.len();
    let grids = k
        .grids()
        .iter()
        .map(|g| {
            let mut out = g.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v *= ramp[i % cols];
            }
            out
        })
        .collect();
    MultiCoilKSpace::new(grids).expect("shape preserved")
}

/// Applies the CAIPI modulation of slice `s`: column `j` is multiplied by
/// `exp(-2πi f_s (j - cols/2))`, a circular image shift by `f_s` FOV.
pub fn caipi_apply(k: &MultiCoilKSpace, scheme: &CaipiScheme, s: usize) -> Result<MultiCoilKSpace> {
    scheme.check(k)?;
    let f = scheme.shift(s)?;
    if f == 0.0 {
        return Ok(k.clone());
    }
    Ok(apply_ramp(k, &scheme.ramp(f, -1.0)))
}

/// Conjugate ramp of [`caipi_apply`].
pub fn caipi_inverse(k: &MultiCoilKSpace, scheme: &CaipiScheme, s: usize) -> Result<MultiCoilKSpace> {
    scheme.check(k)?;
    let f = scheme.shift(s)?;
    if f == 0.0 {
        return Ok(k.clone());
    }
    Ok(apply_ramp(k, &scheme.ramp(f, 1.0)))
}

/// Sum over slices of the CAIPI-modulated slice k-spaces.
pub fn sms_collapse(stack: &SliceStack, scheme: &CaipiScheme) -> Result<MultiCoilKSpace> {
    if stack.b() != scheme.b() {
        return Err(Error::Shape(format!(
            "stack has {} slices, scheme has {}",
            stack.b(),
            scheme.b()
        )));
    }
    let mut acc = caipi_apply(stack.slice(0)?, scheme, 0)?;
    for s in 1..stack.b() {
        acc = acc.add(&caipi_apply(stack.slice(s)?, scheme, s)?)?;
    }
    Ok(acc)
}

/// Binary Cartesian mask with a fully sampled central band of phase-encode
/// lines (columns) used for calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    rows: usize,
    cols: usize,
    kept: Vec<u8>,
    acs: Range<usize>,
}

impl SamplingMask {
    pub fn new(rows: usize, cols: usize, kept: Vec<u8>, acs: Range<usize>) -> Result<Self> {
        if rows == 0 || cols == 0 || kept.len() != rows * cols {
            return Err(Error::Shape(format!(
                "mask {rows}x{cols} with {} entries",
                kept.len()
            )));
        }
        if kept.iter().any(|&v| v > 1) {
            return Err(Error::InvalidData("mask entries must be 0 or 1".into()));
        }
        if acs.start > acs.end || acs.end > cols {
            return Err(Error::Argument(format!("ACS band {acs:?} outside 0..{cols}")));
        }
        for c in acs.clone() {
            if (0..rows).any(|r| kept[r * cols + c] == 0) {
                return Err(Error::InvalidData(format!("ACS line {c} is not fully kept")));
            }
        }
        Ok(Self { rows, cols, kept, acs })
    }

    /// Mask built from a per-column keep pattern (whole phase-encode lines).
    pub fn from_lines(rows: usize, lines: &[bool], acs: Range<usize>) -> Result<Self> {
        let cols = lines.len();
        let mut kept = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            kept.extend(lines.iter().map(|&l| l as u8));
        }
        Self::new(rows, cols, kept, acs)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![1; rows * cols], 0..0).expect("valid")
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

    pub fn kept(&self) -> &[u8] {
        &self.kept
    }

    #[inline]
    pub fn is_kept(&self, r: usize, c: usize) -> bool {
        self.kept[r * self.cols + c] == 1
    }

    pub fn acs(&self) -> Range<usize> {
        self.acs.clone()
    }

    pub fn is_all_ones(&self) -> bool {
        self.kept.iter().all(|&v| v == 1)
    }

    pub fn is_all_zeros(&self) -> bool {
        self.kept.iter().all(|&v| v == 0)
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().map(|&v| v as usize).sum()
    }

    /// Whether column `c` is kept on every row.
    pub fn line_kept(&self, c: usize) -> bool {
        (0..self.rows).all(|r| self.is_kept(r, c))
    }

    /// Per-column keep pattern, if the mask consists of whole lines.
    pub fn line_pattern(&self) -> Option<Vec<bool>> {
        let pattern: Vec<bool> = (0..self.cols).map(|c| self.is_kept(0, c)).collect();
        let whole = (0..self.rows).all(|r| (0..self.cols).all(|c| self.is_kept(r, c) == pattern[c]));
        whole.then_some(pattern)
    }

    /// Uniform period `(r, offset)` of the kept lines outside the ACS band.
    pub fn uniform_period(&self) -> Option<(usize, usize)> {
        let pattern = self.line_pattern()?;
        let outside: Vec<usize> = (0..self.cols).filter(|c| !self.acs.contains(c)).collect();
        let first = outside.iter().copied().find(|&c| pattern[c])?;
        for r in 1..=self.cols {
            let offset = first % r;
            if outside.iter().all(|&c| pattern[c] == ((c + self.cols - offset) % r == 0)) {
                return Some((r, offset));
            }
        }
        None
    }

    fn check(&self, k: &MultiCoilKSpace) -> Result<()> {
        if (k.rows(), k.cols()) != self.shape() {
            return Err(Error::Shape(format!(
                "k-space {}x{} does not match mask {}x{}",
                k.rows(),
                k.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }
}

/// Zeroes every entry the mask does not keep.
pub fn apply_mask(k: &MultiCoilKSpace, mask: &SamplingMask) -> Result<MultiCoilKSpace> {
    mask.check(k)?;
    let grids = k
        .grids()
        .iter()
        .map(|g| {
            let mut out = g.clone();
            for (v, &m) in out.data_mut().iter_mut().zip(mask.kept()) {
                if m == 0 {
                    *v = C64::new(0.0, 0.0);
                }
            }
            out
        })
        .collect();
    MultiCoilKSpace::new(grids)
}

/// Masked collapse plus circular complex Gaussian noise on the kept entries.
///
/// Noise has `E|n|^2 = noise_sigma^2` (each component `noise_sigma / sqrt(2)`)
/// and is drawn in coil, row, column order from a ChaCha8 stream seeded with
/// `seed`.
pub fn measure(
    stack: &SliceStack,
    scheme: &CaipiScheme,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<MultiCoilKSpace> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Argument(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let mut y = apply_mask(&sms_collapse(stack, scheme)?, mask)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma / 2f64.sqrt()).expect("valid sigma");
        for g in y.grids_mut() {
            for (v, &m) in g.data_mut().iter_mut().zip(mask.kept()) {
                if m == 1 {
                    let re = normal.sample(&mut rng);
                    let im = normal.sample(&mut rng);
                    *v += C64::new(re, im);
                }
            }
        }
    }
    Ok(y)
}

/// Collapsed k-space expressed in the coordinate frame of slice `s_star`.
pub fn target_aligned_collapse(
    stack: &SliceStack,
    scheme: &CaipiScheme,
    s_star: usize,
) -> Result<MultiCoilKSpace> {
    scheme.shift(s_star)?;
    caipi_inverse(&sms_collapse(stack, scheme)?, scheme, s_star)
}

/// Which degradation a trajectory corrects: slice superposition (`M`) or
/// in-plane undersampling (`U`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    M,
    U,
}

impl Stage {
    pub fn as_char(self) -> char {
        match self {
            Stage::M => 'M',
            Stage::U => 'U',
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "M" => Ok(Stage::M),
            "U" => Ok(Stage::U),
            other => Err(Error::Argument(format!("unknown stage {other:?}"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Structured degradation `d` of a stage, shaped like the state it corrects.
#[derive(Debug, Clone, PartialEq)]
pub struct Degradation {
    pub field: MultiCoilKSpace,
    pub stage: Stage,
}

impl Degradation {
    pub fn new(field: MultiCoilKSpace, stage: Stage) -> Self {
        Self { field, stage }
    }

    pub fn zeros_like(k: &MultiCoilKSpace, stage: Stage) -> Self {
        let (c, r, n) = k.dims();
        Self::new(MultiCoilKSpace::zeros(c, r, n), stage)
    }
}

/// Interference from the non-target slices in the target-aligned frame.
pub fn degradation_m(stack: &SliceStack, scheme: &CaipiScheme, s_star: usize) -> Result<Degradation> {
    let aligned = target_aligned_collapse(stack, scheme, s_star)?;
    Ok(Degradation::new(aligned.sub(stack.slice(s_star)?)?, Stage::M))
}

/// Missing-data corruption `P⊙k − k`.
pub fn degradation_u(k: &MultiCoilKSpace, mask: &SamplingMask) -> Result<Degradation> {
    mask.check(k)?;
    let grids = k
        .grids()
        .iter()
        .map(|g| {
            let data = g
                .data()
                .iter()
                .zip(mask.kept())
                .map(|(&v, &m)| if m == 1 { C64::new(0.0, 0.0) } else { -v })
                .collect();
            ComplexGrid::new(g.rows(), g.cols(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Degradation::new(MultiCoilKSpace::new(grids)?, Stage::U))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::ifft2_coils;
    use crate::testutil::{random_multicoil, random_stack};

    #[test]
    fn zero_shift_is_identity() {
        let k = random_multicoil(2, 8, 12, 1);
        let scheme = CaipiScheme::new(vec![0.0], 8, 12).unwrap();
        assert_eq!(caipi_apply(&k, &scheme, 0).unwrap(), k);
        assert_eq!(caipi_inverse(&k, &scheme, 0).unwrap(), k);
    }

    #[test]
    fn third_fov_shift_on_192_columns_is_64_pixels() {
        let (rows, cols) = (6, 192);
        let k = random_multicoil(2, rows, cols, 2);
        let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0], rows, cols).unwrap();
        assert_eq!(scheme.pixel_shift(1).unwrap(), Some(64));
        let shifted = ifft2_coils(&caipi_apply(&k, &scheme, 1).unwrap()).unwrap();
        let img = ifft2_coils(&k).unwrap();
        for (a, b) in shifted.grids().iter().zip(img.grids()) {
            for r in 0..rows {
                for c in 0..cols {
                    let src = (c + cols - 64) % cols;
                    assert!((a.get(r, c) - b.get(r, src)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn modulation_preserves_energy_and_inverts() {
        let k = random_multicoil(3, 8, 10, 3);
        let scheme = CaipiScheme::new(vec![0.37, -0.81], 8, 10).unwrap();
        for s in 0..2 {
            let m = caipi_apply(&k, &scheme, s).unwrap();
            assert!(((m.norm() - k.norm()) / k.norm()).abs() < 1e-12);
            let back = caipi_inverse(&m, &scheme, s).unwrap();
            assert!(back.rel_diff(&k).unwrap() < 1e-12);
        }
    }

    #[test]
    fn ramps_compose_additively() {
        let k = random_multicoil(2, 6, 9, 4);
        let a = CaipiScheme::new(vec![1.0 / 3.0], 6, 9).unwrap();
        let b = CaipiScheme::new(vec![-1.0 / 3.0], 6, 9).unwrap();
        let twice = caipi_apply(&caipi_apply(&k, &a, 0).unwrap(), &b, 0).unwrap();
        assert!(twice.rel_diff(&k).unwrap() < 1e-12);
        let c = CaipiScheme::new(vec![0.2], 6, 9).unwrap();
        let d = CaipiScheme::new(vec![0.3], 6, 9).unwrap();
        let sum = CaipiScheme::new(vec![0.5], 6, 9).unwrap();
        let composed = caipi_apply(&caipi_apply(&k, &c, 0).unwrap(), &d, 0).unwrap();
        let single = caipi_apply(&k, &sum, 0).unwrap();
        assert!(composed.rel_diff(&single).unwrap() < 1e-12);
        let inv = caipi_inverse(&k, &a, 0).unwrap();
        assert!(inv.rel_diff(&caipi_apply(&k, &b, 0).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn scheme_validation() {
        assert!(CaipiScheme::new(vec![], 4, 4).is_err());
        assert!(CaipiScheme::new(vec![-1.0], 4, 4).is_err());
        assert!(CaipiScheme::new(vec![1.0], 4, 4).is_ok());
        let scheme = CaipiScheme::new(vec![0.0], 4, 4).unwrap();
        let k = random_multicoil(1, 4, 5, 5);
        assert!(matches!(caipi_apply(&k, &scheme, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn collapse_single_slice_and_zero_summand() {
        let stack = random_stack(1, 2, 8, 8, 6);
        let s1 = CaipiScheme::new(vec![0.0], 8, 8).unwrap();
        assert_eq!(sms_collapse(&stack, &s1).unwrap(), stack.slices()[0]);

        let k1 = random_multicoil(2, 8, 8, 7);
        let zero = MultiCoilKSpace::zeros(2, 8, 8);
        let stack2 = SliceStack::new(vec![k1.clone(), zero]).unwrap();
        let s2 = CaipiScheme::new(vec![0.0, 0.5], 8, 8).unwrap();
        assert_eq!(sms_collapse(&stack2, &s2).unwrap(), k1);
    }

    #[test]
    fn collapse_matches_scalar_loop() {
        let (rows, cols) = (6, 9);
        let stack = random_stack(3, 2, rows, cols, 8);
        let shifts = [0.0, 1.0 / 3.0, -1.0 / 3.0];
        let scheme = CaipiScheme::new(shifts.to_vec(), rows, cols).unwrap();
        let out = sms_collapse(&stack, &scheme).unwrap();
        for c in 0..2 {
            for r in 0..rows {
                for j in 0..cols {
                    let mut acc = C64::new(0.0, 0.0);
                    for (s, f) in shifts.iter().enumerate() {
                        let jp = j as f64 - (cols / 2) as f64;
                        let ph = C64::new(0.0, -2.0 * PI * f * jp).exp();
                        acc += stack.slices()[s].grid(c).get(r, j) * ph;
                    }
                    assert!((out.grid(c).get(r, j) - acc).norm() < 1e-12);
                }
            }
        }
        let bad = CaipiScheme::new(vec![0.0, 0.5], rows, cols).unwrap();
        assert!(sms_collapse(&stack, &bad).is_err());
    }

    #[test]
    fn masking_contracts() {
        let k = random_multicoil(2, 4, 8, 9);
        assert_eq!(apply_mask(&k, &SamplingMask::ones(4, 8)).unwrap(), k);

        let lines: Vec<bool> = (0..8).map(|c| c % 2 == 0).collect();
        let mask = SamplingMask::from_lines(4, &lines, 4..4).unwrap();
        let once = apply_mask(&k, &mask).unwrap();
        assert_eq!(apply_mask(&once, &mask).unwrap(), once);
        for (c, r, j, v) in once.iter_indexed() {
            if j % 2 == 0 {
                assert_eq!(v, k.grid(c).get(r, j));
            } else {
                assert_eq!(v, C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn mask_rejects_partial_acs() {
        let lines: Vec<bool> = (0..8).map(|c| c % 2 == 0).collect();
        assert!(SamplingMask::from_lines(4, &lines, 2..5).is_err());
        let mut lines = lines;
        lines[3] = true;
        let mask = SamplingMask::from_lines(4, &lines, 2..5).unwrap();
        assert_eq!(mask.uniform_period(), Some((2, 0)));
    }

    #[test]
    fn measurement_noise() {
        let stack = random_stack(1, 1, 4, 4, 10);
        let scheme = CaipiScheme::new(vec![0.0], 4, 4).unwrap();
        let mask = SamplingMask::ones(4, 4);
        let clean = measure(&stack, &scheme, &mask, 0.0, 1).unwrap();
        assert_eq!(clean, apply_mask(&sms_collapse(&stack, &scheme).unwrap(), &mask).unwrap());
        assert_eq!(
            measure(&stack, &scheme, &mask, 0.3, 7).unwrap(),
            measure(&stack, &scheme, &mask, 0.3, 7).unwrap()
        );
        assert!(measure(&stack, &scheme, &mask, -1.0, 7).is_err());

        // 100x100 kept samples; per-component std should be sigma / sqrt(2)
        let zero = SliceStack::new(vec![MultiCoilKSpace::zeros(1, 100, 100)]).unwrap();
        let scheme = CaipiScheme::new(vec![0.0], 100, 100).unwrap();
        let noise = measure(&zero, &scheme, &SamplingMask::ones(100, 100), 0.1, 42).unwrap();
        let vals = noise.grid(0).data();
        let n = vals.len() as f64;
        let std_of = |f: &dyn Fn(&C64) -> f64| {
            let mean = vals.iter().map(f).sum::<f64>() / n;
            (vals.iter().map(|v| (f(v) - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let c = 1.0 / 2f64.sqrt();
        for s in [std_of(&|v| v.re), std_of(&|v| v.im)] {
            assert!(s >= 0.095 * c && s <= 0.105 * c, "std {s}");
        }
    }

    #[test]
    fn noise_only_on_kept_entries() {
        let stack = random_stack(1, 1, 4, 8, 11);
        let scheme = CaipiScheme::new(vec![0.0], 4, 8).unwrap();
        let lines: Vec<bool> = (0..8).map(|c| c % 2 == 0).collect();
        let mask = SamplingMask::from_lines(4, &lines, 0..0).unwrap();
        let y = measure(&stack, &scheme, &mask, 0.5, 3).unwrap();
        for (_, r, c, v) in y.iter_indexed() {
            if !mask.is_kept(r, c) {
                assert_eq!(v, C64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn target_alignment() {
        let stack = random_stack(1, 2, 6, 6, 12);
        let scheme = CaipiScheme::new(vec![0.5], 6, 6).unwrap();
        let aligned = target_aligned_collapse(&stack, &scheme, 0).unwrap();
        assert!(aligned.rel_diff(&stack.slices()[0]).unwrap() < 1e-15);

        let stack = random_stack(3, 2, 6, 9, 13);
        let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0, -1.0 / 3.0], 6, 9).unwrap();
        assert_eq!(
            target_aligned_collapse(&stack, &scheme, 0).unwrap(),
            sms_collapse(&stack, &scheme).unwrap()
        );
        assert!(matches!(target_aligned_collapse(&stack, &scheme, 3), Err(Error::Index(_))));

        // term-by-term relative ramps exp(-2πi (f_s - f_*) j')
        let s_star = 1;
        let aligned = target_aligned_collapse(&stack, &scheme, s_star).unwrap();
        let f = scheme.shifts();
        for (c, r, j, v) in aligned.iter_indexed() {
            let jp = j as f64 - 4.0;
            let mut acc = stack.slices()[s_star].grid(c).get(r, j);
            for s in (0..3).filter(|&s| s != s_star) {
                acc += stack.slices()[s].grid(c).get(r, j) * C64::new(0.0, -2.0 * PI * (f[s] - f[s_star]) * jp).exp();
            }
            assert!((v - acc).norm() < 1e-12);
        }
    }

    #[test]
    fn degradation_identities() {
        let stack = random_stack(1, 2, 6, 6, 14);
        let scheme = CaipiScheme::new(vec![0.0], 6, 6).unwrap();
        assert_eq!(degradation_m(&stack, &scheme, 0).unwrap().field.norm(), 0.0);

        let k = random_multicoil(2, 6, 9, 15);
        let zero = MultiCoilKSpace::zeros(2, 6, 9);
        let stack = SliceStack::new(vec![zero.clone(), k.clone(), zero]).unwrap();
        let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0, -1.0 / 3.0], 6, 9).unwrap();
        let d = degradation_m(&stack, &scheme, 1).unwrap();
        assert!(d.field.norm() < 1e-15);
        assert_eq!(d.stage, Stage::M);

        let stack = random_stack(3, 2, 6, 9, 16);
        let d = degradation_m(&stack, &scheme, 2).unwrap();
        let lhs = stack.slices()[2].add(&d.field).unwrap();
        let rhs = target_aligned_collapse(&stack, &scheme, 2).unwrap();
        assert!(lhs.rel_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn undersampling_degradation() {
        let k = random_multicoil(2, 4, 8, 17);
        let d = degradation_u(&k, &SamplingMask::ones(4, 8)).unwrap();
        assert_eq!(d.field.norm(), 0.0);
        let zeros = SamplingMask::new(4, 8, vec![0; 32], 0..0).unwrap();
        assert_eq!(degradation_u(&k, &zeros).unwrap().field, k.scale(-1.0));

        let kept: Vec<u8> = (0..32).map(|i| ((i * 7 + 3) % 5 < 2) as u8).collect();
        let mask = SamplingMask::new(4, 8, kept, 0..0).unwrap();
        let d = degradation_u(&k, &mask).unwrap();
        assert_eq!(k.add(&d.field).unwrap(), apply_mask(&k, &mask).unwrap());
        assert_eq!(d.stage, Stage::U);
    }

    #[test]
    fn masking_commutes_with_alignment_for_line_masks() {
        let stack = random_stack(3, 2, 6, 12, 18);
        let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0, -1.0 / 3.0], 6, 12).unwrap();
        let lines: Vec<bool> = (0..12).map(|c| c % 3 == 0).collect();
        let mask = SamplingMask::from_lines(6, &lines, 0..0).unwrap();
        let y = measure(&stack, &scheme, &mask, 0.0, 0).unwrap();
        for s in 0..3 {
            let a = apply_mask(&caipi_inverse(&sms_collapse(&stack, &scheme).unwrap(), &scheme, s).unwrap(), &mask).unwrap();
            let b = caipi_inverse(&y, &scheme, s).unwrap();
            assert!(a.rel_diff(&b).unwrap() < 1e-15);
        }
    }
}
