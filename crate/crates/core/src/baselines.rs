//! Reference reconstructions: zero filling, SMS-SENSE and slice-GRAPPA.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kspace::{fft2_centered, ifft2_centered, ComplexGrid, MultiCoilKSpace, SliceStack, C64};
use crate::operators::{caipi_inverse, CaipiScheme, SamplingMask};
use crate::predictors::KernelSet;

/// Pixels whose ACS image RSS falls below this fraction of the slice maximum
/// get zero sensitivity.
pub const SENSITIVITY_THRESHOLD: f64 = 0.05;

/// Per-slice, per-coil image-domain sensitivity maps.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivitySet {
    maps: Vec<Vec<ComplexGrid>>,
}

impl CoilSensitivitySet {
    pub fn new(maps: Vec<Vec<ComplexGrid>>) -> Result<Self> {
        let first = maps
            .first()
            .and_then(|m| m.first())
            .ok_or_else(|| Error::Shape("sensitivity set needs at least one slice and coil".into()))?;
        let shape = first.shape();
        let coils = maps[0].len();
        for m in &maps {
            if m.len() != coils || m.iter().any(|g| g.shape() != shape) {
                return Err(Error::Shape("sensitivity maps disagree in coil count or grid shape".into()));
            }
            for g in m {
                g.ensure_finite()?;
            }
        }
        Ok(Self { maps })
    }

    pub fn b(&self) -> usize {
        self.maps.len()
    }

    pub fn coils(&self) -> usize {
        self.maps[0].len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.maps[0][0].shape()
    }

    pub fn slice_maps(&self, s: usize) -> Result<&[ComplexGrid]> {
        self.maps
            .get(s)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Index(format!("sensitivity slice {s} out of range 0..{}", self.maps.len())))
    }

    pub fn maps(&self) -> &[Vec<ComplexGrid>] {
        &self.maps
    }
}

/// The target-aligned measurement of slice `s_star`, untouched.
pub fn zero_fill_reconstruct(y: &MultiCoilKSpace, scheme: &CaipiScheme, s_star: usize) -> Result<MultiCoilKSpace> {
    caipi_inverse(y, scheme, s_star)
}

/// Slice-GRAPPA: stride-R slice separation followed by in-plane GRAPPA
/// completion, per slice.
pub fn slice_grappa_reconstruct(
    y: &MultiCoilKSpace,
    scheme: &CaipiScheme,
    mask: &SamplingMask,
    kernels: &KernelSet,
) -> Result<SliceStack> {
    if mask.is_all_zeros() {
        return Err(Error::Degenerate("sampling mask keeps no entries".into()));
    }
    let slices = (0..scheme.b())
        .map(|s| {
            let aligned = caipi_inverse(y, scheme, s)?;
            let separated = kernels.separate(&aligned, mask, s)?;
            kernels.complete(&separated, mask, s)
        })
        .collect::<Result<Vec<_>>>()?;
    SliceStack::new(slices)
}

/// Sensitivity maps from the ACS band of single-slice reference data.
///
/// The band is tapered with a raised cosine, zero-padded and transformed;
/// each map is the coil image over the coil RSS, zero where the RSS is below
/// [`SENSITIVITY_THRESHOLD`] of the slice maximum.
pub fn estimate_sensitivities(acs_slices: &SliceStack, acs: Range<usize>) -> Result<CoilSensitivitySet> {
    if acs.is_empty() {
        return Err(Error::Degenerate("empty ACS band".into()));
    }
    let (_, rows, cols) = acs_slices.dims();
    if acs.end > cols {
        return Err(Error::Shape(format!("ACS band {acs:?} exceeds {cols} columns")));
    }
    let width = acs.len() as f64;
    let taper: Vec<f64> = (0..cols)
        .map(|c| {
            if !acs.contains(&c) {
                return 0.0;
            }
            let u = (c - acs.start) as f64 + 0.5;
            0.5 * (1.0 - (2.0 * std::f64::consts::PI * u / width).cos())
        })
        .collect();
    let mut maps = Vec::with_capacity(acs_slices.b());
    for k in acs_slices.slices() {
        let imgs = k
            .grids()
            .iter()
            .map(|g| ifft2_centered(&ComplexGrid::from_fn(rows, cols, |r, c| g.get(r, c) * taper[c])))
            .collect::<Result<Vec<_>>>()?;
        let rss: Vec<f64> = (0..rows * cols)
            .map(|i| imgs.iter().map(|g| g.data()[i].norm_sqr()).sum::<f64>().sqrt())
            .collect();
        let peak = rss.iter().copied().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Degenerate("ACS reference data are all zero".into()));
        }
        let floor = SENSITIVITY_THRESHOLD * peak;
        let slice_maps = imgs
            .iter()
            .map(|g| {
                ComplexGrid::new(
                    rows,
                    cols,
                    g.data()
                        .iter()
                        .zip(&rss)
                        .map(|(&v, &n)| if n >= floor { v / n } else { C64::new(0.0, 0.0) })
                        .collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        maps.push(slice_maps);
    }
    CoilSensitivitySet::new(maps)
}

/// Column aliasing kernel of a periodic line pattern: the image-domain
/// response at column `j` to a unit impulse at column 0.
fn alias_kernel(pattern: &[bool]) -> Result<Vec<C64>> {
    let n = pattern.len();
    let delta = ComplexGrid::from_fn(1, n, |_, c| if c == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let mut k = fft2_centered(&delta)?;
    for (v, &keep) in k.data_mut().iter_mut().zip(pattern) {
        if !keep {
            *v = C64::new(0.0, 0.0);
        }
    }
    Ok(ifft2_centered(&k)?.into_data())
}

fn solve_tikhonov(a: &DMatrix<C64>, b: &DVector<C64>, tikhonov: f64) -> Result<DVector<C64>> {
    let n = a.ncols();
    let mut normal = a.ad_mul(a);
    for i in 0..n {
        normal[(i, i)] += C64::new(tikhonov, 0.0);
    }
    let singular = || {
        if tikhonov == 0.0 {
            Error::Solver("SENSE system is singular; use tikhonov > 0".into())
        } else {
            Error::Solver("SENSE system is numerically singular; increase tikhonov".into())
        }
    };
    let chol = normal.cholesky().ok_or_else(singular)?;
    let (lo, hi) = (0..n)
        .map(|i| chol.l_dirty()[(i, i)].re)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(singular());
    }
    Ok(chol.solve(&a.ad_mul(b)))
}

/// SMS-SENSE: per aliased pixel group, Tikhonov-regularized least squares
/// over all contributing slices and in-plane replicas.
///
/// Only the uniform lattice lines of the mask are used; extra ACS lines are
/// dropped so that aliasing stays periodic. CAIPI shifts must be whole
/// pixels and the period must divide the column count.
pub fn sense_reconstruct(
    y: &MultiCoilKSpace,
    scheme: &CaipiScheme,
    mask: &SamplingMask,
    sens: &CoilSensitivitySet,
    tikhonov: f64,
) -> Result<SliceStack> {
    if !(tikhonov >= 0.0 && tikhonov.is_finite()) {
        return Err(Error::Argument(format!("tikhonov {tikhonov} must be >= 0")));
    }
    let (coils, rows, cols) = y.dims();
    if mask.shape() != (rows, cols) || scheme.shape() != (rows, cols) || sens.shape() != (rows, cols) {
        return Err(Error::Shape("measurement, mask, scheme and sensitivities differ in grid shape".into()));
    }
    if sens.b() != scheme.b() || sens.coils() != coils {
        return Err(Error::Shape(format!(
            "sensitivities cover {} slices x {} coils, measurement has {} x {}",
            sens.b(),
            sens.coils(),
            scheme.b(),
            coils
        )));
    }
    if mask.is_all_zeros() {
        return Err(Error::Degenerate("sampling mask keeps no entries".into()));
    }
    let (period, offset) = mask
        .uniform_period()
        .ok_or_else(|| Error::UnsupportedMask("SENSE needs a uniform line mask".into()))?;
    if cols % period != 0 {
        return Err(Error::UnsupportedMask(format!("period {period} does not divide {cols} columns")));
    }
    let shifts = (0..scheme.b())
        .map(|s| {
            scheme
                .pixel_shift(s)?
                .ok_or_else(|| Error::UnsupportedMask(format!("CAIPI shift of slice {s} is not a whole pixel")))
        })
        .collect::<Result<Vec<i64>>>()?;

    let pattern: Vec<bool> = (0..cols).map(|c| (c + period - offset % period) % period == 0).collect();
    let g = alias_kernel(&pattern)?;
    let step = cols / period;
    let peak = g.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if g.iter().enumerate().any(|(j, v)| j % step != 0 && v.norm() > 1e-9 * peak) {
        return Err(Error::UnsupportedMask("line pattern does not alias periodically".into()));
    }
    let taps: Vec<C64> = (0..period).map(|k| g[k * step]).collect();

    let aliased = y
        .grids()
        .iter()
        .map(|k| {
            let lattice = ComplexGrid::from_fn(rows, cols, |r, c| if pattern[c] { k.get(r, c) } else { C64::new(0.0, 0.0) });
            ifft2_centered(&lattice)
        })
        .collect::<Result<Vec<_>>>()?;

    let b = scheme.b();
    let mut images: Vec<ComplexGrid> = (0..b).map(|_| ComplexGrid::zeros(rows, cols)).collect();
    for r in 0..rows {
        for n in 0..step {
            // unknowns (slice, replica index, pixel) with nonzero sensitivity
            let mut unknowns = Vec::with_capacity(b * period);
            for (s, &m) in shifts.iter().enumerate() {
                let maps = sens.slice_maps(s)?;
                for i in 0..period {
                    let p = (n as i64 - m + (i * step) as i64).rem_euclid(cols as i64) as usize;
                    if maps.iter().any(|map| map.get(r, p) != C64::new(0.0, 0.0)) {
                        unknowns.push((s, i, p));
                    }
                }
            }
            if unknowns.is_empty() {
                continue;
            }
            let mut a = DMatrix::<C64>::zeros(coils * period, unknowns.len());
            let mut rhs = DVector::<C64>::zeros(coils * period);
            for j in 0..period {
                let col = n + j * step;
                for c in 0..coils {
                    let row = j * coils + c;
                    rhs[row] = aliased[c].get(r, col);
                    for (u, &(s, i, p)) in unknowns.iter().enumerate() {
                        a[(row, u)] = taps[(j + period - i) % period] * sens.slice_maps(s)?[c].get(r, p);
                    }
                }
            }
            let x = solve_tikhonov(&a, &rhs, tikhonov)?;
            for (u, &(s, _, p)) in unknowns.iter().enumerate() {
                images[s].set(r, p, x[u]);
            }
        }
    }

    let slices = images
        .iter()
        .enumerate()
        .map(|(s, img)| {
            let grids = sens
                .slice_maps(s)?
                .iter()
                .map(|map| fft2_centered(&img.zip_map(map, |v, w| v * w)?))
                .collect::<Result<Vec<_>>>()?;
            MultiCoilKSpace::new(grids)
        })
        .collect::<Result<Vec<_>>>()?;
    SliceStack::new(slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kspace::{rss_combine, MultiCoilKSpace};
    use crate::operators::{apply_mask, sms_collapse};
    use crate::predictors::KernelOptions;
    use crate::simulation::{acs_reference, build_case, ring_coil_maps, uniform_mask, PhantomSpec};
    use crate::testutil::random_multicoil;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nmse(a: &MultiCoilKSpace, b: &MultiCoilKSpace) -> f64 {
        a.sub(b).unwrap().norm_sqr() / b.norm_sqr()
    }

    /// Smooth complex image without zeros.
    fn smooth_image(rows: usize, cols: usize, seed: u64) -> ComplexGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        ComplexGrid::from_fn(rows, cols, |r, col| {
            let x = col as f64 / cols as f64;
            let y = r as f64 / rows as f64;
            C64::from_polar(1.0 + 0.5 * (6.0 * x + a).sin() * (4.0 * y + b).cos(), 2.0 * c * x)
        })
    }

    fn stack_from_images(images: &[ComplexGrid], sens: &CoilSensitivitySet) -> SliceStack {
        SliceStack::new(
            images
                .iter()
                .enumerate()
                .map(|(s, img)| {
                    MultiCoilKSpace::new(
                        sens.slice_maps(s)
                            .unwrap()
                            .iter()
                            .map(|m| fft2_centered(&img.zip_map(m, |v, w| v * w).unwrap()).unwrap())
                            .collect(),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_fill_cases() {
        let c = build_case(&PhantomSpec { coils: 2, ..Default::default() }, 1, 1, 32, 0).unwrap();
        assert_eq!(zero_fill_reconstruct(&c.measurement, &c.scheme, 0).unwrap(), c.truth.slices()[0]);

        let c = build_case(&PhantomSpec { coils: 2, ..Default::default() }, 3, 1, 32, 0).unwrap();
        for s in 0..3 {
            let z = zero_fill_reconstruct(&c.measurement, &c.scheme, s).unwrap();
            assert!(nmse(&z, &c.truth.slices()[s]) > 0.1);
        }

        let y1 = random_multicoil(2, 4, 6, 1);
        let y2 = random_multicoil(2, 4, 6, 2);
        let scheme = CaipiScheme::new(vec![0.0, 0.5], 4, 6).unwrap();
        let lhs = zero_fill_reconstruct(&y1.scale(2.0).add(&y2).unwrap(), &scheme, 1).unwrap();
        let rhs = zero_fill_reconstruct(&y1, &scheme, 1).unwrap().scale(2.0).add(&zero_fill_reconstruct(&y2, &scheme, 1).unwrap()).unwrap();
        assert!(lhs.rel_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn sense_single_coil_single_slice_is_exact() {
        let sens = CoilSensitivitySet::new(vec![vec![ComplexGrid::from_fn(8, 8, |_, _| C64::new(1.0, 0.0))]]).unwrap();
        let k = random_multicoil(1, 8, 8, 3);
        let scheme = CaipiScheme::new(vec![0.0], 8, 8).unwrap();
        let out = sense_reconstruct(&k, &scheme, &SamplingMask::ones(8, 8), &sens, 0.0).unwrap();
        assert!(out.slices()[0].rel_diff(&k).unwrap() < 1e-10);
    }

    /// Forward model of the whole problem as a dense matrix, built column by
    /// column from unit images.
    fn dense_forward(scheme: &CaipiScheme, mask: &SamplingMask, sens: &CoilSensitivitySet) -> DMatrix<C64> {
        let (rows, cols) = scheme.shape();
        let b = scheme.b();
        let coils = sens.coils();
        let n = rows * cols;
        let mut a = DMatrix::<C64>::zeros(coils * n, b * n);
        for s in 0..b {
            for p in 0..n {
                let mut images: Vec<ComplexGrid> = (0..b).map(|_| ComplexGrid::zeros(rows, cols)).collect();
                images[s].data_mut()[p] = C64::new(1.0, 0.0);
                let stack = stack_from_images(&images, sens);
                let y = apply_mask(&sms_collapse(&stack, scheme).unwrap(), mask).unwrap();
                for (i, (_, _, _, v)) in y.iter_indexed().enumerate() {
                    a[(i, s * n + p)] = v;
                }
            }
        }
        a
    }

    #[test]
    fn sense_matches_dense_least_squares() {
        let (rows, cols) = (16, 16);
        let scheme = CaipiScheme::new(vec![0.0, 0.5], rows, cols).unwrap();
        let sens = CoilSensitivitySet::new(vec![ring_coil_maps(rows, cols, 2, 0.0), ring_coil_maps(rows, cols, 2, 1.0)]).unwrap();
        let images = vec![smooth_image(rows, cols, 1), smooth_image(rows, cols, 2)];
        let truth = stack_from_images(&images, &sens);
        let mask = SamplingMask::ones(rows, cols);
        let y = sms_collapse(&truth, &scheme).unwrap();

        let out = sense_reconstruct(&y, &scheme, &mask, &sens, 0.0).unwrap();

        let a = dense_forward(&scheme, &mask, &sens);
        let rhs = DVector::from_iterator(y.iter_indexed().count(), y.iter_indexed().map(|(_, _, _, v)| v));
        let x = a.clone().svd(true, true).solve(&rhs, 1e-12).unwrap();
        let n = rows * cols;
        let dense_images: Vec<ComplexGrid> = (0..2)
            .map(|s| ComplexGrid::new(rows, cols, x.as_slice()[s * n..(s + 1) * n].to_vec()).unwrap())
            .collect();
        let dense = stack_from_images(&dense_images, &sens);
        for s in 0..2 {
            assert!(nmse(&out.slices()[s], &dense.slices()[s]) < 1e-8);
            assert!(nmse(&out.slices()[s], &truth.slices()[s]) < 1e-8);
        }
    }

    #[test]
    fn sense_with_undersampling_matches_dense_least_squares() {
        let (rows, cols) = (8, 12);
        let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0, -1.0 / 3.0], rows, cols).unwrap();
        let sens = CoilSensitivitySet::new((0..3).map(|s| ring_coil_maps(rows, cols, 8, s as f64 * 0.3)).collect()).unwrap();
        let images: Vec<_> = (0..3).map(|s| smooth_image(rows, cols, 10 + s)).collect();
        let truth = stack_from_images(&images, &sens);
        let lines: Vec<bool> = (0..cols).map(|c| c % 2 == 1).collect();
        let mask = SamplingMask::from_lines(rows, &lines, 0..0).unwrap();
        let y = apply_mask(&sms_collapse(&truth, &scheme).unwrap(), &mask).unwrap();

        let out = sense_reconstruct(&y, &scheme, &mask, &sens, 0.0).unwrap();
        let a = dense_forward(&scheme, &mask, &sens);
        let rhs = DVector::from_iterator(y.iter_indexed().count(), y.iter_indexed().map(|(_, _, _, v)| v));
        let x = a.svd(true, true).solve(&rhs, 1e-12).unwrap();
        let n = rows * cols;
        let dense_images: Vec<ComplexGrid> = (0..3)
            .map(|s| ComplexGrid::new(rows, cols, x.as_slice()[s * n..(s + 1) * n].to_vec()).unwrap())
            .collect();
        let dense = stack_from_images(&dense_images, &sens);
        for s in 0..3 {
            assert!(nmse(&out.slices()[s], &dense.slices()[s]) < 1e-8);
            assert!(nmse(&out.slices()[s], &truth.slices()[s]) < 1e-8);
        }
    }

    #[test]
    fn tikhonov_shrinks_solution() {
        let (rows, cols) = (16, 16);
        let scheme = CaipiScheme::new(vec![0.0, 0.5], rows, cols).unwrap();
        let sens = CoilSensitivitySet::new(vec![ring_coil_maps(rows, cols, 2, 0.0), ring_coil_maps(rows, cols, 2, 1.0)]).unwrap();
        let truth = stack_from_images(&[smooth_image(rows, cols, 3), smooth_image(rows, cols, 4)], &sens);
        let y = sms_collapse(&truth, &scheme).unwrap();
        let mask = SamplingMask::ones(rows, cols);
        let norm = |t: f64| -> f64 {
            sense_reconstruct(&y, &scheme, &mask, &sens, t).unwrap().slices().iter().map(|k| k.norm_sqr()).sum()
        };
        assert!(norm(1e3) < norm(0.0));
    }

    #[test]
    fn sense_rejections() {
        let (rows, cols) = (8, 8);
        let sens = CoilSensitivitySet::new(vec![
            vec![ComplexGrid::from_fn(rows, cols, |_, _| C64::new(1.0, 0.0))],
            vec![ComplexGrid::from_fn(rows, cols, |_, _| C64::new(1.0, 0.0))],
        ])
        .unwrap();
        let y = random_multicoil(1, rows, cols, 5);
        let mask = SamplingMask::ones(rows, cols);
        let scheme = CaipiScheme::new(vec![0.0, 0.5], rows, cols).unwrap();
        // one coil cannot separate two slices
        assert!(matches!(sense_reconstruct(&y, &scheme, &mask, &sens, 0.0), Err(Error::Solver(m)) if m.contains("tikhonov")));
        assert!(sense_reconstruct(&y, &scheme, &mask, &sens, 1e-3).is_ok());

        let odd = CaipiScheme::new(vec![0.0, 0.3], rows, cols).unwrap();
        assert!(matches!(sense_reconstruct(&y, &odd, &mask, &sens, 0.1), Err(Error::UnsupportedMask(_))));

        let lines = [true, false, false, true, true, false, true, false];
        let irregular = SamplingMask::from_lines(rows, &lines, 0..0).unwrap();
        assert!(matches!(sense_reconstruct(&y, &scheme, &irregular, &sens, 0.1), Err(Error::UnsupportedMask(_))));

        let lines: Vec<bool> = (0..9).map(|c| c % 2 == 0).collect();
        let m9 = SamplingMask::from_lines(rows, &lines, 0..0).unwrap();
        let s9 = CaipiScheme::new(vec![0.0], rows, 9).unwrap();
        let sens9 = CoilSensitivitySet::new(vec![vec![ComplexGrid::from_fn(rows, 9, |_, _| C64::new(1.0, 0.0))]]).unwrap();
        assert!(matches!(
            sense_reconstruct(&random_multicoil(1, rows, 9, 1), &s9, &m9, &sens9, 0.1),
            Err(Error::UnsupportedMask(_))
        ));
    }

    #[test]
    fn sensitivity_estimation() {
        // single coil: unit magnitude maps carrying the coil phase
        let img = smooth_image(32, 32, 6);
        let sens1 = CoilSensitivitySet::new(vec![vec![ComplexGrid::from_fn(32, 32, |_, _| C64::new(1.0, 0.0))]]).unwrap();
        let stack = stack_from_images(&[img], &sens1);
        let mask = uniform_mask(32, 32, 2, 12).unwrap();
        let est = estimate_sensitivities(&acs_reference(&stack, &mask).unwrap(), mask.acs()).unwrap();
        for v in est.slice_maps(0).unwrap()[0].data() {
            assert!(*v == C64::new(0.0, 0.0) || (v.norm() - 1.0).abs() < 1e-10);
        }

        // planted smooth maps on a low-frequency real phantom
        let (rows, cols) = (48, 48);
        let raw: Vec<ComplexGrid> = (0..4)
            .map(|j| {
                let th = j as f64 * std::f64::consts::FRAC_PI_2 + 0.2;
                ComplexGrid::from_fn(rows, cols, |r, c| {
                    let x = (c as f64 - 24.0) / 24.0;
                    let y = (r as f64 - 24.0) / 24.0;
                    C64::from_polar(1.0 + 0.4 * (th.cos() * x + th.sin() * y), 0.5 * (th.sin() * x - th.cos() * y))
                })
            })
            .collect();
        let truth_maps: Vec<ComplexGrid> = raw
            .iter()
            .map(|g| {
                ComplexGrid::from_fn(rows, cols, |r, c| {
                    let rss: f64 = raw.iter().map(|h| h.get(r, c).norm_sqr()).sum::<f64>().sqrt();
                    g.get(r, c) / rss
                })
            })
            .collect();
        let blob = ComplexGrid::from_fn(rows, cols, |r, c| {
            let x = (c as f64 - 24.0) / 10.0;
            let y = (r as f64 - 24.0) / 10.0;
            C64::new((-(x * x + y * y)).exp(), 0.0)
        });
        let sens_true = CoilSensitivitySet::new(vec![truth_maps.clone()]).unwrap();
        let stack = stack_from_images(&[blob], &sens_true);
        let mask = uniform_mask(rows, cols, 2, 32).unwrap();
        let est = estimate_sensitivities(&acs_reference(&stack, &mask).unwrap(), mask.acs()).unwrap();
        let maps = est.slice_maps(0).unwrap();
        let mut checked = 0;
        for i in 0..rows * cols {
            let rss: f64 = maps.iter().map(|g| g.data()[i].norm_sqr()).sum::<f64>().sqrt();
            assert!(rss == 0.0 || (rss - 1.0).abs() < 1e-10);
            if rss > 0.0 {
                checked += 1;
                for (e, t) in maps.iter().zip(&truth_maps) {
                    let ratio = e.data()[i].norm() / t.data()[i].norm();
                    assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio} at {i}");
                }
            }
        }
        assert!(checked > rows * cols / 4);

        assert!(matches!(estimate_sensitivities(&stack, 0..0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn informed_baselines_beat_zero_fill_on_phantom() {
        let case = build_case(&PhantomSpec::default(), 3, 2, 32, 0).unwrap();
        let reference = case.acs_reference().unwrap();
        let sens = estimate_sensitivities(&reference, case.mask.acs()).unwrap();
        let sense = sense_reconstruct(&case.measurement, &case.scheme, &case.mask, &sens, 1e-3).unwrap();
        let kernels = KernelSet::calibrate(
            &case.measurement,
            &reference,
            &case.scheme,
            &case.mask,
            KernelOptions::default(),
        )
        .unwrap();
        let grappa = slice_grappa_reconstruct(&case.measurement, &case.scheme, &case.mask, &kernels).unwrap();
        for s in 0..3 {
            let t = rss_combine(&case.truth.slices()[s]).unwrap();
            let err = |k: &MultiCoilKSpace| {
                let img = rss_combine(k).unwrap();
                let num: f64 = img.values().iter().zip(t.values()).map(|(a, b)| (a - b).powi(2)).sum();
                num / t.values().iter().map(|v| v * v).sum::<f64>()
            };
            let zf = err(&zero_fill_reconstruct(&case.measurement, &case.scheme, s).unwrap());
            assert!(err(&sense.slices()[s]) < zf);
            assert!(err(&grappa.slices()[s]) < zf);
        }
    }
}
