//! Retrospective SMS datasets: ellipse phantoms, ring coil maps, CAIPI
//! modulation, uniform line masks with ACS, optional noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::CoilSensitivitySet;
use crate::error::{Error, Result};
use crate::kspace::{fft2_centered, ComplexGrid, MultiCoilKSpace, SliceStack, C64};
use crate::operators::{apply_mask, measure, CaipiScheme, SamplingMask};

/// Modified Shepp-Logan ellipses: intensity, semi-axes (a, b), centre
/// (x0, y0), rotation in degrees. Coordinates span [-1, 1] with y up.
const SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Largest relative rotation / scale perturbation applied per slice.
pub const VARIATION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub rows: usize,
    pub cols: usize,
    pub b: usize,
    pub coils: usize,
    /// Seeds the per-slice geometric perturbations.
    pub variant_seed: u64,
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            rows: 96,
            cols: 96,
            b: 3,
            coils: 4,
            variant_seed: 0,
            noise_sigma: 0.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows < 32 || self.cols < 32 {
            return Err(Error::Argument(format!(
                "phantom grid {}x{} is smaller than 32x32",
                self.rows, self.cols
            )));
        }
        if self.b == 0 || self.coils == 0 {
            return Err(Error::Argument("phantom needs at least one slice and one coil".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Ellipse phantom rotated by `angle` radians and scaled by `scale`.
pub fn shepp_logan_image(rows: usize, cols: usize, angle: f64, scale: f64) -> Vec<f64> {
    let (sa, ca) = angle.sin_cos();
    let mut img = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = unit_coords(r, c, rows, cols);
            // undo the slice transform, then test the canonical ellipses
            let xr = (ca * x + sa * y) / scale;
            let yr = (-sa * x + ca * y) / scale;
            let mut v = 0.0;
            for [amp, a, b, x0, y0, phi] in SHEPP_LOGAN {
                let (sp, cp) = phi.to_radians().sin_cos();
                let (dx, dy) = (xr - x0, yr - y0);
                let u = cp * dx + sp * dy;
                let w = -sp * dx + cp * dy;
                if (u / a).powi(2) + (w / b).powi(2) <= 1.0 {
                    v += amp;
                }
            }
            // the nested ellipses sum to small negative values only through rounding
            img[r * cols + c] = v.max(0.0);
        }
    }
    img
}

fn unit_coords(r: usize, c: usize, rows: usize, cols: usize) -> (f64, f64) {
    let x = (c as f64 - (cols / 2) as f64) / (cols as f64 / 2.0);
    let y = -(r as f64 - (rows / 2) as f64) / (rows as f64 / 2.0);
    (x, y)
}

/// Ring coil maps for one slice: Gaussian magnitude around each coil
/// position, a linear phase, normalized to unit RSS at every pixel.
pub fn ring_coil_maps(rows: usize, cols: usize, coils: usize, ring_offset: f64) -> Vec<ComplexGrid> {
    let mut raw: Vec<ComplexGrid> = (0..coils)
        .map(|j| {
            let theta = 2.0 * PI * j as f64 / coils as f64 + ring_offset;
            let (cx, cy) = (1.2 * theta.cos(), 1.2 * theta.sin());
            ComplexGrid::from_fn(rows, cols, |r, c| {
                let (x, y) = unit_coords(r, c, rows, cols);
                let mag = (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * 0.8f64.powi(2))).exp();
                let phase = 0.4 * PI * (theta.cos() * x + theta.sin() * y);
                C64::from_polar(mag, phase)
            })
        })
        .collect();
    if coils == 1 {
        return raw;
    }
    for i in 0..rows * cols {
        let rss = raw.iter().map(|g| g.data()[i].norm_sqr()).sum::<f64>().sqrt();
        for g in raw.iter_mut() {
            g.data_mut()[i] /= rss;
        }
    }
    raw
}

/// Multi-slice phantom k-space and the coil maps used to generate it.
///
/// Slice `s` is the ellipse phantom rotated and scaled by seeded amounts
/// within ±10 %, seen through a coil ring turned by `s / b` of the coil
/// spacing.
pub fn shepp_logan_stack(spec: &PhantomSpec) -> Result<(SliceStack, CoilSensitivitySet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.variant_seed);
    let mut slices = Vec::with_capacity(spec.b);
    let mut maps = Vec::with_capacity(spec.b);
    for s in 0..spec.b {
        let angle = rng.random_range(-VARIATION..=VARIATION) * PI / 2.0;
        let scale = 1.0 + rng.random_range(-VARIATION..=VARIATION);
        let img = shepp_logan_image(spec.rows, spec.cols, angle, scale);
        let ring_offset = 2.0 * PI * s as f64 / (spec.b * spec.coils) as f64;
        let slice_maps = if spec.coils == 1 {
            vec![ComplexGrid::from_fn(spec.rows, spec.cols, |_, _| C64::new(1.0, 0.0))]
        } else {
            ring_coil_maps(spec.rows, spec.cols, spec.coils, ring_offset)
        };
        let grids = slice_maps
            .iter()
            .map(|m| {
                let coil_img = ComplexGrid::new(
                    spec.rows,
                    spec.cols,
                    m.data().iter().zip(&img).map(|(w, &p)| w * p).collect(),
                )?;
                fft2_centered(&coil_img)
            })
            .collect::<Result<Vec<_>>>()?;
        slices.push(MultiCoilKSpace::new(grids)?);
        maps.push(slice_maps);
    }
    Ok((SliceStack::new(slices)?, CoilSensitivitySet::new(maps)?))
}

/// Standard CAIPI shifts: `0, +1/3, −1/3` for three slices, `0, 1/2` for
/// two. Other factors need `generic`, which spaces shifts by `1/b`.
pub fn standard_scheme(b: usize, rows: usize, cols: usize, generic: bool) -> Result<CaipiScheme> {
    let shifts = match b {
        1 => vec![0.0],
        2 => vec![0.0, 0.5],
        3 => vec![0.0, 1.0 / 3.0, -1.0 / 3.0],
        0 => return Err(Error::Argument("multiband factor must be >= 1".into())),
        _ if generic => (0..b)
            .map(|s| {
                let f = s as f64 / b as f64;
                if f > 0.5 {
                    f - 1.0
                } else {
                    f
                }
            })
            .collect(),
        _ => {
            return Err(Error::Argument(format!(
                "no standard CAIPI scheme for multiband factor {b}; request the generic rule"
            )))
        }
    };
    CaipiScheme::new(shifts, rows, cols)
}

/// Keeps every `r`-th phase-encode line from line 0 plus a centred ACS band
/// of `acs_lines` lines starting at `⌊(cols − acs_lines)/2⌋`.
pub fn uniform_mask(rows: usize, cols: usize, r: usize, acs_lines: usize) -> Result<SamplingMask> {
    if r == 0 {
        return Err(Error::Argument("acceleration must be >= 1".into()));
    }
    if acs_lines > cols {
        return Err(Error::Argument(format!("{acs_lines} ACS lines exceed {cols} columns")));
    }
    let start = (cols - acs_lines) / 2;
    let acs = start..start + acs_lines;
    let lines: Vec<bool> = (0..cols).map(|c| c % r == 0 || acs.contains(&c)).collect();
    SamplingMask::from_lines(rows, &lines, acs)
}

/// Where a case came from; enough to rebuild it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseProvenance {
    pub spec: PhantomSpec,
    pub r: usize,
    pub acs_lines: usize,
    pub noise_seed: u64,
    pub shifts: Vec<f64>,
    /// Grid size over acquired entries, counting the ACS band.
    pub net_acceleration: f64,
}

#[derive(Debug, Clone)]
pub struct DatasetCase {
    pub truth: SliceStack,
    pub sensitivities: CoilSensitivitySet,
    pub scheme: CaipiScheme,
    pub mask: SamplingMask,
    pub measurement: MultiCoilKSpace,
    pub provenance: CaseProvenance,
}

impl DatasetCase {
    /// Single-slice reference data over the ACS band, as a separate
    /// single-band calibration scan would provide.
    pub fn acs_reference(&self) -> Result<SliceStack> {
        acs_reference(&self.truth, &self.mask)
    }
}

/// `stack` restricted to the ACS lines of `mask`.
pub fn acs_reference(stack: &SliceStack, mask: &SamplingMask) -> Result<SliceStack> {
    let acs = mask.acs();
    let lines: Vec<bool> = (0..mask.cols()).map(|c| acs.contains(&c)).collect();
    let band = SamplingMask::from_lines(mask.rows(), &lines, acs)?;
    SliceStack::new(stack.slices().iter().map(|k| apply_mask(k, &band)).collect::<Result<_>>()?)
}

/// Phantom, standard scheme, uniform mask and measurement for one case.
/// `b` overrides the multiband factor of `spec`.
pub fn build_case(spec: &PhantomSpec, b: usize, r: usize, acs_lines: usize, seed: u64) -> Result<DatasetCase> {
    build_case_with_shifts(spec, b, None, r, acs_lines, seed)
}

/// As [`build_case`], with explicit CAIPI shifts instead of the standard
/// scheme.
pub fn build_case_with_shifts(
    spec: &PhantomSpec,
    b: usize,
    shifts: Option<&[f64]>,
    r: usize,
    acs_lines: usize,
    seed: u64,
) -> Result<DatasetCase> {
    let spec = PhantomSpec { b, ..*spec };
    let scheme = match shifts {
        Some(f) if f.len() != b => {
            return Err(Error::Config(format!("{} CAIPI shifts given for {b} slices", f.len())))
        }
        Some(f) => CaipiScheme::new(f.to_vec(), spec.rows, spec.cols)?,
        None => standard_scheme(b, spec.rows, spec.cols, true)?,
    };
    let (truth, sensitivities) = shepp_logan_stack(&spec)?;
    let mask = uniform_mask(spec.rows, spec.cols, r, acs_lines)?;
    let measurement = measure(&truth, &scheme, &mask, spec.noise_sigma, seed)?;
    let provenance = CaseProvenance {
        spec,
        r,
        acs_lines,
        noise_seed: seed,
        shifts: scheme.shifts().to_vec(),
        net_acceleration: (spec.rows * spec.cols) as f64 / mask.kept_count() as f64,
    };
    Ok(DatasetCase {
        truth,
        sensitivities,
        scheme,
        mask,
        measurement,
        provenance,
    })
}

/// Rebuilds a case from its provenance.
pub fn rebuild_case(p: &CaseProvenance) -> Result<DatasetCase> {
    build_case_with_shifts(&p.spec, p.spec.b, Some(&p.shifts), p.r, p.acs_lines, p.noise_seed)
}
