//! PSNR, SSIM and NMSE on RSS magnitude images.
//!
//! Reconstruction and reference are divided by one common scale, the maximum
//! RSS magnitude of the reference volume, before any metric is computed.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::ReconstructionResult;
use crate::kspace::{rss_combine, MagnitudeImage, SliceStack};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.99;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &MagnitudeImage, b: &MagnitudeImage) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "images differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn sq_err(a: &MagnitudeImage, b: &MagnitudeImage) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum()
}

/// `‖recon − ref‖² / ‖ref‖²`.
pub fn nmse(recon: &MagnitudeImage, reference: &MagnitudeImage) -> Result<f64> {
    check_shapes(recon, reference)?;
    let energy: f64 = reference.values().iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Err(Error::Degenerate("NMSE reference is all zero".into()));
    }
    Ok(sq_err(recon, reference) / energy)
}

/// `10 log10(1 / MSE)` for images normalized to unit peak, capped at
/// [`PSNR_CAP`].
pub fn psnr(recon: &MagnitudeImage, reference: &MagnitudeImage) -> Result<f64> {
    check_shapes(recon, reference)?;
    if !(reference.max() > 0.0) {
        return Err(Error::Degenerate("PSNR reference is all zero".into()));
    }
    let mse = sq_err(recon, reference) / reference.values().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let h = (SSIM_WINDOW / 2) as f64;
    let w1: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - h).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = w1.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &w1 {
        for b in &w1 {
            w.push(a * b / (total * total));
        }
    }
    w
}

/// Mean SSIM over every window that fits entirely inside the image
/// (Gaussian 11×11, σ = 1.5, K1 = 0.01, K2 = 0.03, L = 1).
pub fn ssim(recon: &MagnitudeImage, reference: &MagnitudeImage) -> Result<f64> {
    check_shapes(recon, reference)?;
    let (rows, cols) = reference.shape();
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {rows}x{cols}"
        )));
    }
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (x, y) = (recon.values(), reference.values());
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=rows - SSIM_WINDOW {
        for c0 in 0..=cols - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                let base = (r0 + i) * cols + c0;
                for j in 0..SSIM_WINDOW {
                    let wt = w[i * SSIM_WINDOW + j];
                    let (a, b) = (x[base + j], y[base + j]);
                    mx += wt * a;
                    my += wt * b;
                    xx += wt * a * a;
                    yy += wt * b * b;
                    xy += wt * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
    /// Divisor applied to both images before the metrics.
    pub scale: f64,
}

impl MetricReport {
    /// Metrics of `recon` against `reference` after dividing both by `scale`.
    pub fn compute(recon: &MagnitudeImage, reference: &MagnitudeImage, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Degenerate(format!("normalization scale {scale} must be positive")));
        }
        let (r, t) = (recon.scaled_down(scale), reference.scaled_down(scale));
        Ok(Self {
            psnr: psnr(&r, &t)?,
            ssim: ssim(&r, &t)?,
            nmse: nmse(&r, &t)?,
            scale,
        })
    }

    /// One `key=value` record.
    pub fn to_line(&self, slice: usize) -> String {
        format!(
            "slice={slice} nmse={} psnr={} ssim={} scale={}",
            self.nmse, self.psnr, self.ssim, self.scale
        )
    }

    /// Parses a record written by [`MetricReport::to_line`].
    pub fn parse_line(line: &str) -> Result<(usize, Self)> {
        let mut slice = None;
        let (mut nmse, mut psnr, mut ssim, mut scale) = (None, None, None, None);
        for field in line.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::InvalidData(format!("bad report field {field:?}")))?;
            let num = || v.parse::<f64>().map_err(|_| Error::InvalidData(format!("bad value in {field:?}")));
            match k {
                "slice" => slice = Some(v.parse::<usize>().map_err(|_| Error::InvalidData(format!("bad slice {v:?}")))?),
                "nmse" => nmse = Some(num()?),
                "psnr" => psnr = Some(num()?),
                "ssim" => ssim = Some(num()?),
                "scale" => scale = Some(num()?),
                _ => return Err(Error::InvalidData(format!("unknown report key {k:?}"))),
            }
        }
        match (slice, nmse, psnr, ssim, scale) {
            (Some(s), Some(nmse), Some(psnr), Some(ssim), Some(scale)) => Ok((s, Self { psnr, ssim, nmse, scale })),
            _ => Err(Error::InvalidData(format!("incomplete report line {line:?}"))),
        }
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NMSE {:.3e}  PSNR {:.2} dB  SSIM {:.4}", self.nmse, self.psnr, self.ssim)
    }
}

/// Per-slice metrics of reconstructed images against the RSS of `truth`,
/// jointly normalized by the maximum of the reference volume.
pub fn evaluate_images(images: &[MagnitudeImage], truth: &SliceStack) -> Result<Vec<MetricReport>> {
    if images.len() != truth.b() {
        return Err(Error::Evaluation(format!(
            "{} reconstructed slices for {} reference slices",
            images.len(),
            truth.b()
        )));
    }
    let refs = truth.slices().iter().map(rss_combine).collect::<Result<Vec<_>>>()?;
    let scale = refs.iter().map(MagnitudeImage::max).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(Error::Degenerate("reference volume is all zero".into()));
    }
    images
        .iter()
        .zip(&refs)
        .map(|(img, r)| {
            if img.shape() != r.shape() {
                return Err(Error::Evaluation(format!(
                    "reconstruction {:?} and reference {:?} differ in shape",
                    img.shape(),
                    r.shape()
                )));
            }
            MetricReport::compute(img, r, scale)
        })
        .collect()
}

pub fn evaluate_case(result: &ReconstructionResult, truth: &SliceStack) -> Result<Vec<MetricReport>> {
    evaluate_images(&result.images, truth)
}

/// Report file body: one record per slice.
pub fn report_lines(reports: &[MetricReport]) -> String {
    reports
        .iter()
        .enumerate()
        .map(|(s, r)| r.to_line(s) + "\n")
        .collect()
}
