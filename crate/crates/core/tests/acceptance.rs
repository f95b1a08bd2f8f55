//! Acceptance suite. Every criterion runs, prints one PASS/FAIL line with the
//! measured quantities, and the process exits nonzero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smsrecon::baselines::{sense_reconstruct, slice_grappa_reconstruct, zero_fill_reconstruct, CoilSensitivitySet};
use smsrecon::bundle::{read_case, read_result, write_case, write_result, ResultBundle};
use smsrecon::inference::{pseudo_measurement, reconstruct_all, InferenceConfig, ReconstructionResult};
use smsrecon::kspace::{fft2_centered, fft2_coils, ifft2_centered, ifft2_coils, rss_combine};
use smsrecon::metrics::{evaluate_case, evaluate_images};
use smsrecon::operators::{apply_mask, caipi_apply, caipi_inverse, sms_collapse};
use smsrecon::predictors::grappa::KernelWeights;
use smsrecon::predictors::{
    grappa_calibrate, low_frequency_anchor, slice_grappa_apply, KernelOptions, KernelSet, OracleTruth, PredictorKind,
};
use smsrecon::simulation::{build_case, ring_coil_maps, DatasetCase, PhantomSpec};
use smsrecon::tensorfile::{DType, TensorFile};
use smsrecon::{CaipiScheme, ComplexGrid, MultiCoilKSpace, SamplingMask, SliceStack, C64};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_multicoil(coils: usize, rows: usize, cols: usize, seed: u64) -> MultiCoilKSpace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = (0..coils)
        .map(|_| ComplexGrid::from_fn(rows, cols, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))))
        .collect();
    MultiCoilKSpace::new(grids).unwrap()
}

fn standard_case(r: usize) -> DatasetCase {
    build_case(&PhantomSpec::default(), 3, r, 32, 0).unwrap()
}

fn oracle_config(case: &DatasetCase, steps: usize) -> InferenceConfig {
    let truth = Arc::new(OracleTruth::new(case.truth.clone(), case.scheme.clone(), Some(case.mask.clone())));
    let mut cfg = InferenceConfig::new(PredictorKind::Oracle(truth.clone()), PredictorKind::Oracle(truth), None);
    cfg.t_m = steps;
    cfg.t_u = steps;
    cfg
}

fn calibrate(case: &DatasetCase) -> Arc<KernelSet> {
    Arc::new(
        KernelSet::calibrate(
            &case.measurement,
            &case.acs_reference().unwrap(),
            &case.scheme,
            &case.mask,
            KernelOptions::default(),
        )
        .unwrap(),
    )
}

/// Calibrated predictor in both stages with the anchor applied on every step.
fn calibrated_config(kernels: &Arc<KernelSet>) -> InferenceConfig {
    let pk = PredictorKind::Calibrated(kernels.clone());
    let mut cfg = InferenceConfig::new(pk.clone(), pk, Some(kernels.clone()));
    cfg.guidance_interval = 1;
    cfg
}

fn mean_nmse(images: &[smsrecon::MagnitudeImage], truth: &SliceStack) -> f64 {
    let reports = evaluate_images(images, truth).unwrap();
    reports.iter().map(|r| r.nmse).sum::<f64>() / reports.len() as f64
}

fn oracle_exactness() -> Outcome {
    let case = standard_case(2);
    if case.scheme.shifts() != [0.0, 1.0 / 3.0, -1.0 / 3.0] || case.mask.acs().len() != 32 {
        return Err(format!("unexpected geometry: shifts {:?}", case.scheme.shifts()));
    }
    let start = Instant::now();
    let result = reconstruct_all(&case.measurement, &case.scheme, &case.mask, &oracle_config(&case, 10)).unwrap();
    let reports = evaluate_case(&result, &case.truth).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = reports.iter().map(|r| r.nmse).fold(0.0, f64::max);
    check(worst <= 1e-10 && secs < 10.0, format!("max per-slice NMSE {worst:.3e}, {secs:.2} s"))
}

fn circular_shift_cols(g: &ComplexGrid, m: i64) -> ComplexGrid {
    let cols = g.cols() as i64;
    ComplexGrid::from_fn(g.rows(), g.cols(), |r, c| g.get(r, (c as i64 - m).rem_euclid(cols) as usize))
}

fn operator_algebra() -> Outcome {
    let start = Instant::now();
    let (rows, cols) = (96, 96);
    let x = random_multicoil(4, rows, cols, 1);
    let z = random_multicoil(4, rows, cols, 2);
    let mut worst = 0.0f64;
    let mut note = |v: f64| worst = worst.max(v);

    // unitarity and inverse pairs of the centered transforms
    let fx = fft2_coils(&x).unwrap();
    note((fx.norm() - x.norm()).abs() / x.norm());
    note(ifft2_coils(&fx).unwrap().rel_diff(&x).unwrap());
    note(fft2_coils(&ifft2_coils(&x).unwrap()).unwrap().rel_diff(&x).unwrap());
    let g = x.grid(0);
    note(ifft2_centered(&fft2_centered(g).unwrap()).unwrap().zip_map(g, |a, b| a - b).unwrap().norm() / g.norm());

    // CAIPI modulation: unitary, invertible, linear
    let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0, -1.0 / 3.0], rows, cols).unwrap();
    for s in 0..3 {
        let m = caipi_apply(&x, &scheme, s).unwrap();
        note((m.norm() - x.norm()).abs() / x.norm());
        note(caipi_inverse(&m, &scheme, s).unwrap().rel_diff(&x).unwrap());
        note(caipi_apply(&caipi_inverse(&x, &scheme, s).unwrap(), &scheme, s).unwrap().rel_diff(&x).unwrap());
        let lhs = caipi_apply(&x.scale(2.5).add(&z).unwrap(), &scheme, s).unwrap();
        let rhs = caipi_apply(&x, &scheme, s).unwrap().scale(2.5).add(&caipi_apply(&z, &scheme, s).unwrap()).unwrap();
        note(lhs.rel_diff(&rhs).unwrap());

        // FOV/3 on a grid divisible by 3 is an exact circular shift of the image
        let shift = scheme.pixel_shift(s).unwrap().ok_or("non-integer shift")?;
        let shifted_img = ifft2_coils(&m).unwrap();
        let img = ifft2_coils(&x).unwrap();
        for (a, b) in shifted_img.grids().iter().zip(img.grids()) {
            let expect = circular_shift_cols(b, shift);
            note(a.zip_map(&expect, |u, v| u - v).unwrap().norm() / expect.norm());
        }
    }

    // collapse linearity, mask idempotence and mask linearity
    let stack_a = SliceStack::new((0..3).map(|s| random_multicoil(4, rows, cols, 10 + s)).collect()).unwrap();
    let stack_b = SliceStack::new((0..3).map(|s| random_multicoil(4, rows, cols, 20 + s)).collect()).unwrap();
    let sum = SliceStack::new(stack_a.slices().iter().zip(stack_b.slices()).map(|(a, b)| a.add(b).unwrap()).collect()).unwrap();
    let lhs = sms_collapse(&sum, &scheme).unwrap();
    let rhs = sms_collapse(&stack_a, &scheme).unwrap().add(&sms_collapse(&stack_b, &scheme).unwrap()).unwrap();
    note(lhs.rel_diff(&rhs).unwrap());
    let mask = smsrecon::simulation::uniform_mask(rows, cols, 2, 32).unwrap();
    let once = apply_mask(&x, &mask).unwrap();
    let idempotent = apply_mask(&once, &mask).unwrap() == once;
    let ones_identity = apply_mask(&x, &SamplingMask::ones(rows, cols)).unwrap() == x;
    note(apply_mask(&x.add(&z).unwrap(), &mask).unwrap().rel_diff(&once.add(&apply_mask(&z, &mask).unwrap()).unwrap()).unwrap());

    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && idempotent && ones_identity && secs < 5.0,
        format!("worst relative error {worst:.3e}, mask idempotent {idempotent}, {secs:.2} s"),
    )
}

fn schedule_invariance() -> Outcome {
    let case = standard_case(2);
    let runs: Vec<ReconstructionResult> = [1, 5, 50]
        .iter()
        .map(|&t| reconstruct_all(&case.measurement, &case.scheme, &case.mask, &oracle_config(&case, t)).unwrap())
        .collect();
    let mut worst = 0.0f64;
    for other in &runs[1..] {
        for (a, b) in runs[0].full.iter().zip(&other.full) {
            worst = worst.max(b.rel_diff(a).unwrap());
        }
    }
    check(worst <= 1e-10, format!("max relative difference across T = 1, 5, 50: {worst:.3e}"))
}

fn dc_anchor_constraints() -> Outcome {
    let case = standard_case(2);
    let kernels = calibrate(&case);
    let anchors = low_frequency_anchor(&case.measurement, &case.mask, &case.scheme, &kernels).unwrap();
    let acs = case.mask.acs();

    // anchor off: every acquired entry equals the pseudo-measurement
    let mut no_anchor = calibrated_config(&kernels);
    no_anchor.use_anchor = false;
    let plain = reconstruct_all(&case.measurement, &case.scheme, &case.mask, &no_anchor).unwrap();
    let mut dc_violations = 0usize;
    for (k_m, full) in plain.stage_m.iter().zip(&plain.full) {
        let pseudo = pseudo_measurement(k_m, &case.mask).unwrap();
        for (c, r, col, v) in full.iter_indexed() {
            if case.mask.is_kept(r, col) && v != pseudo.grid(c).get(r, col) {
                dc_violations += 1;
            }
        }
    }

    // G = 1: ACS lines equal the anchor, other acquired entries the pseudo-measurement
    let guided = reconstruct_all(&case.measurement, &case.scheme, &case.mask, &calibrated_config(&kernels)).unwrap();
    let mut anchor_violations = 0usize;
    for ((k_m, full), anchor) in guided.stage_m.iter().zip(&guided.full).zip(&anchors) {
        let pseudo = pseudo_measurement(k_m, &case.mask).unwrap();
        for (c, r, col, v) in full.iter_indexed() {
            let expect = if acs.contains(&col) {
                anchor.grid(c).get(r, col)
            } else if case.mask.is_kept(r, col) {
                pseudo.grid(c).get(r, col)
            } else {
                continue;
            };
            if v != expect {
                anchor_violations += 1;
            }
        }
    }
    check(
        dc_violations == 0 && anchor_violations == 0,
        format!("DC mismatches {dc_violations}, anchor/DC mismatches at G = 1 {anchor_violations}"),
    )
}

fn planted_kernel() -> Outcome {
    let (coils, rows, cols) = (4, 20, 32);
    let opts = KernelOptions { ridge: 0.0, ..Default::default() };
    let taps = opts.taps();
    let z = random_multicoil(coils, rows, cols, 7);
    let scheme = CaipiScheme::new(vec![0.0, 1.0 / 3.0, -1.0 / 3.0], rows, cols).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let plants: Vec<KernelWeights> = (0..3)
        .map(|_| {
            let w = (0..coils * coils * taps.len())
                .map(|_| C64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
                .collect();
            KernelWeights::new(coils, coils, taps.clone(), w).unwrap()
        })
        .collect();
    let stack = SliceStack::new(
        (0..3)
            .map(|s| plants[s].apply_where(&caipi_inverse(&z, &scheme, s).unwrap(), |_, _| true).unwrap())
            .collect(),
    )
    .unwrap();
    let kernels = grappa_calibrate(&z, &stack, &scheme, 4..28, opts).unwrap();
    let mut weight_err = 0.0f64;
    let mut recon_err = 0.0f64;
    for (s, k) in kernels.iter().enumerate() {
        weight_err = weight_err.max(k.weights.rel_diff(&plants[s]));
        let out = slice_grappa_apply(&caipi_inverse(&z, &scheme, s).unwrap(), k).unwrap();
        recon_err = recon_err.max(out.rel_diff(stack.slice(s).unwrap()).unwrap());
    }
    check(
        weight_err <= 1e-8 && recon_err <= 1e-8,
        format!("kernel relative error {weight_err:.3e}, reconstruction relative error {recon_err:.3e}"),
    )
}

fn smooth_image(rows: usize, cols: usize, seed: u64) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    ComplexGrid::from_fn(rows, cols, |r, col| {
        let x = col as f64 / cols as f64;
        let y = r as f64 / rows as f64;
        C64::from_polar(1.0 + 0.5 * (6.0 * x + a).sin() * (4.0 * y + b).cos(), 2.0 * c * x)
    })
}

fn coil_kspace(images: &[ComplexGrid], sens: &CoilSensitivitySet) -> SliceStack {
    SliceStack::new(
        images
            .iter()
            .enumerate()
            .map(|(s, img)| {
                let grids = sens
                    .slice_maps(s)
                    .unwrap()
                    .iter()
                    .map(|m| fft2_centered(&img.zip_map(m, |v, w| v * w).unwrap()).unwrap())
                    .collect();
                MultiCoilKSpace::new(grids).unwrap()
            })
            .collect(),
    )
    .unwrap()
}

fn sense_equivalence() -> Outcome {
    let (rows, cols, coils) = (16, 16, 4);
    let scheme = CaipiScheme::new(vec![0.0, 0.5], rows, cols).unwrap();
    let sens = CoilSensitivitySet::new(vec![ring_coil_maps(rows, cols, coils, 0.0), ring_coil_maps(rows, cols, coils, 0.7)]).unwrap();
    let truth = coil_kspace(&[smooth_image(rows, cols, 1), smooth_image(rows, cols, 2)], &sens);
    let mask = SamplingMask::ones(rows, cols);
    let y = sms_collapse(&truth, &scheme).unwrap();
    let out = sense_reconstruct(&y, &scheme, &mask, &sens, 0.0).unwrap();

    // dense forward matrix from unit images, solved by SVD least squares
    let n = rows * cols;
    let mut a = DMatrix::<C64>::zeros(coils * n, 2 * n);
    for s in 0..2 {
        for p in 0..n {
            let mut images = vec![ComplexGrid::zeros(rows, cols), ComplexGrid::zeros(rows, cols)];
            images[s].data_mut()[p] = C64::new(1.0, 0.0);
            let col = sms_collapse(&coil_kspace(&images, &sens), &scheme).unwrap();
            for (i, (_, _, _, v)) in col.iter_indexed().enumerate() {
                a[(i, s * n + p)] = v;
            }
        }
    }
    let rhs = DVector::from_iterator(coils * n, y.iter_indexed().map(|(_, _, _, v)| v));
    let x = a.svd(true, true).solve(&rhs, 1e-12).map_err(|e| e.to_string())?;
    let dense_images: Vec<ComplexGrid> = (0..2)
        .map(|s| ComplexGrid::new(rows, cols, x.as_slice()[s * n..(s + 1) * n].to_vec()).unwrap())
        .collect();
    let dense = coil_kspace(&dense_images, &sens);
    let worst = (0..2)
        .map(|s| {
            let d = out.slices()[s].sub(&dense.slices()[s]).unwrap();
            d.norm_sqr() / dense.slices()[s].norm_sqr()
        })
        .fold(0.0, f64::max);
    check(worst <= 1e-8, format!("max per-slice NMSE against dense least squares {worst:.3e}"))
}

fn method_ordering() -> Outcome {
    let case = standard_case(2);
    let kernels = calibrate(&case);
    let zf: Vec<_> = (0..3)
        .map(|s| rss_combine(&zero_fill_reconstruct(&case.measurement, &case.scheme, s).unwrap()).unwrap())
        .collect();
    let sg = slice_grappa_reconstruct(&case.measurement, &case.scheme, &case.mask, &kernels).unwrap();
    let sg: Vec<_> = sg.slices().iter().map(|k| rss_combine(k).unwrap()).collect();
    let pipeline = reconstruct_all(&case.measurement, &case.scheme, &case.mask, &calibrated_config(&kernels)).unwrap();
    let (n_zf, n_sg, n_op) = (
        mean_nmse(&zf, &case.truth),
        mean_nmse(&sg, &case.truth),
        mean_nmse(&pipeline.images, &case.truth),
    );
    check(
        n_zf > n_sg && n_op <= n_sg,
        format!("NMSE zero-fill {n_zf:.4e} > slice-GRAPPA {n_sg:.4e} >= pipeline {n_op:.4e}"),
    )
}

fn corruption_monotonicity() -> Outcome {
    let values: Vec<f64> = [1, 2, 3]
        .iter()
        .map(|&r| {
            let case = standard_case(r);
            let kernels = calibrate(&case);
            let res = reconstruct_all(&case.measurement, &case.scheme, &case.mask, &calibrated_config(&kernels)).unwrap();
            mean_nmse(&res.images, &case.truth)
        })
        .collect();
    check(
        values.windows(2).all(|w| w[0] <= w[1]),
        format!("NMSE at R = 1, 2, 3: {:.4e}, {:.4e}, {:.4e}", values[0], values[1], values[2]),
    )
}

fn bits(k: &MultiCoilKSpace) -> Vec<u64> {
    k.grids()
        .iter()
        .flat_map(|g| g.data().iter().flat_map(|v| [v.re.to_bits(), v.im.to_bits()]))
        .collect()
}

fn determinism_and_serialization() -> Outcome {
    let case = standard_case(2);
    let again = standard_case(2);
    let same_case = bits(&case.measurement) == bits(&again.measurement);
    let kernels = calibrate(&case);
    let cfg = calibrated_config(&kernels);
    let a = reconstruct_all(&case.measurement, &case.scheme, &case.mask, &cfg).unwrap();
    let b = reconstruct_all(&again.measurement, &again.scheme, &again.mask, &calibrated_config(&calibrate(&again))).unwrap();
    let same_run = a.full.iter().zip(&b.full).all(|(x, y)| bits(x) == bits(y))
        && a.stage_m.iter().zip(&b.stage_m).all(|(x, y)| bits(x) == bits(y))
        && a.same_output(&b);

    // every tensor file of a case and a result bundle reads back and rewrites identically
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_case(dir.path().join("case"), &case).unwrap();
    write_result(dir.path().join("result"), &ResultBundle::from_reconstruction("ocdi", &a), None).unwrap();
    let mut files = 0usize;
    let mut mismatched = Vec::new();
    for sub in ["case", "result"] {
        for entry in std::fs::read_dir(dir.path().join(sub)).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().and_then(|e| e.to_str()) != Some("kst") {
                continue;
            }
            let raw = std::fs::read(&path).unwrap();
            let t = TensorFile::read(&path).unwrap();
            files += 1;
            if t.to_bytes() != raw {
                mismatched.push(path.display().to_string());
            }
        }
    }
    let case_back = read_case(dir.path().join("case")).unwrap();
    let result_back = read_result(dir.path().join("result")).unwrap();
    let values_ok = TensorFile::from_kspace(&case_back.measurement).to_bytes()
        == TensorFile::from_kspace(&case.measurement).to_bytes()
        && result_back.kspace.len() == 3;

    // arbitrary f32 bit patterns survive, NaN payloads included
    let patterns: Vec<f32> = (0..4096u32).map(|i| f32::from_bits(i.wrapping_mul(2_654_435_761))).collect();
    let raw = TensorFile::new(DType::Real32, vec![64, 64], patterns.clone()).unwrap();
    let back = TensorFile::from_bytes(&raw.to_bytes()).unwrap();
    let raw_ok = back.data().iter().zip(&patterns).all(|(x, y)| x.to_bits() == y.to_bits());

    check(
        same_case && same_run && mismatched.is_empty() && values_ok && raw_ok && files > 0,
        format!(
            "case rebuild identical {same_case}, rerun identical {same_run}, {files} tensor files round-tripped, mismatches {mismatched:?}, raw bit patterns {raw_ok}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle exactness end-to-end", oracle_exactness),
        ("operator algebra suite", operator_algebra),
        ("schedule invariance", schedule_invariance),
        ("DC/anchor hard constraints", dc_anchor_constraints),
        ("planted-kernel identifiability", planted_kernel),
        ("SENSE oracle equivalence", sense_equivalence),
        ("desk-scale method ordering", method_ordering),
        ("corruption monotonicity", corruption_monotonicity),
        ("determinism and serialization", determinism_and_serialization),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<34} {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<34} {detail} [{secs:.2} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
