use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use smsrecon::baselines::{estimate_sensitivities, sense_reconstruct, slice_grappa_reconstruct, zero_fill_reconstruct};
use smsrecon::bundle::{self, read_case, read_kernels, read_result, write_case, write_kernels, write_result, ResultBundle};
use smsrecon::config::RunConfig;
use smsrecon::inference::{reconstruct_all, InferenceConfig};
use smsrecon::kspace::{rss_combine, MagnitudeImage};
use smsrecon::metrics::{evaluate_images, report_lines};
use smsrecon::predictors::external::{reference_handler, ReferenceMode};
use smsrecon::predictors::{EndpointDescriptor, ExternalEndpoint, KernelOptions, KernelSet, OracleTruth, PredictorKind};
use smsrecon::protocol::serve;
use smsrecon::tensorfile::write_atomic;
use smsrecon::{Error, Result};

#[derive(Parser)]
#[command(name = "smsrecon", version, about = "SMS k-space reconstruction by operator-guided deterministic inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Ocdi,
    Sense,
    SliceGrappa,
    ZeroFill,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Ocdi => "ocdi",
            Method::Sense => "sense",
            Method::SliceGrappa => "slice-grappa",
            Method::ZeroFill => "zero-fill",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom case bundle.
    Simulate {
        /// Run configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Calibrate slice-GRAPPA and in-plane kernels from a case bundle.
    Calibrate {
        #[arg(long)]
        case: PathBuf,
        /// Kernel file; defaults to `<case>/kernels.json`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Tap window as `ROWSxCOLS`.
        #[arg(long, default_value = "5x5")]
        window: String,
        #[arg(long, default_value_t = smsrecon::predictors::grappa::DEFAULT_RIDGE)]
        ridge: f64,
    },
    /// Reconstruct every slice of a case bundle.
    Reconstruct {
        #[arg(long)]
        case: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// `oracle`, `grappa` or `external <endpoint>` (ocdi only).
        #[arg(long, num_args = 1..=2, value_names = ["KIND", "ENDPOINT"])]
        predictor: Option<Vec<String>>,
        /// Kernel file; defaults to `<case>/kernels.json`.
        #[arg(long)]
        kernels: Option<PathBuf>,
        /// Inference settings from a run configuration; flags override them.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        t_m: Option<usize>,
        #[arg(long)]
        t_u: Option<usize>,
        #[arg(long)]
        guidance_interval: Option<usize>,
        #[arg(long)]
        no_anchor: bool,
        #[arg(long)]
        no_dc: bool,
        /// SENSE Tikhonov weight. Must be positive when b·R exceeds the coil count.
        #[arg(long, default_value_t = 1e-3)]
        tikhonov: f64,
        /// SENSE with the simulated coil maps instead of ACS estimates.
        #[arg(long)]
        true_sensitivities: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a result bundle against the truth of a case bundle.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Report file; defaults to `<result>/report.txt`.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Directory for magnitude and error PNG panels.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Run a reference predictor server speaking OCDI-PRED v1.
    ServeReference {
        /// zero, loopback (echo) or oracle.
        #[arg(long, default_value = "loopback")]
        mode: String,
        /// Case bundle supplying ground truth for the oracle mode.
        #[arg(long)]
        case: Option<PathBuf>,
        /// Listen on `host:port` instead of stdin/stdout.
        #[arg(long)]
        tcp: Option<String>,
    },
}

fn parse_window(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("window {s:?} must look like 5x5"));
    let (r, c) = s.split_once('x').ok_or_else(bad)?;
    Ok((r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?))
}

fn cmd_simulate(config: Option<PathBuf>, output: Option<PathBuf>) -> Result<()> {
    let cfg = match &config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let out = output.unwrap_or_else(|| cfg.output.clone());
    let case = cfg.build_case()?;
    write_case(&out, &case)?;
    eprintln!(
        "wrote {} (b={}, r={}, net acceleration {:.3})",
        out.display(),
        case.scheme.b(),
        cfg.mask.r,
        case.provenance.net_acceleration
    );
    Ok(())
}

fn cmd_calibrate(case_dir: &Path, output: Option<PathBuf>, window: &str, ridge: f64) -> Result<()> {
    let case = read_case(case_dir)?;
    let options = KernelOptions {
        window: parse_window(window)?,
        col_stride: 1,
        ridge,
    };
    let kernels = KernelSet::calibrate(&case.measurement, &case.acs_reference()?, &case.scheme, &case.mask, options)?;
    let out = output.unwrap_or_else(|| case_dir.join("kernels.json"));
    write_kernels(&out, &kernels)?;
    eprintln!("wrote {} (max residual {:.3e})", out.display(), kernels.max_residual());
    Ok(())
}

fn load_kernels(case_dir: &Path, explicit: Option<&Path>) -> Result<Arc<KernelSet>> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| case_dir.join("kernels.json"));
    if !path.exists() {
        return Err(Error::Config(format!(
            "kernel file {} not found; run `smsrecon calibrate` first",
            path.display()
        )));
    }
    Ok(Arc::new(read_kernels(&path)?))
}

struct InferenceFlags {
    config: Option<PathBuf>,
    t_m: Option<usize>,
    t_u: Option<usize>,
    guidance_interval: Option<usize>,
    no_anchor: bool,
    no_dc: bool,
}

#[allow(clippy::too_many_arguments)]
fn cmd_reconstruct(
    case_dir: &Path,
    method: Method,
    predictor: Option<Vec<String>>,
    kernels_path: Option<PathBuf>,
    flags: InferenceFlags,
    tikhonov: f64,
    true_sensitivities: bool,
    output: &Path,
) -> Result<()> {
    if method != Method::Ocdi && predictor.is_some() {
        return Err(Error::Config(format!("--predictor applies only to --method ocdi, not {}", method.name())));
    }
    let case = read_case(case_dir)?;
    let y = &case.measurement;
    let b = case.scheme.b();
    let bundle = match method {
        Method::ZeroFill => ResultBundle::from_slices(
            method.name(),
            (0..b).map(|s| zero_fill_reconstruct(y, &case.scheme, s)).collect::<Result<_>>()?,
        )?,
        Method::SliceGrappa => {
            let kernels = load_kernels(case_dir, kernels_path.as_deref())?;
            let stack = slice_grappa_reconstruct(y, &case.scheme, &case.mask, &kernels)?;
            ResultBundle::from_slices(method.name(), stack.into_slices())?
        }
        Method::Sense => {
            let sens = if true_sensitivities {
                case.sensitivities.clone()
            } else {
                estimate_sensitivities(&case.acs_reference()?, case.mask.acs())?
            };
            let stack = sense_reconstruct(y, &case.scheme, &case.mask, &sens, tikhonov)?;
            ResultBundle::from_slices(method.name(), stack.into_slices())?
        }
        Method::Ocdi => {
            let file_cfg = match &flags.config {
                Some(p) => Some(RunConfig::load(p)?),
                None => None,
            };
            let section = file_cfg.as_ref().map(|c| c.inference.clone()).unwrap_or_default();
            let mut words = predictor.unwrap_or_else(|| {
                let mut v = vec![section.predictor.clone()];
                v.extend(section.endpoint.clone());
                v
            });
            let kind = words.remove(0);
            let endpoint = words.pop();
            let kernels = match (kind.as_str(), &kernels_path) {
                ("grappa", _) | (_, Some(_)) => Some(load_kernels(case_dir, kernels_path.as_deref())?),
                _ => None,
            };
            let pk = match (kind.as_str(), endpoint) {
                ("oracle", None) => PredictorKind::Oracle(Arc::new(OracleTruth::new(
                    case.truth.clone(),
                    case.scheme.clone(),
                    Some(case.mask.clone()),
                ))),
                ("grappa", None) => PredictorKind::Calibrated(kernels.clone().expect("kernels loaded for grappa")),
                ("external", Some(desc)) => {
                    let endpoint = Arc::new(ExternalEndpoint::new(EndpointDescriptor::parse(&desc)?));
                    endpoint.connect()?;
                    PredictorKind::External(endpoint)
                }
                ("external", None) => return Err(Error::Config("--predictor external needs an endpoint".into())),
                (other, _) => {
                    return Err(Error::Config(format!(
                        "bad predictor {other:?}; expected oracle, grappa or external <endpoint>"
                    )))
                }
            };
            let use_anchor = kernels.is_some() && section.anchor && !flags.no_anchor;
            let mut cfg = InferenceConfig::new(pk.clone(), pk, if use_anchor { kernels } else { None });
            cfg.t_m = flags.t_m.unwrap_or(section.t_m);
            cfg.t_u = flags.t_u.unwrap_or(section.t_u);
            cfg.guidance_interval = flags.guidance_interval.unwrap_or(section.guidance_interval);
            cfg.dc_enabled = section.dc && !flags.no_dc;
            let result = reconstruct_all(y, &case.scheme, &case.mask, &cfg)?;
            let bundle = ResultBundle::from_reconstruction(method.name(), &result);
            write_result(output, &bundle, Some(&result.provenance.slice_seconds))?;
            eprintln!("wrote {} in {:.2} s", output.display(), result.provenance.total_seconds);
            return Ok(());
        }
    };
    write_result(output, &bundle, None)?;
    eprintln!("wrote {}", output.display());
    Ok(())
}

fn save_png(path: &Path, img: &MagnitudeImage, scale: f64) -> Result<()> {
    let (rows, cols) = img.shape();
    let pixels = img
        .values()
        .iter()
        .map(|v| ((v / scale).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(cols as u32, rows as u32, pixels)
        .ok_or_else(|| Error::Shape("image buffer size".into()))?;
    buf.save(path).map_err(|e| Error::io(path, io::Error::other(e)))
}

fn cmd_evaluate(result_dir: &Path, truth_dir: &Path, output: Option<PathBuf>, png: Option<PathBuf>) -> Result<()> {
    let result = read_result(result_dir)?;
    let case = read_case(truth_dir)?;
    if (result.provenance.coils, result.provenance.rows, result.provenance.cols) != case.truth.dims()
        || result.provenance.b != case.truth.b()
    {
        return Err(Error::Evaluation(format!(
            "result {}x{}x{}x{} does not match truth {}x{:?}",
            result.provenance.b,
            result.provenance.coils,
            result.provenance.rows,
            result.provenance.cols,
            case.truth.b(),
            case.truth.dims()
        )));
    }
    // RSS from the stored k-space: lossless at file precision, unlike the
    // f32 image files
    let images = result.kspace.iter().map(rss_combine).collect::<Result<Vec<_>>>()?;
    let reports = evaluate_images(&images, &case.truth)?;
    let text = report_lines(&reports);
    let out = output.unwrap_or_else(|| result_dir.join(bundle::REPORT_FILE));
    write_atomic(&out, text.as_bytes())?;
    for (s, r) in reports.iter().enumerate() {
        println!("slice {s}: {r}");
    }
    if let Some(dir) = png {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (s, (img, report)) in images.iter().zip(&reports).enumerate() {
            let reference = rss_combine(case.truth.slice(s)?)?;
            let err = MagnitudeImage::new(
                img.rows(),
                img.cols(),
                img.values().iter().zip(reference.values()).map(|(a, b)| (a - b).abs()).collect(),
            )?;
            save_png(&dir.join(format!("recon_s{s}.png")), img, report.scale)?;
            save_png(&dir.join(format!("truth_s{s}.png")), &reference, report.scale)?;
            // errors shown at 10x gain
            save_png(&dir.join(format!("error_s{s}.png")), &err, report.scale / 10.0)?;
        }
    }
    Ok(())
}

fn cmd_serve(mode: &str, case: Option<PathBuf>, tcp: Option<String>) -> Result<()> {
    let mode = ReferenceMode::parse(mode)?;
    let truth = match case {
        Some(dir) => {
            let c = read_case(&dir)?;
            Some(OracleTruth::new(c.truth, c.scheme, Some(c.mask)))
        }
        None => None,
    };
    match tcp {
        None => {
            let handler = reference_handler(mode, truth)?;
            serve(BufReader::new(io::stdin().lock()), io::stdout().lock(), handler)
        }
        Some(addr) => {
            let listener = TcpListener::bind(&addr).map_err(|e| Error::Transport(format!("bind {addr}: {e}")))?;
            if let Ok(local) = listener.local_addr() {
                eprintln!("listening on {local}");
            }
            for stream in listener.incoming() {
                let stream = stream.map_err(|e| Error::Transport(e.to_string()))?;
                let reader = stream.try_clone().map_err(|e| Error::Transport(e.to_string()))?;
                let handler = reference_handler(mode, truth.clone())?;
                if let Err(e) = serve(BufReader::new(reader), stream, handler) {
                    eprintln!("connection closed: {e}");
                }
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, output } => cmd_simulate(config, output),
        Command::Calibrate {
            case,
            output,
            window,
            ridge,
        } => cmd_calibrate(&case, output, &window, ridge),
        Command::Reconstruct {
            case,
            method,
            predictor,
            kernels,
            config,
            t_m,
            t_u,
            guidance_interval,
            no_anchor,
            no_dc,
            tikhonov,
            true_sensitivities,
            output,
        } => cmd_reconstruct(
            &case,
            method,
            predictor,
            kernels,
            InferenceFlags {
                config,
                t_m,
                t_u,
                guidance_interval,
                no_anchor,
                no_dc,
            },
            tikhonov,
            true_sensitivities,
            &output,
        ),
        Command::Evaluate {
            result,
            truth,
            output,
            png,
        } => cmd_evaluate(&result, &truth, output, png),
        Command::ServeReference { mode, case, tcp } => cmd_serve(&mode, case, tcp),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
