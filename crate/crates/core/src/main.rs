use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blazeface::analysis::{compare_depthwise_kernels, network_cost, receptive_field, time_layers};
use blazeface::anchors::{anchors_csv, generate_anchors, FRONTAL_GRIDS};
use blazeface::eval::{evaluate, load_dataset_index};
use blazeface::image::load_image;
use blazeface::metrics::jitter_metric;
use blazeface::net::NetworkSpec;
use blazeface::postprocess::{TieMode, TiePolicy};
use blazeface::weights::{init_random_weights, load_weights, save_weights};
use blazeface::{Detection, Detector, DetectorConfig, Error, Tensor};

#[derive(Parser)]
#[command(name = "blazeface", version, about = "Single-shot face detector and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect faces; prints `score xmin ymin xmax ymax` then six `x y` keypoints per line.
    Detect {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Evaluate AP, regression error and jitter over a dataset index.
    Eval {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Ignore faces (and predictions) with a smaller normalized box area.
        #[arg(long, default_value_t = 0.0)]
        min_face_area: f32,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Measure translation jitter on one image.
    Jitter {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Print the anchor lattice.
    Anchors {
        /// Dump every anchor as CSV.
        #[arg(long)]
        dump: bool,
    },
    /// Cost, receptive-field and timing reports for the frontal network.
    Analyze {
        #[arg(long, value_enum)]
        report: Report,
        /// Emit CSV instead of aligned columns.
        #[arg(long)]
        csv: bool,
        /// Also report the ladder with this depthwise kernel size (rf report).
        #[arg(long)]
        compare_kernel: Option<usize>,
        /// Weights for timing; seeded random weights when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
        /// Let the tensor ops use all cores while timing.
        #[arg(long)]
        parallel: bool,
    },
    /// Write a seeded random weight file.
    InitWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Macs,
    Rf,
    Timing,
}

#[derive(Clone, Copy, ValueEnum)]
enum TieArg {
    Blend,
    Nms,
}

#[derive(Args)]
struct DetectorArgs {
    #[arg(long, default_value_t = blazeface::anchors::DEFAULT_MIN_SCORE)]
    min_score: f32,
    #[arg(long, value_enum, default_value_t = TieArg::Blend)]
    tie_resolution: TieArg,
    #[arg(long, default_value_t = blazeface::postprocess::DEFAULT_CLUSTER_IOU)]
    cluster_iou: f32,
}

impl DetectorArgs {
    fn config(&self, min_face_area: f32) -> Result<DetectorConfig, Error> {
        let mode = match self.tie_resolution {
            TieArg::Blend => TieMode::Blending,
            TieArg::Nms => TieMode::Suppression,
        };
        Ok(DetectorConfig {
            min_score: self.min_score,
            tie: TiePolicy::new(mode, self.cluster_iou)?,
            min_face_area,
            ..DetectorConfig::default()
        })
    }

    fn build(&self, weights: &PathBuf, min_face_area: f32) -> Result<Detector, Error> {
        Detector::new(load_weights(weights)?, self.config(min_face_area)?)
    }
}

fn format_detection(d: &Detection) -> String {
    let mut line = format!("{:.6}", d.score);
    for v in d.coords() {
        let _ = write!(line, " {v:.6}");
    }
    line
}

fn run(cli: Cli) -> Result<String, Error> {
    let mut out = String::new();
    match cli.command {
        Command::Detect {
            weights,
            image,
            detector,
        } => {
            let det = detector.build(&weights, 0.0)?;
            for d in det.detect(&load_image(&image)?)? {
                out.push_str(&format_detection(&d));
                out.push('\n');
            }
        }
        Command::Eval {
            weights,
            dataset,
            min_face_area,
            detector,
        } => {
            let det = detector.build(&weights, min_face_area)?;
            let records = load_dataset_index(&dataset)?;
            let report = evaluate(&det, &records)?;
            out.push_str(&report.to_text());
            out.push('\n');
            out.push_str(&report.to_key_values());
        }
        Command::Jitter {
            weights,
            image,
            detector,
        } => {
            let det = detector.build(&weights, 0.0)?;
            let img: Tensor = load_image(&image)?;
            let r = jitter_metric(|x| det.detect(x), &img, &det.config().jitter_offsets)?;
            let _ = writeln!(out, "jitter_iod={:.6}", r.jitter_iod());
            let _ = writeln!(out, "offsets={}", det.config().jitter_offsets.len());
            let _ = writeln!(out, "matched={}", r.matched);
            let _ = writeln!(out, "unmatched={}", r.unmatched);
            let _ = writeln!(out, "degenerate={}", r.degenerate);
        }
        Command::Anchors { dump } => {
            if dump {
                out.push_str(&anchors_csv());
            } else {
                for (grid, per_cell) in FRONTAL_GRIDS {
                    let _ = writeln!(
                        out,
                        "{grid}x{grid} grid: {per_cell} anchors per cell, {} anchors",
                        grid * grid * per_cell
                    );
                }
                let _ = writeln!(out, "total: {}", generate_anchors().len());
            }
        }
        Command::Analyze {
            report,
            csv,
            compare_kernel,
            weights,
            seed,
            iterations,
            parallel,
        } => {
            let spec = NetworkSpec::frontal();
            match report {
                Report::Macs => {
                    let cost = network_cost(&spec);
                    out.push_str(&if csv { cost.to_csv() } else { cost.to_text() });
                }
                Report::Rf => {
                    let rf = receptive_field(&spec);
                    out.push_str(&if csv { rf.to_csv() } else { rf.to_text() });
                    if let Some(k) = compare_kernel {
                        if k == 0 {
                            return Err(Error::InvalidArgument("kernel size must be >= 1".into()));
                        }
                        let cmp = compare_depthwise_kernels(&spec, blazeface::net::DEPTHWISE_KERNEL, k);
                        out.push('\n');
                        out.push_str(&cmp.to_text());
                    }
                }
                Report::Timing => {
                    let store = match weights {
                        Some(p) => load_weights(p)?,
                        None => init_random_weights(&spec, seed),
                    };
                    store.validate_against(&spec)?;
                    let input = Tensor::full(spec.input, 0.25)?;
                    let t = time_layers(&spec, &store, &input, iterations, parallel)?;
                    out.push_str(&if csv { t.to_csv() } else { t.to_text() });
                }
            }
        }
        Command::InitWeights { seed, out: path } => {
            let store = init_random_weights(&NetworkSpec::frontal(), seed);
            save_weights(&store, &path)?;
            let _ = writeln!(out, "wrote {} tensors to {}", store.len(), path.display());
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
