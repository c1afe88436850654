//! The `dge` command line.
//!
//! Exit codes: 0 success, 1 bad arguments or failed checks, 2 I/O or image
//! decoding failure, 3 config or weight validation failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::Error;
use crate::gradcheck;
use crate::head::Detection;
use crate::image::{preprocess, ImageBuffer};
use crate::model::Model;
use crate::selftest;
use crate::stats::{count_flops, ModelStats};
use crate::weights::WeightStore;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "dge", version, about = "Dual-branch RGB/IR detector: inference and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect objects in a paired visible/infrared image (binary PPM/PGM).
    Infer {
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Where to write the detection JSON.
        #[arg(long)]
        out: PathBuf,
        /// Directory that receives `features.dgew` with every stage output.
        #[arg(long)]
        dump_features: Option<PathBuf>,
    },
    /// Print parameter and FLOP counts.
    Stats {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Compare reverse-mode gradients with central finite differences.
    Gradcheck {
        /// Comma-separated op names; all ops when omitted.
        #[arg(long, value_delimiter = ',')]
        ops: Option<Vec<String>>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
    },
    /// Run the built-in consistency suites.
    Selftest {
        /// Print the suite names and exit.
        #[arg(long)]
        list: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Validate and use this weight file instead of seeded weights.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Write seeded initial weights for a config.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's `seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// A failure paired with its exit code.
struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) | Error::Image(_) => EXIT_IO,
            _ => EXIT_INVALID,
        };
        Failure(code, e.to_string())
    }
}

fn io(context: &Path, e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_IO, format!("{}: {e}", context.display()))
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig, Failure> {
    match path {
        None => Ok(ModelConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io(p, e))?;
            ModelConfig::parse(&text).map_err(|e| Failure(EXIT_INVALID, format!("{}: {e}", p.display())))
        }
    }
}

fn load_model(cfg: &ModelConfig, weights: &Path) -> Result<Model, Failure> {
    let bytes = std::fs::read(weights).map_err(|e| io(weights, e))?;
    let invalid = |e: Error| Failure(EXIT_INVALID, format!("{}: {e}", weights.display()));
    let store = WeightStore::from_bytes(&bytes).map_err(invalid)?;
    Model::from_store(cfg, &store).map_err(invalid)
}

fn load_image(path: &Path) -> Result<ImageBuffer, Failure> {
    let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
    ImageBuffer::decode(&bytes).map_err(|e| io(path, e))
}

#[derive(Serialize)]
pub struct ImageInfo {
    pub width: usize,
    pub height: usize,
    pub rgb: String,
    pub ir: String,
}

#[derive(Serialize)]
pub struct JsonDetection<'a> {
    pub class_id: usize,
    pub class_name: &'a str,
    pub score: f32,
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
}

#[derive(Serialize)]
pub struct ModelInfo {
    pub params: u64,
    pub flops: u64,
}

#[derive(Serialize)]
pub struct InferReport<'a> {
    pub image: ImageInfo,
    pub detections: Vec<JsonDetection<'a>>,
    pub model: ModelInfo,
}

/// Maps a box from the model's square input back onto a `width × height` image.
pub fn to_image_coords(d: &Detection, side: usize, width: usize, height: usize) -> [f32; 4] {
    let (sx, sy) = (width as f32 / side as f32, height as f32 / side as f32);
    let [x1, y1, x2, y2] = d.bbox;
    [x1 * sx, y1 * sy, x2 * sx, y2 * sy]
}

/// The detection document for one image pair.
pub fn infer_report<'a>(
    model: &'a Model,
    stats: &ModelStats,
    rgb: (&ImageBuffer, &str),
    ir_path: &str,
    dets: &[Detection],
) -> InferReport<'a> {
    let (img, rgb_path) = rgb;
    let side = model.cfg.input_side;
    InferReport {
        image: ImageInfo {
            width: img.width,
            height: img.height,
            rgb: rgb_path.to_string(),
            ir: ir_path.to_string(),
        },
        detections: dets
            .iter()
            .map(|d| JsonDetection {
                class_id: d.class_id,
                class_name: &model.cfg.class_names[d.class_id],
                score: d.score,
                bbox: to_image_coords(d, side, img.width, img.height),
            })
            .collect(),
        model: ModelInfo {
            params: stats.params,
            flops: stats.flops,
        },
    }
}

fn infer(
    rgb_path: &Path,
    ir_path: &Path,
    config: &Path,
    weights: &Path,
    out: &Path,
    dump: Option<&Path>,
) -> Result<(), Failure> {
    let cfg = load_config(Some(config))?;
    let model = load_model(&cfg, weights)?;
    let rgb_img = load_image(rgb_path)?;
    let ir_img = load_image(ir_path)?;
    let rgb = preprocess(&rgb_img, cfg.input_side, cfg.rgb_channels).map_err(|e| io(rgb_path, e))?;
    let ir = preprocess(&ir_img, cfg.input_side, cfg.ir_channels).map_err(|e| io(ir_path, e))?;
    let (dets, features) = model.full_forward(&ir, &rgb)?;
    let stats = count_flops(&model)?;
    let report = infer_report(
        &model,
        &stats,
        (&rgb_img, &rgb_path.display().to_string()),
        &ir_path.display().to_string(),
        &dets[0],
    );
    let mut json = serde_json::to_string_pretty(&report).expect("serializable report");
    json.push('\n');
    std::fs::write(out, json).map_err(|e| io(out, e))?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let path = dir.join("features.dgew");
        features.to_store()?.save(&path).map_err(|e| io(&path, e))?;
    }
    Ok(())
}

fn stats(config: Option<&Path>, json: bool, out: &mut dyn Write) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let model = Model::seeded(&cfg)?;
    let s = count_flops(&model)?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&s).expect("serializable stats")).ok();
    } else {
        writeln!(out, "{:<14} {:>12} {:>14}", "module", "params", "flops").ok();
        for m in &s.modules {
            writeln!(out, "{:<14} {:>12} {:>14}", m.name, m.params, m.flops).ok();
        }
        writeln!(out, "{:<14} {:>12} {:>14}", "total", s.params, s.flops).ok();
        writeln!(out, "conv flops: {}", s.conv_flops).ok();
    }
    Ok(())
}

fn run_gradcheck(ops: Option<Vec<String>>, trials: usize, out: &mut dyn Write) -> Result<bool, Failure> {
    let names: Vec<&str> = match &ops {
        Some(v) => v.iter().map(String::as_str).collect(),
        None => gradcheck::OPS.to_vec(),
    };
    if let Some(bad) = names.iter().find(|n| !gradcheck::OPS.contains(n)) {
        return Err(Failure(
            EXIT_USAGE,
            format!("unknown op `{bad}`; known ops: {}", gradcheck::OPS.join(", ")),
        ));
    }
    let reports = gradcheck::run(&names, trials.max(1), 0)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{:<20} coords {:>5}  max rel err {:.3e}  {verdict}", r.op, r.coords, r.max_rel_err).ok();
    }
    Ok(ok)
}

fn run_selftest(config: Option<&Path>, weights: Option<&Path>, out: &mut dyn Write) -> Result<bool, Failure> {
    let cfg = load_config(config)?;
    let model = match weights {
        Some(w) => load_model(&cfg, w)?,
        None => Model::seeded(&cfg)?,
    };
    let reports = selftest::run_all(&model)?;
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{:<14} {verdict}  {}", r.name, r.detail).ok();
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn init(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let store = Model::init_weights(&cfg, seed.unwrap_or(cfg.seed))?;
    store.save(out).map_err(|e| io(out, e))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    let pass = |ok: bool| if ok { EXIT_OK } else { EXIT_USAGE };
    match cli.command {
        Command::Infer {
            rgb,
            ir,
            config,
            weights,
            out: dest,
            dump_features,
        } => infer(&rgb, &ir, &config, &weights, &dest, dump_features.as_deref()).map(|_| EXIT_OK),
        Command::Stats { config, json } => stats(config.as_deref(), json, out).map(|_| EXIT_OK),
        Command::Gradcheck { ops, trials } => run_gradcheck(ops, trials, out).map(pass),
        Command::Selftest { list, config, weights } => {
            if list {
                for s in selftest::SUITES {
                    writeln!(out, "{s}").ok();
                }
                return Ok(EXIT_OK);
            }
            run_selftest(config.as_deref(), weights.as_deref(), out).map(pass)
        }
        Command::Init { config, out: dest, seed } => init(config.as_deref(), &dest, seed).map(|_| EXIT_OK),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                write!(err, "{text}").ok();
            } else {
                write!(out, "{text}").ok();
            }
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            writeln!(err, "error: {msg}").ok();
            code
        }
    }
}
