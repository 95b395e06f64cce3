//! The `vremd` command line: data synthesis, training, evaluation,
//! inference dumps and the gradient suite.
//!
//! Every option can also come from a `key = value` file passed with
//! `--config` (keys are long flag names, `-` or `_` alike, `#` starts a
//! comment). Flags on the command line win over the file.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{DcaMode, ModelConfig};
use crate::data::{self, io as dataset, prepare, AugmentConfig, SceneOptions};
use crate::error::{Error, Result};
use crate::eval::{decode, evaluate, EvalConfig};
use crate::gradcheck::GradCheckConfig;
use crate::trainer::{Checkpoint, Trainer, TrainConfig};
use crate::verify::{gradient_suite, GradScale};
use crate::viz;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "vremd", version, about = "Video pose estimation with mask refinement and bidirectional motion decoding")]
pub struct Cli {
    /// `key = value` file with option values; flags override it
    #[arg(long, global = true, value_name = "FILE", help = "Option file (key = value lines) [default: none]")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(
        long,
        global = true,
        value_name = "DIR",
        help = "Output directory [default: runs/<timestamp>-seed<seed>]"
    )]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render synthetic windows to a dataset directory
    Synth(SynthArgs),
    /// Train a model on a dataset directory
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory
    Eval(EvalArgs),
    /// Predict one window and write overlays
    Infer(InferArgs),
    /// Check reverse-mode gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of three-frame windows
    #[arg(long, default_value_t = 8)]
    pub windows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Non-target people per scene
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    /// Moving occluder rectangles per scene
    #[arg(long, default_value_t = 0)]
    pub occluders: usize,
    #[arg(long, action = ArgAction::SetTrue, help = "Drift the background texture between frames [default: off]")]
    pub background_motion: bool,
    /// Box-blur width in pixels, 0 for none
    #[arg(long, default_value_t = 0)]
    pub blur: usize,
    /// Multiplier on every velocity and swing amplitude
    #[arg(long, default_value_t = 1.0)]
    pub motion_scale: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR", help = "Dataset directory written by `synth` (required)")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model size: `default` or `tiny`
    #[arg(long, default_value = "default")]
    pub preset: String,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    pub learning_rate: f64,
    /// Step at which the learning rate drops tenfold
    #[arg(long, default_value_t = 300)]
    pub lr_drop_step: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Global gradient-norm bound, 0 to disable
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    /// Target heatmap std in heatmap pixels
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, action = ArgAction::SetTrue, help = "Keep backbone weights fixed [default: off]")]
    pub freeze_backbone: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Train on un-augmented crops [default: off]")]
    pub no_augment: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Replace the human mask by ones [default: off]")]
    pub no_human_mask: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Replace the keypoint mask by ones [default: off]")]
    pub no_keypoint_mask: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Drop the motion decoder [default: off]")]
    pub no_bmd: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Merge forward and backward residuals into one stream [default: off]")]
    pub no_bs: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Drop the mask refinement stream [default: off]")]
    pub no_hkme: bool,
    #[arg(long, value_name = "MODE", help = "Deformable branch: dc, da or dca [default: dca]")]
    pub dca_mode: Option<DcaMode>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE", help = "Checkpoint written by `train` (required)")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR", help = "Dataset directory (required)")]
    pub data: Option<PathBuf>,
    /// Correct-joint radius as a fraction of the head segment
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long, value_name = "FILE", help = "Checkpoint written by `train` (required)")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "DIR", help = "One window directory of a dataset (required)")]
    pub window: Option<PathBuf>,
    #[arg(long, action = ArgAction::SetTrue, help = "Write human and keypoint masks as images [default: off]")]
    pub dump_masks: bool,
    #[arg(long, action = ArgAction::SetTrue, help = "Write deformable sampling locations as images [default: off]")]
    pub dump_offsets: bool,
    /// Enlargement factor of the written images
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Model to check: `tiny` (all components) or `zero` (no parameters)
    #[arg(long, default_value = "tiny")]
    pub scale: String,
    /// Number of seeds, starting at --seed
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Largest accepted relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Coordinates checked per parameter, 0 for all
    #[arg(long, default_value_t = 0)]
    pub max_coords: usize,
    #[arg(long, action = ArgAction::SetTrue, help = "Test hook: negate analytic gradients so the check must fail [default: off]")]
    pub inject_wrong_sign: bool,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Infer(_) => "infer",
            Command::Gradcheck(_) => "gradcheck",
        }
    }

    fn seed(&self) -> u64 {
        match self {
            Command::Synth(a) => a.seed,
            Command::Train(a) => a.seed,
            Command::Eval(a) => a.seed,
            Command::Infer(a) => a.seed,
            Command::Gradcheck(a) => a.seed,
        }
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: EXIT_RUNTIME,
            message: e.to_string(),
        }
    }
}

fn command() -> clap::Command {
    let mut cmd = Cli::command().args_override_self(true);
    for name in ["synth", "train", "eval", "infer", "gradcheck"] {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    cmd
}

/// Rendered `--help` of the top level (`None`) or a subcommand.
pub fn help_text(sub: Option<&str>) -> String {
    let mut cmd = command();
    cmd.build();
    let mut c = match sub {
        Some(s) => cmd.find_subcommand(s).expect("known subcommand").clone(),
        None => cmd,
    };
    c.render_long_help().to_string()
}

/// Reads a `key = value` file into flag arguments for `sub`, rejecting
/// keys that are not options of that subcommand.
pub fn config_args(path: &Path, sub: &str) -> std::result::Result<Vec<OsString>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read config file {}: {e}", path.display())))?;
    let mut cmd = command();
    cmd.build();
    let sc = cmd.find_subcommand(sub).expect("known subcommand");
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("{}:{}: expected `key = value`", path.display(), n + 1)))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let arg = sc
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()) && !matches!(a.get_id().as_str(), "config" | "help" | "version"))
            .ok_or_else(|| CliError::usage(format!("{}:{}: unknown key `{}`", path.display(), n + 1, key.replace('-', "_"))))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" | "1" | "yes" | "on" => out.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" | "off" => {}
                _ => return Err(CliError::usage(format!("{}:{}: `{key}` expects true or false", path.display(), n + 1))),
            }
        } else {
            out.push(OsString::from(format!("--{key}")));
            out.push(OsString::from(value));
        }
    }
    Ok(out)
}

fn parse_from(args: &[OsString]) -> std::result::Result<(Cli, clap::ArgMatches), clap::Error> {
    let matches = command().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    Ok((cli, matches))
}

/// Parses arguments, folding in the option file: defaults, then file,
/// then command-line flags.
pub fn parse(args: &[OsString]) -> std::result::Result<Cli, CliError> {
    let (cli, matches) = parse_from(args).map_err(clap_error)?;
    let (cli, matches) = match cli.config.clone() {
        None => (cli, matches),
        Some(path) => {
            let sub = cli.command.name();
            let extra = config_args(&path, sub)?;
            let at = subcommand_position(args, sub).ok_or_else(|| CliError::usage("cannot locate subcommand"))?;
            let mut merged: Vec<OsString> = args[..=at].to_vec();
            merged.extend(extra);
            merged.extend_from_slice(&args[at + 1..]);
            parse_from(&merged).map_err(clap_error)?
        }
    };
    check_combinations(&cli, &matches)?;
    Ok(cli)
}

fn subcommand_position(args: &[OsString], sub: &str) -> Option<usize> {
    let mut skip = false;
    for (i, a) in args.iter().enumerate().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        match a.to_str() {
            Some("--config") | Some("--out") => skip = true,
            Some(s) if s == sub => return Some(i),
            _ => {}
        }
    }
    None
}

fn check_combinations(cli: &Cli, matches: &clap::ArgMatches) -> std::result::Result<(), CliError> {
    if let Command::Train(t) = &cli.command {
        let sub = matches.subcommand_matches("train");
        let explicit = sub.and_then(|m| m.value_source("dca_mode")) == Some(ValueSource::CommandLine);
        if t.no_bmd && explicit {
            return Err(CliError::usage("--dca-mode has no effect with --no-bmd"));
        }
        if t.no_bmd && t.no_bs {
            return Err(CliError::usage("--no-bs has no effect with --no-bmd"));
        }
    }
    Ok(())
}

fn clap_error(e: clap::Error) -> CliError {
    use clap::error::ErrorKind;
    let code = match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
        _ => EXIT_USAGE,
    };
    CliError {
        code,
        message: e.render().to_string(),
    }
}

/// Runs the command line `args` (including the program name), writing
/// human-readable output to `out`. Returns the process exit code.
pub fn run(args: &[OsString], out: &mut dyn Write) -> i32 {
    let cli = match parse(args) {
        Ok(c) => c,
        Err(e) => {
            if e.code == EXIT_OK {
                let _ = write!(out, "{}", e.message);
            } else {
                eprint!("{}", e.message);
                if !e.message.ends_with('\n') {
                    eprintln!();
                }
            }
            return e.code;
        }
    };
    configure_threads();
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Caps the worker pool at `VREMD_NUM_THREADS` when it is set.
fn configure_threads() {
    if let Some(n) = std::env::var("VREMD_NUM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn out_dir(cli: &Cli) -> std::result::Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| {
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        PathBuf::from("runs").join(format!("{stamp}-seed{}", cli.command.seed()))
    });
    fs::create_dir_all(&dir).map_err(|e| CliError::from(Error::io(&dir, e)))?;
    Ok(dir)
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> std::result::Result<&'a T, CliError> {
    v.as_ref().ok_or_else(|| CliError::usage(format!("missing required option --{flag}")))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn execute(cli: &Cli, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    match &cli.command {
        Command::Synth(a) => synth(cli, a, out),
        Command::Train(a) => train(cli, a, out),
        Command::Eval(a) => eval(cli, a, out),
        Command::Infer(a) => infer(cli, a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn synth(cli: &Cli, a: &SynthArgs, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    let dir = out_dir(cli)?;
    let opts = SceneOptions {
        distractors: a.distractors,
        background_motion: a.background_motion,
        blur: (a.blur > 0).then_some(a.blur),
        occluders: a.occluders,
        motion_scale: a.motion_scale,
        ..SceneOptions::default()
    };
    let windows = data::generate_windows(a.windows, a.seed, &opts)?;
    dataset::write_dataset(&dir, &windows)?;
    let _ = writeln!(out, "wrote {} windows ({} frames) to {}", windows.len(), 3 * windows.len(), dir.display());
    Ok(EXIT_OK)
}

/// The training configuration described by `train` flags.
pub fn train_config(a: &TrainArgs) -> std::result::Result<TrainConfig, CliError> {
    let mut model = match a.preset.as_str() {
        "default" => ModelConfig::default(),
        "tiny" => ModelConfig {
            joints: crate::data::skeleton::JOINT_COUNT,
            ..ModelConfig::tiny()
        },
        other => return Err(CliError::usage(format!("unknown preset `{other}` (expected default or tiny)"))),
    };
    let ab = &mut model.ablation;
    ab.human_mask = !a.no_human_mask;
    ab.keypoint_mask = !a.no_keypoint_mask;
    ab.bmd = !a.no_bmd;
    ab.bidirectional = !a.no_bs;
    ab.hkme = !a.no_hkme;
    ab.dca_mode = a.dca_mode.unwrap_or_default();
    let cfg = TrainConfig {
        model,
        steps: a.steps,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        lr_drop_step: a.lr_drop_step,
        optimizer: crate::trainer::AdamWConfig {
            weight_decay: a.weight_decay,
            ..Default::default()
        },
        clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
        freeze_backbone: a.freeze_backbone,
        sigma: a.sigma,
        augment: (!a.no_augment).then(AugmentConfig::default),
        seed: a.seed,
        ..TrainConfig::default()
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

fn train(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    let data_dir = required(&a.data, "data")?;
    let cfg = train_config(a)?;
    let windows = dataset::read_dataset(data_dir)?;
    if windows.is_empty() {
        return Err(CliError::from(Error::Config(format!("no windows under {}", data_dir.display()))));
    }
    let dir = out_dir(cli)?;
    write_file(&dir.join("train_config.json"), &serde_json::to_string_pretty(&cfg).map_err(Error::from)?)?;
    let mut t = Trainer::new(cfg)?;
    let total = t.cfg.steps;
    t.run(&windows, |r| {
        if r.step % 50 == 0 || r.step + 1 == total {
            let _ = writeln!(out, "step {:>4}  loss {:.6}  lr {:.1e}", r.step, r.loss, r.lr);
        }
    })?;
    t.write_metrics(&dir.join("metrics.csv"))?;
    t.checkpoint().save(&dir.join("checkpoint.vrmd"))?;
    let _ = writeln!(out, "checkpoint written to {}", dir.join("checkpoint.vrmd").display());
    Ok(EXIT_OK)
}

fn eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    let ck_path = required(&a.checkpoint, "checkpoint")?;
    let data_dir = required(&a.data, "data")?;
    let (model, store) = Checkpoint::load(ck_path)?.restore()?;
    let windows = dataset::read_dataset(data_dir)?;
    let report = evaluate(&model, &store, &windows, &EvalConfig { alpha: a.alpha })?;
    let dir = out_dir(cli)?;
    write_file(&dir.join("report.csv"), &report.to_csv())?;
    write_file(&dir.join("report.txt"), &format!("{report}\n"))?;
    let _ = writeln!(out, "{report}");
    Ok(EXIT_OK)
}

fn infer(cli: &Cli, a: &InferArgs, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    let ck_path = required(&a.checkpoint, "checkpoint")?;
    let win_dir = required(&a.window, "window")?;
    if a.scale == 0 {
        return Err(CliError::usage("--scale must be positive"));
    }
    let (model, store) = Checkpoint::load(ck_path)?.restore()?;
    let window = dataset::read_window(win_dir)?;
    let sample = prepare(&window, &model.cfg, 1.0, None)?;
    let ins = viz::inspect(&model, &store, &sample)?;
    let stride = model.cfg.heatmap_stride;
    let (pred, conf) = decode(&ins.heatmaps, |p| sample.heatmap_to_image(p, stride));
    let dir = out_dir(cli)?;

    let mut text = String::from("joint x y confidence\n");
    for (j, (&(x, y), c)) in pred.joints.iter().zip(&conf).enumerate() {
        text.push_str(&format!("{j} {x} {y} {c}\n"));
    }
    write_file(&dir.join("prediction.txt"), &text)?;
    viz::pose_overlay(&window.frames[1], &pred, Some(window.key()), a.scale).write_ppm(&dir.join("overlay.ppm"))?;
    viz::heatmap_montage(&ins.heatmaps, a.scale * stride).write_pgm(&dir.join("heatmaps.pgm"))?;
    for j in 0..model.cfg.joints {
        viz::joint_heatmap(&ins.heatmaps, j, a.scale * stride).write_pgm(&dir.join(format!("heatmap_{j:02}.pgm")))?;
    }

    let grid = model.cfg.grid();
    let crops: Vec<crate::image::Image> = (0..3)
        .map(|f| {
            let (h, w) = (model.cfg.image_height, model.cfg.image_width);
            let d = sample.frames.data()[f * h * w..(f + 1) * h * w].to_vec();
            crate::image::Image { height: h, width: w, data: d }
        })
        .collect();
    let mut written = 3 + model.cfg.joints;
    if a.dump_masks {
        match (&ins.human_mask, &ins.keypoint_mask) {
            (Some(hm), Some(km)) => {
                let n = model.cfg.tokens();
                for f in 0..3 {
                    let s = a.scale * model.cfg.patch;
                    viz::token_map(&hm.data()[f * n..(f + 1) * n], grid, s).write_pgm(&dir.join(format!("mask_human_{f}.pgm")))?;
                    viz::token_map(&km.data()[f * n..(f + 1) * n], grid, s).write_pgm(&dir.join(format!("mask_keypoint_{f}.pgm")))?;
                    written += 2;
                }
            }
            _ => {
                let _ = writeln!(out, "model has no mask refinement stream; no masks written");
            }
        }
    }
    if a.dump_offsets {
        if ins.sample_locations.is_empty() {
            let _ = writeln!(out, "model has no motion decoder; no offsets written");
        }
        let names = ["forward", "backward"];
        for (i, loc) in ins.sample_locations.iter().enumerate() {
            let name = if ins.sample_locations.len() == 1 { "merged" } else { names[i] };
            viz::sampling_overlay(&crops[1], loc, ins.samples_per_query, grid, model.cfg.patch, a.scale, 1)
                .write_ppm(&dir.join(format!("offsets_{name}.ppm")))?;
            written += 1;
        }
    }
    let _ = writeln!(out, "wrote {written} files to {}", dir.display());
    Ok(EXIT_OK)
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> std::result::Result<i32, CliError> {
    let scale = match a.scale.as_str() {
        "tiny" => GradScale::Tiny,
        "zero" => GradScale::Zero,
        other => return Err(CliError::usage(format!("unknown scale `{other}` (expected tiny or zero)"))),
    };
    let check = GradCheckConfig {
        step: a.step,
        rel_tol: a.tolerance,
        max_coords_per_param: (a.max_coords > 0).then_some(a.max_coords),
        flip_analytic_sign: a.inject_wrong_sign,
        ..GradCheckConfig::default()
    };
    let seeds: Vec<u64> = (a.seed..a.seed + a.seeds.max(1)).collect();
    let results = gradient_suite(scale, &seeds, &check)?;
    let mut ok = true;
    for r in &results {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        ok &= r.passed();
        let _ = writeln!(
            out,
            "{status} seed {} params {} coords {} max_rel_err {:.3e}",
            r.seed,
            r.params,
            r.report.coords_checked(),
            r.report.max_rel_err()
        );
        for f in r.report.failures().take(5) {
            let _ = writeln!(
                out,
                "  {} coord {}: analytic {:.6e} numeric {:.6e} rel {:.3e}",
                f.name, f.worst_coord, f.analytic_at_worst, f.numeric_at_worst, f.max_rel_err
            );
        }
    }
    Ok(if ok { EXIT_OK } else { EXIT_VERIFY })
}
