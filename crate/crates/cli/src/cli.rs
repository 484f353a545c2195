use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pixseg_core::io::{
    format_click_log, loss_curve_csv, metrics_csv, parse_click_log, read_sequence, robot_curve_csv, write_masks,
    write_sequence, Sequence,
};
use pixseg_core::loss::TrainingSequence;
use pixseg_core::metrics::{evaluate_sequence, EvalOptions, SequenceScore};
use pixseg_core::retrieval::{segment_video_semisupervised, SemiSupervisedConfig, SEMISUPERVISED_K};
use pixseg_core::session::{run_robot, start_session, SessionConfig, INTERACTIVE_K};
use pixseg_core::synth::{generate_sequence, preset, SceneSpec, PRESETS};
use pixseg_core::train::{train, TrainConfig};
use pixseg_core::video::LabelMask;

use crate::model::Model;
use crate::service::{serve, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "pixseg", version, about = "Video object segmentation by pixel retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic sequence with ground-truth masks.
    Synth(SynthArgs),
    /// Train an embedding head on annotated sequences.
    Train(TrainArgs),
    /// Score a model on a sequence, semi-supervised or with the click robot.
    Eval(EvalArgs),
    /// Replay a click log into a fresh session.
    Replay(ReplayArgs),
    /// Run the interactive session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS), conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// JSON scene description.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Preset seed; ignored with --spec.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Sequence directories with ground-truth masks.
    #[arg(long, required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// `key = value` training config; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Semisup,
    Robot,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Semisup)]
    pub mode: Mode,
    /// Neighbors per vote; 5 for semisup, 1 for robot unless given.
    #[arg(long)]
    pub k: Option<usize>,
    /// Online adaptation; on by default for semisup, off for robot.
    #[arg(long, overrides_with = "no_adapt")]
    pub adapt: bool,
    #[arg(long, overrides_with = "adapt")]
    pub no_adapt: bool,
    /// Robot click budget per seed.
    #[arg(long, default_value_t = 20)]
    pub clicks: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, default_value_t = INTERACTIVE_K)]
    pub k: usize,
    #[arg(long)]
    pub adapt: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes the final masks here, plus `metrics.csv` when ground truth exists.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Directory of sequence directories; each subdirectory name is a video id.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, default_value_t = 8)]
    pub max_sessions: usize,
    #[arg(long, default_value_t = 4_000_000)]
    pub max_video_pixels: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
        Command::Serve(a) => {
            let config = ServiceConfig {
                listen: a.listen,
                data_dir: a.data,
                model_path: a.model,
                max_sessions: a.max_sessions,
                max_video_pixels: a.max_video_pixels,
            };
            config.validate()?;
            tokio::runtime::Runtime::new()?.block_on(serve(config))
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec: SceneSpec = match (&a.preset, &a.spec) {
        (Some(name), _) => preset(name, a.seed).with_context(|| format!("unknown preset {name}"))?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, None) => bail!("need --preset or --spec"),
    };
    let (video, masks) = generate_sequence(&spec)?;
    write_sequence(&a.out, &video, Some(&masks), spec.num_objects())
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} frames to {}", video.frame_count(), a.out.display());
    Ok(())
}

fn load_annotated(dir: &Path) -> Result<(Sequence, Vec<LabelMask>)> {
    if !dir.is_dir() {
        bail!("data directory {} does not exist", dir.display());
    }
    let mut sequence = read_sequence(dir).with_context(|| format!("reading {}", dir.display()))?;
    let masks = sequence
        .masks
        .take()
        .with_context(|| format!("{} has no ground-truth masks", dir.display()))?;
    Ok((sequence, masks))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            TrainConfig::from_kv_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    let sequences = a
        .data
        .iter()
        .map(|dir| {
            let (sequence, masks) = load_annotated(dir)?;
            Ok(TrainingSequence::new(&sequence.video, &masks, &config.embed)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = train(&sequences, &config)?;
    let model = Model {
        params: outcome.params,
        config,
    };
    model.save(&a.out)?;
    let csv_path = a.loss_csv.unwrap_or_else(|| {
        let mut name = a.out.as_os_str().to_owned();
        name.push(".loss.csv");
        PathBuf::from(name)
    });
    std::fs::write(&csv_path, loss_curve_csv(&outcome.curve)).with_context(|| format!("writing {}", csv_path.display()))?;
    if let Some(last) = outcome.curve.last() {
        println!("iteration {} loss {:.6} skipped {}", last.iteration, last.total, last.skipped);
    }
    println!("wrote {} and {}", a.out.display(), csv_path.display());
    Ok(())
}

fn sequence_name(dir: &Path) -> String {
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("sequence")
        .to_string()
}

fn write_outputs(out: &Path, name: &str, masks: &[LabelMask], score: &SequenceScore) -> Result<()> {
    write_masks(&out.join("masks"), masks)?;
    let path = out.join("metrics.csv");
    std::fs::write(&path, metrics_csv(&[(name.to_string(), score.clone())]))
        .with_context(|| format!("writing {}", path.display()))?;
    println!("mean_J={:.4} mean_F={:.4}", score.mean_j, score.mean_f);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    let (sequence, gt) = load_annotated(&a.data)?;
    let name = sequence_name(&a.data);
    let num_objects = sequence.meta.objects.max(1);
    let seed = *a.seeds.first().context("need at least one seed")?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    match a.mode {
        Mode::Semisup => {
            let config = SemiSupervisedConfig {
                embed: model.config.embed,
                k: a.k.unwrap_or(SEMISUPERVISED_K),
                adapt: !a.no_adapt,
                seed,
                ..SemiSupervisedConfig::default()
            };
            let masks = segment_video_semisupervised(&sequence.video, &gt[0], &model.params, &config)?;
            let options = EvalOptions {
                exclude_first: true,
                tolerance: None,
            };
            let score = evaluate_sequence(&masks, &gt, num_objects, options)?;
            write_outputs(&a.out, &name, &masks, &score)
        }
        Mode::Robot => {
            let config = SessionConfig {
                embed: model.config.embed,
                k: a.k.unwrap_or(INTERACTIVE_K),
                num_objects,
                adapt: a.adapt,
                seed,
                ..SessionConfig::default()
            };
            let mut session = start_session(&sequence.video, &model.params, config)?;
            let run = run_robot(&mut session, &gt, a.clicks, &a.seeds)?;
            let path = a.out.join("robot.csv");
            std::fs::write(&path, robot_curve_csv(&run)).with_context(|| format!("writing {}", path.display()))?;
            // the session is left in the last seed's final state
            let log = a.out.join("clicks.txt");
            std::fs::write(&log, format_click_log(session.click_log()))
                .with_context(|| format!("writing {}", log.display()))?;
            let masks = session.masks()?.to_vec();
            let score = evaluate_sequence(&masks, &gt, num_objects, EvalOptions::default())?;
            if let Some(last) = run.mean.last() {
                println!("robot: {} clicks, mean curve ends at J={:.4}", a.clicks, last.mean_j);
            }
            write_outputs(&a.out, &name, &masks, &score)
        }
    }
}

fn replay(a: ReplayArgs) -> Result<()> {
    let model = Model::load(&a.model)?;
    if !a.data.is_dir() {
        bail!("data directory {} does not exist", a.data.display());
    }
    let sequence = read_sequence(&a.data).with_context(|| format!("reading {}", a.data.display()))?;
    let text = std::fs::read_to_string(&a.log).with_context(|| format!("reading {}", a.log.display()))?;
    let log = parse_click_log(&text)?;
    let num_objects = sequence.meta.objects.max(1);
    let config = SessionConfig {
        embed: model.config.embed,
        k: a.k,
        num_objects,
        adapt: a.adapt,
        seed: a.seed,
        ..SessionConfig::default()
    };
    let mut session = start_session(&sequence.video, &model.params, config)?;
    session.replay(&log)?;
    println!("replayed {} annotations", log.len());
    let masks = session.masks()?.to_vec();
    match (&a.out, &sequence.masks) {
        (Some(out), Some(gt)) => {
            let score = evaluate_sequence(&masks, gt, num_objects, EvalOptions::default())?;
            write_outputs(out, &sequence_name(&a.data), &masks, &score)?;
        }
        (Some(out), None) => write_masks(&out.join("masks"), &masks)?,
        (None, _) => {}
    }
    Ok(())
}
