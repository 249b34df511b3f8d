//! Command-line front end.
//!
//! Eight subcommands cover the pipeline end to end: `synth` builds a phantom
//! dataset, `make-labels` rasterizes annotations, `mask` blanks implants,
//! `slope` fits implant orientation, `train`/`infer`/`eval` run the model,
//! and `report` assembles the ablation table. Each error class maps to its
//! own nonzero exit code (see [`exit_code`]); usage errors exit with 2 via
//! clap.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::inference::{sliding_window_infer, InferenceOptions, NetModel};
use crate::labelgen::{jitter_mask, mask_implant, rasterize_implant, MaskingConfig};
use crate::manifest::{load_manifest, save_manifest, ManifestEntry, Split};
use crate::metrics::{binarize, dice_score, iou_score};
use crate::network::ImplantNet;
use crate::report::{render_json, render_text, row_from_run_dir};
use crate::synthdata::{generate_phantom, sample_tilt};
use crate::trainer::{load_checkpoint, load_dataset, train};
use crate::volume::{load_landmarks, save_landmarks, BinaryMask, VoxelVolume};

/// Map an error to its process exit code; one code per class so scripts can
/// tell bad configuration from bad data from I/O trouble.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 3,
        Error::Format { .. } => 4,
        Error::Io(_) => 5,
        Error::Geometry(_) => 6,
        Error::ShapeMismatch { .. } => 7,
        Error::OutOfBounds { .. } => 8,
        Error::EmptyLabel => 9,
        Error::CheckpointMismatch(_) => 10,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "implantplan",
    version,
    about = "Registration-free implant planning on volumetric scans"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic jaw-phantom dataset with a manifest.
    Synth(SynthArgs),
    /// Rasterize landmark annotations into a cylindrical label mask.
    MakeLabels(MakeLabelsArgs),
    /// Blank the labeled implant region of a volume.
    Mask(MaskArgs),
    /// Fit per-axis implant slopes from a label mask.
    Slope(SlopeArgs),
    /// Train the network from a manifest and config file.
    Train(TrainArgs),
    /// Sliding-window inference over a full volume.
    Infer(InferArgs),
    /// Score a probability volume against a label mask.
    Eval(EvalArgs),
    /// Assemble the ablation table from training-run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Number of phantoms.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Cubic volume side length.
    #[arg(long, default_value_t = 64)]
    shape: usize,
    /// Teeth per phantom.
    #[arg(long, default_value_t = 5)]
    teeth: usize,
    /// Fraction of patients assigned to the test split.
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    /// Largest |slope| drawn for implant tilt.
    #[arg(long, default_value_t = 0.3)]
    max_tilt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MakeLabelsArgs {
    /// Landmark annotation file (one implant per line).
    #[arg(long)]
    landmarks: PathBuf,
    /// Volume whose shape the label must match.
    #[arg(long)]
    volume: PathBuf,
    /// Cylinder radius in voxels.
    #[arg(long, default_value_t = 14.0)]
    radius: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct MaskArgs {
    #[arg(long)]
    volume: PathBuf,
    /// Label mask marking the implant.
    #[arg(long)]
    label: PathBuf,
    /// Intensity written into the masked region.
    #[arg(long, default_value_t = 0.0)]
    fill: f32,
    /// Maximum per-axis random offset applied to the mask before blanking.
    #[arg(long, default_value_t = 0)]
    max_offset: i64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SlopeArgs {
    /// Label mask to fit.
    #[arg(long)]
    label: PathBuf,
    /// Emit JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// key=value config file; defaults apply to omitted keys.
    #[arg(long)]
    config: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, loss log and summary.
    #[arg(long)]
    out: PathBuf,
    /// Print one line per optimizer step.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Cubic sliding-window side length.
    #[arg(long, default_value_t = 128)]
    window: usize,
    /// Fractional overlap between adjacent windows.
    #[arg(long, default_value_t = 0.25)]
    overlap: f64,
    /// Output path for the probability volume.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Probability volume, e.g. from `infer`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth label mask.
    #[arg(long)]
    label: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f32,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Training-run directories, one per ablation variant.
    #[arg(long, required = true, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Write report.txt and report.json here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::MakeLabels(a) => cmd_make_labels(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Slope(a) => cmd_slope(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Config("need at least one phantom".into()));
    }
    if !(0.0..1.0).contains(&a.test_frac) {
        return Err(Error::Config(format!(
            "test_frac must lie in [0, 1), got {}",
            a.test_frac
        )));
    }
    for sub in ["volumes", "landmarks", "labels"] {
        std::fs::create_dir_all(a.out.join(sub))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let shape = [a.shape; 3];
    let n_test = ((a.n as f64) * a.test_frac).round() as usize;
    let mut entries = Vec::new();
    for i in 0..a.n {
        let tilt = sample_tilt(&mut rng, -a.max_tilt, a.max_tilt);
        // Cycle the implant site over interior teeth; arc-end sites sit too
        // close to the border on small volumes.
        let gap = if a.teeth >= 3 {
            1 + i % (a.teeth - 2)
        } else {
            i % a.teeth
        };
        let phantom = generate_phantom(a.seed.wrapping_add(i as u64), shape, a.teeth, gap, tilt)?;
        let id = format!("p{i:03}");
        let vol_rel = format!("volumes/{id}.vol");
        let lmk_rel = format!("landmarks/{id}.lmk");
        let lab_rel = format!("labels/{id}.msk");
        phantom.volume.save(&a.out.join(&vol_rel))?;
        save_landmarks(&a.out.join(&lmk_rel), &[phantom.landmarks])?;
        phantom.label.save(&a.out.join(&lab_rel))?;
        let split = if i < a.n - n_test {
            Split::Train
        } else {
            Split::Test
        };
        entries.push(ManifestEntry {
            volume: vol_rel.into(),
            landmarks: lmk_rel.into(),
            split,
            patient: id,
        });
    }
    let manifest = a.out.join("manifest.txt");
    save_manifest(&manifest, &entries)?;
    // Loading re-checks column arity and patient leakage.
    load_manifest(&manifest)?;
    println!(
        "wrote {} phantoms ({} train, {} test) under {}",
        a.n,
        a.n - n_test,
        n_test,
        a.out.display()
    );
    Ok(())
}

fn cmd_make_labels(a: MakeLabelsArgs) -> Result<()> {
    let volume = VoxelVolume::load(&a.volume)?;
    let triples = load_landmarks(&a.landmarks)?;
    let shape = volume.shape();
    let mut label = BinaryMask::zeros(shape)?;
    for t in &triples {
        let m = rasterize_implant(t, shape, a.radius)?;
        let mut data = label.data().clone();
        data.zip_mut_with(m.data(), |x, &y| *x |= y);
        label = BinaryMask::new(data)?;
    }
    label.save(&a.out)?;
    println!(
        "rasterized {} implant(s), {} voxels -> {}",
        triples.len(),
        label.popcount(),
        a.out.display()
    );
    Ok(())
}

fn cmd_mask(a: MaskArgs) -> Result<()> {
    let volume = VoxelVolume::load(&a.volume)?;
    let label = BinaryMask::load(&a.label)?;
    let config = MaskingConfig {
        fill_value: a.fill,
        max_offset: a.max_offset,
        rng_seed: a.seed,
        ..MaskingConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let jittered = jitter_mask(&label, &config, &mut rng);
    let masked = mask_implant(&volume, &jittered, &config)?;
    masked.save(&a.out)?;
    println!(
        "masked {} voxels -> {}",
        jittered.popcount(),
        a.out.display()
    );
    Ok(())
}

fn cmd_slope(a: SlopeArgs) -> Result<()> {
    let label = BinaryMask::load(&a.label)?;
    let slopes = crate::slope::slopes_from_label(&label)?;
    if a.json {
        println!(
            "{}",
            serde_json::json!({ "k1": round4(slopes.k1), "k2": round4(slopes.k2) })
        );
    } else {
        println!("k1 {:.4}", slopes.k1);
        println!("k2 {:.4}", slopes.k2);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = PipelineConfig::from_file(&a.config)?;
    let entries = load_manifest(&a.data)?;
    let dataset = load_dataset(&entries, Split::Train, config.train.masking.radius)?;
    println!(
        "training {} on {} scan(s) for {} steps",
        crate::report::method_name(config.network.use_ndp, config.network.use_spb),
        dataset.len(),
        config.train.total_steps
    );
    let verbose = a.verbose;
    let summary = train(&dataset, &config, &a.out)?;
    if verbose {
        let log = std::fs::read_to_string(a.out.join("loss_log.jsonl"))?;
        print!("{log}");
    }
    match summary.eval {
        Some(ev) => println!(
            "done: {} steps{}, dice {:.4}, iou {:.4}{}",
            summary.steps,
            if summary.stopped_early {
                " (stopped early)"
            } else {
                ""
            },
            ev.dice,
            ev.iou,
            match ev.slope_mae {
                Some(m) => format!(", slope mae {m:.4}"),
                None => String::new(),
            }
        ),
        None => println!("done: {} steps", summary.steps),
    }
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let volume = VoxelVolume::load(&a.volume)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    // The fingerprint is the canonical config text, so the checkpoint fully
    // describes its own network.
    let config = PipelineConfig::parse(&ckpt.fingerprint)?;
    let net = ImplantNet::new(config.network.clone())?;
    if net.param_count() != ckpt.params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint holds {} parameters, network needs {}",
            ckpt.params.len(),
            net.param_count()
        )));
    }
    let model = NetModel {
        net: &net,
        params: &ckpt.params,
    };
    let opts = InferenceOptions {
        overlap: a.overlap,
        ..InferenceOptions::default()
    };
    let result = sliding_window_infer(&volume, &model, [a.window; 3], &opts)?;
    VoxelVolume::new(result.probs, volume.spacing())?.save(&a.out)?;
    let slopes = result
        .slopes
        .map(|s| serde_json::json!({ "k1": round4(s.k1), "k2": round4(s.k2) }));
    if a.json {
        println!(
            "{}",
            serde_json::json!({
                "probs": a.out.display().to_string(),
                "slopes": slopes,
            })
        );
    } else {
        println!("probabilities -> {}", a.out.display());
        match result.slopes {
            Some(s) => println!("slopes k1 {:.4} k2 {:.4}", s.k1, s.k2),
            None => println!("slopes unavailable (no slope branch output)"),
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let probs = VoxelVolume::load(&a.pred)?;
    let label = BinaryMask::load(&a.label)?;
    let pred = binarize(probs.data(), a.threshold)?;
    let dice = dice_score(&pred, &label)?;
    let iou = iou_score(&pred, &label)?;
    if a.json {
        println!(
            "{}",
            serde_json::json!({ "dice": round4(dice), "iou": round4(iou) })
        );
    } else {
        println!("dice {dice:.4}");
        println!("iou  {iou:.4}");
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let rows = a
        .runs
        .iter()
        .map(|d| row_from_run_dir(d))
        .collect::<Result<Vec<_>>>()?;
    let text = render_text(&rows)?;
    let json = render_json(&rows)?;
    match a.out {
        Some(dir) => {
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join("report.txt"), &text)?;
            std::fs::write(dir.join("report.json"), &json)?;
            println!("wrote report.txt and report.json under {}", dir.display());
        }
        None => {
            print!("{text}");
            println!("{json}");
        }
    }
    Ok(())
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}
