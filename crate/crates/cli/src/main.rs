//! `a2c`: train, compress, decompress and evaluate point cloud attribute
//! codecs from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use a2c_core::codec::{load_model, model_init, save_model, CodecConfig};
use a2c_core::eval::{
    append_rd_point, bd_metrics, bpp, psnr_y, psnr_yuv, rd_report, read_rd_csv, Quality, RDPoint,
};
use a2c_core::pipeline::{compress, decompress};
use a2c_core::pointcloud::{make_patches, read_ply, write_ply, PlyFormat, PATCH_SIZE};
use a2c_core::training::{synth_dataset, train_with, TrainConfig};

#[derive(Parser)]
#[command(name = "a2c", version, about = "Learned point cloud attribute codec")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model for one rate point and write a checkpoint.
    Train(TrainArgs),
    /// Code the colors of a PLY cloud.
    Compress(CompressArgs),
    /// Rebuild colors from a stream and the original geometry.
    Decompress(DecompressArgs),
    /// Compare a decoded cloud with the original.
    Eval(EvalArgs),
    /// Write RD tables and a plot, and print BD figures against the first curve.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    output: PathBuf,
    /// Training clouds. Without any, synthetic patches are used.
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Number of synthetic patches.
    #[arg(long, default_value_t = 512)]
    patches: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Loss log; defaults to the checkpoint path with a `.csv` extension.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    ratio: Option<usize>,
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    latent: Option<usize>,
    #[arg(long)]
    attn_dim: Option<usize>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long)]
    model: PathBuf,
    /// Compressed stream.
    #[arg(long)]
    input: PathBuf,
    /// PLY holding the original positions.
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    ascii: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Original cloud.
    #[arg(long)]
    input: PathBuf,
    /// Decoded cloud with the same point order.
    #[arg(long)]
    decoded: PathBuf,
    /// Stream the decoded cloud came from; enables bpp.
    #[arg(long)]
    stream: Option<PathBuf>,
    /// RD CSV to append the point to. Needs --stream and --lambda.
    #[arg(long, requires_all = ["stream", "lambda"])]
    output: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value = "a2c")]
    name: String,
}

#[derive(Args)]
struct ReportArgs {
    /// RD CSVs; the first is the anchor.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
}

fn codec_config(preset: Preset, o: &Overrides) -> CodecConfig {
    let mut cfg = match preset {
        Preset::Paper => CodecConfig::default(),
        Preset::Desk => CodecConfig::desk(),
    };
    let set = |field: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut cfg.k_neighbors, o.k);
    set(&mut cfg.sample_ratio, o.ratio);
    set(&mut cfg.num_scales, o.scales);
    set(&mut cfg.eca_layers_per_block, o.layers);
    set(&mut cfg.channels, o.channels);
    set(&mut cfg.latent_channels, o.latent);
    set(&mut cfg.attn_dim, o.attn_dim);
    cfg
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = codec_config(a.preset, &a.overrides);
    let tcfg = TrainConfig { lr: a.lr, batch: a.batch, ..TrainConfig::new(a.lambda, a.steps, a.seed) };
    tcfg.validate()?;
    let mut model = model_init(&cfg, a.seed)?;
    let data = if a.input.is_empty() {
        info!("generating {} synthetic patches", a.patches);
        synth_dataset(a.patches, a.seed)?
    } else {
        let mut all = Vec::new();
        for p in &a.input {
            let pc = read_ply(p).with_context(|| format!("reading {}", p.display()))?;
            all.extend(make_patches(&pc, PATCH_SIZE)?);
        }
        all
    };
    info!("training on {} patches, {} parameters", data.len(), {
        use a2c_core::nn::Params;
        model.param_count()
    });
    let log = train_with(&mut model, &data, &tcfg, |row| {
        if row.step % 100 == 0 {
            info!("step {} loss {:.4} bpp {:.4}", row.step, row.loss, row.est_bpp);
        }
    })?;
    save_model(&model, &a.output)
        .with_context(|| format!("writing {}", a.output.display()))?;
    let log_path = a.log.clone().unwrap_or_else(|| a.output.with_extension("csv"));
    log.write_csv(&log_path)?;
    println!("final loss {:.6}", log.tail_loss(100));
    Ok(())
}

fn load(path: &Path) -> Result<a2c_core::codec::Model> {
    load_model(path).with_context(|| format!("loading model {}", path.display()))
}

fn cmd_compress(a: &CompressArgs) -> Result<()> {
    let model = load(&a.model)?;
    let pc = read_ply(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let stream = compress(&pc, &model)?;
    std::fs::write(&a.output, &stream)
        .with_context(|| format!("writing {}", a.output.display()))?;
    println!("points {} bytes {} bpp {}", pc.len(), stream.len(), bpp(&stream, pc.len())?);
    Ok(())
}

fn cmd_decompress(a: &DecompressArgs) -> Result<()> {
    let model = load(&a.model)?;
    let stream =
        std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let geometry =
        read_ply(&a.geometry).with_context(|| format!("reading {}", a.geometry.display()))?;
    let pc = decompress(&stream, geometry.positions(), &model)?;
    let format = if a.ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    write_ply(&pc, &a.output, format)
        .with_context(|| format!("writing {}", a.output.display()))?;
    info!("decoded {} points", pc.len());
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let orig = read_ply(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rec = read_ply(&a.decoded).with_context(|| format!("reading {}", a.decoded.display()))?;
    if orig.positions() != rec.positions() {
        bail!("decoded cloud does not share the original's positions");
    }
    let (oy, ry) = (orig.yuv(), rec.yuv());
    let y = psnr_y(oy.view(), ry.view())?;
    let yuv = psnr_yuv(oy.view(), ry.view())?;
    let rate = match &a.stream {
        Some(s) => {
            let bytes = std::fs::read(s).with_context(|| format!("reading {}", s.display()))?;
            Some(bpp(&bytes, orig.len())?)
        }
        None => None,
    };
    match rate {
        Some(r) => println!("psnr_y {y} psnr_yuv {yuv} bpp {r}"),
        None => println!("psnr_y {y} psnr_yuv {yuv}"),
    }
    if let (Some(out), Some(r), Some(lambda)) = (&a.output, rate, a.lambda) {
        let point = RDPoint { lambda, bpp: r, psnr_y: y, psnr_yuv: yuv };
        append_rd_point(out, &a.name, &point)?;
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let curves = a
        .input
        .iter()
        .map(|p| read_rd_csv(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    for f in rd_report(&curves, &a.output)? {
        info!("wrote {}", f.display());
    }
    let anchor = &curves[0];
    for c in &curves {
        for (q, name) in [(Quality::Y, "y"), (Quality::Yuv, "yuv")] {
            let m = bd_metrics(anchor, c, q)?;
            let flag = if m.abnormal { " abnormal" } else { "" };
            println!(
                "{} vs {} {name}: bd_br {:.4}% bd_psnr {:.4} dB{flag}",
                c.label, anchor.label, m.bd_br, m.bd_psnr
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Decompress(a) => cmd_decompress(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("A2C_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
