//! `ntcodec` command-line front end.
//!
//! Exit status: 0 success, 1 usage, 2 input or output failure, 3 verification
//! failure.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ntcodec::checkpoint::Checkpoint;
use ntcodec::codec::{decode_container, decode_frame, encode_frame};
use ntcodec::io::{load_pairs, read_manifest, read_ppm, synthetic_set, write_atomic, write_ppm};
use ntcodec::metrics::{bpp, ms_ssim, psnr};
use ntcodec::train::{eval_csv, evaluate, summarize, train, EvalRow};
use ntcodec::{CodecModel, FramePair};
use rand::SeedableRng;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "ntcodec", version, about = "Learned P-frame codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunFlags {
    /// File of `key=value` lines; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    no_attention: bool,
    #[arg(long)]
    no_importance: bool,
    #[arg(long)]
    scales: Option<usize>,
    #[arg(long)]
    mixtures: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        /// Tab-separated `previous<TAB>current` frame list.
        #[arg(long, conflicts_with = "synthetic")]
        manifest: Option<PathBuf>,
        /// Train on this many generated 32×32 pairs instead of a manifest.
        #[arg(long)]
        synthetic: Option<usize>,
        #[command(flatten)]
        run: RunFlags,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines training log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Encode `cur` against `prev`.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        cur: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a container against `prev`.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        prev: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every pair of a manifest and write a CSV table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// CSV path; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode, decode and cross-check every pair of a manifest.
    Roundtrip {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write generated frame pairs and a manifest into a directory.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Failure { code: 3, message: message.into() }
    }
}

impl From<ntcodec::Error> for Failure {
    fn from(e: ntcodec::Error) -> Self {
        use ntcodec::Error as E;
        match e {
            E::InvalidArgument(_) | E::ShapeMismatch { .. } => Failure::usage(e.to_string()),
            _ => Failure::io(e.to_string()),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

trait Context<T> {
    fn at(self, path: &Path) -> Outcome<T>;
}

impl<T> Context<T> for ntcodec::Result<T> {
    fn at(self, path: &Path) -> Outcome<T> {
        self.map_err(|e| {
            let mut f = Failure::from(e);
            f.message = format!("{}: {}", path.display(), f.message);
            f
        })
    }
}

fn load_model(path: &Path) -> Outcome<CodecModel> {
    let ck = Checkpoint::load(path).at(path)?;
    CodecModel::from_checkpoint(&ck).at(path)
}

fn load_manifest(path: &Path) -> Outcome<Vec<FramePair>> {
    let entries = read_manifest(path).at(path)?;
    let (pairs, skipped) = load_pairs::<f32>(&entries);
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} unreadable pairs", path.display());
    }
    Ok(pairs)
}

fn cmd_train(
    manifest: Option<&Path>,
    synthetic: Option<usize>,
    run: &RunFlags,
    out: &Path,
    log_path: Option<&Path>,
) -> Outcome {
    let cfg = RunConfig::resolve(run)?;
    let data = match (manifest, synthetic) {
        (Some(m), _) => load_manifest(m)?,
        (None, Some(n)) => synthetic_set::<f32>(cfg.seed, n, 32, 32),
        (None, None) => return Err(Failure::usage("train needs --manifest or --synthetic")),
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = CodecModel::new(cfg.codec, &mut rng)?;
    let mut lines = String::new();
    let logs = train(&mut model, &data, &cfg.train, |l| {
        log::info!("step {} loss {:.5} rate {:.1} bits", l.step, l.total, l.rate_bits);
        lines.push_str(&serde_json::to_string(l).expect("log records serialize"));
        lines.push('\n');
    })?;
    write_atomic(out, &model.to_checkpoint().to_bytes()).at(out)?;
    let log_path = log_path.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = out.as_os_str().to_owned();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_atomic(&log_path, lines.as_bytes()).at(&log_path)?;
    println!(
        "trained {} steps on {} pairs; final loss {}",
        logs.len(),
        data.len(),
        logs.last().map_or("n/a".into(), |l| format!("{:.5}", l.total))
    );
    Ok(())
}

fn read_frames(prev: &Path, cur: &Path) -> Outcome<(ntcodec::Tensor, ntcodec::Tensor)> {
    let a = read_ppm::<f32>(prev).at(prev)?;
    let b = read_ppm::<f32>(cur).at(cur)?;
    if a.shape() != b.shape() {
        return Err(Failure::usage(format!(
            "frame sizes differ: {} is {}, {} is {}",
            prev.display(),
            a.shape(),
            cur.display(),
            b.shape()
        )));
    }
    Ok((a, b))
}

fn cmd_encode(checkpoint: &Path, prev: &Path, cur: &Path, out: &Path) -> Outcome {
    let model = load_model(checkpoint)?;
    let (a, b) = read_frames(prev, cur)?;
    let enc = encode_frame(&model, &a, &b)?;
    let bytes = enc.bytes();
    write_atomic(out, &bytes).at(out)?;
    let s = b.shape();
    let counts: Vec<String> = enc.stack.scales.iter().map(|z| z.data.len().to_string()).collect();
    println!(
        "{} bytes, {:.4} bpp, symbols per scale [{}]",
        bytes.len(),
        bpp(bytes.len(), s.h, s.w),
        counts.join(", ")
    );
    Ok(())
}

fn cmd_decode(checkpoint: &Path, prev: &Path, input: &Path, out: &Path) -> Outcome {
    let model = load_model(checkpoint)?;
    let a = read_ppm::<f32>(prev).at(prev)?;
    let bytes = std::fs::read(input).map_err(|e| Failure::io(format!("{}: {e}", input.display())))?;
    let frame = decode_frame(&model, &a, &bytes).at(input)?;
    write_ppm(out, &frame).at(out)?;
    Ok(())
}

fn print_summary(rows: &[EvalRow]) {
    let s = summarize(rows);
    println!(
        "pairs {} ms-ssim {:.4} psnr {:.2} bpp {:.4} copy ms-ssim {:.4}",
        s.pairs, s.ms_ssim, s.psnr, s.bpp, s.copy_ms_ssim
    );
}

fn cmd_eval(checkpoint: &Path, manifest: &Path, out: Option<&Path>) -> Outcome {
    let model = load_model(checkpoint)?;
    let pairs = load_manifest(manifest)?;
    let rows = evaluate(&model, &pairs).map_err(|e| Failure::verify(e.to_string()))?;
    let csv = eval_csv(&rows);
    match out {
        Some(p) => write_atomic(p, csv.as_bytes()).at(p)?,
        None => print!("{csv}"),
    }
    print_summary(&rows);
    Ok(())
}

fn check_pair(model: &CodecModel, index: usize, pair: &FramePair) -> std::result::Result<EvalRow, String> {
    let enc = encode_frame(model, &pair.prev, &pair.cur).map_err(|e| e.to_string())?;
    let bytes = enc.bytes();
    let (_, stack) = decode_container(model, &bytes).map_err(|e| e.to_string())?;
    if stack != enc.stack {
        return Err("decoded latent differs from the encoded latent".into());
    }
    let dec = decode_frame(model, &pair.prev, &bytes).map_err(|e| e.to_string())?;
    if dec.data() != enc.recon.data() {
        return Err("decoder output differs from encoder reconstruction".into());
    }
    let s = pair.cur.shape();
    let metric = |r: ntcodec::Result<f64>| r.map_err(|e| e.to_string());
    Ok(EvalRow {
        index,
        ms_ssim: metric(ms_ssim(&dec, &pair.cur))?,
        psnr: metric(psnr(&dec, &pair.cur))?,
        bpp: bpp(bytes.len(), s.h, s.w),
        bytes: bytes.len(),
        copy_ms_ssim: metric(ms_ssim(&pair.prev, &pair.cur))?,
        rate_bits: enc.rate_bits,
    })
}

fn cmd_roundtrip(checkpoint: &Path, manifest: &Path) -> Outcome {
    let model = load_model(checkpoint)?;
    let pairs = load_manifest(manifest)?;
    let mut rows = Vec::new();
    let mut failed = 0;
    for (i, pair) in pairs.iter().enumerate() {
        match check_pair(&model, i, pair) {
            Ok(r) => {
                println!("pair {i}: ok {:.4} bpp", r.bpp);
                rows.push(r);
            }
            Err(e) => {
                println!("pair {i}: MISMATCH {e}");
                failed += 1;
            }
        }
    }
    print_summary(&rows);
    if failed > 0 {
        return Err(Failure::verify(format!("{failed} of {} pairs failed the round trip", pairs.len())));
    }
    Ok(())
}

fn cmd_synth(seed: u64, count: usize, h: usize, w: usize, out: &Path) -> Outcome {
    std::fs::create_dir_all(out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let mut manifest = String::new();
    for (i, pair) in synthetic_set::<f32>(seed, count, h, w).iter().enumerate() {
        let prev = format!("{i:04}_prev.ppm");
        let cur = format!("{i:04}_cur.ppm");
        write_ppm(&out.join(&prev), &pair.prev).at(&out.join(&prev))?;
        write_ppm(&out.join(&cur), &pair.cur).at(&out.join(&cur))?;
        manifest.push_str(&format!("{prev}\t{cur}\n"));
    }
    let path = out.join("manifest.tsv");
    write_atomic(&path, manifest.as_bytes()).at(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match &cli.command {
        Command::Train { manifest, synthetic, run, out, log } => {
            cmd_train(manifest.as_deref(), *synthetic, run, out, log.as_deref())
        }
        Command::Encode { checkpoint, prev, cur, out } => cmd_encode(checkpoint, prev, cur, out),
        Command::Decode { checkpoint, prev, input, out } => cmd_decode(checkpoint, prev, input, out),
        Command::Eval { checkpoint, manifest, out } => cmd_eval(checkpoint, manifest, out.as_deref()),
        Command::Roundtrip { checkpoint, manifest } => cmd_roundtrip(checkpoint, manifest),
        Command::Synth { seed, count, height, width, out } => cmd_synth(*seed, *count, *height, *width, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let _ = writeln!(std::io::stderr(), "error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
