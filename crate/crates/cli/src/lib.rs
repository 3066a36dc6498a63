//! Subcommands of the `loadgan` tool. Each command reads its inputs, writes
//! its outputs atomically and leaves a run manifest next to them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use loadgan::gan::{sample_noise, BundleConfig, GanBundle};
use loadgan::ingest::{
    build_daily_profiles, parse_readings, read_profiles, split, synth_reference, write_profiles,
    ProfileSet, Provenance,
};
use loadgan::metrics::{full_report, write_cdf_csv, write_pairs_csv, write_pca_csv};
use loadgan::selection::write_scores;
use loadgan::seqnet::{finite_diff_check, NetworkParams, SeqBatch};
use loadgan::trainer::{
    generate_profiles, save_checkpoint, train_all, write_atomic,
    write_joint_trace, write_trace, Checkpoint, Stage, TrainConfig, TrainObserver,
};
use loadgan::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Relative-error bound for the gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numeric { .. } => CliError::numeric(e.to_string()),
            other => CliError::input(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn with_path<T>(path: &Path, r: loadgan::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    })
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", dir.display())))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn render<F>(f: F) -> CliResult<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> loadgan::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn profiles_csv(set: &ProfileSet) -> CliResult<Vec<u8>> {
    render(|b| write_profiles(set, b))
}

fn load_profiles(path: &Path, provenance: Provenance) -> CliResult<(ProfileSet, String)> {
    let bytes = read_input(path)?;
    let set = with_path(path, read_profiles(bytes.as_slice(), provenance))?;
    Ok((set, sha256_hex(&bytes)))
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_digest: Option<String>,
    /// Input path to SHA-256 of its bytes.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    fn start(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest: None,
            input_digests: BTreeMap::new(),
            seed: None,
            started_at: now(),
            finished_at: String::new(),
            outputs: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path, digest: String) {
        self.input_digests.insert(path.display().to_string(), digest);
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Stamps the end time and writes the manifest to `path`.
    fn finish(mut self, path: &Path) -> CliResult<RunManifest> {
        self.finished_at = now();
        let mut json = serde_json::to_vec_pretty(&self).map_err(|e| CliError::input(e.to_string()))?;
        json.push(b'\n');
        write_out(path, &json)?;
        Ok(self)
    }
}

/// Manifest location for a command that writes a single file.
pub fn manifest_for_file(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub const MANIFEST_NAME: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Commands

pub struct IngestArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub report: Option<PathBuf>,
}

pub fn cmd_ingest(args: &IngestArgs) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::start("ingest");
    let bytes = read_input(&args.input)?;
    manifest.input(&args.input, sha256_hex(&bytes));
    let readings = with_path(&args.input, parse_readings(bytes.as_slice()))?;
    let (set, report) = build_daily_profiles(&readings);
    eprintln!(
        "kept {} of {} days (dropped {} incomplete, {} with extra readings, {} flat)",
        report.kept, report.days_seen, report.dropped_incomplete, report.dropped_excess, report.dropped_flat
    );
    ensure_parent(&args.output)?;
    write_out(&args.output, &profiles_csv(&set)?)?;
    manifest.output(&args.output);
    if let Some(path) = &args.report {
        ensure_parent(path)?;
        let mut json = serde_json::to_vec_pretty(&report).map_err(|e| CliError::input(e.to_string()))?;
        json.push(b'\n');
        write_out(path, &json)?;
        manifest.output(path);
    }
    manifest.finish(&manifest_for_file(&args.output))
}

pub struct SynthArgs {
    pub n: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn cmd_synthdata(args: &SynthArgs) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::start("synthdata");
    manifest.seed = Some(args.seed);
    let set = synth_reference(args.n, args.seed)?;
    ensure_parent(&args.output)?;
    write_out(&args.output, &profiles_csv(&set)?)?;
    manifest.output(&args.output);
    manifest.finish(&manifest_for_file(&args.output))
}

pub struct TrainArgs {
    pub profiles: PathBuf,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Print progress every this many epochs; 0 disables it.
    pub log_every: u64,
}

pub fn load_config(path: Option<&Path>) -> CliResult<(TrainConfig, Option<String>)> {
    let Some(path) = path else {
        return Ok((TrainConfig::default(), None));
    };
    let bytes = read_input(path)?;
    let cfg: TrainConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::input(format!("{}: invalid config: {e}", path.display())))?;
    with_path(path, cfg.validate())?;
    Ok((cfg, Some(sha256_hex(&bytes))))
}

struct TrainLog {
    dir: PathBuf,
    every: u64,
    written: Vec<PathBuf>,
    best: Option<Checkpoint>,
}

impl TrainObserver for TrainLog {
    fn on_epoch(&mut self, stage: Stage, epoch: u64, losses: &[f64]) {
        if self.every > 0 && epoch % self.every == 0 {
            let names: &[&str] = match stage {
                Stage::Autoencoder => &["l_r"],
                Stage::Supervisor => &["l_s"],
                Stage::Joint => &["l_s", "l_g", "l_d"],
            };
            let parts: Vec<String> = names.iter().zip(losses).map(|(n, v)| format!("{n}={v:.6}")).collect();
            eprintln!("{stage:?} epoch {epoch}: {}", parts.join(" "));
        }
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> loadgan::Result<()> {
        let path = self.dir.join(format!("epoch-{:06}.ckpt", ckpt.epoch));
        save_checkpoint(ckpt, &path)?;
        self.written.push(path);
        let better = match &self.best {
            None => true,
            Some(b) => ckpt.frechet.unwrap_or(f64::INFINITY) < b.frechet.unwrap_or(f64::INFINITY),
        };
        if better {
            self.best = Some(ckpt.clone());
        }
        if let Some(f) = ckpt.frechet {
            eprintln!("checkpoint epoch {}: frechet {f:.6}", ckpt.epoch);
        }
        Ok(())
    }
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::start("train");
    let (cfg, _) = load_config(args.config.as_deref())?;
    if let Some(path) = &args.config {
        manifest.input(path, sha256_hex(&read_input(path)?));
    }
    manifest.config_digest = Some(cfg.digest());
    manifest.seed = Some(cfg.seed);
    let (set, digest) = load_profiles(&args.profiles, Provenance::Real)?;
    manifest.input(&args.profiles, digest);
    if set.len() < 2 {
        return Err(CliError::input(format!(
            "{}: need at least 2 profiles to train, found {}",
            args.profiles.display(),
            set.len()
        )));
    }
    let (train, holdout) = split(&set, cfg.test_fraction, cfg.seed)?;
    if train.is_empty() || holdout.len() < 2 {
        return Err(CliError::input(format!(
            "splitting {} profiles leaves {} for training and {} for scoring",
            set.len(),
            train.len(),
            holdout.len()
        )));
    }

    let ckpt_dir = args.out_dir.join("checkpoints");
    ensure_dir(&ckpt_dir)?;
    let holdout_path = args.out_dir.join("holdout.csv");
    write_out(&holdout_path, &profiles_csv(&holdout)?)?;
    manifest.output(&holdout_path);

    let mut log = TrainLog {
        dir: ckpt_dir,
        every: args.log_every,
        written: Vec::new(),
        best: None,
    };
    let result = train_all(&train, &holdout, &cfg, &mut log);
    for p in &log.written {
        manifest.output(p);
    }
    let best_path = args.out_dir.join("best.ckpt");
    let run = match result {
        Ok(run) => run,
        Err(e) => {
            let err = CliError::from(e);
            // Keep the best checkpoint scored before the failure.
            if let Some(best) = &log.best {
                save_checkpoint(best, &best_path)?;
                manifest.output(&best_path);
            }
            manifest.finish(&args.out_dir.join(MANIFEST_NAME))?;
            return Err(err);
        }
    };

    let outputs: [(&str, Vec<u8>); 4] = [
        ("ae_loss.csv", render(|b| write_trace("l_r", &run.ae_trace, b))?),
        ("sup_loss.csv", render(|b| write_trace("l_s", &run.sup_trace, b))?),
        ("joint_loss.csv", render(|b| write_joint_trace(&run.joint.trace, b))?),
        ("scores.csv", render(|b| write_scores(&run.joint.scores, b))?),
    ];
    for (name, bytes) in outputs {
        let path = args.out_dir.join(name);
        write_out(&path, &bytes)?;
        manifest.output(&path);
    }
    save_checkpoint(&run.joint.best, &best_path)?;
    manifest.output(&best_path);
    eprintln!(
        "best checkpoint: epoch {} frechet {}",
        run.joint.best.epoch,
        run.joint.best.frechet.unwrap_or(f64::NAN)
    );
    manifest.finish(&args.out_dir.join(MANIFEST_NAME))
}

pub struct GenerateArgs {
    pub checkpoint: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub output: PathBuf,
}

pub fn cmd_generate(args: &GenerateArgs) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::start("generate");
    manifest.seed = Some(args.seed);
    let bytes = read_input(&args.checkpoint)?;
    manifest.input(&args.checkpoint, sha256_hex(&bytes));
    let ckpt = with_path(&args.checkpoint, Checkpoint::from_json(&bytes))?;
    manifest.config_digest = Some(ckpt.config_digest.clone());
    let set = generate_profiles(&ckpt.bundle, args.n, args.seed)?;
    ensure_parent(&args.output)?;
    write_out(&args.output, &profiles_csv(&set)?)?;
    manifest.output(&args.output);
    manifest.finish(&manifest_for_file(&args.output))
}

pub struct EvaluateArgs {
    pub real: PathBuf,
    pub gen: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<RunManifest> {
    let mut manifest = RunManifest::start("evaluate");
    manifest.seed = Some(args.seed);
    let (real, d_real) = load_profiles(&args.real, Provenance::Real)?;
    let (gen, d_gen) = load_profiles(&args.gen, Provenance::Generated)?;
    manifest.input(&args.real, d_real);
    manifest.input(&args.gen, d_gen);
    let report = full_report(&real, &gen, args.seed)?;
    ensure_dir(&args.out_dir)?;

    let mut files = vec![
        ("metrics.json", {
            let mut j = serde_json::to_vec_pretty(&report).map_err(|e| CliError::input(e.to_string()))?;
            j.push(b'\n');
            j
        }),
        ("cdf_real.csv", render(|b| write_cdf_csv(&report.cdf_real, b))?),
        ("cdf_gen.csv", render(|b| write_cdf_csv(&report.cdf_gen, b))?),
        ("pairs.csv", render(|b| write_pairs_csv(&report.pairs, b))?),
    ];
    if let Some(pca) = &report.pca {
        files.push(("pca.csv", render(|b| write_pca_csv(pca, b))?));
    }
    for (name, bytes) in files {
        let path = args.out_dir.join(name);
        write_out(&path, &bytes)?;
        manifest.output(&path);
    }
    eprintln!(
        "js {:.6}  rmse {:.6}  kl forward {:.6}  kl reverse {:.6}",
        report.js_distance, report.rmse, report.kl_forward, report.kl_reverse
    );
    manifest.finish(&args.out_dir.join(MANIFEST_NAME))
}

// ---------------------------------------------------------------------------
// Gradient check

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkCheck {
    pub network: String,
    pub parameters: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub networks: Vec<NetworkCheck>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.networks.iter().map(|n| n.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < GRADCHECK_TOLERANCE
    }
}

/// Sizes used by the gradient check.
pub const GRADCHECK_HIDDEN: usize = 4;
pub const GRADCHECK_LAYERS: usize = 1;
pub const GRADCHECK_STEPS: usize = 6;
pub const GRADCHECK_BATCH: usize = 2;
const GRADCHECK_EPSILON: f64 = 1e-5;

/// Central-difference check of every network at a small size, against the
/// loss `sum(w * y) + sum(y^2) / 2` with fixed random weights `w`.
pub fn run_gradcheck(seed: u64) -> CliResult<GradcheckReport> {
    let cfg = BundleConfig::reduced(GRADCHECK_HIDDEN, GRADCHECK_LAYERS);
    let bundle = GanBundle::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut networks = Vec::new();
    for (name, params) in bundle.networks() {
        let input = if name == "generator" {
            let z = sample_noise(GRADCHECK_BATCH, cfg.latent_dim, seed);
            z.steps_range(0, GRADCHECK_STEPS)
        } else {
            let f = params.config().input_dim;
            SeqBatch::from_fn(GRADCHECK_BATCH, GRADCHECK_STEPS, f, |_, _, _| rng.random::<f64>())
        };
        let out_len = params.forward(&input)?.iter().count();
        let weights: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |y: &SeqBatch| {
            let (b, t, f) = y.dims();
            let mut grad = SeqBatch::zeros(b, t, f);
            let mut value = 0.0;
            let mut k = 0;
            for bi in 0..b {
                for ti in 0..t {
                    for fi in 0..f {
                        let v = y.get(bi, ti, fi);
                        value += weights[k] * v + 0.5 * v * v;
                        grad.set(bi, ti, fi, weights[k] + v);
                        k += 1;
                    }
                }
            }
            (value, grad)
        };
        let report = finite_diff_check(params, &input, loss, GRADCHECK_EPSILON)?;
        networks.push(NetworkCheck {
            network: name.to_string(),
            parameters: NetworkParams::len(params),
            coordinates: report.coordinates,
            max_rel_error: report.max_rel_error,
        });
    }
    Ok(GradcheckReport { seed, networks })
}

pub fn cmd_gradcheck(seed: u64) -> CliResult<GradcheckReport> {
    let report = run_gradcheck(seed)?;
    for n in &report.networks {
        println!(
            "{:<14} params {:>4}  checked {:>4}  max rel error {:.3e}",
            n.network, n.parameters, n.coordinates, n.max_rel_error
        );
    }
    let worst = report.max_rel_error();
    println!(
        "overall max rel error {worst:.3e} ({})",
        if report.passed() { "pass" } else { "FAIL" }
    );
    if !report.passed() {
        return Err(CliError::numeric(format!(
            "gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}"
        )));
    }
    Ok(report)
}
