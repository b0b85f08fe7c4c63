use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::RngCore;
use semguard_core::attack::{run_attack, AttackConfig, AttackInstance, LossKind};
use semguard_core::chain::{measure_consensus, NetConfig, CSV_HEADER};
use semguard_core::circuit::{extract_circuit, gen_witness};
use semguard_core::defense::{defend_transform, evaluate_defense, TransformSpec};
use semguard_core::descriptor::{similarity, DescriptorNetwork, DEFAULT_RESOLUTION};
use semguard_core::harness::{
    load_ppm, run_experiment_suite, save_ppm, ExperimentConfig, ImageKind, ProceduralImage,
};
use semguard_core::proof::{keygen, prove, seeded_rng, verify_bytes, SecurityParam, VerificationKey};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "semguard",
    version,
    about = "Descriptor attacks, transform defense, proofs and a simulated ledger"
)]
struct Cli {
    /// Report operational errors as one JSON object on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Craft an image near the carrier in pixels and near the target in descriptor space.
    Attack(AttackArgs),
    /// Score a candidate against a reference before and after the blur transform.
    Defend(DefendArgs),
    /// Print an image's descriptor, or the similarity of two images.
    Descriptor(DescriptorArgs),
    /// Prove that a statement is the transform of a committed image.
    Prove(ProveArgs),
    /// Check a proof; prints `accept` or `reject:<reason>`.
    Verify(VerifyArgs),
    /// Simulate one transaction commit and print a CSV row.
    ChainSim(ChainArgs),
    /// Run the full experiment suite.
    Experiment(ExperimentArgs),
    /// Write a procedural test image.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    carrier: PathBuf,
    /// global, tensor or hist.
    #[arg(long, default_value = "global")]
    loss: LossKind,
    /// Adam iterations.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Weight of the squared pixel distance to the carrier.
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Side length images are resized to before the network.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration CSV trace (start point plus one row per step).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct DefendArgs {
    #[arg(long)]
    candidate: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// Down-sampling factor, a multiple of 1/256 in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    /// Drop in similarity above which the candidate is flagged.
    #[arg(long, default_value_t = 0.15)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Also write the transformed candidate.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DescriptorArgs {
    #[arg(long)]
    image: PathBuf,
    /// Second image; prints the similarity instead of the vector.
    #[arg(long)]
    other: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
}

#[derive(Args)]
struct ProveArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    /// Requested spot checks, capped by the constraint count.
    #[arg(long, default_value_t = 80)]
    lambda_sec: u32,
    /// Seed for salts and the input blinding.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    vk: PathBuf,
    #[arg(long)]
    statement: PathBuf,
    #[arg(long)]
    proof: PathBuf,
    /// Also write the evaluation key.
    #[arg(long)]
    ek: Option<PathBuf>,
    /// Also write the constraint system.
    #[arg(long)]
    r1cs: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    vk: PathBuf,
    #[arg(long)]
    statement: PathBuf,
    #[arg(long)]
    proof: PathBuf,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long, default_value_t = 5)]
    nodes: usize,
    #[arg(long, default_value_t = 10)]
    payload_kb: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 5.0)]
    latency_base_ms: f64,
    #[arg(long, default_value_t = 0.08)]
    latency_per_kb_ms: f64,
    /// Print the CSV header first.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Key-value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds (default 0..9).
    #[arg(long)]
    seeds: Option<String>,
    /// Side length of procedural images (default 32).
    #[arg(long)]
    image_size: Option<String>,
    /// Comma-separated loss kinds (default global,tensor,hist).
    #[arg(long)]
    losses: Option<String>,
    /// Adam iterations (default 100).
    #[arg(long)]
    iters: Option<String>,
    /// Adam learning rate (default 0.01).
    #[arg(long)]
    lr: Option<String>,
    /// Distortion weight (default 0).
    #[arg(long)]
    lambda: Option<String>,
    /// Defense scale (default 0.5).
    #[arg(long)]
    scale: Option<String>,
    /// Flagging threshold (default 0.15).
    #[arg(long)]
    threshold: Option<String>,
    /// Requested spot checks (default 80).
    #[arg(long)]
    lambda_sec: Option<String>,
    /// Salt seed (default 1).
    #[arg(long)]
    proof_seed: Option<String>,
    /// Timing repetitions per ZKP cell (default 5).
    #[arg(long)]
    zkp_reps: Option<String>,
    /// Image sides for the 10KB, 100KB and capped proof tiers (default 58,183,256).
    #[arg(long)]
    zkp_sides: Option<String>,
    /// Comma-separated node counts (default 5,50).
    #[arg(long)]
    nodes: Option<String>,
    /// Comma-separated payload sizes in KB (default 10,275,467).
    #[arg(long)]
    payload_kb: Option<String>,
    /// Per-message latency in ms (default 5).
    #[arg(long)]
    latency_base_ms: Option<String>,
    /// Transmission time per KB in ms (default 0.08).
    #[arg(long)]
    latency_per_kb_ms: Option<String>,
    /// Network seed (default 7).
    #[arg(long)]
    chain_seed: Option<String>,
    /// Output directory (default results).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    /// gradient, checkerboard or gaussian_blobs.
    #[arg(long)]
    kind: ImageKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn attack(a: AttackArgs) -> Result<()> {
    let instance = AttackInstance::new(load_ppm(&a.target)?, load_ppm(&a.carrier)?)?;
    let cfg = AttackConfig {
        iterations: a.iters,
        eta: a.lr,
        lambda: a.lambda,
        s: a.resolution,
        ..AttackConfig::with_loss(a.loss)
    };
    let net = DescriptorNetwork::default();
    let outcome = run_attack(&net, &instance, &cfg)?;
    save_ppm(&outcome.adversarial, &a.out)?;
    if let Some(path) = &a.trace {
        write(path, outcome.trace.to_csv())?;
    }
    let last = outcome.trace.last().expect("trace includes the start point");
    println!(
        "{}",
        serde_json::json!({
            "loss": a.loss.name(),
            "iterations": a.iters,
            "sim_target": last.sim_to_target,
            "sim_carrier": last.sim_to_carrier,
            "final_loss": last.total_loss,
        })
    );
    Ok(())
}

fn defend(a: DefendArgs) -> Result<()> {
    let candidate = load_ppm(&a.candidate)?;
    let reference = load_ppm(&a.reference)?;
    let spec = TransformSpec::new(a.scale)?;
    let net = DescriptorNetwork::default();
    let verdict = evaluate_defense(&net, &candidate, &reference, &spec, a.threshold, a.resolution)?;
    if let Some(path) = &a.out {
        save_ppm(&defend_transform(&candidate, &spec), path)?;
    }
    println!("{}", verdict.to_json());
    Ok(())
}

fn descriptor(a: DescriptorArgs) -> Result<()> {
    let net = DescriptorNetwork::default();
    let h = net.extract_descriptor(&load_ppm(&a.image)?, a.resolution)?;
    match &a.other {
        Some(other) => {
            let g = net.extract_descriptor(&load_ppm(other)?, a.resolution)?;
            println!("{}", serde_json::json!({ "similarity": similarity(&h, &g)? }));
        }
        None => println!("{}", serde_json::json!({ "dim": h.len(), "values": h.values() })),
    }
    Ok(())
}

fn prove_cmd(a: ProveArgs) -> Result<()> {
    let image = load_ppm(&a.image)?;
    let (w, h, c) = image.dims();
    let circuit = extract_circuit(&TransformSpec::new(a.scale)?, w, h, c)?;
    let crs = keygen(SecurityParam::new(a.lambda_sec)?, &circuit)?;
    let mut rng = seeded_rng(a.seed);
    let mut blinding = [0u8; 16];
    rng.fill_bytes(&mut blinding);
    let (statement, witness) = gen_witness(&circuit, &image, blinding)?;
    let proof = prove(&crs.ek, &statement, &witness, &mut rng)?;
    write(&a.vk, crs.vk.to_bytes())?;
    write(&a.statement, statement.to_bytes())?;
    let proof_bytes = proof.to_bytes();
    write(&a.proof, &proof_bytes)?;
    if let Some(path) = &a.ek {
        write(path, crs.ek.to_bytes())?;
    }
    if let Some(path) = &a.r1cs {
        write(path, circuit.system().to_bytes())?;
    }
    println!(
        "{}",
        serde_json::json!({
            "constraints": circuit.system().num_constraints(),
            "queries": crs.vk.queries,
            "proof_bytes": proof_bytes.len(),
        })
    );
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<bool> {
    let vk = VerificationKey::from_bytes(&read(&a.vk)?)?;
    let statement = read(&a.statement)?;
    let verdict = verify_bytes(&vk, &statement, &read(&a.proof)?);
    println!("{verdict}");
    Ok(verdict.is_accept())
}

fn chain_sim(a: ChainArgs) -> Result<()> {
    if a.payload_kb == 0 {
        bail!("--payload-kb must be at least 1");
    }
    let cfg = NetConfig {
        latency_base_ms: a.latency_base_ms,
        latency_per_kb_ms: a.latency_per_kb_ms,
        seed: a.seed,
        ..NetConfig::with_nodes(a.nodes.max(1))
    };
    let m = measure_consensus(&cfg, a.payload_kb * 1024, a.nodes)?;
    if a.header {
        println!("{CSV_HEADER}");
    }
    println!("{}", m.csv_row());
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<bool> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    let overrides = [
        ("seeds", &a.seeds),
        ("image-size", &a.image_size),
        ("losses", &a.losses),
        ("iters", &a.iters),
        ("lr", &a.lr),
        ("lambda", &a.lambda),
        ("scale", &a.scale),
        ("threshold", &a.threshold),
        ("lambda-sec", &a.lambda_sec),
        ("proof-seed", &a.proof_seed),
        ("zkp-reps", &a.zkp_reps),
        ("zkp-sides", &a.zkp_sides),
        ("nodes", &a.nodes),
        ("payload-kb", &a.payload_kb),
        ("latency-base-ms", &a.latency_base_ms),
        ("latency-per-kb-ms", &a.latency_per_kb_ms),
        ("chain-seed", &a.chain_seed),
        ("out", &a.out),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    let report = run_experiment_suite(&cfg)?;
    for f in &report.files {
        println!("{}", f.display());
    }
    println!("pass: {}", report.pass);
    Ok(true)
}

fn generate(a: GenerateArgs) -> Result<()> {
    let img = ProceduralImage::new(a.kind, a.seed, a.size).render();
    save_ppm(&img, &a.out)?;
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use semguard_core::*;
    for cause in e.chain() {
        let kind = if cause.is::<harness::PpmError>() {
            "ppm"
        } else if cause.is::<attack::AttackError>() {
            "attack"
        } else if cause.is::<defense::DefenseError>() {
            "defense"
        } else if cause.is::<descriptor::DescriptorError>() {
            "descriptor"
        } else if cause.is::<circuit::CircuitError>() {
            "circuit"
        } else if cause.is::<proof::ProofError>() {
            "proof"
        } else if cause.is::<chain::ChainError>() {
            "chain"
        } else if cause.is::<harness::HarnessError>() {
            "harness"
        } else if cause.is::<std::io::Error>() {
            "io"
        } else {
            continue;
        };
        return kind;
    }
    "operational"
}

fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Attack(a) => attack(a).map(|_| true),
        Command::Defend(a) => defend(a).map(|_| true),
        Command::Descriptor(a) => descriptor(a).map(|_| true),
        Command::Prove(a) => prove_cmd(a).map(|_| true),
        Command::Verify(a) => verify_cmd(a),
        Command::ChainSim(a) => chain_sim(a).map(|_| true),
        Command::Experiment(a) => experiment(a),
        Command::Generate(a) => generate(a).map(|_| true),
    }
}

fn render_error(e: &anyhow::Error, json: bool) -> String {
    if json {
        serde_json::json!({ "error": error_kind(e), "message": format!("{e:#}") }).to_string()
    } else {
        format!("error: {e:#}")
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", render_error(&e, cli.json_errors));
            ExitCode::from(1)
        }
    }
}
