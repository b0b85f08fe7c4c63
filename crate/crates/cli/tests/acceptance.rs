//! One pass/fail line per acceptance criterion. Every tolerance is pinned
//! below; the process exits nonzero if any criterion fails.

use semguard_core::attack::{run_attack, AttackConfig, AttackInstance, AttackOutcome, LossKind};
use semguard_core::chain::{measure_consensus, NetConfig, Simulation, VerifyTx};
use semguard_core::circuit::{extract_circuit, gen_witness, FieldElement, DEFAULT_FRAC_BITS};
use semguard_core::defense::{defend_transform, evaluate_defense, TransformSpec};
use semguard_core::descriptor::{Descriptor, DescriptorNetwork, DEFAULT_RESOLUTION};
use semguard_core::harness::checks::{layer_gradient_errors, loss_gradient_error};
use semguard_core::harness::suite::{attack_pair, authentic_copy, ZKP_TIERS};
use semguard_core::harness::{ImageKind, ProceduralImage, OUTPUT_FILES};
use semguard_core::numerics::{SplitMix64, Tensor};
use semguard_core::proof::{keygen, prove, prove_unchecked, seeded_rng, verify, SecurityParam};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

const FD_LOSS_TOL: f64 = 1e-3;
const FD_LAYER_TOL: f64 = 1e-4;
const FD_SEEDS: u64 = 20;
const FD_SIDE: usize = 16;
const FD_STRIDE: usize = 3;
const FD_BUDGET: Duration = Duration::from_secs(30);

const ATTACK_SEEDS: u64 = 10;
const ATTACK_SIDE: usize = 32;
const ATTACK_ITERS: usize = 100;
const ATTACK_ETA: f64 = 0.01;
const SIM_FLOOR: f64 = 0.90;
const L2_RATIO_FLOOR: f64 = 0.5;
const ATTACK_BUDGET: Duration = Duration::from_secs(120);
const PLATEAU_FRACTION: f64 = 0.1;

const DEFENSE_RATIO: f64 = 2.0;

const FIDELITY_IMAGES: u64 = 100;
const FIDELITY_MAX_SIDE: u64 = 8;

const COMPLETENESS_TRIALS: u64 = 1000;

const SOUNDNESS_TRIALS: u64 = 1000;
const SOUNDNESS_SLACK: f64 = 0.05;
const FULL_TAMPER_FLOOR: f64 = 0.999;

const TIMING_REPS: usize = 5;

const SAFETY_RUNS: u64 = 100;

const E2E_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cosine(a: &Descriptor, b: &Descriptor) -> f64 {
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    let na: f64 = a.values().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn l2(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let net = DescriptorNetwork::default();
    let (mut layer_max, mut loss_max) = (0.0f64, 0.0f64);
    for seed in 0..FD_SEEDS {
        for (_, e) in layer_gradient_errors(seed, FD_SIDE).map_err(|e| e.to_string())? {
            layer_max = layer_max.max(e);
        }
        for loss in LossKind::ALL {
            let e = loss_gradient_error(&net, loss, seed, FD_SIDE, FD_STRIDE).map_err(|e| e.to_string())?;
            loss_max = loss_max.max(e);
        }
    }
    let t = start.elapsed();
    check(
        layer_max < FD_LAYER_TOL && loss_max < FD_LOSS_TOL && t < FD_BUDGET,
        format!(
            "layer max {layer_max:.2e} (< {FD_LAYER_TOL:.0e}), loss max {loss_max:.2e} (< {FD_LOSS_TOL:.0e}), \
             {FD_SEEDS} seeds at {FD_SIDE}x{FD_SIDE}x3, {:.1}s",
            t.as_secs_f64()
        ),
    )
}

struct Run {
    loss: LossKind,
    target: Tensor,
    carrier: Tensor,
    outcome: AttackOutcome,
}

fn attack_runs() -> (Vec<Run>, Duration) {
    let net = DescriptorNetwork::default();
    let start = Instant::now();
    let mut runs = Vec::new();
    for loss in LossKind::ALL {
        for seed in 0..ATTACK_SEEDS {
            let (_, target, _, carrier) = attack_pair(seed, ATTACK_SIDE);
            let cfg = AttackConfig {
                iterations: ATTACK_ITERS,
                eta: ATTACK_ETA,
                lambda: 0.0,
                ..AttackConfig::with_loss(loss)
            };
            let instance = AttackInstance::new(target.clone(), carrier.clone()).expect("matching dims");
            let outcome = run_attack(&net, &instance, &cfg).expect("attack runs");
            runs.push(Run {
                loss,
                target,
                carrier,
                outcome,
            });
        }
    }
    (runs, start.elapsed())
}

fn efficacy(runs: &[Run], elapsed: Duration) -> Outcome {
    let net = DescriptorNetwork::default();
    let mut ok = elapsed < ATTACK_BUDGET;
    let mut parts = Vec::new();
    for loss in LossKind::ALL {
        let mut sims = Vec::new();
        let mut ratios = Vec::new();
        for r in runs.iter().filter(|r| r.loss == loss) {
            let ha = net
                .extract_descriptor(&r.outcome.adversarial, DEFAULT_RESOLUTION)
                .unwrap();
            let ht = net.extract_descriptor(&r.target, DEFAULT_RESOLUTION).unwrap();
            sims.push(cosine(&ha, &ht));
            ratios.push(l2(&r.outcome.adversarial, &r.target) / l2(&r.carrier, &r.target));
        }
        let (s, q) = (median(sims), median(ratios));
        ok &= s >= SIM_FLOOR && q >= L2_RATIO_FLOOR;
        parts.push(format!("{loss}: sim {s:.4} l2 ratio {q:.3}"));
    }
    check(
        ok,
        format!(
            "{} (need sim >= {SIM_FLOOR}, ratio >= {L2_RATIO_FLOOR}), {:.1}s",
            parts.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

fn plateau(totals: &[f64]) -> usize {
    let first = totals[0];
    let last = *totals.last().unwrap();
    totals
        .iter()
        .position(|&l| l - last <= PLATEAU_FRACTION * (first - last))
        .unwrap_or(totals.len() - 1)
}

fn convergence(runs: &[Run]) -> Outcome {
    let med = |loss: LossKind| {
        median(
            runs.iter()
                .filter(|r| r.loss == loss)
                .map(|r| {
                    let totals: Vec<f64> = r.outcome.trace.records.iter().map(|t| t.total_loss).collect();
                    plateau(&totals) as f64
                })
                .collect(),
        )
    };
    let (g, t, h) = (med(LossKind::Global), med(LossKind::Tensor), med(LossKind::Hist));
    check(
        g < t && h < t,
        format!("median plateau iteration global {g}, hist {h}, tensor {t}"),
    )
}

fn defense(runs: &[Run]) -> Outcome {
    let net = DescriptorNetwork::default();
    let spec = TransformSpec::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for loss in LossKind::ALL {
        let (mut adv_t, mut adv_c, mut auth) = (Vec::new(), Vec::new(), Vec::new());
        for (seed, r) in runs.iter().filter(|r| r.loss == loss).enumerate() {
            let drop = |a: &Tensor, b: &Tensor| {
                evaluate_defense(&net, a, b, &spec, 0.15, DEFAULT_RESOLUTION)
                    .unwrap()
                    .drop
            };
            adv_t.push(drop(&r.outcome.adversarial, &r.target));
            adv_c.push(drop(&r.outcome.adversarial, &r.carrier));
            auth.push(drop(&authentic_copy(&r.target, seed as u64), &r.target));
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (t, c, a) = (mean(&adv_t), mean(&adv_c), mean(&auth));
        ok &= t >= DEFENSE_RATIO * a && t > 0.0 && t > c;
        parts.push(format!(
            "{loss}: adv-target {t:.4} adv-carrier {c:.4} authentic {a:.4}"
        ));
    }
    check(ok, parts.join("; "))
}

fn fidelity() -> Outcome {
    let tol = 2f64.powi(-(DEFAULT_FRAC_BITS as i32) + 1);
    let mut rng = SplitMix64::new(0xf1de);
    let mut worst = 0.0f64;
    let mut satisfied = 0;
    for i in 0..FIDELITY_IMAGES {
        let w = 1 + (rng.next_u64() % FIDELITY_MAX_SIDE) as usize;
        let h = 1 + (rng.next_u64() % FIDELITY_MAX_SIDE) as usize;
        let spec = TransformSpec::from_numerator(64 * (1 + (rng.next_u64() % 4) as u32)).unwrap();
        let img = SplitMix64::new(i).tensor(w, h, 3, 0.0, 1.0);
        let circuit = extract_circuit(&spec, w, h, 3).unwrap();
        let (st, wit) = gen_witness(&circuit, &img, [0; 16]).unwrap();
        let mut z = vec![FieldElement::ONE];
        z.extend(&st.outputs);
        z.extend(&wit.private);
        if circuit.system().is_satisfied(&z) {
            satisfied += 1;
        }
        let decoded = st.decoded_outputs().unwrap();
        let want = defend_transform(&img, &spec);
        for (a, b) in decoded.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    check(
        worst <= tol && satisfied == FIDELITY_IMAGES,
        format!(
            "max decode error {worst:.2e} (<= {tol:.2e}), {satisfied}/{FIDELITY_IMAGES} witnesses satisfy"
        ),
    )
}

fn completeness() -> Outcome {
    let mut rng = SplitMix64::new(0xc0e);
    let mut accepted = 0;
    for trial in 0..COMPLETENESS_TRIALS {
        let w = 1 + (rng.next_u64() % 8) as usize;
        let h = 1 + (rng.next_u64() % 8) as usize;
        let scale = if trial % 2 == 0 { 1.0 } else { 0.5 };
        let circuit = extract_circuit(&TransformSpec::new(scale).unwrap(), w, h, 3).unwrap();
        let crs = keygen(SecurityParam::default(), &circuit).unwrap();
        let img = SplitMix64::new(trial).tensor(w, h, 3, 0.0, 1.0);
        let (st, wit) = gen_witness(&circuit, &img, [trial as u8; 16]).unwrap();
        let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(trial)).unwrap();
        if verify(&crs.vk, &st, &proof).is_accept() {
            accepted += 1;
        }
    }
    check(
        accepted == COMPLETENESS_TRIALS,
        format!("{accepted}/{COMPLETENESS_TRIALS} honest proofs accepted"),
    )
}

fn soundness() -> Outcome {
    let side = 4;
    let circuit = extract_circuit(&TransformSpec::default(), side, side, 3).unwrap();
    let sys = circuit.system();
    let m = sys.num_constraints();
    let crs = keygen(SecurityParam::default(), &circuit).unwrap();
    let q = crs.vk.queries as usize;
    let img = SplitMix64::new(4).tensor(side, side, 3, 0.0, 1.0);
    let (st, wit) = gen_witness(&circuit, &img, [0; 16]).unwrap();
    let violated = |st: &semguard_core::circuit::Statement, wit: &semguard_core::circuit::Witness| {
        let mut z = vec![FieldElement::ONE];
        z.extend(&st.outputs);
        z.extend(&wit.private);
        sys.violated(&z).len()
    };

    // One public output shifted: only its sum row breaks.
    let mut single = st.clone();
    single.outputs[0] = single.outputs[0] + FieldElement::ONE;
    let k1 = violated(&single, &wit);
    // Every private value replaced: almost every row breaks.
    let mut rng = SplitMix64::new(99);
    let mut junk = wit.clone();
    for v in &mut junk.private {
        *v = FieldElement::new(rng.next_u64());
    }
    let kf = violated(&st, &junk);

    let rate = |st: &semguard_core::circuit::Statement, wit: &semguard_core::circuit::Witness| {
        let rejected = (0..SOUNDNESS_TRIALS)
            .filter(|&t| {
                let proof = prove_unchecked(&crs.ek, st, wit, &mut seeded_rng(t)).unwrap();
                !verify(&crs.vk, st, &proof).is_accept()
            })
            .count();
        rejected as f64 / SOUNDNESS_TRIALS as f64
    };
    let bound = |k: usize| 1.0 - (1.0 - k as f64 / m as f64).powi(q as i32);
    let (r1, rf) = (rate(&single, &wit), rate(&st, &junk));
    let need1 = bound(k1) - SOUNDNESS_SLACK;
    check(
        k1 == 1 && r1 >= need1 && rf >= FULL_TAMPER_FLOOR,
        format!(
            "m {m}, q {q}; single tamper k {k1}: detected {r1:.3} (>= {need1:.3}); \
             full tamper k {kf}: detected {rf:.4} (>= {FULL_TAMPER_FLOOR}); {SOUNDNESS_TRIALS} trials each"
        ),
    )
}

fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    median(
        (0..reps)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect(),
    )
}

fn asymmetry() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    let source = ProceduralImage::new(ImageKind::GaussianBlobs, 3, 32).render();
    for (label, side) in ZKP_TIERS {
        let img = semguard_core::numerics::bilinear_resize(&source, side, side);
        let circuit = extract_circuit(&TransformSpec::default(), side, side, 3).unwrap();
        let crs = keygen(SecurityParam::default(), &circuit).unwrap();
        let (st, wit) = gen_witness(&circuit, &img, [1; 16]).unwrap();
        let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap();
        let tw = time_median(TIMING_REPS, || {
            gen_witness(&circuit, &img, [1; 16]).unwrap();
        });
        let tp = time_median(TIMING_REPS, || {
            prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap();
        });
        let tv = time_median(TIMING_REPS, || {
            assert!(verify(&crs.vk, &st, &proof).is_accept());
        });
        ok &= tv < tp && tp > tw;
        parts.push(format!(
            "{label} ({side}x{side}): witness {tw:.1}ms prove {tp:.1}ms verify {tv:.1}ms"
        ));
    }
    check(ok, parts.join("; "))
}

fn consensus() -> Outcome {
    let elapsed = |n: usize, kb: usize| {
        measure_consensus(&NetConfig::with_nodes(n), kb * 1024, n)
            .map(|m| m.elapsed_ms)
            .map_err(|e| e.to_string())
    };
    let kbs = [10, 275, 467];
    let at5: Vec<f64> = kbs.iter().map(|&kb| elapsed(5, kb)).collect::<Result<_, _>>()?;
    let at50: Vec<f64> = kbs.iter().map(|&kb| elapsed(50, kb)).collect::<Result<_, _>>()?;
    let payload_trend = at5.windows(2).all(|w| w[0] < w[1]);
    let node_trend = at5.iter().zip(&at50).all(|(a, b)| a < b);

    let circuit = extract_circuit(&TransformSpec::default(), 4, 4, 3).unwrap();
    let crs = keygen(SecurityParam::default(), &circuit).unwrap();
    let img = SplitMix64::new(1).tensor(4, 4, 3, 0.0, 1.0);
    let (st, wit) = gen_witness(&circuit, &img, [0; 16]).unwrap();
    let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap().to_bytes();
    let mut safe = 0;
    let mut silent_runs = 0;
    for seed in 0..SAFETY_RUNS {
        let silent = if seed % 2 == 1 {
            vec![(seed / 2 % 4) as usize]
        } else {
            vec![]
        };
        silent_runs += usize::from(!silent.is_empty());
        let cfg = NetConfig {
            jitter_ms: 8.0,
            seed,
            silent: silent.clone(),
            ..NetConfig::with_nodes(4)
        };
        let mut sim = Simulation::new(cfg, crs.vk.clone()).map_err(|e| e.to_string())?;
        let submitter = (0..4).find(|n| !silent.contains(n)).unwrap();
        let mut tampered = proof.clone();
        let last = tampered.len() - 1;
        tampered[last] ^= 1;
        for payload in [proof.clone(), tampered] {
            sim.submit_tx(VerifyTx::new(st.to_bytes(), payload, submitter), submitter)
                .map_err(|e| e.to_string())?;
            sim.consensus_round().ok();
        }
        sim.run_to_quiescence(8).map_err(|e| e.to_string())?;
        let committed = sim
            .nodes()
            .iter()
            .filter(|n| !n.silent)
            .all(|n| n.ledger.len() > 1);
        if committed && sim.check_safety().is_ok() && sim.check_validity(&crs.vk).is_ok() {
            safe += 1;
        }
    }
    check(
        payload_trend && node_trend && safe == SAFETY_RUNS,
        format!(
            "n=5 elapsed {at5:.1?} ms; n=50 {at50:.1?} ms; safety {safe}/{SAFETY_RUNS} runs at n=4 \
             ({silent_runs} with a silent node)"
        ),
    )
}

fn end_to_end() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_semguard");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut times = Vec::new();
    for d in &dirs {
        let start = Instant::now();
        let status = Command::new(bin)
            .args(["experiment", "--out"])
            .arg(d.path())
            .stdout(std::process::Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        times.push(start.elapsed());
        if !status.success() {
            return Err(format!("experiment exited with {status}"));
        }
    }
    let mut identical = true;
    for name in OUTPUT_FILES {
        let a = std::fs::read(dirs[0].path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let b = std::fs::read(dirs[1].path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        identical &= !a.is_empty() && a == b;
    }
    let slowest = times.iter().max().unwrap();
    check(
        identical && *slowest < E2E_BUDGET,
        format!(
            "exit 0 twice, five CSVs identical: {identical}, slowest run {:.1}s (< {}s)",
            slowest.as_secs_f64(),
            E2E_BUDGET.as_secs()
        ),
    )
}

fn main() -> ExitCode {
    let (runs, attack_time) = attack_runs();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 gradient correctness", Box::new(gradients)),
        ("2 attack efficacy", Box::new(|| efficacy(&runs, attack_time))),
        ("3 convergence ordering", Box::new(|| convergence(&runs))),
        ("4 defense separation", Box::new(|| defense(&runs))),
        ("5 circuit fidelity", Box::new(fidelity)),
        ("6 proof completeness", Box::new(completeness)),
        ("7 proof soundness", Box::new(soundness)),
        ("8 prove/verify asymmetry", Box::new(asymmetry)),
        ("9 consensus trends and safety", Box::new(consensus)),
        ("10 end-to-end experiment", Box::new(end_to_end)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {name}: PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name}: FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
