use super::*;
use crate::circuit::{extract_circuit, gen_witness, R1CSSystem, SparseRow};
use crate::defense::TransformSpec;
use crate::numerics::SplitMix64;

fn setup(w: usize, h: usize, scale: f64, seed: u64) -> (TransformCircuit, Crs, Statement, Witness) {
    let spec = TransformSpec::new(scale).unwrap();
    let circ = extract_circuit(&spec, w, h, 3).unwrap();
    let crs = keygen(SecurityParam::default(), &circ).unwrap();
    let img = SplitMix64::new(seed).tensor(w, h, 3, 0.0, 1.0);
    let (st, wit) = gen_witness(&circ, &img, [seed as u8; 16]).unwrap();
    (circ, crs, st, wit)
}

#[test]
fn keygen_is_deterministic_and_binds_coefficients() {
    let (circ, crs, _, _) = setup(4, 4, 0.5, 0);
    assert_eq!(
        keygen(SecurityParam::default(), &circ).unwrap().to_bytes(),
        crs.to_bytes()
    );
    assert_eq!(crs.ek.circuit_digest, crs.vk.circuit_digest);
    let mut rows = circ.system().constraints().to_vec();
    rows[0].a = SparseRow::single(0, rows[0].a.entries()[0].1 + FieldElement::ONE);
    let sys = &circ.system();
    let changed = R1CSSystem::new(sys.num_vars(), sys.num_public(), rows).unwrap();
    assert_ne!(changed.digest(), sys.digest());
}

#[test]
fn query_count_is_capped_by_constraints() {
    let small = extract_circuit(&TransformSpec::new(0.5).unwrap(), 2, 2, 1).unwrap();
    // 4 downsampling taps + sum, then four single-tap upsampled pixels.
    assert_eq!(small.system().num_constraints(), 13);
    assert_eq!(keygen(SecurityParam::default(), &small).unwrap().vk.queries, 13);
    let big = extract_circuit(&TransformSpec::new(0.5).unwrap(), 8, 8, 3).unwrap();
    assert_eq!(keygen(SecurityParam::default(), &big).unwrap().vk.queries, 80);
    assert_eq!(
        keygen(SecurityParam::new(7).unwrap(), &big).unwrap().vk.queries,
        7
    );
    assert!(SecurityParam::new(0).is_err());
}

#[test]
fn honest_proofs_accept() {
    for seed in 0..40 {
        let (w, h) = (1 + seed as usize % 8, 1 + (seed as usize / 3) % 8);
        let scale = if seed % 2 == 0 { 0.5 } else { 1.0 };
        let (_, crs, st, wit) = setup(w, h, scale, seed);
        let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(seed)).unwrap();
        assert_eq!(verify(&crs.vk, &st, &proof), Verdict::Accept, "seed {seed}");
        assert!(verify_bytes(&crs.vk, &st.to_bytes(), &proof.to_bytes()).is_accept());
    }
}

#[test]
fn size_matches_closed_form() {
    for (w, h, scale) in [(2, 2, 0.5), (5, 3, 0.75), (8, 8, 0.5), (4, 4, 1.0)] {
        let (circ, crs, st, wit) = setup(w, h, scale, 9);
        let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap();
        let sys = circ.system();
        let counts: Vec<usize> = proof
            .openings
            .iter()
            .map(|o| {
                sys.constraints()[o.constraint]
                    .support()
                    .iter()
                    .filter(|&&v| v >= sys.private_offset())
                    .count()
            })
            .collect();
        let depth = (sys.num_private() as f64).log2().ceil() as usize;
        assert_eq!(proof.to_bytes().len(), proof_size(&counts, depth));
        assert_eq!(Proof::from_bytes(&proof.to_bytes()).unwrap(), proof);
    }
}

#[test]
fn fresh_salts_change_root_only() {
    let (_, crs, st, wit) = setup(4, 4, 0.5, 3);
    let a = prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap();
    let b = prove(&crs.ek, &st, &wit, &mut seeded_rng(2)).unwrap();
    assert_ne!(a.root, b.root);
    assert!(verify(&crs.vk, &st, &a).is_accept());
    assert!(verify(&crs.vk, &st, &b).is_accept());
    assert_eq!(a, prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap());
}

#[test]
fn opened_value_increment_rejects() {
    let (_, crs, st, wit) = setup(4, 4, 0.5, 4);
    let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(5)).unwrap();
    for k in 0..proof.openings.len() {
        if proof.openings[k].entries.is_empty() {
            continue;
        }
        let mut bad = proof.clone();
        let e = &mut bad.openings[k].entries[0];
        e.value = e.value + FieldElement::ONE;
        assert_eq!(verify(&crs.vk, &st, &bad), Verdict::Reject(RejectReason::BadPath));
    }
}

#[test]
fn statement_tampering_rejects() {
    let (_, crs, st, wit) = setup(4, 4, 0.5, 6);
    let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(7)).unwrap();
    let mut bad = st.clone();
    bad.outputs[3] = bad.outputs[3] + FieldElement::ONE;
    assert!(!verify(&crs.vk, &bad, &proof).is_accept());
    let mut bad = st.clone();
    bad.input_commitment[0] ^= 1;
    assert_eq!(
        verify(&crs.vk, &bad, &proof),
        Verdict::Reject(RejectReason::IndexMismatch)
    );
    let other = setup(4, 4, 0.25, 6);
    assert_eq!(
        verify(&other.1.vk, &st, &proof),
        Verdict::Reject(RejectReason::CircuitMismatch)
    );
}

#[test]
fn prover_refuses_bad_witness_and_wrong_key() {
    let (circ, crs, st, mut wit) = setup(3, 3, 0.5, 8);
    let last = wit.private.len() - 1;
    wit.private[last] = wit.private[last] + FieldElement::ONE;
    // The last slot is a product: its own row and the summation row fail.
    let err = prove(&crs.ek, &st, &wit, &mut seeded_rng(0)).unwrap_err();
    assert_eq!(
        err,
        ProofError::Unsatisfied {
            violated: 2,
            total: circ.system().num_constraints()
        }
    );
    let other = setup(4, 3, 0.5, 8);
    assert_eq!(
        prove(&other.1.ek, &st, &wit, &mut seeded_rng(0)),
        Err(ProofError::KeyMismatch)
    );
    wit.private.pop();
    assert!(matches!(
        prove(&crs.ek, &st, &wit, &mut seeded_rng(0)),
        Err(ProofError::WitnessLength { .. })
    ));
}

#[test]
fn openings_reveal_only_queried_supports() {
    let (circ, crs, st, wit) = setup(6, 6, 0.5, 10);
    let proof = prove(&crs.ek, &st, &wit, &mut seeded_rng(11)).unwrap();
    let sys = circ.system();
    let expected: HashSet<usize> = proof
        .openings
        .iter()
        .flat_map(|o| sys.constraints()[o.constraint].support())
        .filter(|&v| v >= sys.private_offset())
        .collect();
    assert_eq!(proof.opened_vars(), expected);
    assert!(expected.len() < sys.num_private());
    let mut salts: Vec<([u8; 16], usize)> = proof
        .openings
        .iter()
        .flat_map(|o| o.entries.iter().map(|e| (e.salt, e.var)))
        .collect();
    salts.sort();
    salts.dedup();
    let distinct_salts: HashSet<[u8; 16]> = salts.iter().map(|s| s.0).collect();
    assert_eq!(distinct_salts.len(), salts.len());
}

#[test]
fn malformed_inputs_reject_without_panic() {
    let (_, crs, st, wit) = setup(3, 3, 0.5, 12);
    let bytes = prove(&crs.ek, &st, &wit, &mut seeded_rng(1)).unwrap().to_bytes();
    let sb = st.to_bytes();
    for cut in (0..bytes.len()).step_by(7) {
        assert_eq!(
            verify_bytes(&crs.vk, &sb, &bytes[..cut]),
            Verdict::Reject(RejectReason::Malformed)
        );
    }
    let mut rng = SplitMix64::new(99);
    for _ in 0..200 {
        let mut garbage = bytes.clone();
        let pos = (rng.next_u64() as usize) % garbage.len();
        garbage[pos] ^= 1 + (rng.next_u64() % 255) as u8;
        assert!(!verify_bytes(&crs.vk, &sb, &garbage).is_accept(), "byte {pos}");
    }
    assert!(!verify_bytes(&crs.vk, b"nonsense", &bytes).is_accept());
}

#[test]
fn key_round_trip() {
    let (_, crs, _, _) = setup(3, 3, 0.5, 0);
    assert_eq!(EvaluationKey::from_bytes(&crs.ek.to_bytes()).unwrap(), crs.ek);
    assert_eq!(VerificationKey::from_bytes(&crs.vk.to_bytes()).unwrap(), crs.vk);
    assert!(VerificationKey::from_bytes(&crs.ek.to_bytes()).is_err());
}

#[test]
fn indices_are_distinct_and_in_range() {
    let mut meter = Meter::default();
    for m in [1usize, 2, 13, 100, 5000] {
        let q = m.min(80);
        let idx = challenge_indices(&mut meter, &[m as u8; 32], m, q);
        let set: HashSet<usize> = idx.iter().copied().collect();
        assert_eq!(set.len(), q);
        assert!(idx.iter().all(|&i| i < m));
    }
}
