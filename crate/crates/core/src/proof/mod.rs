//! Commit-and-spot-check argument for transform circuits.
//!
//! The prover commits to every private slot of `z` under salted Merkle
//! leaves, derives `q` constraint indices from a hash of the key, statement
//! and root, and opens exactly the private variables those rows touch. The
//! verifier recomputes the indices, checks each path and re-evaluates each
//! queried row. Unopened slots never leave the prover.

pub mod keys;
pub mod merkle;

pub use keys::{keygen, Crs, EvaluationKey, SecurityParam, VerificationKey, DEFAULT_LAMBDA_SEC};
pub use merkle::{Hash, Meter};

use crate::circuit::r1cs::Reader;
use crate::circuit::{CircuitError, FieldElement, Statement, TransformCircuit, Witness, MODULUS};
use merkle::{depth_for, leaf_hash, MerkleTree, PathCache};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rustc_hash::FxHashMap;
use std::collections::HashSet;
use std::fmt;
use thiserror::Error;

pub const PROOF_MAGIC: &[u8; 4] = b"SCPF";
pub const PROOF_VERSION: u32 = 1;
pub const SALT_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProofError {
    #[error("security parameter must be at least 1")]
    InvalidSecurity,
    #[error("circuit has no constraints")]
    EmptyCircuit,
    #[error("key does not match the circuit named by the statement")]
    KeyMismatch,
    #[error("witness has {actual} private values, circuit needs {expected}")]
    WitnessLength { expected: usize, actual: usize },
    #[error("assignment violates {violated} of {total} constraints")]
    Unsatisfied { violated: usize, total: usize },
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenedEntry {
    pub var: usize,
    pub value: FieldElement,
    pub salt: [u8; SALT_LEN],
    pub path: Vec<Hash>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Opening {
    pub constraint: usize,
    pub entries: Vec<OpenedEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proof {
    pub root: Hash,
    pub openings: Vec<Opening>,
}

/// Encoded size of a proof with the given per-opening entry counts.
pub fn proof_size(entry_counts: &[usize], depth: usize) -> usize {
    let entry = 8 + 8 + SALT_LEN + 4 + 32 * depth;
    4 + 4 + 32 + 4 + entry_counts.iter().map(|&k| 8 + 4 + k * entry).sum::<usize>()
}

impl Proof {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PROOF_MAGIC);
        out.extend_from_slice(&PROOF_VERSION.to_le_bytes());
        out.extend_from_slice(&self.root);
        out.extend_from_slice(&(self.openings.len() as u32).to_le_bytes());
        for op in &self.openings {
            out.extend_from_slice(&(op.constraint as u64).to_le_bytes());
            out.extend_from_slice(&(op.entries.len() as u32).to_le_bytes());
            for e in &op.entries {
                out.extend_from_slice(&(e.var as u64).to_le_bytes());
                out.extend_from_slice(&e.value.value().to_le_bytes());
                out.extend_from_slice(&e.salt);
                out.extend_from_slice(&(e.path.len() as u32).to_le_bytes());
                for h in &e.path {
                    out.extend_from_slice(h);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProofError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != PROOF_MAGIC {
            return Err(ProofError::Malformed("bad proof magic".into()));
        }
        let version = r.u32()?;
        if version != PROOF_VERSION {
            return Err(ProofError::Malformed(format!(
                "unsupported proof version {version}"
            )));
        }
        let root = r.array32()?;
        let q = r.u32()? as usize;
        // Every opening needs at least 12 bytes, which bounds allocation.
        let mut openings = Vec::with_capacity(q.min(bytes.len() / 12));
        for _ in 0..q {
            let constraint = r.len_u64()?;
            let k = r.u32()? as usize;
            let mut entries = Vec::with_capacity(k.min(bytes.len() / 36));
            for _ in 0..k {
                let var = r.len_u64()?;
                let raw = r.u64()?;
                let value = FieldElement::from_canonical(raw)
                    .ok_or_else(|| ProofError::Malformed("non-canonical opened value".into()))?;
                let salt: [u8; SALT_LEN] = r.take(SALT_LEN)?.try_into().unwrap();
                let len = r.u32()? as usize;
                if len > 63 {
                    return Err(ProofError::Malformed(format!("path length {len}")));
                }
                let path = (0..len).map(|_| r.array32()).collect::<Result<_, _>>()?;
                entries.push(OpenedEntry {
                    var,
                    value,
                    salt,
                    path,
                });
            }
            openings.push(Opening { constraint, entries });
        }
        if !r.is_empty() {
            return Err(ProofError::Malformed("trailing bytes after proof".into()));
        }
        Ok(Self { root, openings })
    }

    pub fn opened_vars(&self) -> HashSet<usize> {
        self.openings
            .iter()
            .flat_map(|o| o.entries.iter().map(|e| e.var))
            .collect()
    }
}

/// Fiat-Shamir seed over the key binding, the statement and the root.
pub fn challenge_seed(meter: &mut Meter, key_digest: &Hash, statement_bytes: &[u8], root: &Hash) -> Hash {
    meter.hash(&[key_digest, statement_bytes, root])
}

/// `q` distinct indices in `[0, m)` read from `H("fs:" || seed || counter)`
/// in 8-byte windows, rejecting the biased top range and duplicates.
pub fn challenge_indices(meter: &mut Meter, seed: &Hash, m: usize, q: usize) -> Vec<usize> {
    assert!(q <= m && m > 0, "cannot draw {q} distinct indices from {m}");
    let m64 = m as u64;
    let zone = (u64::MAX / m64) * m64;
    let mut seen = HashSet::with_capacity(q);
    let mut out = Vec::with_capacity(q);
    let mut counter = 0u64;
    while out.len() < q {
        let block = meter.hash(&[b"fs:", seed, &counter.to_le_bytes()]);
        counter += 1;
        for w in block.chunks_exact(8) {
            let v = u64::from_le_bytes(w.try_into().unwrap());
            if v >= zone {
                continue;
            }
            let idx = (v % m64) as usize;
            if seen.insert(idx) {
                out.push(idx);
                if out.len() == q {
                    break;
                }
            }
        }
    }
    out
}

/// Salts drawn from a ChaCha20 stream seeded with `seed`.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// SHA-256 of the serialized system, charged to the meter.
fn metered_digest(meter: &mut Meter, circuit: &TransformCircuit) -> Hash {
    let bytes = circuit.system().to_bytes();
    meter.hash(&[&bytes])
}

fn bound_circuit(
    meter: &mut Meter,
    circuit_digest: &Hash,
    statement: &Statement,
) -> Result<TransformCircuit, ProofError> {
    let circuit = statement.circuit()?;
    if &metered_digest(meter, &circuit) != circuit_digest {
        return Err(ProofError::KeyMismatch);
    }
    Ok(circuit)
}

pub fn prove<R: RngCore + CryptoRng>(
    ek: &EvaluationKey,
    statement: &Statement,
    witness: &Witness,
    rng: &mut R,
) -> Result<Proof, ProofError> {
    prove_metered(ek, statement, witness, rng, &mut Meter::default())
}

pub fn prove_metered<R: RngCore + CryptoRng>(
    ek: &EvaluationKey,
    statement: &Statement,
    witness: &Witness,
    rng: &mut R,
    meter: &mut Meter,
) -> Result<Proof, ProofError> {
    let circuit = bound_circuit(meter, &ek.circuit_digest, statement)?;
    let sys = circuit.system();
    let z = assignment(&circuit, statement, witness)?;
    meter.row_evals += sys.num_constraints() as u64;
    let violated = sys.violated(&z).len();
    if violated > 0 {
        return Err(ProofError::Unsatisfied {
            violated,
            total: sys.num_constraints(),
        });
    }
    Ok(commit_and_open(ek, &circuit, statement, &z, rng, meter))
}

/// Builds a proof without checking the assignment. Exists so soundness can
/// be measured against cheating provers; honest callers use [`prove`].
pub fn prove_unchecked<R: RngCore + CryptoRng>(
    ek: &EvaluationKey,
    statement: &Statement,
    witness: &Witness,
    rng: &mut R,
) -> Result<Proof, ProofError> {
    let mut meter = Meter::default();
    let circuit = bound_circuit(&mut meter, &ek.circuit_digest, statement)?;
    let z = assignment(&circuit, statement, witness)?;
    Ok(commit_and_open(ek, &circuit, statement, &z, rng, &mut meter))
}

fn assignment(
    circuit: &TransformCircuit,
    statement: &Statement,
    witness: &Witness,
) -> Result<Vec<FieldElement>, ProofError> {
    let expected = circuit.system().num_private();
    if witness.private.len() != expected {
        return Err(ProofError::WitnessLength {
            expected,
            actual: witness.private.len(),
        });
    }
    Ok(witness.assignment(statement))
}

fn commit_and_open<R: RngCore + CryptoRng>(
    ek: &EvaluationKey,
    circuit: &TransformCircuit,
    statement: &Statement,
    z: &[FieldElement],
    rng: &mut R,
    meter: &mut Meter,
) -> Proof {
    let sys = circuit.system();
    let offset = sys.private_offset();
    let mut salts = vec![[0u8; SALT_LEN]; sys.num_private()];
    for s in salts.iter_mut() {
        rng.fill_bytes(s);
    }
    let leaves = salts
        .iter()
        .enumerate()
        .map(|(j, salt)| leaf_hash(meter, salt, offset + j, z[offset + j]))
        .collect();
    let tree = MerkleTree::build(meter, leaves);
    let root = tree.root();
    let seed = challenge_seed(meter, &ek.binding_digest(), &statement.to_bytes(), &root);
    let indices = challenge_indices(meter, &seed, sys.num_constraints(), ek.queries as usize);
    let openings = indices
        .into_iter()
        .map(|i| Opening {
            constraint: i,
            entries: sys.constraints()[i]
                .support()
                .into_iter()
                .filter(|&v| v >= offset)
                .map(|v| OpenedEntry {
                    var: v,
                    value: z[v],
                    salt: salts[v - offset],
                    path: tree.path(v - offset),
                })
                .collect(),
        })
        .collect();
    Proof { root, openings }
}

/// Why a proof was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Malformed,
    StatementInvalid,
    CircuitMismatch,
    QueryCount,
    IndexMismatch,
    OpeningSet,
    BadPath,
    ConstraintViolated,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed => "malformed",
            Self::StatementInvalid => "statement_invalid",
            Self::CircuitMismatch => "circuit_mismatch",
            Self::QueryCount => "query_count",
            Self::IndexMismatch => "index_mismatch",
            Self::OpeningSet => "opening_set",
            Self::BadPath => "bad_path",
            Self::ConstraintViolated => "constraint_violated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    /// `accept`, or `reject:<reason>`.
    pub fn code(&self) -> String {
        match self {
            Verdict::Accept => "accept".into(),
            Verdict::Reject(r) => format!("reject:{}", r.code()),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

pub fn verify(vk: &VerificationKey, statement: &Statement, proof: &Proof) -> Verdict {
    verify_metered(vk, statement, proof, &mut Meter::default())
}

/// Parses both encodings first; parse failures reject as malformed.
pub fn verify_bytes(vk: &VerificationKey, statement_bytes: &[u8], proof_bytes: &[u8]) -> Verdict {
    let Ok(statement) = Statement::from_bytes(statement_bytes) else {
        return Verdict::Reject(RejectReason::Malformed);
    };
    let Ok(proof) = Proof::from_bytes(proof_bytes) else {
        return Verdict::Reject(RejectReason::Malformed);
    };
    verify(vk, &statement, &proof)
}

pub fn verify_metered(
    vk: &VerificationKey,
    statement: &Statement,
    proof: &Proof,
    meter: &mut Meter,
) -> Verdict {
    use RejectReason::*;
    if vk.field_id != MODULUS || vk.num_public != statement.outputs.len() as u64 {
        return Verdict::Reject(StatementInvalid);
    }
    let Ok(circuit) = statement.circuit() else {
        return Verdict::Reject(StatementInvalid);
    };
    if metered_digest(meter, &circuit) != vk.circuit_digest {
        return Verdict::Reject(CircuitMismatch);
    }
    let sys = circuit.system();
    let m = sys.num_constraints();
    let q = vk.queries as usize;
    if q == 0 || q > m || proof.openings.len() != q {
        return Verdict::Reject(QueryCount);
    }
    let seed = challenge_seed(meter, &vk.binding_digest(), &statement.to_bytes(), &proof.root);
    let indices = challenge_indices(meter, &seed, m, q);
    if proof
        .openings
        .iter()
        .map(|o| o.constraint)
        .ne(indices.iter().copied())
    {
        return Verdict::Reject(IndexMismatch);
    }
    let offset = sys.private_offset();
    let depth = depth_for(sys.num_private());
    let mut cache = PathCache::new(proof.root);
    // A variable shared by several queried rows is authenticated once.
    let mut opened: FxHashMap<usize, &OpenedEntry> = FxHashMap::default();
    for op in &proof.openings {
        let row = &sys.constraints()[op.constraint];
        let expected: Vec<usize> = row.support().into_iter().filter(|&v| v >= offset).collect();
        if op.entries.iter().map(|e| e.var).ne(expected.iter().copied()) {
            return Verdict::Reject(OpeningSet);
        }
        for e in &op.entries {
            if e.path.len() != depth {
                return Verdict::Reject(BadPath);
            }
            match opened.get(&e.var) {
                Some(prev) if *prev == e => continue,
                Some(_) => return Verdict::Reject(BadPath),
                None => {}
            }
            let leaf = leaf_hash(meter, &e.salt, e.var, e.value);
            if !cache.verify(meter, e.var - offset, leaf, &e.path) {
                return Verdict::Reject(BadPath);
            }
            opened.insert(e.var, e);
        }
        let lookup = |v: usize| {
            if v == 0 {
                Some(FieldElement::ONE)
            } else if v < offset {
                statement.outputs.get(v - 1).copied()
            } else {
                op.entries
                    .binary_search_by_key(&v, |e| e.var)
                    .ok()
                    .map(|k| op.entries[k].value)
            }
        };
        meter.row_evals += 1;
        let holds = match (
            row.a.eval_with(lookup),
            row.b.eval_with(lookup),
            row.c.eval_with(lookup),
        ) {
            (Some(a), Some(b), Some(c)) => a * b == c,
            _ => false,
        };
        if !holds {
            return Verdict::Reject(ConstraintViolated);
        }
    }
    Verdict::Accept
}

#[cfg(test)]
mod tests;
