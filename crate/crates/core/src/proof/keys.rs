use super::ProofError;
use crate::circuit::r1cs::Reader;
use crate::circuit::{TransformCircuit, MODULUS};
use sha2::{Digest, Sha256};

pub const DEFAULT_LAMBDA_SEC: u32 = 80;
pub const EK_MAGIC: &[u8; 4] = b"SCEK";
pub const VK_MAGIC: &[u8; 4] = b"SCVK";
pub const KEY_VERSION: u32 = 1;

/// Number of spot checks requested; the effective count is capped by the
/// number of constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityParam {
    pub lambda_sec: u32,
}

impl Default for SecurityParam {
    fn default() -> Self {
        Self {
            lambda_sec: DEFAULT_LAMBDA_SEC,
        }
    }
}

impl SecurityParam {
    pub fn new(lambda_sec: u32) -> Result<Self, ProofError> {
        if lambda_sec == 0 {
            return Err(ProofError::InvalidSecurity);
        }
        Ok(Self { lambda_sec })
    }

    pub fn queries(&self, num_constraints: usize) -> usize {
        (self.lambda_sec as usize).min(num_constraints).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationKey {
    pub circuit_digest: [u8; 32],
    pub queries: u32,
    pub frac_bits: u32,
    pub field_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationKey {
    pub circuit_digest: [u8; 32],
    pub queries: u32,
    pub num_public: u64,
    pub field_id: u64,
}

/// Digest both keys feed into the Fiat-Shamir seed.
fn binding(circuit_digest: &[u8; 32], queries: u32, field_id: u64) -> [u8; 32] {
    Sha256::new()
        .chain_update(b"key:")
        .chain_update(circuit_digest)
        .chain_update(queries.to_le_bytes())
        .chain_update(field_id.to_le_bytes())
        .finalize()
        .into()
}

impl EvaluationKey {
    pub fn binding_digest(&self) -> [u8; 32] {
        binding(&self.circuit_digest, self.queries, self.field_id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(60);
        out.extend_from_slice(EK_MAGIC);
        out.extend_from_slice(&KEY_VERSION.to_le_bytes());
        out.extend_from_slice(&self.circuit_digest);
        out.extend_from_slice(&self.queries.to_le_bytes());
        out.extend_from_slice(&self.frac_bits.to_le_bytes());
        out.extend_from_slice(&self.field_id.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProofError> {
        let mut r = Reader::new(bytes);
        header(&mut r, EK_MAGIC)?;
        let key = Self {
            circuit_digest: r.array32()?,
            queries: r.u32()?,
            frac_bits: r.u32()?,
            field_id: r.u64()?,
        };
        finish(&r)?;
        Ok(key)
    }
}

impl VerificationKey {
    pub fn binding_digest(&self) -> [u8; 32] {
        binding(&self.circuit_digest, self.queries, self.field_id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(60);
        out.extend_from_slice(VK_MAGIC);
        out.extend_from_slice(&KEY_VERSION.to_le_bytes());
        out.extend_from_slice(&self.circuit_digest);
        out.extend_from_slice(&self.queries.to_le_bytes());
        out.extend_from_slice(&self.num_public.to_le_bytes());
        out.extend_from_slice(&self.field_id.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProofError> {
        let mut r = Reader::new(bytes);
        header(&mut r, VK_MAGIC)?;
        let key = Self {
            circuit_digest: r.array32()?,
            queries: r.u32()?,
            num_public: r.u64()?,
            field_id: r.u64()?,
        };
        finish(&r)?;
        Ok(key)
    }
}

fn header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<(), ProofError> {
    if r.take(4)? != magic {
        return Err(ProofError::Malformed(format!(
            "expected magic {}",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != KEY_VERSION {
        return Err(ProofError::Malformed(format!(
            "unsupported key version {version}"
        )));
    }
    Ok(())
}

fn finish(r: &Reader<'_>) -> Result<(), ProofError> {
    if r.is_empty() {
        Ok(())
    } else {
        Err(ProofError::Malformed("trailing bytes after key".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crs {
    pub ek: EvaluationKey,
    pub vk: VerificationKey,
}

impl Crs {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.ek.to_bytes();
        out.extend_from_slice(&self.vk.to_bytes());
        out
    }
}

/// Transparent setup: every field is a function of the circuit.
pub fn keygen(security: SecurityParam, circuit: &TransformCircuit) -> Result<Crs, ProofError> {
    let sys = circuit.system();
    if sys.num_constraints() == 0 {
        return Err(ProofError::EmptyCircuit);
    }
    let circuit_digest = sys.digest();
    let queries = security.queries(sys.num_constraints()) as u32;
    Ok(Crs {
        ek: EvaluationKey {
            circuit_digest,
            queries,
            frac_bits: circuit.frac_bits(),
            field_id: MODULUS,
        },
        vk: VerificationKey {
            circuit_digest,
            queries,
            num_public: sys.num_public() as u64,
            field_id: MODULUS,
        },
    })
}
