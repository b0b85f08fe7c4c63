//! Sparse rank-1 constraint systems and their binary encoding.

use super::field::{FieldElement, MODULUS};
use super::CircuitError;
use sha2::{Digest, Sha256};

pub const R1CS_MAGIC: &[u8; 4] = b"R1CS";
pub const R1CS_VERSION: u32 = 1;
/// Upper bound on nonzero entries in any single row.
pub const MAX_ROW_ENTRIES: usize = 16;

/// Sparse linear combination over `z`, sorted by variable index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SparseRow {
    entries: Vec<(usize, FieldElement)>,
}

impl SparseRow {
    /// Merges duplicate indices and drops zero coefficients.
    pub fn new(mut entries: Vec<(usize, FieldElement)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, FieldElement)> = Vec::with_capacity(entries.len());
        for (idx, c) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == idx => last.1 = last.1 + c,
                _ => merged.push((idx, c)),
            }
        }
        merged.retain(|e| !e.1.is_zero());
        Self { entries: merged }
    }

    pub fn single(idx: usize, c: FieldElement) -> Self {
        Self::new(vec![(idx, c)])
    }

    pub fn entries(&self) -> &[(usize, FieldElement)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `<row, z>`; indices outside `z` read as zero.
    pub fn eval(&self, z: &[FieldElement]) -> FieldElement {
        self.entries
            .iter()
            .map(|&(i, c)| c * z.get(i).copied().unwrap_or(FieldElement::ZERO))
            .sum()
    }

    /// Evaluates with a lookup that may fail for unknown variables.
    pub fn eval_with<F>(&self, mut lookup: F) -> Option<FieldElement>
    where
        F: FnMut(usize) -> Option<FieldElement>,
    {
        let mut acc = FieldElement::ZERO;
        for &(i, c) in &self.entries {
            acc = acc + c * lookup(i)?;
        }
        Some(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub a: SparseRow,
    pub b: SparseRow,
    pub c: SparseRow,
}

impl Constraint {
    pub fn holds(&self, z: &[FieldElement]) -> bool {
        self.a.eval(z) * self.b.eval(z) == self.c.eval(z)
    }

    pub fn nonzero_entries(&self) -> usize {
        self.a.len() + self.b.len() + self.c.len()
    }

    /// Sorted, deduplicated variable indices referenced by the row.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = [&self.a, &self.b, &self.c]
            .iter()
            .flat_map(|r| r.entries().iter().map(|e| e.0))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Assignment layout: `z[0] = 1`, then `num_public` statement slots, then
/// private slots up to `num_vars`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct R1CSSystem {
    num_vars: usize,
    num_public: usize,
    constraints: Vec<Constraint>,
}

impl R1CSSystem {
    pub fn new(
        num_vars: usize,
        num_public: usize,
        constraints: Vec<Constraint>,
    ) -> Result<Self, CircuitError> {
        if num_vars < 1 + num_public {
            return Err(CircuitError::Malformed(format!(
                "{num_vars} variables cannot hold the constant and {num_public} public slots"
            )));
        }
        for (i, row) in constraints.iter().enumerate() {
            if let Some(&v) = row.support().last() {
                if v >= num_vars {
                    return Err(CircuitError::Malformed(format!(
                        "constraint {i} references variable {v} of {num_vars}"
                    )));
                }
            }
            if row.nonzero_entries() > MAX_ROW_ENTRIES {
                return Err(CircuitError::RowTooDense {
                    row: i,
                    entries: row.nonzero_entries(),
                });
            }
        }
        Ok(Self {
            num_vars,
            num_public,
            constraints,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_public(&self) -> usize {
        self.num_public
    }

    pub fn num_private(&self) -> usize {
        self.num_vars - 1 - self.num_public
    }

    /// Index of the first private slot.
    pub fn private_offset(&self) -> usize {
        1 + self.num_public
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_satisfied(&self, z: &[FieldElement]) -> bool {
        z.len() == self.num_vars && z[0] == FieldElement::ONE && self.constraints.iter().all(|c| c.holds(z))
    }

    /// Indices of rows that fail under `z`.
    pub fn violated(&self, z: &[FieldElement]) -> Vec<usize> {
        self.constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.holds(z))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.constraints.len() * 96);
        out.extend_from_slice(R1CS_MAGIC);
        out.extend_from_slice(&R1CS_VERSION.to_le_bytes());
        for v in [self.num_vars, self.num_public, self.constraints.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for row in &self.constraints {
            for lc in [&row.a, &row.b, &row.c] {
                out.extend_from_slice(&(lc.len() as u64).to_le_bytes());
                for &(i, c) in lc.entries() {
                    out.extend_from_slice(&(i as u64).to_le_bytes());
                    out.extend_from_slice(&c.value().to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CircuitError> {
        let mut r = Reader::new(bytes);
        let magic = r.take(4)?;
        if magic != R1CS_MAGIC {
            return Err(CircuitError::Malformed("bad R1CS magic".into()));
        }
        let version = r.u32()?;
        if version != R1CS_VERSION {
            return Err(CircuitError::Malformed(format!(
                "unsupported R1CS version {version}"
            )));
        }
        let num_vars = r.len_u64()?;
        let num_public = r.len_u64()?;
        let m = r.len_u64()?;
        let mut constraints = Vec::with_capacity(m.min(bytes.len() / 24));
        for _ in 0..m {
            let mut lcs = Vec::with_capacity(3);
            for _ in 0..3 {
                let n = r.len_u64()?;
                if n > MAX_ROW_ENTRIES {
                    return Err(CircuitError::Malformed(format!("row with {n} entries")));
                }
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let idx = r.len_u64()?;
                    let c = r.u64()?;
                    if c >= MODULUS {
                        return Err(CircuitError::Malformed("non-canonical coefficient".into()));
                    }
                    entries.push((idx, FieldElement::new(c)));
                }
                lcs.push(SparseRow::new(entries));
            }
            let c = lcs.pop().unwrap();
            let b = lcs.pop().unwrap();
            let a = lcs.pop().unwrap();
            constraints.push(Constraint { a, b, c });
        }
        if !r.is_empty() {
            return Err(CircuitError::Malformed("trailing bytes after R1CS".into()));
        }
        Self::new(num_vars, num_public, constraints)
    }

    /// SHA-256 of the serialized system.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], CircuitError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                CircuitError::Malformed(format!(
                    "truncated at byte {}: wanted {n}, {} left",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CircuitError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, CircuitError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn array32(&mut self) -> Result<[u8; 32], CircuitError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    /// A u64 length or index that must fit in memory-sized arithmetic.
    pub(crate) fn len_u64(&mut self) -> Result<usize, CircuitError> {
        let v = self.u64()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= u32::MAX as usize)
            .ok_or_else(|| CircuitError::Malformed(format!("length {v} out of range")))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
