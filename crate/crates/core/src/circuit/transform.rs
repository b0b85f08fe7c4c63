//! Circuit extraction and witness generation for the defense transform.
//!
//! Each resampling stage becomes, per output pixel, one product row per
//! source tap `(c_k * z_0) * x_k = p_k` with a constant weight `c_k` at scale
//! `2^{2F}`, followed by one summation row `(sum p_k) * z_0 = out`. Rows are
//! emitted in dependency order, so the witness is solved front to back.

use super::field::FieldElement;
use super::fixed::{decode_raw, FixedPoint, DEFAULT_FRAC_BITS};
use super::r1cs::{Constraint, R1CSSystem, Reader, SparseRow};
use super::CircuitError;
use crate::defense::{TransformSpec, SCALE_DENOMINATOR};
use crate::numerics::{axis_taps, Tensor};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Output magnitude is `2^{5F}`; this keeps it below `2^60`.
pub const MAX_FRAC_BITS: u32 = 12;
pub const STATEMENT_MAGIC: &[u8; 4] = b"SCST";
pub const STATEMENT_VERSION: u32 = 1;

/// An extracted circuit together with what it was extracted from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformCircuit {
    system: R1CSSystem,
    spec: TransformSpec,
    width: usize,
    height: usize,
    channels: usize,
    frac_bits: u32,
    output_scale_bits: u32,
}

impl TransformCircuit {
    pub fn system(&self) -> &R1CSSystem {
        &self.system
    }

    pub fn spec(&self) -> TransformSpec {
        self.spec
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    /// Public outputs decode as `raw / 2^output_scale_bits`.
    pub fn output_scale_bits(&self) -> u32 {
        self.output_scale_bits
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Slot of input pixel `i` (tensor order) in `z`.
    pub fn input_slot(&self, i: usize) -> usize {
        self.system.private_offset() + i
    }
}

pub fn extract_circuit(
    spec: &TransformSpec,
    width: usize,
    height: usize,
    channels: usize,
) -> Result<TransformCircuit, CircuitError> {
    extract_circuit_with(spec, width, height, channels, DEFAULT_FRAC_BITS)
}

struct Builder {
    next_var: usize,
    rows: Vec<Constraint>,
    weight_one: u64,
}

impl Builder {
    fn fresh(&mut self) -> usize {
        self.next_var += 1;
        self.next_var - 1
    }

    fn copy(&mut self, src: usize, dst: usize) {
        self.rows.push(Constraint {
            a: SparseRow::single(src, FieldElement::ONE),
            b: SparseRow::single(0, FieldElement::ONE),
            c: SparseRow::single(dst, FieldElement::ONE),
        });
    }

    /// Resamples the plane at `src` (row-major, `in_w x in_h`) and returns
    /// the output slots, allocating fresh ones unless `dst` is given.
    fn stage(
        &mut self,
        src: &[usize],
        (in_w, in_h): (usize, usize),
        (out_w, out_h): (usize, usize),
        dst: Option<&[usize]>,
    ) -> Vec<usize> {
        let tx = axis_taps(in_w, out_w);
        let ty = axis_taps(in_h, out_h);
        let mut out = Vec::with_capacity(out_w * out_h);
        for (oy, ty) in ty.iter().enumerate() {
            for (ox, tx) in tx.iter().enumerate() {
                let mut taps: BTreeMap<usize, f64> = BTreeMap::new();
                for (yy, wy) in [(ty.lo, ty.w_lo), (ty.hi, ty.w_hi)] {
                    for (xx, wx) in [(tx.lo, tx.w_lo), (tx.hi, tx.w_hi)] {
                        *taps.entry(yy * in_w + xx).or_default() += wx * wy;
                    }
                }
                let weights = quantize_weights(&taps, self.weight_one);
                let mut products = Vec::with_capacity(weights.len());
                for (pix, c) in weights {
                    let p = self.fresh();
                    self.rows.push(Constraint {
                        a: SparseRow::single(0, FieldElement::new(c)),
                        b: SparseRow::single(src[pix], FieldElement::ONE),
                        c: SparseRow::single(p, FieldElement::ONE),
                    });
                    products.push((p, FieldElement::ONE));
                }
                let target = match dst {
                    Some(d) => d[oy * out_w + ox],
                    None => self.fresh(),
                };
                self.rows.push(Constraint {
                    a: SparseRow::new(products),
                    b: SparseRow::single(0, FieldElement::ONE),
                    c: SparseRow::single(target, FieldElement::ONE),
                });
                out.push(target);
            }
        }
        out
    }
}

/// Integer weights summing to exactly `one`, zero taps removed.
fn quantize_weights(taps: &BTreeMap<usize, f64>, one: u64) -> Vec<(usize, u64)> {
    let mut q: Vec<(usize, u64)> = taps
        .iter()
        .map(|(&pix, &w)| (pix, (w * one as f64).round() as u64))
        .collect();
    let total: i64 = q.iter().map(|&(_, c)| c as i64).sum();
    let residual = one as i64 - total;
    if residual != 0 {
        let heaviest = (0..q.len())
            .max_by_key(|&k| (q[k].1, std::cmp::Reverse(k)))
            .unwrap();
        q[heaviest].1 = (q[heaviest].1 as i64 + residual) as u64;
    }
    q.retain(|&(_, c)| c != 0);
    q
}

pub fn extract_circuit_with(
    spec: &TransformSpec,
    width: usize,
    height: usize,
    channels: usize,
    frac_bits: u32,
) -> Result<TransformCircuit, CircuitError> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(CircuitError::EmptyImage {
            width,
            height,
            channels,
        });
    }
    if !(1..=MAX_FRAC_BITS).contains(&frac_bits) {
        return Err(CircuitError::FracBits(frac_bits));
    }
    let denom_bits = SCALE_DENOMINATOR.trailing_zeros();
    if frac_bits < denom_bits && !spec.numerator().is_multiple_of(1 << (denom_bits - frac_bits)) {
        return Err(CircuitError::UnrepresentableScale {
            scale_num: spec.numerator(),
            frac_bits,
        });
    }
    let (rw, rh) = (spec.reduced_extent(width), spec.reduced_extent(height));
    let identity = (rw, rh) == (width, height);
    let plane = width * height;
    let n = plane * channels;
    let mut b = Builder {
        next_var: 1 + 2 * n,
        rows: Vec::new(),
        weight_one: 1 << (2 * frac_bits),
    };
    let out_slot = |i: usize| 1 + i;
    let in_slot = |i: usize| 1 + n + i;
    for c in 0..channels {
        let ins: Vec<usize> = (0..plane).map(|p| in_slot(p * channels + c)).collect();
        let outs: Vec<usize> = (0..plane).map(|p| out_slot(p * channels + c)).collect();
        if identity {
            for (&s, &d) in ins.iter().zip(&outs) {
                b.copy(s, d);
            }
        } else {
            let mid = b.stage(&ins, (width, height), (rw, rh), None);
            b.stage(&mid, (rw, rh), (width, height), Some(&outs));
        }
    }
    let output_scale_bits = if identity { frac_bits } else { 5 * frac_bits };
    Ok(TransformCircuit {
        system: R1CSSystem::new(b.next_var, n, b.rows)?,
        spec: *spec,
        width,
        height,
        channels,
        frac_bits,
        output_scale_bits,
    })
}

/// SHA-256 over the blinding and the encoded input pixels.
pub fn input_commitment(blinding: &[u8; 16], raw_inputs: &[FieldElement]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"input:");
    h.update(blinding);
    for v in raw_inputs {
        h.update(v.value().to_le_bytes());
    }
    h.finalize().into()
}

/// Public part of an assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub spec: TransformSpec,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub frac_bits: u32,
    pub output_scale_bits: u32,
    pub input_commitment: [u8; 32],
    /// Raw field values of the transformed image in `(y, x, c)` order.
    pub outputs: Vec<FieldElement>,
}

impl Statement {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn decoded_outputs(&self) -> Result<Tensor, CircuitError> {
        let data = self
            .outputs
            .iter()
            .map(|&v| decode_raw(v, self.output_scale_bits))
            .collect();
        Tensor::from_vec(self.width, self.height, self.channels, data)
            .map_err(|e| CircuitError::Malformed(e.to_string()))
    }

    /// Re-derives the circuit this statement refers to.
    pub fn circuit(&self) -> Result<TransformCircuit, CircuitError> {
        let circuit =
            extract_circuit_with(&self.spec, self.width, self.height, self.channels, self.frac_bits)?;
        if circuit.output_scale_bits != self.output_scale_bits
            || circuit.system.num_public() != self.outputs.len()
        {
            return Err(CircuitError::Malformed(
                "statement shape disagrees with its circuit".into(),
            ));
        }
        Ok(circuit)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(72 + 8 * self.outputs.len());
        out.extend_from_slice(STATEMENT_MAGIC);
        for v in [
            STATEMENT_VERSION,
            self.spec.numerator(),
            self.width as u32,
            self.height as u32,
            self.channels as u32,
            self.frac_bits,
            self.output_scale_bits,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.input_commitment);
        out.extend_from_slice(&(self.outputs.len() as u64).to_le_bytes());
        for v in &self.outputs {
            out.extend_from_slice(&v.value().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CircuitError> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != STATEMENT_MAGIC {
            return Err(CircuitError::Malformed("bad statement magic".into()));
        }
        let version = r.u32()?;
        if version != STATEMENT_VERSION {
            return Err(CircuitError::Malformed(format!(
                "unsupported statement version {version}"
            )));
        }
        let spec =
            TransformSpec::from_numerator(r.u32()?).map_err(|e| CircuitError::Malformed(e.to_string()))?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let channels = r.u32()? as usize;
        let frac_bits = r.u32()?;
        let output_scale_bits = r.u32()?;
        let input_commitment = r.array32()?;
        let count = r.len_u64()?;
        let expected = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| CircuitError::Malformed("dims overflow".into()))?;
        if count != expected {
            return Err(CircuitError::Malformed(format!(
                "{count} outputs for {width}x{height}x{channels}"
            )));
        }
        let mut outputs = Vec::with_capacity(count.min(bytes.len() / 8));
        for _ in 0..count {
            let v = r.u64()?;
            outputs.push(
                FieldElement::from_canonical(v)
                    .ok_or_else(|| CircuitError::Malformed("non-canonical output".into()))?,
            );
        }
        if !r.is_empty() {
            return Err(CircuitError::Malformed("trailing bytes after statement".into()));
        }
        Ok(Self {
            spec,
            width,
            height,
            channels,
            frac_bits,
            output_scale_bits,
            input_commitment,
            outputs,
        })
    }
}

/// Private part of an assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    /// `z[private_offset..]`; the first `pixel_count` entries are the inputs.
    pub private: Vec<FieldElement>,
    pub blinding: [u8; 16],
}

impl Witness {
    /// Full assignment `z` for the statement.
    pub fn assignment(&self, statement: &Statement) -> Vec<FieldElement> {
        let mut z = Vec::with_capacity(1 + statement.outputs.len() + self.private.len());
        z.push(FieldElement::ONE);
        z.extend_from_slice(&statement.outputs);
        z.extend_from_slice(&self.private);
        z
    }

    /// True when the committed digest opens to this witness's inputs.
    pub fn opens(&self, statement: &Statement) -> bool {
        let n = statement.outputs.len();
        n <= self.private.len()
            && input_commitment(&self.blinding, &self.private[..n]) == statement.input_commitment
    }
}

/// Encodes `image` (clamped to `[0, 1]`) and solves every slot in row order.
pub fn gen_witness(
    circuit: &TransformCircuit,
    image: &Tensor,
    blinding: [u8; 16],
) -> Result<(Statement, Witness), CircuitError> {
    if image.dims() != circuit.dims() {
        return Err(CircuitError::DimsMismatch {
            expected: circuit.dims(),
            actual: image.dims(),
        });
    }
    let sys = &circuit.system;
    let n = circuit.pixel_count();
    let mut z: Vec<Option<FieldElement>> = vec![None; sys.num_vars()];
    z[0] = Some(FieldElement::ONE);
    let mut raw_inputs = Vec::with_capacity(n);
    for (i, &v) in image.data().iter().enumerate() {
        let raw = FixedPoint::encode(v.clamp(0.0, 1.0), circuit.frac_bits).raw;
        z[circuit.input_slot(i)] = Some(raw);
        raw_inputs.push(raw);
    }
    // Inputs the transform never reads stay at their encoded value.
    for (i, row) in sys.constraints().iter().enumerate() {
        let lookup = |k: usize| z.get(k).copied().flatten();
        let (a, b) = match (row.a.eval_with(lookup), row.b.eval_with(lookup)) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(CircuitError::Unsolvable(i)),
        };
        match row.c.entries() {
            &[(slot, c)] if c == FieldElement::ONE && z[slot].is_none() => {
                z[slot] = Some(a * b);
            }
            _ => return Err(CircuitError::Unsolvable(i)),
        }
    }
    let z: Vec<FieldElement> = z
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or(CircuitError::Unsolvable(i)))
        .collect::<Result<_, _>>()?;
    let statement = Statement {
        spec: circuit.spec,
        width: circuit.width,
        height: circuit.height,
        channels: circuit.channels,
        frac_bits: circuit.frac_bits,
        output_scale_bits: circuit.output_scale_bits,
        input_commitment: input_commitment(&blinding, &raw_inputs),
        outputs: z[1..=n].to_vec(),
    };
    let witness = Witness {
        private: z[sys.private_offset()..].to_vec(),
        blinding,
    };
    Ok((statement, witness))
}
