//! Prime-field R1CS for the down-then-up bilinear transform.

pub mod field;
pub mod fixed;
pub mod r1cs;
pub mod transform;

pub use field::{FieldElement, MODULUS};
pub use fixed::{FixedPoint, DEFAULT_FRAC_BITS};
pub use r1cs::{Constraint, R1CSSystem, SparseRow};
pub use transform::{
    extract_circuit, extract_circuit_with, gen_witness, input_commitment, Statement, TransformCircuit,
    Witness, MAX_FRAC_BITS,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CircuitError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error("row {row} has {entries} nonzero entries (limit {})", r1cs::MAX_ROW_ENTRIES)]
    RowTooDense { row: usize, entries: usize },
    #[error("image must be at least 1x1x1, got {width}x{height}x{channels}")]
    EmptyImage {
        width: usize,
        height: usize,
        channels: usize,
    },
    #[error("frac_bits {0} outside 1..={MAX_FRAC_BITS}")]
    FracBits(u32),
    #[error("scale {scale_num}/256 is not representable with {frac_bits} fractional bits")]
    UnrepresentableScale { scale_num: u32, frac_bits: u32 },
    #[error("image dims {actual:?} do not match circuit dims {expected:?}")]
    DimsMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("constraint {0} does not define a fresh variable")]
    Unsolvable(usize),
}
