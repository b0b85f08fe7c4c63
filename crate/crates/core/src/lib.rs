//! Semantic-descriptor attacks, a bilinear blur defense, a spot-check proof
//! that the blur was applied, and a small simulated ledger that records
//! proof verdicts.

pub mod attack;
pub mod chain;
pub mod circuit;
pub mod defense;
pub mod descriptor;
pub mod harness;
pub mod numerics;
pub mod proof;

pub use attack::{run_attack, AttackConfig, AttackInstance, LossKind};
pub use circuit::{extract_circuit, gen_witness, Statement, TransformCircuit, Witness};
pub use defense::{defend_transform, evaluate_defense, DefenseVerdict, TransformSpec};
pub use descriptor::{similarity, Descriptor, DescriptorNetwork};
pub use numerics::Tensor;
pub use proof::{keygen, prove, verify, Proof, SecurityParam, Verdict};
