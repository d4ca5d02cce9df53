//! Stacking sequence retrieval for composite laminates as a ground-state
//! search over diagonal matrix product operators.

pub mod dmrg;
pub mod eigen;
pub mod error;
pub mod laminate;
pub mod mpo;
pub mod mps;
pub mod oracle;
pub mod qubit;
pub mod targets;
pub mod tensor;

pub use error::{Result, SsrError};
pub use laminate::{
    AngleSet, Block, Component, ConstraintSpec, DihedralElement, LaminationPoint, PlyWeights, SsrProblem,
    StackingSequence,
};
