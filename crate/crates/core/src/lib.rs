#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod mri;
pub mod nn;
pub mod numerics;
pub mod ot;
pub mod phantom;
pub mod sampler;
pub mod score;
