//! Oblivious neural-network inference over a garbled MIPS-subset CPU, with a
//! simulated side-channel laboratory.

pub mod circuit;
pub mod garble;
pub mod mips;
pub mod nncompile;
pub mod ot;
pub mod protocol;
pub mod leakage;
