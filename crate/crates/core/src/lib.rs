#![no_std]
extern crate alloc;

pub mod check;
pub mod constraint;
pub mod flow;
pub mod num;
pub mod random;
pub mod semantics;
pub mod simulator;
pub mod syntax;
