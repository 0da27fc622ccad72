//! Turing machines compiled onto abstracted strategy-game mechanics.
//!
//! A [`tm::TmSpec`] is compiled by [`controller::compile`] into per-(state,
//! symbol) command macros for one of three rulesets, executed turn by turn on
//! a [`world::WorldState`], decoded back with [`codec::decode`], and checked
//! against the reference interpreter by [`harness::lockstep_verify`].

pub mod builtin;
pub mod cli;
pub mod codec;
pub mod controller;
pub mod harness;
pub mod tm;
pub mod world;
