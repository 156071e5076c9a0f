#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod denoiser;
pub mod eval;
pub mod finetune;
pub mod fingerprint;
pub mod flow;
pub mod mces;
pub mod molgraph;
pub mod params;
pub mod rng;
pub mod spectrum;
