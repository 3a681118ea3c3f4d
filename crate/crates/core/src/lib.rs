//! Toy-model laboratory for singular learning theory.
//!
//! Trains five families of small models, estimates their local learning coefficient (LLC)
//! with localized SGLD, tracks the free energy `n·L_n(w*) + λ̂·ln n` across training, detects
//! grokking and loss-drop transitions, and fits rate and scaling laws to the results.
//!
//! ```no_run
//! use slt_lab::llc::{default_sgld_config, estimate_at, ExperimentId};
//! use slt_lab::math::RngStream;
//! use slt_lab::models::{ModelSpec, TaskParams};
//! use slt_lab::training::{train_until_converged, OptimizerConfig};
//!
//! let spec = ModelSpec::low_rank(20, 4);
//! let mut rng = RngStream::new(1, 0);
//! let data = spec.generate_dataset(&TaskParams::default(), &mut rng).unwrap();
//! let fit = train_until_converged(&spec, &data.train, &OptimizerConfig::default(), &mut rng).unwrap();
//! let cfg = default_sgld_config(ExperimentId::Q2E2);
//! let est = estimate_at(&spec, &fit.params, &data.train, &cfg, &rng.child(1)).unwrap();
//! println!("llc = {:.1} ± {:.1}", est.lambda_hat, est.std_dev);
//! ```

pub mod error;
pub mod experiments;
pub mod llc;
pub mod math;
pub mod models;
pub mod par;
pub mod registry;
pub mod report;
pub mod training;
pub mod transitions;

pub use error::{Error, Result};

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
