//! Base kernels and multiple kernel learning.

pub mod gmkl;
pub mod grams;
pub mod svm;

pub use gmkl::{accuracy, gmkl_train, objective, train_fixed, GmklConfig, MklModel, MklStatus, Prediction};
pub use grams::{base_grams, raw_pair_gram, BaseKernelSet, Block};
pub use svm::{svm_train, SvmParams, SvmSolution};
