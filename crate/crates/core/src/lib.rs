//! Discrete supervised cross-modal hashing.
//!
//! Two feature modalities are factorized into a shared latent space, which is
//! tied to binary codes through an orthogonal rotation and to class labels
//! through a linear projection. Linear hash functions per modality map unseen
//! samples into the same Hamming space, so an image query can retrieve text
//! items and vice versa.
//!
//! - [`linalg`]: dense matrices, Cholesky solves, small Jacobi SVD
//! - [`data`]: datasets, `EDSHMAT1` files, centering, splits, synthetic data
//! - [`model`]: the objective, block updates and the training loop
//! - [`codes`]: packed codes, encoding, Hamming ranking, `EDSHBIN1` files
//! - [`eval`]: mAP@M, top-k precision and PR curves

pub mod codes;
pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;

pub use codes::{encode, hamming, pack, rank, rank_all, unpack, Hit, PackedCodes};
pub use data::{CenteringStats, Dataset, Modality, SynthSpec};
pub use error::{Error, Result};
pub use eval::{MetricsReport, NormalizerRule};
pub use linalg::DenseMatrix;
pub use model::{train, EdshModel, Hyperparams, TrainReport};
