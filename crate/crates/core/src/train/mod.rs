//! Contrastive fine-tuning, masked-autoencoder pretraining and gradient
//! verification.

mod data;
mod gradcheck;
mod loss;
mod optim;
mod retromae;
mod trainer;

pub use data::{load_triplets, read_triplets, LossReport, TrainingConfig, Triplet, TripletBatch};
pub use gradcheck::{check_gradients, grad_check, relative_error, GradCheckReport, REL_ERROR_FLOOR};
pub use loss::{infonce_loss, positive_ranks, similarity_matrix};
pub use optim::Adam;
pub use retromae::{
    mask_example, reconstruction_loss, reconstruction_loss_and_grads, DecoderParams, MaskedExample, RetroMae,
    RetroMaeConfig, RetroMaeParams,
};
pub use trainer::{contrastive_loss, EncodedBatch, Trainer};
