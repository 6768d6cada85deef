//! Patch discriminators, the non-saturating adversarial objective, the R1
//! penalty and the alternating training loop.

pub mod discriminator;
pub mod loss;
pub mod train;
pub mod view;

pub use discriminator::{
    discriminate, init_discriminator, r1_penalty, ConvDiscriminator, Critic, DiscriminatorConfig, LinearCritic,
};
pub use loss::{adversarial_loss, adversarial_losses, f_nonsat, f_nonsat_derivative, GeneratorObjective};
pub use train::{
    discriminator_gradient, discriminator_step, draw_generator_input, generator_gradient, generator_step,
    load_checkpoint, load_generator, render_draw, DiscriminatorStats, GeneratorDraw, GeneratorStats, RenderedDraw,
    StepMetrics, TrainConfig, TrainSummary, Trainer,
};
pub use view::{final_delta, generated_patches, render_view};
