use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::real::{sigmoid, softplus, Real};

/// `f(x) = −log(1 + e^{−x})`.
pub fn f_nonsat<T: Real>(x: T) -> T {
    -softplus(-x)
}

/// `f'(x) = sigmoid(−x)`.
pub fn f_nonsat_derivative<T: Real>(x: T) -> T {
    sigmoid(-x)
}

fn mean<T: Real>(xs: impl ExactSizeIterator<Item = T>) -> T {
    let n = xs.len();
    xs.fold(T::zero(), |a, b| a + b) / T::lit(n as f64)
}

/// `L_adv = E f(−D(real)) + E f(D(fake))`, maximized by the discriminator.
pub fn adversarial_loss<T: Real>(real_logits: &[T], fake_logits: &[T]) -> Result<T> {
    contract!(
        !real_logits.is_empty() && !fake_logits.is_empty(),
        "adversarial loss needs non-empty real and fake batches"
    );
    Ok(mean(real_logits.iter().map(|&d| f_nonsat(-d))) + mean(fake_logits.iter().map(|&d| f_nonsat(d))))
}

/// What the generator minimizes per fake logit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorObjective {
    /// `f(D(fake))`, the θ-dependent part of `L_adv`.
    #[default]
    Literal,
    /// `−f(−D(fake))`.
    NonSaturating,
}

impl GeneratorObjective {
    pub fn value<T: Real>(self, logit: T) -> T {
        match self {
            GeneratorObjective::Literal => f_nonsat(logit),
            GeneratorObjective::NonSaturating => -f_nonsat(-logit),
        }
    }

    pub fn derivative<T: Real>(self, logit: T) -> T {
        match self {
            GeneratorObjective::Literal => f_nonsat_derivative(logit),
            GeneratorObjective::NonSaturating => f_nonsat_derivative(-logit),
        }
    }
}

/// Returns `(L_adv, L_G)` where `L_G` is the generator's share under
/// `objective`.
pub fn adversarial_losses<T: Real>(
    real_logits: &[T],
    fake_logits: &[T],
    objective: GeneratorObjective,
) -> Result<(T, T)> {
    let l_adv = adversarial_loss(real_logits, fake_logits)?;
    let l_g = mean(fake_logits.iter().map(|&d| objective.value(d)));
    Ok((l_adv, l_g))
}
