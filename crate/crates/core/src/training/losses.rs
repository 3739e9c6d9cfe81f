use super::config::GanLoss;
use crate::error::Result;
use crate::tensor::{Scalar, Tape, Var};

// −log σ(x) = softplus(−x) and −log(1 − σ(x)) = softplus(x).
const REAL: f64 = -1.0;
const FAKE: f64 = 1.0;

/// Generator adversarial loss. `real` logits are only used by the
/// relativistic form and should not require gradients.
pub fn gan_loss_g<T: Scalar>(tape: &mut Tape<T>, fake: Var, real: Option<Var>, kind: GanLoss) -> Result<Var> {
    match (kind, real) {
        (GanLoss::Relativistic, Some(real)) => relativistic(tape, real, fake, true),
        _ => Ok(tape.mean_softplus(fake, REAL)),
    }
}

/// Discriminator loss: real logits pushed up, fake logits pushed down.
pub fn gan_loss_d<T: Scalar>(tape: &mut Tape<T>, real: Var, fake: Var, kind: GanLoss) -> Result<Var> {
    match kind {
        GanLoss::Standard => {
            let r = tape.mean_softplus(real, REAL);
            let f = tape.mean_softplus(fake, FAKE);
            tape.add(r, f)
        }
        GanLoss::Relativistic => relativistic(tape, real, fake, false),
    }
}

fn relativistic<T: Scalar>(tape: &mut Tape<T>, real: Var, fake: Var, for_generator: bool) -> Result<Var> {
    let mean_fake = tape.mean(fake);
    let mean_real = tape.mean(real);
    let real_rel = tape.sub(real, mean_fake)?;
    let fake_rel = tape.sub(fake, mean_real)?;
    // the generator wants the labels swapped
    let (rs, fs) = if for_generator { (FAKE, REAL) } else { (REAL, FAKE) };
    let a = tape.mean_softplus(real_rel, rs);
    let b = tape.mean_softplus(fake_rel, fs);
    let sum = tape.add(a, b)?;
    Ok(tape.scale(sum, 0.5))
}
