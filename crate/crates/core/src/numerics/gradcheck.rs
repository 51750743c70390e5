//! Central finite-difference checks against tape gradients.

use super::mlp::Parameters;
use super::tape::{Gradients, ParamKey};
use crate::error::{Error, Result};

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_key: ParamKey,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `grads` with `(f(θ + h) - f(θ - h)) / 2h` for every parameter entry
/// of `model`. Parameters are restored exactly afterwards.
pub fn check_gradients<P: Parameters + ?Sized>(
    model: &mut P,
    grads: &Gradients,
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&P) -> Result<f64>,
) -> Result<GradCheck> {
    let keys: Vec<(ParamKey, usize)> = model.params().into_iter().map(|(k, t)| (k, t.len())).collect();
    let mut worst: Option<GradCheck> = None;
    let mut checked = 0;
    for (slot, (key, len)) in keys.iter().enumerate() {
        let g = grads
            .get(key)
            .ok_or_else(|| Error::usage(format!("no analytic gradient for `{key}`")))?
            .clone();
        for j in 0..*len {
            let original = model.params_mut()[slot].1.data()[j];
            model.params_mut()[slot].1.data_mut()[j] = original + h;
            let up = loss(model)?;
            model.params_mut()[slot].1.data_mut()[j] = original - h;
            let down = loss(model)?;
            model.params_mut()[slot].1.data_mut()[j] = original;
            let numeric = (up - down) / (2.0 * h);
            let analytic = g.data()[j];
            let rel = relative_error(analytic, numeric, floor);
            checked += 1;
            if worst.as_ref().is_none_or(|w| rel > w.max_rel_error) {
                worst = Some(GradCheck {
                    max_rel_error: rel,
                    worst_key: key.clone(),
                    worst_index: j,
                    analytic,
                    numeric,
                    checked: 0,
                });
            }
        }
    }
    let mut out = worst.ok_or_else(|| Error::usage("model has no parameters"))?;
    out.checked = checked;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{seeded_rng, Activation, Mlp, Tape};

    #[test]
    fn quadratic_loss_checks_clean() {
        let mut rng = seeded_rng(0);
        let mut net = Mlp::new("n", &[3, 4, 1], Activation::Tanh, &mut rng).unwrap();
        let x = rng.normal_tensor(5, 3);
        let loss = |net: &Mlp| -> Result<(f64, Gradients)> {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let y = net.forward_taped(&mut tape, xv, true)?;
            let y2 = tape.square(y);
            let l = tape.mean(y2);
            let v = tape.value(l).item()?;
            Ok((v, tape.backward(l)?))
        };
        let (_, grads) = loss(&net).unwrap();
        let before = net.clone();
        let r = check_gradients(&mut net, &grads, 1e-5, 1e-3, |n| Ok(loss(n)?.0)).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
        assert_eq!(r.checked, 3 * 4 + 4 + 4 + 1);
        assert_eq!(net, before);
        assert_eq!(relative_error(1.0, 1.0, 0.0), 0.0);
    }
}
