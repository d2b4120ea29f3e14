use super::{QError, Result};

/// Floor added to the denominator of the relative error. A central
/// difference at step 1e-5 on a loss of magnitude ~20 carries roundoff of
/// about `20 * 2.2e-16 / 2e-5 ~ 2e-10`; with this floor that noise stays
/// near 1e-5 relative on entries whose true gradient is ~0.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares the analytic gradient returned by `f` with central differences
/// of step `h` in every coordinate of `params`.
///
/// `f` maps parameters to `(loss, gradient)`. The error per coordinate is
/// `|analytic - numeric| / (|analytic| + |numeric| + REL_FLOOR)`.
pub fn grad_check<F>(params: &[f64], mut f: F, h: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(QError::NonFiniteLoss);
    }
    let mut p = params.to_vec();
    let mut worst = GradCheck { max_rel_error: 0.0, worst_index: 0, checked: params.len() };
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let (up, _) = f(&p)?;
        p[i] = orig - h;
        let (down, _) = f(&p)?;
        p[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(QError::NonFiniteLoss);
        }
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + REL_FLOOR);
        if err > worst.max_rel_error {
            worst.max_rel_error = err;
            worst.worst_index = i;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmodel::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn squared<'a>(net: &'a Mlp, x: &[f64], target: &[f64]) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
        let x = x.to_vec();
        let target = target.to_vec();
        move |p: &[f64]| {
            let acts = net.forward(p, &x);
            let out = acts.last().unwrap();
            let diff: Vec<f64> = out.iter().zip(&target).map(|(o, t)| o - t).collect();
            let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
            let mut g = vec![0.0; p.len()];
            net.backward(p, &acts, &diff, &mut g);
            Ok((loss, g))
        }
    }

    #[test]
    fn linear_model_is_exact() {
        let net = Mlp::new(&[3, 2], 0, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = vec![0.0; net.param_count()];
        net.init(&mut p, &mut rng);
        let r = grad_check(&p, squared(&net, &[0.3, -1.2, 0.8], &[1.0, -1.0]), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
    }

    #[test]
    fn two_layer_tanh_model() {
        let net = Mlp::new(&[4, 6, 3], 0, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = vec![0.0; net.param_count()];
        net.init(&mut p, &mut rng);
        let r = grad_check(&p, squared(&net, &[0.1, 0.5, -0.7, 1.0], &[0.2, 0.0, -0.4]), 1e-5).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let net = Mlp::new(&[4, 6, 3], 0, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = vec![0.0; net.param_count()];
        net.init(&mut p, &mut rng);
        let good = squared(&net, &[0.1, 0.5, -0.7, 1.0], &[0.2, 0.0, -0.4]);
        let bad = |q: &[f64]| {
            let (l, mut g) = good(q)?;
            let i = g.iter().position(|v| v.abs() > 1e-3).unwrap();
            g[i] *= 2.0;
            Ok((l, g))
        };
        assert!(!grad_check(&p, bad, 1e-5).unwrap().passes(1e-4));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = grad_check(&[1.0], |_| Ok((f64::NAN, vec![0.0])), 1e-5);
        assert_eq!(r, Err(QError::NonFiniteLoss));
    }
}
