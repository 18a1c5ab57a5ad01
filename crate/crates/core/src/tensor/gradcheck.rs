use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::params::ParamStore;

const FLOOR: f64 = 1e-8;

fn rel_err(autodiff: f64, central: f64) -> f64 {
    (autodiff - central).abs() / (central.abs() + FLOOR)
}

fn eval<F>(f: &F, x: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let out = f(&mut tape, v)?;
    Ok(tape.value(out).data()[0])
}

/// Compares autodiff gradients of a scalar function against central
/// differences with step `h`. The divisor is the representable step
/// `(x + h) − (x − h)`, not `2h`. Returns
/// `max_i |g_autodiff,i − g_central,i| / (|g_central,i| + 1e-8)`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, v)?;
    let grad = tape
        .backward(loss)?
        .get(v)
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0_f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        let (hi, lo) = (orig + h, orig - h);
        probe.data_mut()[i] = hi;
        let up = eval(&f, &probe)?;
        probe.data_mut()[i] = lo;
        let down = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(rel_err(grad.data()[i], (up - down) / (hi - lo)));
    }
    Ok(worst)
}

/// Outcome of [`param_gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Central-difference check of every element of every parameter in `store`
/// against the gradients produced by one backward pass of `loss_fn`.
pub fn param_gradient_check<F>(store: &ParamStore, loss_fn: F, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    let grads = tape.backward(loss)?.params(store);

    let value_at = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = loss_fn(&mut tape, s)?;
        Ok(tape.value(out).data()[0])
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
    };
    let names: Vec<String> = store.names().cloned().collect();
    for name in names {
        let n = store.get(&name).map_or(0, Tensor::len);
        for i in 0..n {
            let orig = store.get(&name).expect("name from store").data()[i];
            let (hi, lo) = (orig + h, orig - h);
            probe.get_mut(&name).expect("cloned store").data_mut()[i] = hi;
            let up = value_at(&probe)?;
            probe.get_mut(&name).expect("cloned store").data_mut()[i] = lo;
            let down = value_at(&probe)?;
            probe.get_mut(&name).expect("cloned store").data_mut()[i] = orig;

            let err = rel_err(grads[&name].data()[i], (up - down) / (hi - lo));
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_has_exact_gradient() {
        // Roundoff in `f` itself is ulp(f) / 2h, so |f| must stay small for 1e-10.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let x = Tensor::vector((0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let err = finite_diff_check(|t, x| t.sum(x), &x, 1e-5).unwrap();
            assert!(err < 1e-10, "err = {err}");
        }
    }

    #[test]
    fn sum_of_squares_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::vector((0..10).map(|_| rng.random_range(-1.0..1.0)).collect());
        let err = finite_diff_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }
}
