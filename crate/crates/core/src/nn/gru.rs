use rand::Rng;

use super::last_dim_check;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tape, Var};

/// One step of a recurrent network: `(input[b×in], state[b×hidden]) → state[b×hidden]`.
pub trait RecurrentCell {
    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: Var) -> Result<Var>;
}

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(x·W_z + h·U_z + b_z)
/// r  = σ(x·W_r + h·U_r + b_r)
/// n  = tanh(x·W_n + (r ∘ h)·U_n + b_n)
/// h' = (1 − z) ∘ n + z ∘ h
/// ```
///
/// With `h ∈ (−1, 1)` the update is a convex combination of two values in
/// `(−1, 1)`, so the state stays bounded.
#[derive(Clone, Debug)]
pub struct GruCell {
    name: String,
    input_dim: usize,
    hidden_dim: usize,
}

const GATES: [&str; 3] = ["z", "r", "n"];

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        for g in GATES {
            store.init_glorot(&format!("{name}.w_{g}"), input_dim, hidden_dim, rng);
            store.init_glorot(&format!("{name}.u_{g}"), hidden_dim, hidden_dim, rng);
            store.init_const(&format!("{name}.b_{g}"), &[hidden_dim], 0.0);
        }
        Self {
            name: name.to_string(),
            input_dim,
            hidden_dim,
        }
    }

    pub fn param_name(&self, kind: &str, gate: &str) -> String {
        format!("{}.{kind}_{gate}", self.name)
    }

    fn input_part(&self, tape: &mut Tape, store: &ParamStore, x: Var, gate: &str) -> Result<Var> {
        let w = tape.param(store, &self.param_name("w", gate))?;
        let b = tape.param(store, &self.param_name("b", gate))?;
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

impl RecurrentCell for GruCell {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: Var) -> Result<Var> {
        last_dim_check(tape, x, self.input_dim, "gru input")?;
        last_dim_check(tape, state, self.hidden_dim, "gru state")?;
        if tape.shape(x)[0] != tape.shape(state)[0] {
            return Err(Error::ShapeMismatch {
                op: "gru batch",
                lhs: tape.shape(x).to_vec(),
                rhs: tape.shape(state).to_vec(),
            });
        }
        let u_z = tape.param(store, &self.param_name("u", "z"))?;
        let u_r = tape.param(store, &self.param_name("u", "r"))?;
        let u_n = tape.param(store, &self.param_name("u", "n"))?;

        let xz = self.input_part(tape, store, x, "z")?;
        let hz = tape.matmul(state, u_z)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;

        let xr = self.input_part(tape, store, x, "r")?;
        let hr = tape.matmul(state, u_r)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;

        let xn = self.input_part(tape, store, x, "n")?;
        let rh = tape.mul(r, state)?;
        let hn = tape.matmul(rh, u_n)?;
        let n = tape.add(xn, hn)?;
        let n = tape.tanh(n)?;

        // h' = n + z ∘ (h − n)
        let diff = tape.sub(state, n)?;
        let gated = tape.mul(z, diff)?;
        tape.add(n, gated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_everything_gives_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut rng);
        store.zero_all();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let h = tape.constant(Tensor::zeros(&[2, 4]));
        let out = cell.step(&mut tape, &store, x, h).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    fn run_steps(inflate: f64, input_range: f64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 2, 5, &mut rng);
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= inflate);
        }
        let mut state = Tensor::zeros(&[3, 5]);
        let mut states = Vec::with_capacity(1000);
        for _ in 0..1000 {
            let mut tape = Tape::new();
            let xs = (0..6).map(|_| rng.random_range(-input_range..input_range)).collect();
            let x = tape.constant(Tensor::new(vec![3, 2], xs).unwrap());
            let h = tape.constant(state.clone());
            let out = cell.step(&mut tape, &store, x, h).unwrap();
            state = tape.value(out).clone();
            states.push(state.clone());
        }
        states
    }

    #[test]
    fn state_stays_bounded() {
        for s in run_steps(1.0, 3.0) {
            assert!(s.data().iter().all(|v| v.abs() < 1.0));
        }
        // Saturated gates: tanh rounds to ±1 in f64, so the open bound becomes closed.
        for s in run_steps(8.0, 5.0) {
            assert!(s.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn single_unit_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 1, 1, &mut rng);
        let set = |store: &mut ParamStore, name: &str, v: f64| {
            store.insert(name, Tensor::full(store.get(name).unwrap().shape(), v));
        };
        set(&mut store, "g.w_z", 0.5);
        set(&mut store, "g.u_z", -0.3);
        set(&mut store, "g.b_z", 0.1);
        set(&mut store, "g.w_r", 0.8);
        set(&mut store, "g.u_r", 0.2);
        set(&mut store, "g.b_r", -0.4);
        set(&mut store, "g.w_n", 1.5);
        set(&mut store, "g.u_n", 0.7);
        set(&mut store, "g.b_n", 0.05);

        let (x, h) = (0.9, -0.25);
        let z = sig(0.5 * x + -0.3 * h + 0.1);
        let r = sig(0.8 * x + 0.2 * h - 0.4);
        let n = (1.5 * x + 0.7 * (r * h) + 0.05).tanh();
        let expected = (1.0 - z) * n + z * h;

        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::full(&[1, 1], x));
        let hv = tape.constant(Tensor::full(&[1, 1], h));
        let out = cell.step(&mut tape, &store, xv, hv).unwrap();
        assert_abs_diff_eq!(tape.value(out).data()[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 2, 3, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3]));
        let h = tape.constant(Tensor::zeros(&[1, 3]));
        assert!(cell.step(&mut tape, &store, x, h).is_err());
    }
}
