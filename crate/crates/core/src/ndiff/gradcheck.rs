//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, Tensor2, Var};
use crate::error::{Error, Result};

/// A model with a scalar loss over a fixed topology.
pub trait ModelGraph {
    type Input;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records the forward pass and returns the 1x1 loss node.
    fn build_loss(&self, tape: &mut Tape, input: &Self::Input) -> Result<Var>;
}

/// Loss value and dense per-parameter gradients, in store order.
pub fn loss_and_gradients<G: ModelGraph>(graph: &G, input: &G::Input) -> Result<(f64, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let loss = graph.build_loss(&mut tape, input)?;
    let value = tape.value(loss).item();
    let back = tape.backward(loss)?;
    let store = graph.params();
    let mut grads: Vec<Tensor2> = store
        .ids()
        .map(|id| {
            let (r, c) = store.value(id).shape();
            Tensor2::zeros(r, c)
        })
        .collect();
    for (id, g) in back.params() {
        grads[id.index()].add_assign(g);
    }
    Ok((value, grads))
}

fn loss_only<G: ModelGraph>(graph: &G, input: &G::Input) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = graph.build_loss(&mut tape, input)?;
    Ok(tape.value(loss).item())
}

/// Outcome of a gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Denominator floor so that gradients that are zero both ways compare equal.
const REL_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every scalar parameter with central differences and returns the
/// worst relative error.
pub fn finite_diff_check<G: ModelGraph>(graph: &mut G, input: &G::Input, epsilon: f64) -> Result<f64> {
    let (_, analytic) = loss_and_gradients(graph, input)?;
    Ok(compare_gradients(graph, input, epsilon, &analytic, None)?.max_rel_error)
}

/// Compares `analytic` (dense, store order) against central differences.
///
/// `sample` optionally limits the check to that many randomly chosen entries
/// per parameter tensor, drawn from the given seed.
pub fn compare_gradients<G: ModelGraph>(
    graph: &mut G,
    input: &G::Input,
    epsilon: f64,
    analytic: &[Tensor2],
    sample_per_param: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!(
            "finite_diff_check: epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let ids: Vec<_> = graph.params().ids().collect();
    if analytic.len() != ids.len() {
        return Err(Error::invalid("analytic gradient count differs from parameter count"));
    }
    let mut rng = sample_per_param.map(|(_, seed)| ChaCha8Rng::seed_from_u64(seed));
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for id in ids {
        let n = graph.params().value(id).len();
        let entries: Vec<usize> = match (&mut rng, sample_per_param) {
            (Some(rng), Some((k, _))) if k < n => sample(rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        for k in entries {
            let orig = graph.params().value(id).data()[k];
            graph.params_mut().value_mut(id).data_mut()[k] = orig + epsilon;
            let plus = loss_only(graph, input);
            graph.params_mut().value_mut(id).data_mut()[k] = orig - epsilon;
            let minus = loss_only(graph, input);
            graph.params_mut().value_mut(id).data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let err = relative_error(analytic[id.index()].data()[k], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{k}]", graph.params().name(id));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Linear model with squared-error loss.
    struct Linear {
        store: ParamStore,
    }

    impl ModelGraph for Linear {
        type Input = (Tensor2, Tensor2);
        fn params(&self) -> &ParamStore {
            &self.store
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.store
        }
        fn build_loss(&self, tape: &mut Tape, (x, y): &Self::Input) -> Result<Var> {
            let w = tape.param(&self.store, self.store.expect_id("w")?)?;
            let b = tape.param(&self.store, self.store.expect_id("b")?)?;
            let x = tape.input(x.clone())?;
            let y = tape.input(y.clone())?;
            let out = tape.affine(x, w, b)?;
            let d = tape.sub(out, y)?;
            tape.sum_squares(d)
        }
    }

    fn linear_case() -> (Linear, (Tensor2, Tensor2)) {
        let mut store = ParamStore::new(5);
        store.add_weight("w", 3, 2).unwrap();
        let b = store.add_zeros("b", 1, 2).unwrap();
        store.value_mut(b).data_mut().copy_from_slice(&[0.3, -0.2]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand = |r, c| {
            Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let x = rand(4, 3);
        let y = rand(4, 2);
        (Linear { store }, (x, y))
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let (mut g, input) = linear_case();
        let err = finite_diff_check(&mut g, &input, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (mut g, input) = linear_case();
        let (_, mut grads) = loss_and_gradients(&g, &input).unwrap();
        for t in &mut grads {
            t.scale_assign(2.0);
        }
        let rep = compare_gradients(&mut g, &input, 1e-5, &grads, None).unwrap();
        assert!((rep.max_rel_error - 0.5).abs() < 1e-6, "{rep:?}");
    }

    #[test]
    fn epsilon_range_is_enforced() {
        let (mut g, input) = linear_case();
        assert!(finite_diff_check(&mut g, &input, 1e-2).is_err());
        assert!(finite_diff_check(&mut g, &input, 1e-9).is_err());
    }
}
