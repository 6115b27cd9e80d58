use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Gradients with magnitude below this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-4;

/// Compares tape gradients with central differences on every coordinate of
/// `params` and returns the largest relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)`.
///
/// `loss_fn` must be deterministic; it is called once with recording for the
/// analytic pass and twice per coordinate for the numeric pass. Parameter
/// values are restored afterwards and gradients are left holding the
/// analytic result.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    epsilon: f64,
    mut loss_fn: F,
) -> Result<f64>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, store)?;
        Ok(tape.scalar(l))
    };

    let mut worst: f64 = 0.0;
    for &id in params {
        for i in 0..store.get(id).value.data().len() {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + epsilon;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[i] = original - epsilon;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus? - minus?) / (2.0 * epsilon);
            let analytic = store.get(id).grad.data()[i];
            let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dense::DenseMatrix;
    use crate::numerics::rng::RngStream;
    use rand::Rng;
    use std::sync::Arc;

    fn random_matrix(rows: usize, cols: usize, stream: &RngStream) -> DenseMatrix {
        let mut rng = stream.rng();
        DenseMatrix::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .add("w", random_matrix(3, 2, &RngStream::new(1, "q")))
            .unwrap();
        let err = finite_diff_check(&mut store, &[id], 1e-5, |tape, s| {
            let w = tape.param(s, id)?;
            let sq = tape.pair_dots(
                w,
                w,
                Arc::from((0..3).map(|i| (i, i)).collect::<Vec<_>>()),
                3,
                1,
            )?;
            let total = tape.sum(sq)?;
            tape.scale(total, 0.5)
        })
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn scaled_cosine_on_random_matrices() {
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let id = store
                .add("x_hat", random_matrix(4, 3, &RngStream::new(seed, "xh")))
                .unwrap();
            let target = Arc::new(random_matrix(4, 3, &RngStream::new(seed, "x")));
            let err = finite_diff_check(&mut store, &[id], 1e-5, |tape, s| {
                let p = tape.param(s, id)?;
                tape.scaled_cosine(p, target.clone(), Arc::from(vec![0, 2, 3]), 2.0)
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: err {err}");
        }
    }
}
