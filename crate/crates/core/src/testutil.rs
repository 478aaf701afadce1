//! Support code for tests: independent oracles that must not share an
//! implementation path with what they check.

use crate::params::ParamStore;
use crate::tensor::{log_sum_exp, Tensor};

/// Central finite differences (step 1e-5) against the analytic gradients
/// currently stored in `store`. `f` must rebuild the loss from scratch.
pub fn finite_diff_check(
    store: &mut ParamStore,
    mut f: impl FnMut(&ParamStore) -> f64,
    rel_tol: f64,
    abs_tol: f64,
) {
    let step = 1e-5;
    let names: Vec<String> = store.names().map(String::from).collect();
    for name in names {
        let n = store.value(&name).unwrap().len();
        for i in 0..n {
            let orig = store.value(&name).unwrap().data()[i];
            store.get_mut(&name).unwrap().value.data_mut()[i] = orig + step;
            let up = f(store);
            store.get_mut(&name).unwrap().value.data_mut()[i] = orig - step;
            let down = f(store);
            store.get_mut(&name).unwrap().value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = store.grad(&name).unwrap().data()[i];
            let denom = analytic.abs().max(numeric.abs());
            let ok = if denom < abs_tol / rel_tol {
                (analytic - numeric).abs() < abs_tol
            } else {
                (analytic - numeric).abs() / denom < rel_tol
            };
            assert!(ok, "{name}[{i}]: analytic {analytic} vs numeric {numeric}");
        }
    }
}

/// Row-wise log-normalization of arbitrary logits into a valid lattice.
pub fn normalize_rows(rows: usize, cols: usize, raw: Vec<f64>) -> Tensor {
    let mut t = Tensor::from_vec(rows, cols, raw).unwrap();
    for r in 0..rows {
        let z = log_sum_exp(t.row(r));
        for v in t.row_mut(r) {
            *v -= z;
        }
    }
    t
}

/// Brute-force recursive Levenshtein distance, exponential on purpose.
pub fn naive_edit_distance(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ar)), Some((y, br))) => {
            if x == y {
                naive_edit_distance(ar, br)
            } else {
                1 + naive_edit_distance(ar, b)
                    .min(naive_edit_distance(a, br))
                    .min(naive_edit_distance(ar, br))
            }
        }
    }
}
