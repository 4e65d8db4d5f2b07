//! Central finite-difference check of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Magnitudes below this are compared absolutely rather than relatively.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

fn evaluate(store: &ParamStore, f: &impl Fn(&mut Graph<'_>) -> NodeId) -> f64 {
    let mut g = Graph::new(store);
    let out = f(&mut g);
    g.value(out).item()
}

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences on up to `per_param` sampled coordinates of each parameter.
pub fn grad_check(
    store: &mut ParamStore,
    f: impl Fn(&mut Graph<'_>) -> NodeId,
    eps: f64,
    per_param: usize,
) -> GradCheckReport {
    let analytic: Vec<(ParamId, crate::tensor::Tensor)> = {
        let mut g = Graph::new(store);
        let out = f(&mut g);
        g.backward(out)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x9c);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    for id in store.ids().collect::<Vec<_>>() {
        let n = store.value(id).len();
        let grad = analytic.iter().find(|(p, _)| *p == id).map(|(_, t)| t.clone());
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_param).into_vec()
        };
        for i in coords {
            let original = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = original + eps;
            let plus = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[i] = original - eps;
            let minus = evaluate(store, &f);
            store.get_mut(id).value.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.as_ref().map_or(0.0, |t| t.data()[i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn sum_of_squares() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = store.add("w", random(&mut rng, 3, 4));
        let r = grad_check(
            &mut store,
            |g| {
                let x = g.param(w);
                let sq = g.mul(x, x);
                g.sum(sq)
            },
            DEFAULT_EPS,
            100,
        );
        assert_eq!(r.checked, 12);
        assert!(r.max_rel_error < 1e-7, "{r:?}");
    }

    #[test]
    fn softmax_cross_entropy() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = store.add("w", random(&mut rng, 3, 5));
        let x = random(&mut rng, 2, 3);
        let r = grad_check(
            &mut store,
            |g| {
                let xi = g.input(x.clone());
                let wi = g.param(w);
                let l = g.matmul(xi, wi);
                g.cross_entropy(l, &[1, 4]).unwrap()
            },
            DEFAULT_EPS,
            100,
        );
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn every_op() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = store.add("a", random(&mut rng, 4, 3));
        let b = store.add("b", random(&mut rng, 3, 6));
        let row = store.add("row", random(&mut rng, 1, 6));
        let table = store.add("table", random(&mut rng, 5, 3));
        let r = grad_check(
            &mut store,
            |g| {
                let (a, b, row, table) = (g.param(a), g.param(b), g.param(row), g.param(table));
                let e = g.gather(table, &[1, 4, 1, 0]).unwrap();
                let x = g.add(a, e);
                let u = g.unfold(x, 3).unwrap();
                let u = g.slice_cols(u, 2, 3);
                let m = g.matmul(u, b);
                let m = g.add_row(m, row);
                let m = g.mul_row(m, row);
                let n = g.layer_norm(m);
                let s = g.sigmoid(n);
                let t = g.tanh(m);
                let r = g.relu(m);
                let c = g.concat_cols(&[s, t]);
                let c = g.slice_cols(c, 4, 6);
                let c = g.mul(c, r);
                let top = g.slice_rows(c, 0, 2);
                let bottom = g.slice_rows(c, 2, 2);
                let st = g.transpose(bottom);
                let sq = g.matmul(top, st);
                let sm = g.softmax(sq);
                let both = g.concat_rows(&[sm, sq]);
                let both = g.scale(both, 0.7);
                let ce = g.cross_entropy(both, &[0, 1, 1, 0]).unwrap();
                let s2 = g.sum(c);
                let s2 = g.scale(s2, 0.1);
                g.add(ce, s2)
            },
            DEFAULT_EPS,
            100,
        );
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }
}
