//! Central finite-difference gradient checks.
//!
//! These are test utilities: they panic on unknown parameter names or
//! backend errors instead of returning them.

use candle_core::{Device, Tensor, Var};

use super::{scalar, ParamStore};

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub kinks: usize,
    pub failures: Vec<String>,
}

/// `per_tensor` evenly spaced coordinates of every parameter under `prefix`.
pub fn spread_coords(store: &ParamStore, prefix: &str, per_tensor: usize) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for (name, var) in store.vars_with_prefix(prefix) {
        let n = var.elem_count();
        let k = per_tensor.min(n).max(1);
        let mut idxs: Vec<usize> = (0..k).map(|i| if k == 1 { 0 } else { i * (n - 1) / (k - 1) }).collect();
        idxs.dedup();
        out.extend(idxs.into_iter().map(|i| (name.clone(), i)));
    }
    out
}

/// `count` coordinates drawn uniformly over all scalars under `prefix`.
pub fn sample_coords(store: &ParamStore, prefix: &str, count: usize, seed: u64) -> Vec<(String, usize)> {
    use rand::{Rng, SeedableRng};
    let vars = store.vars_with_prefix(prefix);
    let total: usize = vars.iter().map(|(_, v)| v.elem_count()).sum();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            for (name, v) in &vars {
                if k < v.elem_count() {
                    return (name.clone(), k);
                }
                k -= v.elem_count();
            }
            unreachable!()
        })
        .collect()
}

/// Compares analytic gradients of `loss` against central differences with
/// step `h` at the given coordinates. A coordinate whose difference quotient
/// at `h` disagrees with the one at `h / 10` lies within `h` of a ReLU kink,
/// where the difference quotient is not a derivative estimate; those are
/// counted, not compared.
pub fn check(store: &ParamStore, coords: &[(String, usize)], loss: impl Fn() -> Tensor, h: f64, rel_tol: f64) -> GradReport {
    let grads = loss().backward().unwrap();
    let mut report = GradReport::default();
    for (name, idx) in coords {
        let idx = *idx;
        let var = store.get(name).unwrap_or_else(|| panic!("no parameter {name}"));
        let g: Vec<f64> = grads
            .get(var.as_tensor())
            .unwrap_or_else(|| panic!("no gradient for {name}"))
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let orig: Vec<f64> = var.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
        let eval = |delta: f64| {
            let mut v = orig.clone();
            v[idx] += delta;
            Var::set(&var, &Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap()).unwrap();
            scalar(&loss()).unwrap()
        };
        let coarse = (eval(h) - eval(-h)) / (2.0 * h);
        let fine = (eval(h / 10.0) - eval(-h / 10.0)) / (0.2 * h);
        Var::set(&var, &Tensor::from_vec(orig, var.dims(), &Device::Cpu).unwrap()).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
        if rel(coarse, fine) > rel_tol {
            report.kinks += 1;
            continue;
        }
        report.checked += 1;
        if rel(g[idx], coarse) > rel_tol {
            report.failures.push(format!("{name}[{idx}]: analytic {} numeric {coarse}", g[idx]));
        }
    }
    report
}
