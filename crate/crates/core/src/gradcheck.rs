//! Central-difference gradient oracle and the comparison suite used to
//! verify reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// `(f(θ + h·e) − f(θ − h·e)) / 2h` for every coordinate of every
/// parameter in `ids`.
pub fn finite_diff_grad(
    f: impl Fn(&ParamStore) -> f64,
    params: &ParamStore,
    ids: &[ParamId],
    step: f64,
) -> Vec<Tensor> {
    assert!(step > 0.0, "finite difference step must be positive");
    let mut work = params.clone();
    ids.iter()
        .map(|&id| {
            let n = work.value(id).len();
            let mut g = Tensor::zeros(work.value(id).shape());
            for i in 0..n {
                g.data_mut()[i] = central_difference(&f, &mut work, id, i, step);
            }
            g
        })
        .collect()
}

fn central_difference(
    f: &impl Fn(&ParamStore) -> f64,
    work: &mut ParamStore,
    id: ParamId,
    i: usize,
    step: f64,
) -> f64 {
    let orig = work.value(id).data()[i];
    work.get_mut(id).value.data_mut()[i] = orig + step;
    let up = f(work);
    work.get_mut(id).value.data_mut()[i] = orig - step;
    let down = f(work);
    work.get_mut(id).value.data_mut()[i] = orig;
    (up - down) / (2.0 * step)
}

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Lower bound of the relative-error denominator, so gradients that
    /// are numerically zero are compared in absolute terms.
    pub denom_floor: f64,
    /// Check at most this many coordinates per parameter (evenly strided);
    /// `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    /// Test sentinel: negate the analytic gradient before comparing.
    pub flip_analytic_sign: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            denom_floor: 1e-6,
            max_coords_per_param: None,
            flip_analytic_sign: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err < self.rel_tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn coords_checked(&self) -> usize {
        self.params.iter().map(|p| p.coords).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_err >= self.rel_tol)
    }
}

/// Pins a closure to the higher-ranked signature expected by
/// [`check_gradients`], so its lifetimes are inferred correctly.
pub fn graph_fn<F>(f: F) -> F
where
    F: for<'g> Fn(&'g Graph<'g>) -> Result<Var<'g>>,
{
    f
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences, for every unfrozen parameter.
pub fn check_gradients<F>(build: F, params: &ParamStore, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph<'g>) -> Result<Var<'g>>,
{
    let graph = Graph::new(params);
    let loss = build(&graph)?;
    let grads = graph.backward(loss)?;
    drop(graph);

    let eval = |store: &ParamStore| -> f64 {
        let g = Graph::new(store);
        build(&g).map(|v| v.value().item()).unwrap_or(f64::NAN)
    };

    let mut work = params.clone();
    let mut out = Vec::new();
    for (id, p) in params.iter() {
        if p.frozen {
            continue;
        }
        let n = p.value.len();
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let coords: Vec<usize> = match cfg.max_coords_per_param {
            Some(m) if m < n => {
                let stride = n as f64 / m as f64;
                (0..m).map(|k| (k as f64 * stride) as usize).collect()
            }
            _ => (0..n).collect(),
        };
        let mut check = ParamCheck {
            name: p.name.clone(),
            coords: coords.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_coord: 0,
            analytic_at_worst: 0.0,
            numeric_at_worst: 0.0,
        };
        for &i in &coords {
            let mut a = analytic.data()[i];
            if cfg.flip_analytic_sign {
                a = -a;
            }
            let num = central_difference(&eval, &mut work, id, i, cfg.step);
            let rel = relative_error(a, num, cfg.denom_floor);
            let rel = if rel.is_nan() { f64::INFINITY } else { rel };
            check.max_abs_err = check.max_abs_err.max((a - num).abs());
            if rel > check.max_rel_err || (i == coords[0] && rel >= check.max_rel_err) {
                check.max_rel_err = rel;
                check.worst_coord = i;
                check.analytic_at_worst = a;
                check.numeric_at_worst = num;
            }
        }
        out.push(check);
    }
    Ok(GradCheckReport {
        params: out,
        rel_tol: cfg.rel_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::new(vec![1], vec![3.0]).unwrap()).unwrap();
        let f = |st: &ParamStore| st.value(x).data()[0].powi(2);
        let g = finite_diff_grad(f, &s, &[x], 1e-5);
        assert!((g[0].data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::from_fn(&[5], |i| i as f64)).unwrap();
        let g = finite_diff_grad(|_| 4.2, &s, &[x], 1e-5);
        assert!(g[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_sign_sentinel_fails() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::new(vec![2], vec![0.7, -1.3]).unwrap()).unwrap();
        let build = graph_fn(|g| Ok(g.param(x).square().sum()));
        let ok = check_gradients(build, &s, &GradCheckConfig::default()).unwrap();
        assert!(ok.passed(), "{ok:?}");
        let cfg = GradCheckConfig {
            flip_analytic_sign: true,
            ..Default::default()
        };
        let bad = check_gradients(build, &s, &cfg).unwrap();
        assert!(!bad.passed());
    }

    #[test]
    fn empty_store_passes_vacuously() {
        let s = ParamStore::new();
        let build = graph_fn(|g| Ok(g.constant(Tensor::scalar(1.0))));
        let r = check_gradients(build, &s, &GradCheckConfig::default()).unwrap();
        assert!(r.passed());
        assert_eq!(r.coords_checked(), 0);
    }
}
