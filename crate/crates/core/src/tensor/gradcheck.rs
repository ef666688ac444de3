use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Fault, Graph, ParamStore, TensorError, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Relative error with the `1e-8` floor on the denominator.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences with step `eps`.
///
/// `max_per_param` limits how many coordinates of each parameter tensor are
/// perturbed (sampled with `seed`); `None` checks every coordinate. `fault`
/// corrupts a backward rule on the analytic pass only.
pub fn finite_diff_check<F>(
    params: &ParamStore<f64>,
    eps: f64,
    max_per_param: Option<usize>,
    seed: u64,
    fault: Option<Fault>,
    loss_fn: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, TensorError>,
{
    let analytic = {
        let mut g = Graph::new(params);
        if let Some(f) = fault {
            g = g.with_fault(f);
        }
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?;
        g.param_grads()
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates_checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.get(id).len();
        let coords: Vec<usize> = match max_per_param {
            Some(k) if k < n => {
                let mut v = sample(&mut rng, n, k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for idx in coords {
            let original = params.get(id).data()[idx];
            work.get_mut(id).data_mut()[idx] = original + eps;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[idx] = original - eps;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[idx] = original;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g[idx]);
            let err = relative_error(a, numeric);
            report.coordinates_checked += 1;
            if err > report.max_rel_error || report.worst_param.is_none() {
                report.max_rel_error = err;
                report.worst_param = Some(params.name(id).to_string());
                report.worst_index = idx;
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
