use serde::Serialize;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Outcome of comparing an analytic gradient to central differences.
#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_index: usize,
    /// Coordinates that entered the relative-error maximum.
    pub n_compared: usize,
    pub n_params: usize,
}

impl GradReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err <= rel_tol
    }
}

/// Coordinates where both gradients are this small are skipped for the
/// relative error.
pub const REL_FLOOR: f64 = 1e-8;

/// Evaluates `f` on a fresh tape and returns its value together with the
/// gradient with respect to `params`.
pub fn eval_with_grad<F>(f: F, params: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    eval_on(Graph::new(), &f, params)
}

/// As [`eval_with_grad`] but on a relaxed tape (straight-through nodes
/// forward their surrogates).
pub fn eval_with_grad_relaxed<F>(f: F, params: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    eval_on(Graph::relaxed(), &f, params)
}

fn eval_on<F>(mut g: Graph, f: &F, params: &Tensor) -> Result<(f64, Tensor)>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let p = g.param(params.clone());
    let out = f(&mut g, p)?;
    g.check_finite(out, "objective")?;
    let grads = g.backward(out);
    let grad = grads
        .get(p)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(params.shape()));
    if !grad.all_finite() {
        return Err(Error::NonFinite {
            term: "gradient".into(),
        });
    }
    Ok((g.scalar(out), grad))
}

fn value_relaxed<F>(f: &F, params: &Tensor) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::relaxed();
    let p = g.param(params.clone());
    let out = f(&mut g, p)?;
    Ok(g.scalar(out))
}

/// Central-difference check of the analytic gradient of `f` at `params`.
///
/// Both sides run on relaxed tapes so that the function being differenced
/// is the smooth one whose gradient the backward rules describe.
pub fn grad_check<F>(f: F, params: &Tensor, eps: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside (0, 1e-2]")));
    }
    let (_, analytic) = eval_with_grad_relaxed(&f, params)?;
    let mut report = GradReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_index: 0,
        n_compared: 0,
        n_params: params.len(),
    };
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.data()[i];
        probe.data_mut()[i] = x + eps;
        let fp = value_relaxed(&f, &probe)?;
        probe.data_mut()[i] = x - eps;
        let fm = value_relaxed(&f, &probe)?;
        probe.data_mut()[i] = x;
        let fd = (fp - fm) / (2.0 * eps);
        let a = analytic.data()[i];
        let abs = (a - fd).abs();
        report.max_abs_err = report.max_abs_err.max(abs);
        if a.abs() + fd.abs() > REL_FLOOR {
            report.n_compared += 1;
            let rel = abs / a.abs().max(fd.abs());
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_exact_unit_gradient() {
        let p = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let r = grad_check(|g, p| Ok(g.sum(p)), &p, 1.0 / 1024.0).unwrap();
        assert_eq!(r.max_abs_err, 0.0);
    }

    #[test]
    fn squared_norm_matches_fd() {
        let p = Tensor::vector(vec![1.0, 2.0]);
        let (v, grad) = eval_with_grad(
            |g, p| {
                let s = g.square(p);
                Ok(g.sum(s))
            },
            &p,
        )
        .unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(grad.data(), &[2.0, 4.0]);
        let r = grad_check(
            |g, p| {
                let s = g.square(p);
                Ok(g.sum(s))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-9, "{r:?}");
    }

    #[test]
    fn rejects_bad_eps() {
        let p = Tensor::scalar(1.0);
        assert!(grad_check(|g, p| Ok(g.sum(p)), &p, 0.0).is_err());
        assert!(grad_check(|g, p| Ok(g.sum(p)), &p, 0.1).is_err());
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let p = Tensor::scalar(1000.0);
        let err = eval_with_grad(|g, p| Ok(g.exp(p)), &p).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
