use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Per-parameter outcome of [`gradcheck`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// `‖ad − fd‖ / (‖ad‖ + ‖fd‖)` for each parameter tensor, in input order.
    pub per_param: Vec<f64>,
    /// `(param index, flat coordinate)` of the largest absolute mismatch.
    pub worst: (usize, usize),
    /// Largest entry-wise [`relative_error`].
    pub max_entry_error: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.iter().copied().fold(0.0, f64::max)
    }
}

/// `|a - b| / max(1e-8, |a| + |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn eval<F>(f: &F, params: &[Tensor<f64>]) -> Result<(f64, Graph<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::Shape {
            op: "gradcheck (loss must be scalar)",
            lhs: v.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((v.item(), g, vars, loss))
}

/// Compares reverse-mode gradients of the scalar function `f` against
/// fourth-order central differences with step `eps`, coordinate by
/// coordinate.
pub fn gradcheck<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let (f0, g, vars, loss) = eval(&f, params)?;
    if !f0.is_finite() {
        return Err(Error::Numerical(format!("gradcheck: loss is {f0} at the base point")));
    }
    let grads = g.backward(loss)?;
    let mut per_param = vec![0.0; params.len()];
    let mut worst = (0, 0);
    let mut worst_abs = -1.0;
    let mut max_entry_error: f64 = 0.0;
    let mut probe = params.to_vec();
    for (pi, &v) in vars.iter().enumerate() {
        let ad = grads.get(v);
        let (mut dd, mut aa, mut ff) = (0.0, 0.0, 0.0);
        for k in 0..params[pi].len() {
            let x0 = params[pi].data()[k];
            let mut at = |d: f64| -> Result<f64> {
                probe[pi].data_mut()[k] = x0 + d;
                let (v, ..) = eval(&f, &probe)?;
                if !v.is_finite() {
                    return Err(Error::Numerical(format!(
                        "gradcheck: non-finite loss perturbing param {pi} coordinate {k}"
                    )));
                }
                Ok(v)
            };
            let (f2, f1, m1, m2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            probe[pi].data_mut()[k] = x0;
            let fd = (m2 - f2 + 8.0 * (f1 - m1)) / (12.0 * eps);
            let a = ad.data()[k];
            dd += (a - fd) * (a - fd);
            aa += a * a;
            ff += fd * fd;
            max_entry_error = max_entry_error.max(relative_error(a, fd));
            if (a - fd).abs() > worst_abs {
                worst_abs = (a - fd).abs();
                worst = (pi, k);
            }
        }
        per_param[pi] = if dd == 0.0 { 0.0 } else { dd.sqrt() / (aa.sqrt() + ff.sqrt()) };
    }
    Ok(GradcheckReport { per_param, worst, max_entry_error })
}
