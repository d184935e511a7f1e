use crate::error::{arg_err, Result};

use super::{Graph, Tensor, Var};

fn scalar_output(g: &Graph<f64>, out: Var) -> Result<f64> {
    let v = g.value(out);
    if v.numel() != 1 {
        return arg_err(format!(
            "gradcheck needs a scalar-valued function, got shape {:?}",
            v.shape()
        ));
    }
    Ok(v.data()[0])
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-12)
}

const WIDER_STEPS: [f64; 2] = [10.0, 100.0];

/// Fourth-order central difference.
fn stencil(at: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (p1, m1) = (at(h)?, at(-h)?);
    let (p2, m2) = (at(2.0 * h)?, at(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Compares reverse-mode gradients of a scalar function against finite
/// differences, for every coordinate of every input.
///
/// Each coordinate is estimated with the fourth-order central stencil at
/// `step`. Entries many orders of magnitude below the function value drown
/// in rounding at small steps, so a coordinate whose error reaches
/// `tolerance` is also estimated at 10x and 100x the step, and the closest
/// estimate counts.
///
/// Returns, per input, the maximum over coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn gradcheck_vars<F>(f: F, inputs: &[Tensor<f64>], step: f64, tolerance: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), true)).collect();
    let out = f(&mut g, &vars)?;
    scalar_output(&g, out)?;
    g.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, x)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|x| g.leaf(x.clone(), false)).collect();
        let out = f(&mut g, &vars)?;
        scalar_output(&g, out)
    };

    let mut worst = Vec::with_capacity(inputs.len());
    let mut current: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, x) in inputs.iter().enumerate() {
        let mut max_err = 0.0f64;
        let mut buf = x.to_vec();
        for i in 0..buf.len() {
            let orig = buf[i];
            let mut at = |offset: f64| -> Result<f64> {
                buf[i] = orig + offset;
                current[k] = Tensor::new(x.shape(), buf.clone())?;
                eval(&current)
            };
            let a = analytic[k].data()[i];
            let mut err = rel_err(a, stencil(&mut at, step)?);
            for wider in WIDER_STEPS {
                if err < tolerance {
                    break;
                }
                err = err.min(rel_err(a, stencil(&mut at, wider * step)?));
            }
            buf[i] = orig;
            max_err = max_err.max(err);
        }
        current[k] = x.clone();
        worst.push(max_err);
    }
    Ok(worst)
}

/// Single-input form of [`gradcheck_vars`].
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, step: f64, tolerance: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let errs = gradcheck_vars(|g, vars| f(g, vars[0]), std::slice::from_ref(x), step, tolerance)?;
    Ok(errs[0])
}
