//! Central finite differences for verifying analytic gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, or 0 if both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for each coordinate `i` in `coords`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Compare backward against central differences for every coordinate of
/// every input of `build`. Returns one relative error per input.
pub fn check_inputs(
    build: impl Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
    inputs: &[(Vec<usize>, Vec<f64>)],
    h: f64,
) -> Result<Vec<f64>> {
    let eval = |vals: &[Vec<f64>]| -> Result<f64> {
        let mut g = Graph::inference();
        let vars = inputs
            .iter()
            .zip(vals)
            .map(|((shape, _), v)| g.constant(shape, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = build(&mut g, &vars)?;
        Ok(g.scalar(out))
    };
    let mut g = Graph::new();
    let vars = inputs.iter().map(|(s, v)| g.input(s, v.clone())).collect::<Result<Vec<_>>>()?;
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let mut errors = Vec::with_capacity(inputs.len());
    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    for (k, &var) in vars.iter().enumerate() {
        let n = base[k].len();
        let analytic = g.grad(var).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let coords: Vec<usize> = (0..n).collect();
        let mut failure = None;
        let numeric = central_difference(
            |x| {
                let mut vals = base.clone();
                vals[k] = x.to_vec();
                eval(&vals).unwrap_or_else(|e| {
                    failure = Some(e);
                    f64::NAN
                })
            },
            &base[k],
            &coords,
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(errors)
}
