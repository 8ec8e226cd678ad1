//! Central finite-difference oracle for tape gradients.

use crate::error::Result;
use crate::tensor::{Array, Tape, Var};

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Norm-wise relative error per input: `|a - n| / max(|a|, |n|)`.
    pub per_input: Vec<f64>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Relative error between two gradient vectors, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Check every input of a scalar-valued graph.
///
/// `build` records the graph on a fresh tape given leaf handles for
/// `inputs` (in order) and returns the scalar loss node. It is invoked once
/// for the analytic pass and twice per input element for the numeric pass.
pub fn check_gradients<F>(inputs: &[Array<f64>], eps: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Array<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|a| tape.leaf(a.clone())).collect();
        let loss = build(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(inputs)?;
    let grads = tape.backward(loss)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + eps;
            let (t, _, l) = eval(&probe)?;
            let plus = t.value(l).data()[0];
            probe[i].data_mut()[j] = orig - eps;
            let (t, _, l) = eval(&probe)?;
            let minus = t.value(l).data()[0];
            probe[i].data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * eps);
        }
        per_input.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { per_input })
}
