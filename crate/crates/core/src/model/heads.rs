use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::scalar::Scalar;
use crate::tensor::{Array, Tape, Var};

/// Permutation logits `W_p z + b_p` reshaped to `[N, N]`.
pub fn perm_logits<T: Scalar>(tape: &mut Tape<T>, z: Var, w: Var, b: Var, n: usize) -> Result<Var> {
    let width = tape.value(w).cols();
    if width != n * n {
        return Err(Error::shape(
            "perm_head",
            format!("head is sized for {width} logits, {n} segments need {}", n * n),
        ));
    }
    let flat = tape.matmul(z, w)?;
    let flat = tape.add(flat, b)?;
    tape.reshape(flat, &[n, n])
}

/// Row-stochastic `P = softmax(W_p z + b_p)`. Row `i` scores the position in
/// the shuffled input that holds original segment `i`.
pub fn perm_head<T: Scalar>(tape: &mut Tape<T>, z: Var, w: Var, b: Var, n: usize) -> Result<Var> {
    let logits = perm_logits(tape, z, w, b, n)?;
    tape.softmax_rows(logits)
}

/// Cross-entropy of the restoring permutation, `-(1/N) Σ log P[i, π⁻¹(i)]`,
/// computed from logits through a stable log-softmax.
pub fn perm_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, true_inverse: &Permutation) -> Result<Var> {
    let logp = tape.log_softmax_rows(logits)?;
    tape.nll(logp, true_inverse.as_slice())
}

/// Two-layer perceptron `relu(z·W₁ + b₁)·W₂ + b₂`: `[1,d] -> [1,1]`.
pub fn regression_forward<T: Scalar>(
    tape: &mut Tape<T>,
    z: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<Var> {
    let h = tape.matmul(z, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.relu(h)?;
    let y = tape.matmul(h, w2)?;
    tape.add(y, b2)
}

/// Squared error against a constant target: `[1,1]`.
pub fn squared_error<T: Scalar>(tape: &mut Tape<T>, prediction: Var, target: T) -> Result<Var> {
    let t = tape.leaf(Array::scalar(target));
    let d = tape.sub(prediction, t)?;
    tape.mul(d, d)
}

/// `L = −(1/N) Σᵢ log P[i, π⁻¹(i)]` on an explicit probability matrix, with
/// probabilities clamped at `1e-12` before the logarithm.
pub fn pretext_loss<T: Scalar>(p: &Array<T>, true_inverse: &Permutation) -> Result<f64> {
    let (rows, cols) = p.dims2()?;
    let n = true_inverse.len();
    if rows != n || cols != n {
        return Err(Error::shape(
            "pretext_loss",
            format!("P is [{rows}, {cols}] but the permutation has {n} segments"),
        ));
    }
    let total: f64 = true_inverse
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, &j)| p.at(i, j).to_f64_lossy().max(1e-12).ln())
        .sum();
    Ok(-total / n as f64)
}

/// Per-row argmax (lowest column wins ties). May repeat columns.
pub fn argmax_decode<T: Scalar>(p: &Array<T>) -> Result<Vec<usize>> {
    let (rows, _) = p.dims2()?;
    Ok((0..rows)
        .map(|r| {
            let row = p.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Greedy assignment: repeatedly take the largest remaining entry whose row
/// and column are both unused. Always a bijection. Ties go to the lowest
/// row, then the lowest column.
pub fn greedy_decode<T: Scalar>(p: &Array<T>) -> Result<Permutation> {
    let (rows, cols) = p.dims2()?;
    if rows != cols {
        return Err(Error::shape("greedy_decode", format!("P is [{rows}, {cols}], not square")));
    }
    let mut order: Vec<(usize, usize)> =
        (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
    order.sort_by(|&(i1, j1), &(i2, j2)| {
        p.at(i2, j2).partial_cmp(&p.at(i1, j1)).unwrap_or(std::cmp::Ordering::Equal).then((i1, j1).cmp(&(i2, j2)))
    });
    let mut map = vec![usize::MAX; rows];
    let mut used = vec![false; cols];
    let mut left = rows;
    for (i, j) in order {
        if map[i] == usize::MAX && !used[j] {
            map[i] = j;
            used[j] = true;
            left -= 1;
            if left == 0 {
                break;
            }
        }
    }
    Permutation::new(map)
}
