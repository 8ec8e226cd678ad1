//! Dense arrays and a tape-based reverse-mode differentiation engine.

mod array;
pub mod gradcheck;
pub mod kernels;
mod tape;

pub use array::Array;
pub use kernels::ConvGeom;
pub use tape::{Broadcast, Gradients, Tape, Var};

use crate::error::Result;
use crate::scalar::Scalar;

fn unary<T: Scalar>(
    input: &Array<T>,
    f: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>,
) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let y = f(&mut tape, x)?;
    Ok(tape.value(y).clone())
}

/// Matrix product of two rank-2 arrays.
pub fn matmul<T: Scalar>(a: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let (x, y) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
    let z = tape.matmul(x, y)?;
    Ok(tape.value(z).clone())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(a: &Array<T>) -> Result<Array<T>> {
    unary(a, |t, x| t.softmax_rows(x))
}

/// Depthwise convolution of a `[height*width, channels]` map.
pub fn dwconv<T: Scalar>(x: &Array<T>, kernel: &Array<T>, geom: ConvGeom) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let (xv, kv) = (tape.leaf(x.clone()), tape.leaf(kernel.clone()));
    let y = tape.dwconv(xv, kv, geom)?;
    Ok(tape.value(y).clone())
}

/// Pointwise convolution `x·w + b`.
pub fn pwconv<T: Scalar>(x: &Array<T>, w: &Array<T>, b: &Array<T>) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(w.clone()), tape.leaf(b.clone()));
    let y = tape.pwconv(xv, wv, bv)?;
    Ok(tape.value(y).clone())
}
