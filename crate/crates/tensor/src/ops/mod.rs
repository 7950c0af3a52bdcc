pub(crate) mod attention;
pub mod conv;
pub(crate) mod elementwise;
pub(crate) mod linalg;
pub mod norm;
pub(crate) mod softmax;
pub(crate) mod structural;

use crate::graph::{Node, Op};

pub(crate) fn backward(nodes: &[Node<'_>], i: usize, g: &[f64], grads: &mut [Vec<f64>]) {
    match nodes[i].op {
        Op::Leaf => {}
        Op::MatMul { .. } | Op::AddRow { .. } => linalg::backward(nodes, i, g, grads),
        Op::SoftmaxRows { .. } => softmax::backward(nodes, i, g, grads),
        Op::LayerNorm { .. } | Op::BatchNorm { .. } => norm::backward(nodes, i, g, grads),
        Op::Attention { .. } => attention::backward(nodes, i, g, grads),
        Op::Conv2d { .. } => conv::backward(nodes, i, g, grads),
        Op::Reshape { .. }
        | Op::Gather { .. }
        | Op::ConcatRows { .. }
        | Op::ConcatCols { .. }
        | Op::SliceRows { .. }
        | Op::MeanRows { .. }
        | Op::TileRows { .. } => structural::backward(nodes, i, g, grads),
        _ => elementwise::backward(nodes, i, g, grads),
    }
}
