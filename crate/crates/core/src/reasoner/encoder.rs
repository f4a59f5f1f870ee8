use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct QuestionEncoding {
    /// `[S, 2H]`, row `s` = `[→h_s ; ←h_s]` of the last layer.
    pub h: NodeId,
    /// `c^1 = [→h_S ; ←h_1]`, `[1, 2H]`.
    pub context: NodeId,
    pub len: usize,
}

fn direction<T: Scalar>(g: &mut Graph<T>, x: NodeId, name: &str, hidden: usize, reverse: bool) -> Result<Vec<NodeId>> {
    let s = g.shape(x)[0];
    let pre = g.linear(x, name)?;
    let rec = g.param(&format!("{name}_rec.w"))?;
    let mut h = g.input(Tensor::zeros(&[1, hidden]))?;
    let mut c = g.input(Tensor::zeros(&[1, hidden]))?;
    let mut out = vec![h; s];
    let order: Vec<usize> = if reverse { (0..s).rev().collect() } else { (0..s).collect() };
    for t in order {
        let xt = g.gather_rows(pre, &[t])?;
        let ht = g.matmul(h, rec)?;
        let gates = g.add(xt, ht)?;
        let hc = g.lstm_cell(gates, c)?;
        h = g.slice_cols(hc, 0, hidden)?;
        c = g.slice_cols(hc, hidden, hidden)?;
        out[t] = h;
    }
    Ok(out)
}

/// Stacked bidirectional LSTM over `words` (`[S, d_v]`), with dropout
/// between layers in training mode.
pub fn encode_question<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, words: Tensor<T>) -> Result<QuestionEncoding> {
    let shape = words.shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.word_dim {
        return Err(Error::ShapeMismatch {
            op: "encode_question",
            left: shape,
            right: vec![0, cfg.word_dim],
        });
    }
    let s = shape[0];
    let hidden = cfg.lstm_hidden;
    let mut x = g.input(words)?;
    let mut last = (Vec::new(), Vec::new());
    for l in 0..cfg.lstm_layers {
        if l > 0 {
            x = g.dropout(x, cfg.dropout)?;
        }
        let fw = direction(g, x, &format!("lstm{l}_fw"), hidden, false)?;
        let bw = direction(g, x, &format!("lstm{l}_bw"), hidden, true)?;
        let f = g.concat(&fw, 0)?;
        let b = g.concat(&bw, 0)?;
        x = g.concat(&[f, b], 1)?;
        last = (fw, bw);
    }
    let context = g.concat(&[last.0[s - 1], last.1[0]], 1)?;
    Ok(QuestionEncoding { h: x, context, len: s })
}
