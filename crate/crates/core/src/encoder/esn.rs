use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParameterRegistry};
use crate::tensor::{Graph, Tensor, Var};

/// Two fixed reservoirs (forward and backward), each `h_t = tanh(W_in u_t + W_rec h_{t−1})`.
#[derive(Debug, Clone, Copy)]
pub struct EsnParams {
    pub fwd_in: ParamId,
    pub fwd_rec: ParamId,
    pub bwd_in: ParamId,
    pub bwd_rec: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(t: &Tensor) -> f64 {
    let n = t.rows();
    let m = DMatrix::from_row_slice(n, n, t.data());
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn reservoir(g: &mut Graph, w_in: Var, w_rec: Var, inputs: &[Var], reverse: bool, hidden: usize) -> Result<Vec<Var>> {
    let mut h = g.constant(Tensor::zeros(&[hidden]));
    let mut out = vec![h; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        let a = g.matvec(w_in, inputs[t])?;
        let b = g.matvec(w_rec, h)?;
        let pre = g.add(a, b)?;
        h = g.tanh(pre);
        out[t] = h;
    }
    Ok(out)
}

/// Runs both reservoirs over `inputs: [M × input_dim]`; returns states `[M × 2d]` and the
/// final state `concat(h_fwd[M], h_bwd[1])`.
pub fn esn_run(g: &mut Graph, reg: &ParameterRegistry, p: &EsnParams, inputs: Var) -> Result<(Var, Var)> {
    let shape = g.value(inputs).shape().to_vec();
    if shape.len() != 2 || shape[1] != p.input_dim {
        return Err(Error::Dimension {
            op: "esn_run",
            left: shape,
            right: vec![p.input_dim],
        });
    }
    let m = shape[0];
    let rows: Vec<Var> = (0..m).map(|t| g.row(inputs, t)).collect::<Result<_>>()?;
    let (fi, fr, bi, br) = (
        g.param(reg, p.fwd_in),
        g.param(reg, p.fwd_rec),
        g.param(reg, p.bwd_in),
        g.param(reg, p.bwd_rec),
    );
    let hf = reservoir(g, fi, fr, &rows, false, p.hidden)?;
    let hb = reservoir(g, bi, br, &rows, true, p.hidden)?;
    let steps: Vec<Var> = (0..m).map(|t| g.concat(&[hf[t], hb[t]])).collect();
    let states = g.stack_rows(&steps)?;
    let final_state = g.concat(&[hf[m - 1], hb[0]]);
    Ok((states, final_state))
}
