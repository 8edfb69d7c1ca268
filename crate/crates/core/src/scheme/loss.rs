use crate::error::{invalid, numeric, Result};
use crate::nn::{Tape, Tensor, Var};

/// `Ψ = u_next + g · ΔB` for `u_next: [B, k]`, `g: [B, k, l]`, `ΔB: [l]`.
pub fn predictor(u_next: &[f64], g_val: &[f64], db: &[f64], k: usize) -> Result<Vec<f64>> {
    let l = db.len();
    if k == 0 || !u_next.len().is_multiple_of(k) || g_val.len() != u_next.len() * l {
        return Err(invalid(format!(
            "predictor shapes disagree: u_next {}, g {}, ΔB {l}, k = {k}",
            u_next.len(),
            g_val.len()
        )));
    }
    let mut psi = u_next.to_vec();
    for (p, g) in psi.iter_mut().zip(g_val.chunks_exact(l)) {
        *p += g.iter().zip(db).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(psi)
}

/// Mean over the batch of `|Ψ - v·ΔW + f Δt - u|²`, recorded on the tape of
/// its arguments. `v` is `[B, k·d]`, `dw` is `[B, d]`.
pub fn step_loss<'t>(
    psi: Var<'t>,
    u: Var<'t>,
    v: Var<'t>,
    f_val: Var<'t>,
    dt: f64,
    dw: Var<'t>,
    k: usize,
) -> Var<'t> {
    let residual = psi - v.contract_rows(dw, k) + f_val.scale(dt) - u;
    residual.mean_squared_norm()
}

/// [`step_loss`] on plain arrays.
#[allow(clippy::too_many_arguments)]
pub fn step_loss_value(
    psi: &[f64],
    u: &[f64],
    v: &[f64],
    f_val: &[f64],
    dt: f64,
    dw: &[f64],
    k: usize,
    d: usize,
) -> Result<f64> {
    let rows = psi.len() / k.max(1);
    if k == 0
        || d == 0
        || rows == 0
        || psi.len() != rows * k
        || u.len() != rows * k
        || f_val.len() != rows * k
        || v.len() != rows * k * d
        || dw.len() != rows * d
    {
        return Err(invalid("step loss arguments have inconsistent shapes"));
    }
    let tape = Tape::new();
    let c = |data: &[f64], cols: usize| tape.constant(Tensor::from_parts(vec![rows, cols], data.to_vec()));
    let loss = step_loss(c(psi, k), c(u, k), c(v, k * d), c(f_val, k), dt, c(dw, d), k).item();
    if !loss.is_finite() {
        return Err(numeric("step loss residual", None));
    }
    Ok(loss)
}
