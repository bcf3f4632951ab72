use super::Result;
use crate::tensor::{ParameterStore, Tape, Tensor};

/// `up(relu(down(x) + b_down)) + b_up` for the adapter under `prefix`.
pub fn domain_adapter_forward(tape: &mut Tape, store: &ParameterStore, prefix: &str, x: Tensor) -> Result<Tensor> {
    let down_w = tape.param(store, &format!("{prefix}.down.weight"))?;
    let down_b = tape.param(store, &format!("{prefix}.down.bias"))?;
    let up_w = tape.param(store, &format!("{prefix}.up.weight"))?;
    let up_b = tape.param(store, &format!("{prefix}.up.bias"))?;
    let h = tape.linear(x, down_w, Some(down_b))?;
    let h = tape.relu(h);
    Ok(tape.linear(h, up_w, Some(up_b))?)
}
