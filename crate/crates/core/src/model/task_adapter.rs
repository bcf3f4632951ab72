//! Task adapters: residual bottlenecks inserted into every block.

use super::{ModelError, Result};
use crate::registry::Registry;
use crate::tensor::{ParameterStore, Tape, Tensor};
use std::sync::{Arc, LazyLock};

/// Insertion point of a task adapter inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdapterSite {
    /// On the attention sublayer output, before its residual add.
    Attention,
    /// On the (possibly gated) FFN sublayer output, before its residual add.
    Ffn,
}

impl AdapterSite {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterSite::Attention => "attn",
            AdapterSite::Ffn => "ffn",
        }
    }
}

pub trait TaskAdapterStyle: Send + Sync {
    fn name(&self) -> &'static str;
    fn sites(&self) -> &'static [AdapterSite];
}

/// One adapter per block, after the FFN sublayer.
pub struct Pfeiffer;

impl TaskAdapterStyle for Pfeiffer {
    fn name(&self) -> &'static str {
        "pfeiffer"
    }
    fn sites(&self) -> &'static [AdapterSite] {
        &[AdapterSite::Ffn]
    }
}

/// Two adapters per block, after attention and after the FFN.
pub struct Houlsby;

impl TaskAdapterStyle for Houlsby {
    fn name(&self) -> &'static str {
        "houlsby"
    }
    fn sites(&self) -> &'static [AdapterSite] {
        &[AdapterSite::Attention, AdapterSite::Ffn]
    }
}

static STYLES: LazyLock<Registry<dyn TaskAdapterStyle>> = LazyLock::new(|| {
    let mut r: Registry<dyn TaskAdapterStyle> = Registry::new("task adapter style");
    r.register("pfeiffer", Arc::new(Pfeiffer));
    r.register("houlsby", Arc::new(Houlsby));
    r
});

pub fn styles() -> &'static Registry<dyn TaskAdapterStyle> {
    &STYLES
}

/// Applies the task adapter of `style` at `site` in `layer`, if that style
/// places one there: `x + up(relu(down(x)))`.
pub fn task_adapter_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    style: &dyn TaskAdapterStyle,
    layer: usize,
    site: AdapterSite,
    x: Tensor,
) -> Result<Tensor> {
    if !style.sites().contains(&site) {
        return Ok(x);
    }
    let p = format!("layer.{layer}.task_adapter.{}", site.as_str());
    if !store.contains(&format!("{p}.down.weight")) {
        return Err(ModelError::Config(format!(
            "{} task adapter parameters missing for {p}",
            style.name()
        )));
    }
    let dw = tape.param(store, &format!("{p}.down.weight"))?;
    let db = tape.param(store, &format!("{p}.down.bias"))?;
    let uw = tape.param(store, &format!("{p}.up.weight"))?;
    let ub = tape.param(store, &format!("{p}.up.bias"))?;
    let h = tape.linear(x, dw, Some(db))?;
    let h = tape.relu(h);
    let h = tape.linear(h, uw, Some(ub))?;
    Ok(tape.add(x, h)?)
}
