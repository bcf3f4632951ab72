//! The configuration text embedded in every checkpoint: enough to rebuild
//! the model, its vocabulary and, for task checkpoints, the label space and
//! routing used at inference.

use crate::config::{parse_routing, routing_name, ConfigError, Ini};
use mixda_core::data::Vocab;
use mixda_core::model::{ModelConfig, RoutingMode};
use mixda_core::training::LabelSpace;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub labels: Option<LabelSpace>,
    pub routing: Option<RoutingMode>,
}

impl Snapshot {
    pub fn to_text(&self) -> String {
        let mut s = String::from("[model]\n");
        for (k, v) in self.model.to_canonical_lines() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        if let Some(r) = &self.routing {
            s.push_str(&format!("[routing]\nmode = {}\n", routing_name(r)));
        }
        match &self.labels {
            Some(LabelSpace::Classes(c)) => {
                s.push_str("[labels]\nkind = classes\n");
                for (i, l) in c.iter().enumerate() {
                    s.push_str(&format!("{i} = {l}\n"));
                }
            }
            Some(LabelSpace::Regression) => s.push_str("[labels]\nkind = regression\n"),
            None => {}
        }
        s.push_str(&format!("[vocab]\ntokens = {}\n", self.vocab.tokens().join(" ")));
        s
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        let mut ini = Ini::parse(text)?;
        let mut model = ModelConfig::default();
        for (k, v) in ini
            .sections
            .remove("model")
            .ok_or_else(|| invalid("snapshot has no [model]".into()))?
        {
            model.set_key(&k, &v).map_err(|e| invalid(e.to_string()))?;
        }
        let mut vocab_sec = ini
            .sections
            .remove("vocab")
            .ok_or_else(|| invalid("snapshot has no [vocab]".into()))?;
        let tokens = vocab_sec
            .remove("tokens")
            .ok_or_else(|| invalid("snapshot has no vocab tokens".into()))?;
        let vocab =
            Vocab::from_tokens(tokens.split(' ').map(str::to_string).collect()).map_err(|e| invalid(e.to_string()))?;
        if vocab.len() != model.vocab_size {
            return Err(invalid(format!(
                "vocabulary has {} tokens, model expects {}",
                vocab.len(),
                model.vocab_size
            )));
        }
        let routing = match ini.sections.remove("routing") {
            Some(mut r) => {
                let m = r.remove("mode").unwrap_or_default();
                Some(parse_routing(&m).ok_or_else(|| invalid(format!("unknown routing {m:?}")))?)
            }
            None => None,
        };
        let labels = match ini.sections.remove("labels") {
            Some(mut l) => match l.remove("kind").as_deref() {
                Some("regression") => Some(LabelSpace::Regression),
                Some("classes") => {
                    let mut indexed: Vec<(usize, String)> = l
                        .into_iter()
                        .map(|(k, v)| {
                            k.parse()
                                .map(|i| (i, v))
                                .map_err(|_| invalid(format!("bad label index {k:?}")))
                        })
                        .collect::<Result<_, _>>()?;
                    indexed.sort();
                    if indexed.iter().enumerate().any(|(i, (j, _))| i != *j) {
                        return Err(invalid("label indices are not 0..C".into()));
                    }
                    Some(LabelSpace::Classes(indexed.into_iter().map(|x| x.1).collect()))
                }
                other => return Err(invalid(format!("unknown label kind {other:?}"))),
            },
            None => None,
        };
        model.validate().map_err(|e| invalid(e.to_string()))?;
        if let Some(l) = &labels {
            if l.task_kind() != model.task {
                return Err(invalid(format!(
                    "label space {:?} does not match task {:?}",
                    l.task_kind(),
                    model.task
                )));
            }
        }
        Ok(Self {
            model,
            vocab,
            labels,
            routing,
        })
    }
}
