use super::params::{Init, ParamId, ParameterStore};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Creates parameters under a name prefix, optionally tying them to a
/// different canonical prefix.
///
/// With `alias_prefix = "task1/enc/layer3"` and
/// `canonical_prefix = "shared/enc/layer3"`, `param("W_z", ..)` creates (or
/// reuses) `shared/enc/layer3/W_z` and registers `task1/enc/layer3/W_z` as an
/// alias of it.
pub struct ParamScope<'a> {
    store: &'a mut ParameterStore,
    rng: &'a mut Rng,
    alias_prefix: String,
    canonical_prefix: String,
}

impl<'a> ParamScope<'a> {
    pub fn new(store: &'a mut ParameterStore, rng: &'a mut Rng, prefix: &str) -> Self {
        Self {
            store,
            rng,
            alias_prefix: prefix.to_string(),
            canonical_prefix: prefix.to_string(),
        }
    }

    pub fn tied(store: &'a mut ParameterStore, rng: &'a mut Rng, alias_prefix: &str, canonical_prefix: &str) -> Self {
        Self {
            store,
            rng,
            alias_prefix: alias_prefix.to_string(),
            canonical_prefix: canonical_prefix.to_string(),
        }
    }

    pub fn child(&mut self, segment: &str) -> ParamScope<'_> {
        ParamScope {
            store: self.store,
            rng: self.rng,
            alias_prefix: join(&self.alias_prefix, segment),
            canonical_prefix: join(&self.canonical_prefix, segment),
        }
    }

    pub fn prefix(&self) -> &str {
        &self.alias_prefix
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        let canonical = join(&self.canonical_prefix, name);
        let alias = join(&self.alias_prefix, name);
        let id = match self.store.canonical_id(&canonical) {
            Some(id) => {
                let existing = self.store.value(id).shape();
                if existing != shape {
                    return Err(Error::config(format!(
                        "tied parameter `{canonical}` has shape {existing:?}, requested {shape:?}"
                    )));
                }
                id
            }
            None => self.store.insert_init(&canonical, shape, init, self.rng)?,
        };
        if alias != canonical {
            self.store.alias(&alias, &canonical)?;
        }
        Ok(id)
    }
}

fn join(prefix: &str, segment: &str) -> String {
    if prefix.is_empty() {
        segment.to_string()
    } else {
        format!("{prefix}/{segment}")
    }
}
