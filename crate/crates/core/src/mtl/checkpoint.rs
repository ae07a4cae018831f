use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::{build_with_rng, MultiTaskModel, SharingPlan};
use crate::adversarial::{DiscriminatorDims, RepLayers, TaskDiscriminator};
use crate::autodiff::ParameterStore;
use crate::error::{Error, Result};
use crate::rng;
use crate::seq2seq::{ModelDims, Seq2SeqModel};

const CHECKPOINT_MAGIC: &[u8; 8] = b"DSCKPT\0\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorMeta {
    pub dims: DiscriminatorDims,
    pub layers: RepLayers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub plan: SharingPlan,
    pub dims: Vec<ModelDims>,
    pub task_names: Vec<String>,
    pub learning_rates: Vec<f64>,
    pub best_dev: Vec<Option<f64>>,
    pub epoch: usize,
    pub step: u64,
    pub seed: u64,
    pub discriminator: Option<DiscriminatorMeta>,
    pub config_hash: Option<String>,
    pub config_text: Option<String>,
}

/// Parameters, optimizer state and everything needed to rebuild the models.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub store: ParameterStore,
}

pub struct Restored {
    pub model: MultiTaskModel,
    pub discriminator: Option<(TaskDiscriminator, RepLayers)>,
}

impl Checkpoint {
    /// Writes the layout described in `docs/formats.md`: magic, version,
    /// length-prefixed JSON metadata, the parameter container and the
    /// optimizer section.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        self.store.write_to(w)?;
        self.store.write_optimizer_to(w)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let mut buf4 = [0u8; 4];
        r.read_exact(&mut buf4)?;
        let version = u32::from_le_bytes(buf4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let len = u64::from_le_bytes(buf8) as usize;
        let mut meta = vec![0u8; len];
        r.read_exact(&mut meta)
            .map_err(|e| Error::Checkpoint(format!("truncated metadata: {e}")))?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut store = ParameterStore::read_from(r).map_err(as_checkpoint)?;
        store.read_optimizer_from(r).map_err(as_checkpoint)?;
        Ok(Self { meta, store })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::read_from(&mut BufReader::new(f))
    }

    /// Rebuilds the model structure described by the metadata and checks that
    /// the stored parameters fit it exactly.
    pub fn restore(&self) -> Result<Restored> {
        let mut scratch = rng::stream(0, rng::STREAM_INIT);
        let mut model = build_with_rng(&self.meta.dims, &self.meta.plan, &mut scratch)
            .map_err(|e| Error::Checkpoint(format!("metadata does not describe a valid model: {e}")))?;
        let discriminator = match &self.meta.discriminator {
            None => None,
            Some(d) => {
                let disc = TaskDiscriminator::new(&mut model.store, &mut scratch, &d.dims)
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                Some((disc, d.layers.clone()))
            }
        };
        if !model.store.layout_matches(&self.store) {
            return Err(Error::Checkpoint(
                "stored parameters do not match the sharing plan and dimensions in the metadata".into(),
            ));
        }
        model.store = self.store.clone();
        Ok(Restored { model, discriminator })
    }

    /// One task's model for inference; the discriminator is not loaded.
    pub fn task_model(&self, task: usize) -> Result<(Seq2SeqModel, ParameterStore)> {
        let restored = self.restore()?;
        let model = restored
            .model
            .models
            .get(task)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no task {task}")))?;
        Ok((model, restored.model.store))
    }
}

fn as_checkpoint(e: Error) -> Error {
    match e {
        Error::Checkpoint(_) => e,
        other => Error::Checkpoint(other.to_string()),
    }
}
