//! Checkpoint directory: `manifest.json` plus one tensor container,
//! `weights.sdvt`, holding backbone, prompts, head and optimizer state.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{AdamState, SlicedAdam};
use super::stages::TrainState;
use super::{Stage, TrainConfig};
use crate::counting_head::CountingHead;
use crate::data::container::{DType, EntryLayout, TensorContainer};
use crate::encoder::MiniViT;
use crate::error::{Error, Result};
use crate::numerics::Array;
use crate::prompts::BasePromptSet;
use crate::text_space::hex_string;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const WEIGHTS_FILE: &str = "weights.sdvt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub stage: Stage,
    pub epoch: usize,
    pub step: usize,
    pub shared: bool,
    /// SHA-256 of the weights file.
    pub hash: String,
    pub backbone_hash: String,
    pub table_hash: String,
    pub prompt_shape: Vec<usize>,
    pub weights_file: String,
    pub entries: Vec<EntryLayout>,
    pub config: TrainConfig,
}

impl TrainState {
    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.push(
            "state",
            Array::vector(vec![
                f64::from(self.stage.code()),
                self.epoch as f64,
                self.step as f64,
                f64::from(u8::from(self.shared)),
            ])?,
            DType::F64,
        )?;
        self.backbone.params().export("backbone", &mut c)?;
        c.push("prompts", self.prompts.values().clone(), DType::F64)?;
        self.head.params().export("head", &mut c)?;
        self.head_opt.export("opt.head", &mut c)?;
        self.prompt_opt.export("opt.prompts", &mut c)?;
        Ok(c)
    }

    /// SHA-256 over the serialized weights.
    pub fn hash_hex(&self) -> Result<String> {
        Ok(hex_string(&Sha256::digest(self.to_container()?.to_bytes())))
    }

    pub fn save(&self, dir: &Path) -> Result<CheckpointManifest> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (bytes, entries) = self.to_container()?.encode();
        let wpath = dir.join(WEIGHTS_FILE);
        std::fs::write(&wpath, &bytes).map_err(|e| Error::io(&wpath, e))?;
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            stage: self.stage,
            epoch: self.epoch,
            step: self.step,
            shared: self.shared,
            hash: hex_string(&Sha256::digest(&bytes)),
            backbone_hash: self.backbone.hash_hex(),
            table_hash: self.table_hash.clone(),
            prompt_shape: self.prompts.values().shape().to_vec(),
            weights_file: WEIGHTS_FILE.into(),
            entries,
            config: self.config.clone(),
        };
        let mpath = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_checkpoint_manifest(dir)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let wpath = dir.join(&manifest.weights_file);
        let bytes = std::fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
        if hex_string(&Sha256::digest(&bytes)) != manifest.hash {
            return Err(Error::Format(format!(
                "{}: content hash does not match the manifest",
                wpath.display()
            )));
        }
        let c = TensorContainer::from_bytes(&bytes)?;
        let state = Self::from_container(manifest.config, &c, manifest.table_hash)?;
        if state.stage != manifest.stage {
            return Err(Error::Format(
                "stage in weights disagrees with manifest".into(),
            ));
        }
        Ok(state)
    }

    pub fn from_container(
        config: TrainConfig,
        c: &TensorContainer,
        table_hash: String,
    ) -> Result<Self> {
        config.validate()?;
        let st = c.require("state")?;
        if st.len() != 4 {
            return Err(Error::Format("malformed state entry".into()));
        }
        let stage = Stage::from_code(st.data()[0] as u8)?;
        let mut backbone = MiniViT::new(config.model.clone(), 0)?;
        backbone.params_mut()?.import("backbone", c)?;
        backbone.freeze();
        let prompts = BasePromptSet::from_array(c.require("prompts")?.clone())?;
        let m = &config.model;
        let expect = [
            prompts.num_slots(),
            m.num_prompted(),
            config.prompt_tokens,
            m.width,
        ];
        if prompts.values().shape() != expect {
            return Err(Error::Format(format!(
                "prompt set of shape {:?} does not fit the config",
                prompts.values().shape()
            )));
        }
        let mut head = CountingHead::new(config.head.clone(), m.grid(), m.joint_dim, 0)?;
        head.params_mut().import("head", c)?;
        let mut head_opt = AdamState::new(head.params().arrays());
        head_opt.import("opt.head", c)?;
        let mut prompt_opt = SlicedAdam::new(prompts.values());
        prompt_opt.import("opt.prompts", c)?;
        Ok(Self {
            config,
            stage,
            epoch: st.data()[1] as usize,
            step: st.data()[2] as usize,
            shared: st.data()[3] != 0.0,
            backbone,
            prompts,
            head,
            head_opt,
            prompt_opt,
            table_hash,
        })
    }
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
