//! Mini vision transformer with deep visual prompt insertion.
//!
//! At every prompted layer the input sequence is `[cls, prompt tokens,
//! patch tokens]`; the prompt positions are dropped from that layer's output
//! and the next prompted layer gets its own tokens. Output shapes therefore
//! never depend on the prompt length.

pub(crate) mod pretrain;

pub use pretrain::{alignment_gap, pretrain_backbone, PretrainConfig, PretrainReport};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{Array, Tape, Var};
use crate::params::ParamStore;
use crate::rng;

/// Which encoder output is used as the image embedding for alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageEmbedding {
    #[default]
    Cls,
    PatchMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiniViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub joint_dim: usize,
    /// 1-based indices of layers that receive prompt tokens.
    pub prompted_layers: Vec<usize>,
    #[serde(default)]
    pub image_embedding: ImageEmbedding,
}

impl Default for MiniViTConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            patch_size: 8,
            channels: 3,
            depth: 2,
            width: 32,
            heads: 2,
            mlp_hidden: 64,
            joint_dim: 32,
            prompted_layers: vec![1, 2],
            image_embedding: ImageEmbedding::Cls,
        }
    }
}

impl MiniViTConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("image_size", self.image_size),
            ("patch_size", self.patch_size),
            ("channels", self.channels),
            ("depth", self.depth),
            ("width", self.width),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
            ("joint_dim", self.joint_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Validation(format!("{name} must be positive")));
            }
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Validation(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Validation(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            )));
        }
        if self.prompted_layers.is_empty() {
            return Err(Error::Validation(
                "at least one prompted layer is required".into(),
            ));
        }
        let mut prev = 0;
        for &l in &self.prompted_layers {
            if l == 0 || l > self.depth || l <= prev {
                return Err(Error::Validation(format!(
                    "prompted_layers {:?} must be strictly increasing within 1..={}",
                    self.prompted_layers, self.depth
                )));
            }
            prev = l;
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn num_prompted(&self) -> usize {
        self.prompted_layers.len()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.image_size, self.image_size, self.channels]
    }
}

/// Output of an encoder pass, off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedImage {
    /// `[D_t]`
    pub cls_embedding: Array,
    /// `[patches × D_t]`
    pub patch_embeddings: Array,
}

/// Output of an encoder pass, on the tape.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    /// `[1 × D_t]`
    pub cls: Var,
    /// `[patches × D_t]`
    pub patches: Var,
}

// Fixed parameter order inside the store.
const PATCH_W: usize = 0;
const PATCH_B: usize = 1;
const POS: usize = 2;
const CLS: usize = 3;
const FINAL_G: usize = 4;
const FINAL_B: usize = 5;
const PROJ: usize = 6;
const BLOCK_BASE: usize = 7;

#[derive(Clone, Debug, PartialEq)]
pub struct MiniViT {
    config: MiniViTConfig,
    params: ParamStore,
    frozen: bool,
}

/// Backbone parameters bound to a tape.
#[derive(Clone, Debug)]
pub struct BoundViT {
    vars: Vec<Var>,
}

impl BoundViT {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl MiniViT {
    pub fn new(config: MiniViTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(seed, &[rng::tags::BACKBONE_INIT]);
        let d = config.width;
        let dh = config.head_dim();
        let mut p = ParamStore::new();
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        p.push_normal(
            "patch_w",
            &[config.patch_dim(), d],
            fan(config.patch_dim()),
            &mut r,
        );
        p.push("patch_b", Array::zeros(&[d]));
        p.push_normal("pos", &[config.num_patches(), d], 0.1, &mut r);
        p.push_normal("cls", &[1, d], 0.1, &mut r);
        p.push("final_ln_g", Array::ones(&[d]));
        p.push("final_ln_b", Array::zeros(&[d]));
        p.push_normal("proj", &[d, config.joint_dim], fan(d), &mut r);
        for b in 0..config.depth {
            p.push(format!("block{b}.ln1_g"), Array::ones(&[d]));
            p.push(format!("block{b}.ln1_b"), Array::zeros(&[d]));
            for h in 0..config.heads {
                p.push_normal(format!("block{b}.head{h}.wq"), &[d, dh], fan(d), &mut r);
                p.push_normal(format!("block{b}.head{h}.wk"), &[d, dh], fan(d), &mut r);
                p.push_normal(format!("block{b}.head{h}.wv"), &[d, dh], fan(d), &mut r);
                p.push_normal(format!("block{b}.head{h}.wo"), &[dh, d], fan(d), &mut r);
            }
            p.push(format!("block{b}.bo"), Array::zeros(&[d]));
            p.push(format!("block{b}.ln2_g"), Array::ones(&[d]));
            p.push(format!("block{b}.ln2_b"), Array::zeros(&[d]));
            p.push_normal(
                format!("block{b}.w1"),
                &[d, config.mlp_hidden],
                fan(d),
                &mut r,
            );
            p.push(format!("block{b}.b1"), Array::zeros(&[config.mlp_hidden]));
            p.push_normal(
                format!("block{b}.w2"),
                &[config.mlp_hidden, d],
                fan(config.mlp_hidden),
                &mut r,
            );
            p.push(format!("block{b}.b2"), Array::zeros(&[d]));
        }
        Ok(Self {
            config,
            params: p,
            frozen: false,
        })
    }

    pub fn config(&self) -> &MiniViTConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> Result<&mut ParamStore> {
        if self.frozen {
            return Err(Error::Contract("backbone is frozen".into()));
        }
        Ok(&mut self.params)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Errors unless the backbone has been frozen.
    pub fn require_frozen(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Contract(
                "training stage requires a frozen pretrained backbone".into(),
            ));
        }
        Ok(())
    }

    pub fn hash_hex(&self) -> String {
        let mut h = Sha256::new();
        self.params.update_hash(&mut h);
        crate::text_space::hex_string(&h.finalize())
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    /// Binds parameters to `tape`. A frozen backbone cannot be bound as trainable.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundViT> {
        if trainable && self.frozen {
            return Err(Error::Contract(
                "gradient flow into a frozen backbone was requested".into(),
            ));
        }
        Ok(BoundViT {
            vars: self.params.bind(tape, trainable),
        })
    }

    fn block_stride(&self) -> usize {
        2 + 4 * self.config.heads + 7
    }

    fn check_image(&self, image: &Array) -> Result<()> {
        if image.shape() != self.config.image_shape() {
            return Err(Error::Contract(format!(
                "image of shape {:?} but the encoder expects {:?}",
                image.shape(),
                self.config.image_shape()
            )));
        }
        Ok(())
    }

    /// Splits an `[H, W, C]` image into `[patches × patch_dim]` rows, raster order.
    pub fn patchify(&self, image: &Array) -> Result<Array> {
        self.check_image(image)?;
        let c = &self.config;
        let (s, ps, ch, g) = (c.image_size, c.patch_size, c.channels, c.grid());
        let mut out = Vec::with_capacity(c.num_patches() * c.patch_dim());
        for gy in 0..g {
            for gx in 0..g {
                for y in 0..ps {
                    let row = (gy * ps + y) * s;
                    let start = (row + gx * ps) * ch;
                    out.extend_from_slice(&image.data()[start..start + ps * ch]);
                }
            }
        }
        Array::new(vec![c.num_patches(), c.patch_dim()], out)
    }

    fn embed_on_tape(&self, tape: &mut Tape, bound: &BoundViT, image: &Array) -> Result<Var> {
        let patches = tape.constant(self.patchify(image)?);
        let x = tape.matmul(patches, bound.vars[PATCH_W])?;
        let x = tape.add_row_vector(x, bound.vars[PATCH_B])?;
        tape.add(x, bound.vars[POS])
    }

    /// Prompt-independent first-layer patch tokens `[patches × D]`. Matches
    /// the on-tape computation bit for bit, so it can be cached per image
    /// while the backbone is frozen.
    pub fn embed_patches(&self, image: &Array) -> Result<Array> {
        let mut tape = Tape::with_checks(false);
        let bound = self.bind(&mut tape, false)?;
        let v = self.embed_on_tape(&mut tape, &bound, image)?;
        Ok(tape.value(v).clone())
    }

    fn check_prompt(&self, tape: &Tape, prompt: Var) -> Result<usize> {
        let s = tape.value(prompt).shape();
        if s.len() != 3 || s[0] != self.config.num_prompted() || s[2] != self.config.width {
            return Err(Error::Contract(format!(
                "prompt of shape {s:?} but the encoder expects [{}, T, {}]",
                self.config.num_prompted(),
                self.config.width
            )));
        }
        Ok(s[1])
    }

    fn block(&self, tape: &mut Tape, bound: &BoundViT, layer: usize, x: Var) -> Result<Var> {
        let base = BLOCK_BASE + layer * self.block_stride();
        let v = |i: usize| bound.vars[base + i];
        let heads = self.config.heads;
        let temperature = (self.config.head_dim() as f64).sqrt();

        let h = tape.layer_norm(x, v(0), v(1))?;
        let mut attn: Option<Var> = None;
        for hd in 0..heads {
            let hb = 2 + 4 * hd;
            let q = tape.matmul(h, v(hb))?;
            let k = tape.matmul(h, v(hb + 1))?;
            let val = tape.matmul(h, v(hb + 2))?;
            let kt = tape.transpose(k)?;
            let scores = tape.matmul(q, kt)?;
            let weights = tape.softmax_rows(scores, temperature)?;
            let ctx = tape.matmul(weights, val)?;
            let out = tape.matmul(ctx, v(hb + 3))?;
            attn = Some(match attn {
                None => out,
                Some(acc) => tape.add(acc, out)?,
            });
        }
        let tail = 2 + 4 * heads;
        let attn = tape.add_row_vector(attn.expect("at least one head"), v(tail))?;
        let x = tape.add(x, attn)?;

        let h2 = tape.layer_norm(x, v(tail + 1), v(tail + 2))?;
        let m = tape.matmul(h2, v(tail + 3))?;
        let m = tape.add_row_vector(m, v(tail + 4))?;
        let m = tape.relu(m)?;
        let m = tape.matmul(m, v(tail + 5))?;
        let m = tape.add_row_vector(m, v(tail + 6))?;
        tape.add(x, m)
    }

    fn project(
        &self,
        tape: &mut Tape,
        bound: &BoundViT,
        cls: Var,
        patches: Var,
    ) -> Result<EncodedVars> {
        let cls_n = tape.layer_norm(cls, bound.vars[FINAL_G], bound.vars[FINAL_B])?;
        let cls = tape.matmul(cls_n, bound.vars[PROJ])?;
        let pat_n = tape.layer_norm(patches, bound.vars[FINAL_G], bound.vars[FINAL_B])?;
        let patches = tape.matmul(pat_n, bound.vars[PROJ])?;
        Ok(EncodedVars { cls, patches })
    }

    /// Runs the transformer from first-layer patch tokens, inserting
    /// `prompt` (`[L, T, D]`, one row per prompted layer) when given.
    pub fn encode_tokens(
        &self,
        tape: &mut Tape,
        bound: &BoundViT,
        tokens: Var,
        prompt: Option<Var>,
    ) -> Result<EncodedVars> {
        let n_patches = self.config.num_patches();
        if tape.value(tokens).shape() != [n_patches, self.config.width] {
            return Err(Error::Contract(format!(
                "patch tokens of shape {:?}, expected [{n_patches}, {}]",
                tape.value(tokens).shape(),
                self.config.width
            )));
        }
        let t = match prompt {
            Some(p) => self.check_prompt(tape, p)?,
            None => 0,
        };
        let mut cls = bound.vars[CLS];
        let mut patches = tokens;
        for layer in 0..self.config.depth {
            let slot = self
                .config
                .prompted_layers
                .iter()
                .position(|&l| l == layer + 1);
            let inserted = match (prompt, slot) {
                (Some(p), Some(j)) => {
                    let pl = tape.slice_rows(p, j, 1)?;
                    Some(tape.reshape(pl, &[t, self.config.width])?)
                }
                _ => None,
            };
            let seq = match inserted {
                Some(pl) => tape.concat_rows(&[cls, pl, patches])?,
                None => tape.concat_rows(&[cls, patches])?,
            };
            let out = self.block(tape, bound, layer, seq)?;
            let skip = if inserted.is_some() { t } else { 0 };
            cls = tape.slice_rows(out, 0, 1)?;
            patches = tape.slice_rows(out, 1 + skip, n_patches)?;
        }
        self.project(tape, bound, cls, patches)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &BoundViT,
        image: &Array,
        prompt: Option<Var>,
    ) -> Result<EncodedVars> {
        let tokens = self.embed_on_tape(tape, bound, image)?;
        self.encode_tokens(tape, bound, tokens, prompt)
    }

    /// Promptless forward pass with no insertion logic at all.
    pub fn encode_plain(
        &self,
        tape: &mut Tape,
        bound: &BoundViT,
        image: &Array,
    ) -> Result<EncodedVars> {
        let n_patches = self.config.num_patches();
        let tokens = self.embed_on_tape(tape, bound, image)?;
        let mut x = tape.concat_rows(&[bound.vars[CLS], tokens])?;
        for layer in 0..self.config.depth {
            x = self.block(tape, bound, layer, x)?;
        }
        let cls = tape.slice_rows(x, 0, 1)?;
        let patches = tape.slice_rows(x, 1, n_patches)?;
        self.project(tape, bound, cls, patches)
    }

    /// Off-tape convenience wrapper around [`encode`](Self::encode).
    pub fn encode_image(&self, image: &Array, prompt: Option<&Array>) -> Result<EncodedImage> {
        let mut tape = Tape::with_checks(false);
        let bound = self.bind(&mut tape, false)?;
        let p = prompt.map(|p| tape.constant(p.clone()));
        let enc = self.encode(&mut tape, &bound, image, p)?;
        Ok(EncodedImage {
            cls_embedding: tape.value(enc.cls).reshape(vec![self.config.joint_dim])?,
            patch_embeddings: tape.value(enc.patches).clone(),
        })
    }

    /// The image embedding used for contrastive alignment, `[1 × D_t]`.
    pub fn image_embedding(&self, tape: &mut Tape, enc: &EncodedVars) -> Result<Var> {
        match self.config.image_embedding {
            ImageEmbedding::Cls => Ok(enc.cls),
            ImageEmbedding::PatchMean => {
                let n = self.config.num_patches();
                let ones = tape.constant(Array::full(&[1, n], 1.0 / n as f64));
                tape.matmul(ones, enc.patches)
            }
        }
    }
}
