//! Counting model: a patch/text similarity map followed by a small
//! convolutional density decoder. The predicted count is the density sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Array, Tape, Var};
use crate::params::ParamStore;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Channels kept from the patch embeddings.
    pub reduced_channels: usize,
    /// Channels after the first convolution.
    pub hidden: usize,
    /// Count predicted by the freshly initialized head.
    pub init_count: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            reduced_channels: 8,
            hidden: 16,
            init_count: 8.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduced_channels == 0 || self.hidden == 0 {
            return Err(Error::Validation(
                "head channel counts must be positive".into(),
            ));
        }
        if !(self.init_count > 0.0) || !self.init_count.is_finite() {
            return Err(Error::Validation(format!(
                "init_count must be positive, got {}",
                self.init_count
            )));
        }
        Ok(())
    }
}

const W_RED: usize = 0;
const B_RED: usize = 1;
const W1_SIM: usize = 2;
const W1_FEAT: usize = 3;
const B1: usize = 4;
const W2: usize = 5;
const B2: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct CountingHead {
    config: HeadConfig,
    grid: usize,
    joint_dim: usize,
    params: ParamStore,
    upsample: Array,
}

#[derive(Clone, Debug)]
pub struct BoundHead {
    vars: Vec<Var>,
    upsample: Var,
}

impl BoundHead {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// On-tape head output.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `[2G × 2G]`
    pub density: Var,
    /// `[1]`
    pub count: Var,
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// One axis of 2× bilinear upsampling with half-pixel centres and edge
/// clamping: `[2n × n]`.
fn upsample_axis(n: usize) -> Vec<f64> {
    let mut a = vec![0.0; 2 * n * n];
    for o in 0..2 * n {
        let s = (o as f64 + 0.5) / 2.0 - 0.5;
        let i0 = s.floor();
        let frac = s - i0;
        let clamp = |i: f64| i.max(0.0).min((n - 1) as f64) as usize;
        a[o * n + clamp(i0)] += 1.0 - frac;
        a[o * n + clamp(i0 + 1.0)] += frac;
    }
    a
}

/// `[4G² × G²]` operator for 2× bilinear upsampling of a row-major `G×G` map.
pub fn upsample_matrix(g: usize) -> Array {
    let a = upsample_axis(g);
    let (p, q) = (g * g, 4 * g * g);
    let mut u = vec![0.0; q * p];
    for oy in 0..2 * g {
        for ox in 0..2 * g {
            let row = &mut u[(oy * 2 * g + ox) * p..(oy * 2 * g + ox + 1) * p];
            for iy in 0..g {
                let wy = a[oy * g + iy];
                if wy == 0.0 {
                    continue;
                }
                for ix in 0..g {
                    row[iy * g + ix] = wy * a[ox * g + ix];
                }
            }
        }
    }
    Array::from_parts(vec![q, p], u)
}

/// Per-patch cosine similarity to `text`, as a `[G × G]` map.
pub fn similarity_map(patch_embeddings: &Array, text: &[f64], grid: usize) -> Result<Array> {
    let s = patch_embeddings.shape();
    if s.len() != 2 || s[0] != grid * grid || s[1] != text.len() {
        return Err(Error::Dimension(format!(
            "similarity map of patches {s:?} against a text embedding of length {} on a {grid}x{grid} grid",
            text.len()
        )));
    }
    let vals = (0..s[0])
        .map(|i| cosine_similarity(patch_embeddings.row(i), text))
        .collect::<Result<Vec<_>>>()?;
    Array::new(vec![grid, grid], vals)
}

/// Sum of a density map.
pub fn count(density: &Array) -> f64 {
    density.sum()
}

impl CountingHead {
    pub fn new(config: HeadConfig, grid: usize, joint_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if grid == 0 || joint_dim == 0 {
            return Err(Error::Validation(
                "head grid and joint_dim must be positive".into(),
            ));
        }
        let mut r = rng::stream(seed, &[rng::tags::HEAD_INIT]);
        let (c, h) = (config.reduced_channels, config.hidden);
        let mut p = ParamStore::new();
        p.push_normal(
            "w_red",
            &[joint_dim, c],
            1.0 / (joint_dim as f64).sqrt(),
            &mut r,
        );
        p.push("b_red", Array::zeros(&[c]));
        p.push_normal("w1_sim", &[9, h], 1.0 / 3.0, &mut r);
        p.push_normal(
            "w1_feat",
            &[9 * c, h],
            1.0 / (9.0 * c as f64).sqrt(),
            &mut r,
        );
        p.push("b1", Array::zeros(&[h]));
        p.push("w2", Array::zeros(&[9 * h, 1]));
        let per_cell = config.init_count / (4 * grid * grid) as f64;
        p.push("b2", Array::scalar(inverse_softplus(per_cell)));
        Ok(Self {
            config,
            grid,
            joint_dim,
            params: p,
            upsample: upsample_matrix(grid),
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn joint_dim(&self) -> usize {
        self.joint_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundHead {
        let vars = self.params.bind(tape, trainable);
        self.bind_vars(tape, vars)
    }

    /// Wraps parameter vars that are already on `tape`, in store order.
    pub fn bind_vars(&self, tape: &mut Tape, vars: Vec<Var>) -> BoundHead {
        BoundHead {
            vars,
            upsample: tape.constant(self.upsample.clone()),
        }
    }

    /// Density and count for `[P × D_t]` patch embeddings and the query text
    /// embedding `text` (`[D_t]`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &BoundHead,
        patches: Var,
        text: &[f64],
    ) -> Result<HeadOutput> {
        let g = self.grid;
        let p = g * g;
        if tape.value(patches).shape() != [p, self.joint_dim] || text.len() != self.joint_dim {
            return Err(Error::Contract(format!(
                "head expects patches [{p}, {}] and text [{}], got {:?} and [{}]",
                self.joint_dim,
                self.joint_dim,
                tape.value(patches).shape(),
                text.len()
            )));
        }
        let v = |i: usize| bound.vars[i];
        let norm: f64 = text.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateVector(
                "query text embedding has zero norm".into(),
            ));
        }
        let unit = tape.constant(Array::new(
            vec![self.joint_dim, 1],
            text.iter().map(|x| x / norm).collect(),
        )?);
        let pn = tape.normalize_rows(patches)?;
        let sim = tape.matmul(pn, unit)?;

        let red = tape.matmul(patches, v(W_RED))?;
        let red = tape.add_row_vector(red, v(B_RED))?;

        let cs = tape.im2col3x3(sim, g, g)?;
        let cf = tape.im2col3x3(red, g, g)?;
        let a = tape.matmul(cs, v(W1_SIM))?;
        let b = tape.matmul(cf, v(W1_FEAT))?;
        let h = tape.add(a, b)?;
        let h = tape.add_row_vector(h, v(B1))?;
        let h = tape.relu(h)?;

        let ch = tape.im2col3x3(h, g, g)?;
        let o = tape.matmul(ch, v(W2))?;
        let o = tape.add_row_vector(o, v(B2))?;
        let d = tape.softplus(o)?;
        let up = tape.matmul(bound.upsample, d)?;
        let density = tape.reshape(up, &[2 * g, 2 * g])?;
        let count = tape.sum(density)?;
        Ok(HeadOutput { density, count })
    }

    /// Off-tape prediction: `(density [2G × 2G], count)`.
    pub fn predict(&self, patch_embeddings: &Array, text: &[f64]) -> Result<(Array, f64)> {
        let mut tape = Tape::with_checks(false);
        let b = self.bind(&mut tape, false);
        let p = tape.constant(patch_embeddings.clone());
        let out = self.forward(&mut tape, &b, p, text)?;
        Ok((
            tape.value(out.density).clone(),
            tape.value(out.count).item(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> Array {
        let mut r = rng::stream(seed, &[42]);
        let n = shape.iter().product();
        Array::new(
            shape.to_vec(),
            (0..n).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn similarity_map_examples() {
        let text = [0.0, 2.0, 0.0];
        let same = Array::new(vec![4, 3], [0.0, 1.0, 0.0].repeat(4)).unwrap();
        let m = similarity_map(&same, &text, 2).unwrap();
        assert!(m.data().iter().all(|v| *v == 1.0));
        let orth = Array::new(vec![4, 3], [1.0, 0.0, -3.0].repeat(4)).unwrap();
        assert!(similarity_map(&orth, &text, 2)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == 0.0));

        let rnd = random(&[9, 3], 1);
        let m = similarity_map(&rnd, &text, 3).unwrap();
        for i in 0..9 {
            let r = rnd.row(i);
            let c = r[1] / (r.iter().map(|x| x * x).sum::<f64>().sqrt());
            assert!((m.data()[i] - c).abs() < 1e-12);
        }
        let zero = Array::new(vec![4, 3], vec![0.0; 12]).unwrap();
        assert!(matches!(
            similarity_map(&zero, &text, 2),
            Err(Error::DegenerateVector(_))
        ));
    }

    #[test]
    fn upsample_preserves_constants_and_scales_mass() {
        for g in [1, 2, 3, 8] {
            let u = upsample_matrix(g);
            for r in 0..4 * g * g {
                assert!((u.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            for c in 0..g * g {
                let col: f64 = (0..4 * g * g).map(|r| u.data()[r * g * g + c]).sum();
                assert!((col - 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fresh_head_is_constant_softplus_bias() {
        let head = CountingHead::new(HeadConfig::default(), 4, 6, 3).unwrap();
        let (d, c) = head
            .predict(&random(&[16, 6], 2), &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0])
            .unwrap();
        assert_eq!(d.shape(), &[8, 8]);
        let b2 = head.params().get(B2).item();
        let sp = (1.0 + b2.exp()).ln();
        assert!(d.data().iter().all(|v| (v - sp).abs() < 1e-12));
        assert!((c - 8.0).abs() < 1e-9);
    }

    #[test]
    fn count_examples() {
        assert_eq!(count(&Array::zeros(&[3, 3])), 0.0);
        assert_eq!(count(&Array::full(&[2, 2], 0.25)), 1.0);
        let m = random(&[5, 5], 9);
        let mut s = 0.0;
        for v in m.data() {
            s += v;
        }
        assert_eq!(count(&m), s);
    }

    #[test]
    fn contract_errors() {
        let head = CountingHead::new(HeadConfig::default(), 4, 6, 3).unwrap();
        assert!(matches!(
            head.predict(&random(&[9, 6], 2), &[1.0; 6]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            head.predict(&random(&[16, 6], 2), &[0.0; 6]),
            Err(Error::DegenerateVector(_))
        ));
    }
}
