//! Scene rendering and density ground truth.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::catalog::SyntheticCategory;
use crate::error::{Error, Result};
use crate::numerics::Array;

pub const CHANNELS: usize = 3;
pub const DENSITY_SIGMA: f64 = 1.0;
const PLACEMENT_TRIES: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub image_size: usize,
    /// Side of the density ground-truth grid.
    pub density_grid: usize,
    pub background_mean: f64,
    pub background_noise: f64,
    pub min_radius: f64,
    pub max_radius: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            density_grid: 16,
            background_mean: 0.1,
            background_noise: 0.03,
            min_radius: 2.5,
            max_radius: 4.5,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.density_grid == 0 {
            return Err(Error::Parameter(
                "image_size and density_grid must be positive".into(),
            ));
        }
        if !(self.min_radius > 0.0) || self.max_radius < self.min_radius {
            return Err(Error::Parameter("need 0 < min_radius <= max_radius".into()));
        }
        if !(self.background_noise >= 0.0) {
            return Err(Error::Parameter(
                "background_noise must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn radius(&self, cat: &SyntheticCategory) -> f64 {
        self.min_radius + cat.size() * (self.max_radius - self.min_radius)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountingSample {
    /// `[H, W, 3]`, values representable in f32.
    pub image: Array,
    pub category_id: usize,
    pub gt_count: usize,
    /// `[G_out, G_out]`, sums to `gt_count`.
    pub density: Array,
    /// Pixel `(row, col)` centres of the counted objects.
    pub centers: Vec<(f64, f64)>,
}

fn hue_to_rgb(h: f64) -> [f64; 3] {
    let (s, v) = (0.8, 1.0);
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Glyph opacity at offset `(dy, dx)` from the centre, in pixels.
fn glyph_alpha(cat: &SyntheticCategory, radius: f64, dy: f64, dx: f64) -> f64 {
    let d = (dy * dy + dx * dx).sqrt() / radius;
    if d > 1.3 {
        return 0.0;
    }
    let blob = (-2.5 * d * d).exp();
    let ring = (-((d - 0.7) / 0.2).powi(2)).exp();
    let arm = 0.3 * radius;
    let cross = if d <= 1.0 {
        (-(dx / arm).powi(2)).exp().max((-(dy / arm).powi(2)).exp())
    } else {
        0.0
    };
    let s = cat.shape();
    let shape = if s < 0.5 {
        let t = s / 0.5;
        (1.0 - t) * blob + t * ring
    } else {
        let t = (s - 0.5) / 0.5;
        (1.0 - t) * ring + t * cross
    };
    let freq = 0.5 + 2.5 * cat.texture();
    let tex = 0.7 + 0.3 * (std::f64::consts::TAU * freq * (dx + dy) / radius).cos();
    (shape * tex).clamp(0.0, 1.0)
}

/// One object to draw.
#[derive(Clone, Debug)]
pub struct Placement<'a> {
    pub category: &'a SyntheticCategory,
    pub center: (f64, f64),
    pub radius: f64,
}

/// Rejection-samples centres for `radii` in order; each new centre keeps a
/// distance of at least the larger radius from every earlier one. Stops at
/// the first object that cannot be placed.
pub fn place_centers(radii: &[f64], image_size: usize, r: &mut impl Rng) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(radii.len());
    for (i, &rad) in radii.iter().enumerate() {
        let lo = rad.min(image_size as f64 / 2.0);
        let hi = (image_size as f64 - rad).max(lo + 1e-9);
        let mut placed = false;
        for _ in 0..PLACEMENT_TRIES {
            let c = (r.random_range(lo..hi), r.random_range(lo..hi));
            let ok = out.iter().zip(radii).all(|(p, &pr)| {
                let sep = rad.max(pr);
                (p.0 - c.0).powi(2) + (p.1 - c.1).powi(2) >= sep * sep
            });
            if ok {
                out.push(c);
                placed = true;
                break;
            }
        }
        if !placed {
            debug_assert_eq!(out.len(), i);
            break;
        }
    }
    out
}

/// Sum of unit-mass Gaussians (σ in grid cells) at pixel centres mapped onto
/// a `grid × grid` map.
pub fn density_map(centers: &[(f64, f64)], image_size: usize, grid: usize) -> Array {
    let scale = grid as f64 / image_size as f64;
    let mut out = vec![0.0; grid * grid];
    let mut k = vec![0.0; grid * grid];
    for &(cy, cx) in centers {
        let gy = cy * scale - 0.5;
        let gx = cx * scale - 0.5;
        let mut s = 0.0;
        for y in 0..grid {
            for x in 0..grid {
                let d2 = (y as f64 - gy).powi(2) + (x as f64 - gx).powi(2);
                let v = (-d2 / (2.0 * DENSITY_SIGMA * DENSITY_SIGMA)).exp();
                k[y * grid + x] = v;
                s += v;
            }
        }
        for (o, v) in out.iter_mut().zip(&k) {
            *o += v / s;
        }
    }
    Array::from_parts(vec![grid, grid], out)
}

/// Renders `count` objects of `target` plus `distractors` (objects of other
/// categories that are drawn but not counted).
pub fn render_scene(
    target: &SyntheticCategory,
    count: usize,
    distractors: &[&SyntheticCategory],
    cfg: &RenderConfig,
    r: &mut impl Rng,
) -> Result<CountingSample> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::Parameter("count must be at least 1".into()));
    }
    let mut radii = vec![cfg.radius(target); count];
    radii.extend(distractors.iter().map(|c| cfg.radius(c)));
    let centers = place_centers(&radii, cfg.image_size, r);
    if centers.len() < radii.len() {
        return Err(Error::Packing {
            requested: radii.len(),
            achieved: centers.len(),
        });
    }

    let s = cfg.image_size;
    let bg = Normal::new(
        cfg.background_mean,
        cfg.background_noise.max(f64::MIN_POSITIVE),
    )
    .expect("valid std");
    let mut img: Vec<f64> = (0..s * s * CHANNELS)
        .map(|_| {
            if cfg.background_noise > 0.0 {
                bg.sample(r)
            } else {
                cfg.background_mean
            }
        })
        .collect();
    let all: Vec<&SyntheticCategory> = std::iter::repeat(target)
        .take(count)
        .chain(distractors.iter().copied())
        .collect();
    for ((cat, &(cy, cx)), &rad) in all.iter().zip(&centers).zip(&radii) {
        let color = hue_to_rgb(cat.hue());
        let reach = (1.3 * rad).ceil() as isize;
        let (iy, ix) = (cy.floor() as isize, cx.floor() as isize);
        for y in (iy - reach).max(0)..=(iy + reach).min(s as isize - 1) {
            for x in (ix - reach).max(0)..=(ix + reach).min(s as isize - 1) {
                let a = glyph_alpha(cat, rad, y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                if a == 0.0 {
                    continue;
                }
                let p = (y as usize * s + x as usize) * CHANNELS;
                for ch in 0..CHANNELS {
                    img[p + ch] = (1.0 - a) * img[p + ch] + a * color[ch];
                }
            }
        }
    }
    for v in img.iter_mut() {
        *v = (v.clamp(0.0, 1.0) as f32) as f64;
    }
    let counted = centers[..count].to_vec();
    Ok(CountingSample {
        image: Array::new(vec![s, s, CHANNELS], img)?,
        category_id: target.id,
        gt_count: count,
        density: density_map(&counted, s, cfg.density_grid),
        centers: counted,
    })
}

/// Renders `count` objects of `category` on a clean noisy background.
pub fn render_sample(
    category: &SyntheticCategory,
    count: usize,
    cfg: &RenderConfig,
    r: &mut impl Rng,
) -> Result<CountingSample> {
    render_scene(category, count, &[], cfg, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cat(params: [f64; 4]) -> SyntheticCategory {
        SyntheticCategory {
            id: 0,
            name: "x".into(),
            params: params.to_vec(),
            is_seen: true,
        }
    }

    #[test]
    fn density_sums_to_count() {
        let c = cat([0.3, 0.5, 0.2, 0.4]);
        let cfg = RenderConfig::default();
        for n in [1usize, 7, 30] {
            let mut r = rng::stream(1, &[n as u64]);
            let s = render_sample(&c, n, &cfg, &mut r).unwrap();
            assert!((s.density.sum() - n as f64).abs() < 1e-6);
            assert_eq!(s.centers.len(), n);
            assert!(s.density.data().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn centres_respect_min_separation() {
        let c = cat([0.9, 1.0, 0.7, 0.1]);
        let cfg = RenderConfig::default();
        let rad = cfg.radius(&c);
        for seed in 0..10 {
            let mut r = rng::stream(seed, &[]);
            let s = render_sample(&c, 25, &cfg, &mut r).unwrap();
            for i in 0..s.centers.len() {
                for j in 0..i {
                    let (a, b) = (s.centers[i], s.centers[j]);
                    assert!(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() >= rad);
                }
            }
        }
    }

    #[test]
    fn impossible_packing_reports_achieved_count() {
        let c = cat([0.5, 1.0, 0.5, 0.5]);
        let cfg = RenderConfig {
            image_size: 16,
            density_grid: 4,
            ..Default::default()
        };
        let mut r = rng::stream(0, &[]);
        match render_sample(&c, 200, &cfg, &mut r) {
            Err(Error::Packing {
                requested,
                achieved,
            }) => {
                assert_eq!(requested, 200);
                assert!(achieved > 0 && achieved < 200);
            }
            other => panic!("expected packing error, got {other:?}"),
        }
    }

    #[test]
    fn pixels_are_f32_exact() {
        let c = cat([0.1, 0.2, 0.9, 0.9]);
        let mut r = rng::stream(3, &[]);
        let s = render_sample(&c, 4, &RenderConfig::default(), &mut r).unwrap();
        assert!(s.image.data().iter().all(|v| (*v as f32) as f64 == *v));
    }
}
