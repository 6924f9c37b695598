use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub flip_p: f64,
    pub erase_p: f64,
    /// Erased area as a fraction of the image.
    pub erase_area: (f64, f64),
    /// Erased rectangle height / width.
    pub erase_aspect: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            erase_p: 0.2,
            erase_area: (0.02, 0.2),
            erase_aspect: (0.3, 3.3),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            flip_p: 0.0,
            erase_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |x: f64| (0.0..=1.0).contains(&x);
        let (a0, a1) = self.erase_area;
        let (r0, r1) = self.erase_aspect;
        if !p(self.flip_p) || !p(self.erase_p) || !(0.0 < a0 && a0 <= a1 && a1 < 1.0) || !(0.0 < r0 && r0 <= r1) {
            return Err(Error::Config(format!("invalid augmentation settings {self:?}")));
        }
        Ok(())
    }
}

/// Rectangle filled by random erasing, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Erasure {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

pub(crate) fn flip_width(img: &mut Tensor) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let v = img.values_mut();
    for row in v.chunks_mut(w).take(3 * h) {
        row.reverse();
    }
}

/// Sample an erasure rectangle; retries until one fits, as in the usual
/// random-erasing procedure. `None` if no fit is found.
pub(crate) fn sample_erasure(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut Rng) -> Option<Erasure> {
    let total = (h * w) as f64;
    for _ in 0..100 {
        let area = rng::uniform(rng, cfg.erase_area.0, cfg.erase_area.1) * total;
        let aspect = rng::uniform(rng, cfg.erase_aspect.0, cfg.erase_aspect.1);
        let eh = (area * aspect).sqrt().round() as usize;
        let ew = (area / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        // Rounding can push the area outside the range on small images.
        let frac = (eh * ew) as f64 / total;
        if frac < cfg.erase_area.0 || frac > cfg.erase_area.1 {
            continue;
        }
        let top = (rng::uniform(rng, 0.0, (h - eh + 1) as f64) as usize).min(h - eh);
        let left = (rng::uniform(rng, 0.0, (w - ew + 1) as f64) as usize).min(w - ew);
        return Some(Erasure {
            top,
            left,
            height: eh,
            width: ew,
        });
    }
    None
}

/// Training-time augmentation: horizontal flip, then random erasing filled
/// with `fill` per channel. Returns the erased rectangle, if any.
pub fn augment(image: &Tensor, cfg: &AugmentConfig, fill: [f64; 3], rng: &mut Rng) -> (Tensor, Option<Erasure>) {
    let mut out = image.clone();
    if rng::uniform(rng, 0.0, 1.0) < cfg.flip_p {
        flip_width(&mut out);
    }
    let mut erased = None;
    if rng::uniform(rng, 0.0, 1.0) < cfg.erase_p {
        let (h, w) = (out.shape()[1], out.shape()[2]);
        if let Some(e) = sample_erasure(h, w, cfg, rng) {
            let v = out.values_mut();
            for (c, f) in fill.iter().enumerate() {
                for y in e.top..e.top + e.height {
                    let base = (c * h + y) * w;
                    v[base + e.left..base + e.left + e.width].fill(*f);
                }
            }
            erased = Some(e);
        }
    }
    (out, erased)
}
