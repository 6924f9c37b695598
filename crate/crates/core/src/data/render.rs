//! Procedural pedestrian renderer.
//!
//! A figure is a head ellipse, a torso with optional sleeves, two legs,
//! optional shoes and a small logo patch. Coordinates are fractions of the
//! image so the same identity renders at any resolution.

use serde::{Deserialize, Serialize};

use crate::model::Modality;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Luminance weights used by the infrared transform.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub type Rgb = [f64; 3];

pub fn luminance(c: Rgb) -> f64 {
    LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
}

/// Thermal intensity of a surface: its luminance scaled by emissivity.
pub fn infrared_intensity(albedo: Rgb, emissivity: f64) -> f64 {
    (luminance(albedo) * emissivity).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: f64,
    pub y1: f64,
    pub x0: f64,
    pub x1: f64,
}

impl Rect {
    fn contains(&self, y: f64, x: f64) -> bool {
        y >= self.y0 && y < self.y1 && x >= self.x0 && x < self.x1
    }
}

/// Body layout shared by every rendering of an identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub head_cy: f64,
    pub head_ry: f64,
    pub head_rx: f64,
    pub torso: Rect,
    pub leg_gap: f64,
    pub leg_width: f64,
    pub leg_bottom: f64,
    pub sleeve_width: f64,
    pub shoe_height: f64,
}

/// Appearance attributes of one identity, sampled once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub geometry: Geometry,
    pub skin: Rgb,
    /// Clothing albedos: torso, legs, then optionally sleeves and shoes.
    pub albedos: Vec<Rgb>,
    pub logo: Rect,
    pub logo_colour: Rgb,
    pub emissivity: f64,
}

fn colour(rng: &mut Rng) -> Rgb {
    [
        rng::uniform(rng, 0.05, 0.95),
        rng::uniform(rng, 0.05, 0.95),
        rng::uniform(rng, 0.05, 0.95),
    ]
}

/// A colour with the same luminance as `c` but a different hue: move along
/// a random direction orthogonal to the luminance weights.
pub fn same_luminance_recolour(c: Rgb, rng: &mut Rng) -> Rgb {
    let mut best = c;
    for _ in 0..16 {
        let r = [rng::normal(rng), rng::normal(rng), rng::normal(rng)];
        let ww: f64 = LUMA.iter().map(|w| w * w).sum();
        let proj = (0..3).map(|i| r[i] * LUMA[i]).sum::<f64>() / ww;
        let d: Vec<f64> = (0..3).map(|i| r[i] - proj * LUMA[i]).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        // Largest step along d that stays inside the unit cube.
        let mut t_max = f64::INFINITY;
        for i in 0..3 {
            let di = d[i] / norm;
            if di > 1e-12 {
                t_max = t_max.min((1.0 - c[i]) / di);
            } else if di < -1e-12 {
                t_max = t_max.min(-c[i] / di);
            }
        }
        let t = 0.8 * t_max;
        let cand = [
            c[0] + t * d[0] / norm,
            c[1] + t * d[1] / norm,
            c[2] + t * d[2] / norm,
        ];
        let dist = |a: Rgb| (0..3).map(|i| (a[i] - c[i]).powi(2)).sum::<f64>();
        if dist(cand) > dist(best) {
            best = cand;
        }
        if dist(best) > 0.04 {
            break;
        }
    }
    best
}

impl Latent {
    pub fn sample(rng: &mut Rng) -> Self {
        let head_ry = rng::uniform(rng, 0.065, 0.085);
        let head_cy = rng::uniform(rng, 0.03, 0.05) + head_ry;
        let torso_top = head_cy + head_ry * 0.9;
        let torso_bottom = rng::uniform(rng, 0.46, 0.58);
        let half = rng::uniform(rng, 0.22, 0.36);
        let torso = Rect {
            y0: torso_top,
            y1: torso_bottom,
            x0: 0.5 - half,
            x1: 0.5 + half,
        };
        let geometry = Geometry {
            head_cy,
            head_ry,
            head_rx: rng::uniform(rng, 0.14, 0.2),
            torso: torso.clone(),
            leg_gap: rng::uniform(rng, 0.01, 0.06),
            leg_width: rng::uniform(rng, 0.1, 0.17),
            leg_bottom: rng::uniform(rng, 0.92, 0.98),
            sleeve_width: rng::uniform(rng, 0.06, 0.1),
            shoe_height: rng::uniform(rng, 0.03, 0.05),
        };
        let regions = 2 + (rng::uniform(rng, 0.0, 3.0) as usize).min(2);
        let albedos: Vec<Rgb> = (0..regions).map(|_| colour(rng)).collect();
        let skin_tone = rng::uniform(rng, 0.35, 0.85);
        let skin = [skin_tone, skin_tone * 0.8, skin_tone * 0.65];
        Self {
            logo: Self::sample_logo(&torso, rng),
            logo_colour: Self::contrasting(&albedos[0], rng),
            geometry,
            skin,
            albedos,
            emissivity: rng::uniform(rng, 0.85, 1.15),
        }
    }

    fn sample_logo(torso: &Rect, rng: &mut Rng) -> Rect {
        let w = rng::uniform(rng, 0.12, 0.28);
        let h = rng::uniform(rng, 0.05, 0.1);
        let x0 = rng::uniform(rng, torso.x0 + 0.02, (torso.x1 - w - 0.02).max(torso.x0 + 0.03));
        let y0 = rng::uniform(rng, torso.y0 + 0.02, (torso.y1 - h - 0.02).max(torso.y0 + 0.03));
        Rect {
            y0,
            y1: y0 + h,
            x0,
            x1: x0 + w,
        }
    }

    /// A logo colour whose luminance differs clearly from the torso's, so
    /// the logo survives the infrared transform.
    fn contrasting(torso: &Rgb, rng: &mut Rng) -> Rgb {
        let lt = luminance(*torso);
        for _ in 0..64 {
            let c = colour(rng);
            if (luminance(c) - lt).abs() > 0.3 {
                return c;
            }
        }
        if lt > 0.5 {
            [0.05, 0.05, 0.05]
        } else {
            [0.95, 0.95, 0.95]
        }
    }

    /// A second identity with the same body layout and region luminances but
    /// different clothing hues and its own logo.
    pub fn hue_twin(&self, rng: &mut Rng) -> Self {
        let albedos: Vec<Rgb> = self
            .albedos
            .iter()
            .map(|c| same_luminance_recolour(*c, rng))
            .collect();
        Self {
            geometry: self.geometry.clone(),
            skin: self.skin,
            logo: Self::sample_logo(&self.geometry.torso, rng),
            logo_colour: Self::contrasting(&albedos[0], rng),
            albedos,
            emissivity: rng::uniform(rng, 0.85, 1.15),
        }
    }
}

/// Per-camera nuisance: brightness gain, background level and horizontal shift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub gain: f64,
    pub background: f64,
    pub shift: f64,
}

impl Camera {
    pub fn new(seed: u64, camera: u32, brightness_jitter: f64) -> Self {
        let mut r = rng::derive(seed, 0xca3e_0000 + camera as u64);
        Self {
            gain: 1.0 + rng::uniform(&mut r, -brightness_jitter, brightness_jitter),
            background: rng::uniform(&mut r, 0.15, 0.45),
            shift: rng::uniform(&mut r, -0.05, 0.05),
        }
    }
}

/// Which surface covers a normalized point, in painter's order.
fn surface(l: &Latent, y: f64, x: f64) -> Option<Rgb> {
    let g = &l.geometry;
    let hy = (y - g.head_cy) / g.head_ry;
    let hx = (x - 0.5) / g.head_rx;
    if hy * hy + hx * hx <= 1.0 {
        return Some(l.skin);
    }
    if l.logo.contains(y, x) {
        return Some(l.logo_colour);
    }
    let t = &g.torso;
    if t.contains(y, x) {
        let sleeve = x < t.x0 + g.sleeve_width || x >= t.x1 - g.sleeve_width;
        if sleeve && l.albedos.len() > 2 {
            return Some(l.albedos[2]);
        }
        return Some(l.albedos[0]);
    }
    if y >= t.y1 && y < g.leg_bottom {
        let left = x >= 0.5 - g.leg_gap / 2.0 - g.leg_width && x < 0.5 - g.leg_gap / 2.0;
        let right = x >= 0.5 + g.leg_gap / 2.0 && x < 0.5 + g.leg_gap / 2.0 + g.leg_width;
        if left || right {
            if y >= g.leg_bottom - g.shoe_height && l.albedos.len() > 3 {
                return Some(l.albedos[3]);
            }
            return Some(l.albedos[1]);
        }
    }
    None
}

/// How a modality maps surface albedo to the three output channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Colour,
    Infrared,
    /// Red channel alone, replicated.
    Red,
}

impl From<Modality> for Channel {
    fn from(m: Modality) -> Self {
        match m {
            Modality::Colour => Channel::Colour,
            Modality::Infrared => Channel::Infrared,
        }
    }
}

pub struct RenderSpec {
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
}

/// Render one image of `latent`. `rng` supplies pose jitter and pixel noise.
pub fn render(latent: &Latent, channel: Channel, cam: &Camera, spec: &RenderSpec, rng: &mut Rng) -> Tensor {
    let (h, w) = (spec.height, spec.width);
    let dx = cam.shift + rng::uniform(rng, -0.02, 0.02);
    let dy = rng::uniform(rng, -0.015, 0.015);
    let mut out = vec![0.0; 3 * h * w];
    for py in 0..h {
        for px in 0..w {
            let y = (py as f64 + 0.5) / h as f64 - dy;
            let x = (px as f64 + 0.5) / w as f64 - dx;
            let rgb = match (surface(latent, y, x), channel) {
                (Some(c), Channel::Colour) => c,
                (Some(c), Channel::Infrared) => [infrared_intensity(c, latent.emissivity); 3],
                (Some(c), Channel::Red) => [c[0]; 3],
                (None, Channel::Infrared) => [cam.background * 0.5; 3],
                (None, _) => [cam.background; 3],
            };
            let noise = if channel == Channel::Colour {
                [rng::normal(rng), rng::normal(rng), rng::normal(rng)]
            } else {
                [rng::normal(rng); 3]
            };
            for ch in 0..3 {
                let v = rgb[ch] * cam.gain + spec.noise_std * noise[ch];
                out[(ch * h + py) * w + px] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, h, w], out).expect("render shape")
}
