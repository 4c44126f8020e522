use serde::{Deserialize, Serialize};

/// Road surface material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Surface {
    Asphalt,
    Concrete,
    Carpet,
    Wood,
    /// Constant mid-gray albedo with no noise. Useful for isolating lighting.
    Flat,
}

impl Surface {
    pub const ALL: [Surface; 4] = [Surface::Asphalt, Surface::Concrete, Surface::Carpet, Surface::Wood];
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform value in `[0, 1)` for an integer lattice point.
pub(crate) fn hash01(seed: u64, a: i64, b: i64) -> f64 {
    let h = mix64(
        seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
            ^ mix64(a as u64).rotate_left(17)
            ^ mix64((b as u64) ^ 0x5851_f42d_4c95_7f2d),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Bilinear value noise with lattice spacing `cell` metres.
fn value_noise(seed: u64, u: f64, v: f64, cell: f64) -> f64 {
    let (x, y) = (u / cell, v / cell);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let (i, j) = (x0 as i64, y0 as i64);
    let a = hash01(seed, i, j);
    let b = hash01(seed, i + 1, j);
    let c = hash01(seed, i, j + 1);
    let d = hash01(seed, i + 1, j + 1);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

fn gray(g: f64) -> [f64; 3] {
    [g, g, g]
}

fn scale(c: [f64; 3], s: f64) -> [f64; 3] {
    [c[0] * s, c[1] * s, c[2] * s]
}

fn clamp01(c: [f64; 3]) -> [f64; 3] {
    c.map(|x| x.clamp(0.0, 1.0))
}

/// Deterministic albedo of `surface` at world coordinates `(u, v)` metres.
pub fn procedural_texture(surface: Surface, uv: (f64, f64), seed: u64) -> [f64; 3] {
    let (u, v) = uv;
    match surface {
        Surface::Asphalt => {
            let fine = value_noise(seed, u, v, 0.02) - 0.5;
            let grit = hash01(seed ^ 0xa5, (u * 200.0).floor() as i64, (v * 200.0).floor() as i64) - 0.5;
            clamp01(gray(0.22 + 0.08 * fine + 0.04 * grit))
        }
        Surface::Concrete => {
            let blotch = value_noise(seed, u, v, 0.45) - 0.5;
            let fine = value_noise(seed ^ 0x51, u, v, 0.03) - 0.5;
            clamp01(gray(0.68 + 0.18 * blotch + 0.05 * fine))
        }
        Surface::Carpet => {
            let hf = hash01(seed ^ 0xc3, (u * 120.0).floor() as i64, (v * 120.0).floor() as i64);
            let tuft = value_noise(seed, u, v, 0.015);
            clamp01(scale([0.58, 0.17, 0.22], 0.7 + 0.35 * hf + 0.2 * tuft))
        }
        Surface::Wood => {
            let plank_w = 0.14;
            let plank = (v / plank_w).floor() as i64;
            let tone = hash01(seed ^ 0x77, plank, 0);
            // planks are staggered so their ends do not line up
            let offset = hash01(seed ^ 0x78, plank, 1) * 1.2;
            let seg = ((u + offset) / 1.2).floor() as i64;
            let seam = if ((v / plank_w).fract() < 0.05) || (((u + offset) / 1.2).fract() < 0.01) {
                0.7
            } else {
                1.0
            };
            let grain = 0.5 + 0.5 * (u * 45.0 + 6.0 * value_noise(seed, u, v, 0.08) + seg as f64).sin();
            let s = (0.8 + 0.25 * tone) * (0.88 + 0.12 * grain) * seam;
            clamp01(scale([0.62, 0.43, 0.25], s))
        }
        Surface::Flat => gray(0.8),
    }
}

/// Ground outside the road. Kept identical across appearances so that a
/// domain change only alters the road itself and the lighting.
pub(crate) fn void_texture(uv: (f64, f64)) -> [f64; 3] {
    let n = value_noise(0x0b5e, uv.0, uv.1, 0.3) - 0.5;
    clamp01(scale([0.30, 0.42, 0.28], 1.0 + 0.15 * n))
}

#[cfg(test)]
pub(crate) fn luminance(c: [f64; 3]) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}
