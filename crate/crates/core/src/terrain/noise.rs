//! Seeded gradient noise and its fractal sum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TerrainError;

/// Improved-Perlin style gradient noise with a seeded permutation table.
#[derive(Clone)]
pub struct PerlinNoise {
    perm: [u8; 512],
}

const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 1.0),
    (-1.0, 1.0),
    (1.0, -1.0),
    (-1.0, -1.0),
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
];

/// 6t^5 - 15t^4 + 10t^3
#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

impl PerlinNoise {
    pub fn new(seed: u64) -> Self {
        let mut table: Vec<u8> = (0..=255u8).collect();
        table.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    #[inline]
    fn corner(&self, xi: usize, yi: usize, dx: f64, dy: f64) -> f64 {
        let h = self.perm[self.perm[xi] as usize + yi] & 7;
        let (gx, gy) = GRADIENTS[h as usize];
        gx * dx + gy * dy
    }

    /// Noise value in `[-1, 1]`; exactly zero on integer lattice points.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        self.sample_unclamped(x, y).clamp(-1.0, 1.0)
    }

    pub(crate) fn sample_unclamped(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let dx = x - x0;
        let dy = y - y0;
        let xi = (x0 as i64).rem_euclid(256) as usize;
        let yi = (y0 as i64).rem_euclid(256) as usize;
        let xi1 = (xi + 1) & 255;
        let yi1 = (yi + 1) & 255;

        let n00 = self.corner(xi, yi, dx, dy);
        let n10 = self.corner(xi1, yi, dx - 1.0, dy);
        let n01 = self.corner(xi, yi1, dx, dy - 1.0);
        let n11 = self.corner(xi1, yi1, dx - 1.0, dy - 1.0);

        let u = fade(dx);
        let v = fade(dy);
        lerp(v, lerp(u, n00, n10), lerp(u, n01, n11))
    }

    /// Fractal sum normalized by the total amplitude.
    pub fn fbm(&self, x: f64, y: f64, params: &FbmParams) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amplitude = 1.0;
        let mut frequency = 1.0;
        for _ in 0..params.octaves {
            total += amplitude * self.sample(x * frequency, y * frequency);
            norm += amplitude;
            amplitude *= params.persistence;
            frequency *= params.lacunarity;
        }
        (total / norm).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmParams {
    pub octaves: u32,
    pub persistence: f64,
    pub lacunarity: f64,
}

impl FbmParams {
    pub fn new(octaves: u32, persistence: f64, lacunarity: f64) -> Result<Self, TerrainError> {
        if octaves < 1 || !(persistence > 0.0 && persistence < 1.0) || !(lacunarity > 1.0) || !lacunarity.is_finite() {
            return Err(TerrainError::InvalidParams(format!(
                "octaves={octaves} persistence={persistence} lacunarity={lacunarity}"
            )));
        }
        Ok(Self {
            octaves,
            persistence,
            lacunarity,
        })
    }
}

/// Single-octave noise for `seed` at `(x, y)`.
///
/// Builds the permutation table on every call; hold a [`PerlinNoise`] when
/// sampling in bulk.
pub fn perlin2(seed: u64, x: f64, y: f64) -> f64 {
    PerlinNoise::new(seed).sample(x, y)
}

pub fn fbm(seed: u64, x: f64, y: f64, octaves: u32, persistence: f64, lacunarity: f64) -> Result<f64, TerrainError> {
    let params = FbmParams::new(octaves, persistence, lacunarity)?;
    Ok(PerlinNoise::new(seed).fbm(x, y, &params))
}
