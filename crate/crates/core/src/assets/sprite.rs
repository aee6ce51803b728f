use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AssetError;

pub type Rgba = [u8; 4];
pub type Rgb = [u8; 3];

pub const DEFAULT_TOLERANCE: u8 = 24;
pub const DEFAULT_PALETTE_SIZE: usize = 32;
pub const ALPHA_THRESHOLD: u8 = 128;
const TRANSPARENT: Rgba = [0, 0, 0, 0];

/// Row-major RGBA pixels with an optional palette.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sprite {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<Rgba>,
    pub palette: Option<Vec<Rgb>>,
}

impl Sprite {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgba>) -> Self {
        assert_eq!(pixels.len(), (width * height) as usize, "pixel count mismatch");
        Self {
            width,
            height,
            pixels,
            palette: None,
        }
    }

    pub fn filled(width: u32, height: u32, color: Rgba) -> Self {
        Self::new(width, height, vec![color; (width * height) as usize])
    }

    pub fn get(&self, x: u32, y: u32) -> Rgba {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, c: Rgba) {
        self.pixels[(y * self.width + x) as usize] = c;
    }

    pub fn is_opaque(c: Rgba) -> bool {
        c[3] >= ALPHA_THRESHOLD
    }

    pub fn load_png(path: &Path) -> Result<Self, AssetError> {
        let img = image::open(path)
            .map_err(|e| AssetError::Image(format!("{}: {e}", path.display())))?
            .into_rgba8();
        let (w, h) = img.dimensions();
        Ok(Self::new(w, h, img.pixels().map(|p| p.0).collect()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), AssetError> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbaImage::from_raw(self.width, self.height, raw).expect("buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| AssetError::Image(format!("{}: {e}", path.display())))
    }

    /// Whether every opaque pixel uses a palette colour.
    pub fn respects_palette(&self) -> bool {
        match &self.palette {
            None => true,
            Some(p) => self
                .pixels
                .iter()
                .filter(|c| Self::is_opaque(**c))
                .all(|c| p.contains(&[c[0], c[1], c[2]])),
        }
    }
}

fn dist2(a: Rgb, b: Rgb) -> u32 {
    a.iter().zip(&b).map(|(x, y)| (i32::from(*x) - i32::from(*y)).pow(2) as u32).sum()
}

/// Nearest palette colour by squared RGB distance, earliest index on ties.
pub fn nearest_palette_color(c: Rgb, palette: &[Rgb]) -> Rgb {
    let mut best = palette[0];
    let mut best_d = dist2(c, best);
    for &p in &palette[1..] {
        let d = dist2(c, p);
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Resamples into a `size * pixels_per_tile` square (aspect preserved,
/// transparent letterbox, nearest neighbour), thresholds alpha and snaps
/// opaque pixels onto `palette`.
pub fn unify_sprite(sprite: &Sprite, target_size_tiles: u32, pixels_per_tile: u32, palette: &[Rgb]) -> Result<Sprite, AssetError> {
    if palette.is_empty() {
        return Err(AssetError::EmptyPalette);
    }
    if pixels_per_tile == 0 || target_size_tiles == 0 || sprite.width == 0 || sprite.height == 0 {
        return Err(AssetError::InvalidSprite("zero dimension".into()));
    }
    let side = target_size_tiles * pixels_per_tile;
    let (w, h) = (u64::from(sprite.width), u64::from(sprite.height));
    let (new_w, new_h) = if w >= h {
        (side, ((h * u64::from(side) + w / 2) / w).max(1) as u32)
    } else {
        (((w * u64::from(side) + h / 2) / h).max(1) as u32, side)
    };
    let (ox, oy) = ((side - new_w) / 2, (side - new_h) / 2);
    let mut out = Sprite::filled(side, side, TRANSPARENT);
    for y in 0..new_h {
        let sy = ((u64::from(y) * h) / u64::from(new_h)) as u32;
        for x in 0..new_w {
            let sx = ((u64::from(x) * w) / u64::from(new_w)) as u32;
            let c = sprite.get(sx, sy);
            let mapped = if Sprite::is_opaque(c) {
                let [r, g, b] = nearest_palette_color([c[0], c[1], c[2]], palette);
                [r, g, b, 255]
            } else {
                TRANSPARENT
            };
            out.set(ox + x, oy + y, mapped);
        }
    }
    out.palette = Some(palette.to_vec());
    Ok(out)
}

fn channel_gap(a: Rgba, b: [f64; 4]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (f64::from(*x) - y).abs()).fold(0.0, f64::max)
}

/// Clears the background by flood fill from the four corners.
///
/// A pixel joins the fill when it is 4-adjacent to a filled pixel and within
/// `tolerance` (per channel) of the mean of its already-filled 8-neighbours,
/// so slow gradients are followed. A corner only seeds the fill when its 2×2
/// patch is flat within tolerance; busy corners are taken to be subject.
/// If the fill would swallow the whole image nothing is removed.
pub fn remove_background(sprite: &Sprite, tolerance: u8) -> Sprite {
    let (w, h) = (sprite.width as i64, sprite.height as i64);
    let mut out = sprite.clone();
    if w == 0 || h == 0 {
        return out;
    }
    let tol = f64::from(tolerance);
    let at = |x: i64, y: i64| sprite.pixels[(y * w + x) as usize];
    let mut filled = vec![false; (w * h) as usize];
    let mut queue = VecDeque::new();

    for (cx, cy, dx, dy) in [(0, 0, 1, 1), (w - 1, 0, -1, 1), (0, h - 1, 1, -1), (w - 1, h - 1, -1, -1)] {
        let seed = at(cx, cy);
        let flat = [(cx + dx, cy), (cx, cy + dy), (cx + dx, cy + dy)]
            .iter()
            .filter(|(x, y)| *x >= 0 && *x < w && *y >= 0 && *y < h)
            .all(|&(x, y)| channel_gap(at(x, y), seed.map(f64::from)) <= tol);
        let i = (cy * w + cx) as usize;
        if flat && !filled[i] {
            filled[i] = true;
            queue.push_back((cx, cy));
        }
    }

    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in [(x + 1, y), (x, y + 1), (x - 1, y), (x, y - 1)] {
            if nx < 0 || ny < 0 || nx >= w || ny >= h || filled[(ny * w + nx) as usize] {
                continue;
            }
            let mut sum = [0.0; 4];
            let mut n = 0.0;
            for ey in ny - 1..=ny + 1 {
                for ex in nx - 1..=nx + 1 {
                    if ex >= 0 && ey >= 0 && ex < w && ey < h && filled[(ey * w + ex) as usize] {
                        let c = at(ex, ey);
                        for k in 0..4 {
                            sum[k] += f64::from(c[k]);
                        }
                        n += 1.0;
                    }
                }
            }
            let mean = sum.map(|s| s / n);
            if channel_gap(at(nx, ny), mean) <= tol {
                filled[(ny * w + nx) as usize] = true;
                queue.push_back((nx, ny));
            }
        }
    }

    if filled.iter().all(|f| *f) {
        return out;
    }
    for (p, f) in out.pixels.iter_mut().zip(&filled) {
        if *f {
            *p = TRANSPARENT;
        }
    }
    out
}
