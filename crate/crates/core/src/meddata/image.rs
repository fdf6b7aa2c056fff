use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::world::{Features, LabeledSample};
use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;
pub const SKIN_SIZE: usize = 32;
pub const SKIN_CLASS_COUNT: usize = 26;
const MAX_PIXELS: usize = 1 << 26;

/// RGB image, rows top to bottom, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || height.saturating_mul(width) > MAX_PIXELS {
            return Err(Error::Input(format!("bad image size {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::Input(format!(
                "image {height}x{width} needs {} bytes, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Image { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * CHANNELS).collect();
        Image { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Network input: H×W×3 floats in [0, 1].
    pub fn to_input(&self) -> Vec<f32> {
        self.data.iter().map(|&v| f32::from(v) / 255.0).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    /// Clockwise, degrees, multiple of 30 in [0, 330].
    Rotate(u32),
    GaussianBlur(f64),
    WhiteNoise { amplitude: f64, seed: u64 },
    Brightness(f64),
}

/// Applies each op to the source image independently, one output per op.
pub fn augment_image(image: &Image, ops: &[AugmentOp]) -> Result<Vec<Image>> {
    ops.iter().map(|op| apply_op(image, *op)).collect()
}

pub fn apply_op(image: &Image, op: AugmentOp) -> Result<Image> {
    match op {
        AugmentOp::Rotate(deg) => rotate(image, deg),
        AugmentOp::GaussianBlur(sigma) => gaussian_blur(image, sigma),
        AugmentOp::WhiteNoise { amplitude, seed } => white_noise(image, amplitude, seed),
        AugmentOp::Brightness(f) => brightness(image, f),
    }
}

pub fn rotate(image: &Image, degrees: u32) -> Result<Image> {
    if degrees % 30 != 0 || degrees > 330 {
        return Err(Error::Input(format!("rotation must be a multiple of 30 in [0, 330], got {degrees}")));
    }
    let (h, w) = (image.height, image.width);
    let src = |y: usize, x: usize| image.pixel(y, x);
    let permute = |oh: usize, ow: usize, f: &dyn Fn(usize, usize) -> [u8; 3]| {
        let mut data = Vec::with_capacity(oh * ow * CHANNELS);
        for y in 0..oh {
            for x in 0..ow {
                data.extend_from_slice(&f(y, x));
            }
        }
        Image { height: oh, width: ow, data }
    };
    Ok(match degrees {
        0 => image.clone(),
        90 => permute(w, h, &|y, x| src(h - 1 - x, y)),
        180 => permute(h, w, &|y, x| src(h - 1 - y, w - 1 - x)),
        270 => permute(w, h, &|y, x| src(x, w - 1 - y)),
        _ => rotate_bilinear(image, f64::from(degrees).to_radians()),
    })
}

fn rotate_bilinear(image: &Image, theta: f64) -> Image {
    let (h, w) = (image.height, image.width);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = theta.sin_cos();
    let mut data = vec![0u8; image.data.len()];
    let fetch = |y: isize, x: isize, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            f64::from(image.data[(y as usize * w + x as usize) * CHANNELS + c])
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // Inverse of a clockwise turn in y-down coordinates.
            let sx = dx * cos + dy * sin + cx;
            let sy = -dx * sin + dy * cos + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..CHANNELS {
                let v = fetch(y0, x0, c) * (1.0 - fx) * (1.0 - fy)
                    + fetch(y0, x0 + 1, c) * fx * (1.0 - fy)
                    + fetch(y0 + 1, x0, c) * (1.0 - fx) * fy
                    + fetch(y0 + 1, x0 + 1, c) * fx * fy;
                data[(y * w + x) * CHANNELS + c] = clamp_u8(v);
            }
        }
    }
    Image { height: h, width: w, data }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Normalized kernel of radius ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Input(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|k| k / z).collect())
}

/// Separable blur with clamped edges.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    let k = gaussian_kernel(sigma)?;
    let r = (k.len() / 2) as isize;
    let (h, w) = (image.height as isize, image.width as isize);
    let idx = |y: isize, x: isize, c: usize| ((y * w + x) as usize) * CHANNELS + c;
    let mut tmp = vec![0.0f64; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                tmp[idx(y, x, c)] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * f64::from(image.data[idx(y, (x + j as isize - r).clamp(0, w - 1), c)]))
                    .sum();
            }
        }
    }
    let mut data = vec![0u8; image.data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let v: f64 =
                    k.iter().enumerate().map(|(j, kv)| kv * tmp[idx((y + j as isize - r).clamp(0, h - 1), x, c)]).sum();
                data[idx(y, x, c)] = clamp_u8(v);
            }
        }
    }
    Ok(Image { height: image.height, width: image.width, data })
}

/// Adds uniform noise in [-amplitude, amplitude] to every channel value.
pub fn white_noise(image: &Image, amplitude: f64, seed: u64) -> Result<Image> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::Input(format!("noise amplitude must be non-negative, got {amplitude}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = image
        .data
        .iter()
        .map(|&v| {
            let n = if amplitude > 0.0 { rng.random_range(-amplitude..=amplitude) } else { 0.0 };
            clamp_u8(f64::from(v) + n)
        })
        .collect();
    Ok(Image { height: image.height, width: image.width, data })
}

pub fn brightness(image: &Image, factor: f64) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Input(format!("brightness factor must be positive, got {factor}")));
    }
    let data = image.data.iter().map(|&v| clamp_u8(f64::from(v) * factor)).collect();
    Ok(Image { height: image.height, width: image.width, data })
}

/// Parses a binary PPM (P6, maxval 255).
pub fn parse_p6(bytes: &[u8]) -> Result<Image> {
    let bad = |m: &str| Error::Input(format!("not a P6 image: {m}"));
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Whitespace and comments before each header number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if pos == start || pos - start > 9 {
            return Err(bad("bad header number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos]).ok().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after header"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
        return Err(bad("bad dimensions"));
    }
    let need = width * height * CHANNELS;
    if bytes.len() - pos != need {
        return Err(bad(&format!("expected {need} pixel bytes, found {}", bytes.len() - pos)));
    }
    Image::new(height, width, bytes[pos..].to_vec())
}

pub fn encode_p6(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h / 60.0).rem_euclid(6.0);
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m) * 255.0, (g + m) * 255.0, (b + m) * 255.0]
}

/// Procedural skin texture for one of 26 classes: class hue over a skin
/// tone, class stripe frequency and orientation, class spot density.
pub fn skin_image(class: usize, seed: u64) -> Result<Image> {
    if class >= SKIN_CLASS_COUNT {
        return Err(Error::Input(format!("skin class {class} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 48));
    let n = SKIN_SIZE;
    let tint = hsv_to_rgb(class as f64 * 360.0 / SKIN_CLASS_COUNT as f64, 0.7, 0.85);
    let tone = [205.0, 160.0, 130.0];
    let base: Vec<f64> = (0..3).map(|c| 0.45 * tone[c] + 0.55 * tint[c]).collect();
    let freq = 1.0 + (class % 4) as f64;
    let orient = (class / 4) % 3;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let spots = 1 + (class * 7) % 9;
    let centers: Vec<(f64, f64, f64)> = (0..spots)
        .map(|_| (rng.random_range(0.0..n as f64), rng.random_range(0.0..n as f64), rng.random_range(1.5..3.0)))
        .collect();
    let gain: f64 = rng.random_range(0.9..1.1);
    let mut data = Vec::with_capacity(n * n * CHANNELS);
    for y in 0..n {
        for x in 0..n {
            let t = match orient {
                0 => y as f64,
                1 => x as f64,
                _ => (x + y) as f64 / std::f64::consts::SQRT_2,
            };
            let stripe = 35.0 * (std::f64::consts::TAU * freq * t / n as f64 + phase).sin();
            let in_spot = centers.iter().any(|(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
            for c in 0..CHANNELS {
                let mut v = base[c] + stripe;
                if in_spot {
                    v *= 0.35;
                }
                v = v * gain + rng.random_range(-10.0..10.0);
                data.push(clamp_u8(v));
            }
        }
    }
    Image::new(n, n, data)
}

/// `per_class` images of every class; with `augment`, each base image also
/// yields a random 90° multiple rotation and brightness jitter.
pub fn skin_dataset(per_class: usize, augment: bool, seed: u64) -> Result<Vec<LabeledSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * SKIN_CLASS_COUNT);
    for i in 0..per_class {
        for class in 0..SKIN_CLASS_COUNT {
            let mut img = skin_image(class, rng.random::<u64>() ^ i as u64)?;
            if augment {
                img = rotate(&img, 90 * rng.random_range(0..4u32))?;
                img = brightness(&img, rng.random_range(0.85..1.15))?;
            }
            out.push(LabeledSample { features: Features::Image(img), label: class as u32 });
        }
    }
    Ok(out)
}
