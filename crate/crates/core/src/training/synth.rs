//! Procedural training patches: smooth parametric surfaces with textures
//! projected onto them.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{precondition, Result};
use crate::pointcloud::{rgb_to_yuv, Patch, PATCH_SIZE};

#[derive(Debug, Clone, Copy)]
enum Surface {
    Sphere,
    Torus { minor: f64 },
    Superquadric { e1: f64, e2: f64, axes: [f64; 3] },
    Plane { bump: f64, freq: f64 },
}

fn pick_surface(rng: &mut ChaCha8Rng) -> Surface {
    match rng.gen_range(0..4) {
        0 => Surface::Sphere,
        1 => Surface::Torus { minor: rng.gen_range(0.15..0.45) },
        2 => Surface::Superquadric {
            e1: rng.gen_range(0.3..1.8),
            e2: rng.gen_range(0.3..1.8),
            axes: [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)],
        },
        _ => Surface::Plane { bump: rng.gen_range(0.0..0.2), freq: rng.gen_range(1.0..4.0) },
    }
}

fn signed_pow(v: f64, e: f64) -> f64 {
    v.signum() * v.abs().powf(e)
}

fn sample_point(s: Surface, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let u = rng.gen_range(0.0..2.0 * PI);
    let w: f64 = rng.gen_range(-1.0..1.0);
    match s {
        Surface::Sphere => {
            let r = (1.0 - w * w).sqrt();
            [r * u.cos(), r * u.sin(), w]
        }
        Surface::Torus { minor } => {
            let v = w * PI;
            let ring = 1.0 + minor * v.cos();
            [ring * u.cos(), ring * u.sin(), minor * v.sin()]
        }
        Surface::Superquadric { e1, e2, axes } => {
            let v = w * PI / 2.0;
            let (cv, sv) = (v.cos(), v.sin());
            [
                axes[0] * signed_pow(cv, e1) * signed_pow(u.cos(), e2),
                axes[1] * signed_pow(cv, e1) * signed_pow(u.sin(), e2),
                axes[2] * signed_pow(sv, e1),
            ]
        }
        Surface::Plane { bump, freq } => {
            let x = rng.gen_range(-1.0..1.0);
            let y = w;
            let z = bump * (freq * x * PI).sin() * (freq * y * PI).cos() + rng.gen_range(-0.01..0.01);
            [x, y, z]
        }
    }
}

/// Lattice value noise with smoothstep interpolation.
struct ValueNoise {
    table: Vec<f64>,
}

impl ValueNoise {
    const SIZE: usize = 64;

    fn new(rng: &mut ChaCha8Rng) -> Self {
        Self { table: (0..Self::SIZE * Self::SIZE).map(|_| rng.gen()).collect() }
    }

    fn lattice(&self, i: i64, j: i64) -> f64 {
        let n = Self::SIZE as i64;
        self.table[(i.rem_euclid(n) * n + j.rem_euclid(n)) as usize]
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (tx, ty) = (x - fx, y - fy);
        let (sx, sy) = (tx * tx * (3.0 - 2.0 * tx), ty * ty * (3.0 - 2.0 * ty));
        let (i, j) = (fx as i64, fy as i64);
        let a = self.lattice(i, j) * (1.0 - sx) + self.lattice(i + 1, j) * sx;
        let b = self.lattice(i, j + 1) * (1.0 - sx) + self.lattice(i + 1, j + 1) * sx;
        a * (1.0 - sy) + b * sy
    }

    fn octaves(&self, x: f64, y: f64, base: f64, count: usize) -> f64 {
        let (mut amp, mut freq, mut sum, mut norm) = (1.0, base, 0.0, 0.0);
        for _ in 0..count {
            sum += amp * self.at(x * freq, y * freq);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

enum Texture {
    Noise { noise: ValueNoise, base: f64, octaves: usize, palette: [[f64; 3]; 2] },
    Gradient { dir: [f64; 3], palette: [[f64; 3]; 2] },
    Stripes { dir: [f64; 3], freq: f64, palette: [[f64; 3]; 2], noise: ValueNoise },
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn random_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let d: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [d[0] / n, d[1] / n, d[2] / n];
        }
    }
}

fn mix(p: &[[f64; 3]; 2], t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [0, 1, 2].map(|c| p[0][c] * (1.0 - t) + p[1][c] * t)
}

fn pick_texture(rng: &mut ChaCha8Rng) -> Texture {
    let palette = [random_color(rng), random_color(rng)];
    match rng.gen_range(0..3) {
        0 => Texture::Noise {
            noise: ValueNoise::new(rng),
            base: rng.gen_range(0.5..1.5),
            octaves: rng.gen_range(1..4),
            palette,
        },
        1 => Texture::Gradient { dir: random_dir(rng), palette },
        _ => Texture::Stripes {
            dir: random_dir(rng),
            freq: rng.gen_range(1.0..3.0),
            palette,
            noise: ValueNoise::new(rng),
        },
    }
}

fn shade(t: &Texture, p: [f64; 3]) -> [f64; 3] {
    let dot = |d: &[f64; 3]| d[0] * p[0] + d[1] * p[1] + d[2] * p[2];
    match t {
        // Planar projection onto the xy plane.
        Texture::Noise { noise, base, octaves, palette } => {
            mix(palette, noise.octaves(p[0] + 1.0, p[1] + 1.0, *base, *octaves))
        }
        Texture::Gradient { dir, palette } => mix(palette, 0.5 + 0.5 * dot(dir)),
        Texture::Stripes { dir, freq, palette, noise } => {
            let wobble = 0.3 * noise.at(p[0] * 3.0 + 5.0, p[2] * 3.0 + 5.0);
            let s = (dot(dir) * freq * PI + wobble * PI).sin();
            mix(palette, 0.5 + 0.5 * s)
        }
    }
}

fn make_patch(seed: u64, index: u64) -> Patch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let surface = pick_surface(&mut rng);
    let texture = pick_texture(&mut rng);
    let mut positions = Array2::zeros((PATCH_SIZE, 3));
    let mut rgb = Array2::zeros((PATCH_SIZE, 3));
    for i in 0..PATCH_SIZE {
        let p = sample_point(surface, &mut rng);
        let c = shade(&texture, p);
        for d in 0..3 {
            positions[[i, d]] = p[d];
            rgb[[i, d]] = c[d];
        }
    }
    Patch::from_raw(&positions, rgb_to_yuv(&rgb)).expect("generated patches are well formed")
}

/// `n_patches` synthetic patches of 2048 points with YUV colors, normalized
/// into the unit ball. Deterministic in `seed`.
pub fn synth_dataset(n_patches: usize, seed: u64) -> Result<Vec<Patch>> {
    if n_patches == 0 {
        return Err(precondition("n_patches must be at least 1"));
    }
    Ok((0..n_patches as u64)
        .into_par_iter()
        .map(|i| make_patch(seed, i))
        .collect())
}
