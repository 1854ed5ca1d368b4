//! Seeded synthetic data: moving pressure-like wells, filament fields and
//! advected smooth fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::TemporalStack;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::track::{Track, TrackPoint};

/// Parameters of a synthetic vortex scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Slice extents `[nx, ny]`.
    pub dims: [usize; 2],
    pub steps: usize,
    pub n_vortices: usize,
    pub depth: (f64, f64),
    /// Gaussian width in nodes.
    pub radius: (f64, f64),
    /// Nodes per time step.
    pub speed: (f64, f64),
    /// Largest acceleration as a fraction of speed per step.
    pub curvature: f64,
    pub background_amp: f64,
    pub noise_amp: f64,
    /// Chance per step that a well weakens for 1 to 3 steps.
    pub dropout_rate: f64,
    /// Depth multiplier while weakened.
    pub dropout_factor: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dims: [65, 65],
            steps: 32,
            n_vortices: 4,
            depth: (1.5, 3.0),
            radius: (2.5, 4.0),
            speed: (0.25, 0.8),
            curvature: 0.03,
            background_amp: 0.3,
            noise_amp: 0.01,
            dropout_rate: 0.04,
            dropout_factor: 0.2,
            seed: 0,
        }
    }
}

struct Vortex {
    p0: [f64; 2],
    v: [f64; 2],
    a: [f64; 2],
    radius: f64,
    depth: Vec<f64>,
}

impl Vortex {
    fn center(&self, t: usize) -> [f64; 2] {
        let t = t as f64;
        [
            self.p0[0] + self.v[0] * t + 0.5 * self.a[0] * t * t,
            self.p0[1] + self.v[1] * t + 0.5 * self.a[1] * t * t,
        ]
    }
}

/// Generates the stack and the true well-centre trajectories.
///
/// Trajectories keep only steps whose centre lies inside the grid.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<(TemporalStack, Vec<Track>)> {
    let [nx, ny] = cfg.dims;
    if nx < 33 || ny < 33 {
        return Err(Error::InvalidInput(format!("dims {:?} below 33 per axis", cfg.dims)));
    }
    if cfg.steps < 8 {
        return Err(Error::InvalidInput(format!("{} steps, need at least 8", cfg.steps)));
    }
    if cfg.radius.1 >= nx.min(ny) as f64 || cfg.radius.0 <= 0.0 || cfg.radius.0 > cfg.radius.1 {
        return Err(Error::InvalidInput(format!("invalid radius range {:?}", cfg.radius)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.gen_range(lo..hi)
        } else {
            lo
        }
    };

    let waves: Vec<([f64; 2], f64, f64)> = (0..3)
        .map(|_| {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = rng.gen_range(0.05..0.15);
            ([k * ang.cos(), k * ang.sin()], rng.gen_range(0.0..6.3), rng.gen_range(-0.05..0.05))
        })
        .collect();

    let margin = 6.0f64.min(nx.min(ny) as f64 / 4.0);
    let vortices: Vec<Vortex> = (0..cfg.n_vortices)
        .map(|_| {
            let p0 = [
                rng.gen_range(margin..nx as f64 - 1.0 - margin),
                rng.gen_range(margin..ny as f64 - 1.0 - margin),
            ];
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = uniform(&mut rng, cfg.speed);
            let v = [speed * heading.cos(), speed * heading.sin()];
            let turn = rng.gen_range(-1.0..1.0) * cfg.curvature * speed;
            let a = [-v[1] / speed.max(1e-12) * turn, v[0] / speed.max(1e-12) * turn];
            let radius = uniform(&mut rng, cfg.radius);
            let base = uniform(&mut rng, cfg.depth);
            let mut depth = vec![base; cfg.steps];
            let mut t = 0;
            while t < cfg.steps {
                if rng.gen_bool(cfg.dropout_rate.clamp(0.0, 1.0)) {
                    let len = rng.gen_range(1..=3);
                    for d in depth.iter_mut().skip(t).take(len) {
                        *d = base * cfg.dropout_factor;
                    }
                    t += len + 1;
                } else {
                    t += 1;
                }
            }
            Vortex { p0, v, a, radius, depth }
        })
        .collect();

    let mut slices = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        let centers: Vec<[f64; 2]> = vortices.iter().map(|v| v.center(t)).collect();
        let field = Field::from_fn(&cfg.dims, |i| {
            let (x, y) = (i[0] as f64, i[1] as f64);
            let mut val: f64 = waves
                .iter()
                .map(|(k, p, w)| cfg.background_amp * (k[0] * x + k[1] * y + p + w * t as f64).sin())
                .sum::<f64>()
                / 3f64.sqrt();
            for (v, c) in vortices.iter().zip(&centers) {
                let r2 = (x - c[0]).powi(2) + (y - c[1]).powi(2);
                val -= v.depth[t] * (-r2 / (2.0 * v.radius * v.radius)).exp();
            }
            val
        })?;
        slices.push(field);
    }
    if cfg.noise_amp > 0.0 {
        for s in &mut slices {
            for v in s.data_mut() {
                *v += rng.gen_range(-cfg.noise_amp..cfg.noise_amp);
            }
        }
    }

    let truth = vortices
        .iter()
        .map(|v| Track {
            points: (0..cfg.steps)
                .filter_map(|t| {
                    let c = v.center(t);
                    let inside = c[0] >= 0.0 && c[1] >= 0.0 && c[0] <= (nx - 1) as f64 && c[1] <= (ny - 1) as f64;
                    inside.then_some(TrackPoint { t, x: c[0], y: c[1], intensity: v.depth[t] })
                })
                .collect(),
        })
        .filter(|t: &Track| !t.points.is_empty())
        .collect();
    Ok((TemporalStack::new(slices)?, truth))
}

/// Thin curved ridges of unit height on a weakly noisy background.
pub fn filament_field(dims: [usize; 2], n_filaments: usize, seed: u64) -> Result<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [nx, ny] = dims;
    let curves: Vec<Vec<[f64; 2]>> = (0..n_filaments)
        .map(|_| {
            let start = [rng.gen_range(0.0..nx as f64), rng.gen_range(0.0..ny as f64)];
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let wiggle = rng.gen_range(0.02..0.08);
            let phase = rng.gen_range(0.0..6.3);
            let length = rng.gen_range(0.3..0.7) * nx.max(ny) as f64;
            let mut pts = Vec::new();
            let mut p = start;
            let mut s = 0.0;
            while s < length {
                pts.push(p);
                let h = heading + 0.8 * (wiggle * s + phase).sin();
                p = [p[0] + 0.5 * h.cos(), p[1] + 0.5 * h.sin()];
                s += 0.5;
            }
            pts
        })
        .collect();
    let width = 0.8;
    Field::from_fn(&dims, |i| {
        let (x, y) = (i[0] as f64, i[1] as f64);
        let mut v = 0.0f64;
        for c in &curves {
            let d2 = c
                .iter()
                .map(|p| (x - p[0]).powi(2) + (y - p[1]).powi(2))
                .fold(f64::INFINITY, f64::min);
            v = v.max((-d2 / (2.0 * width * width)).exp());
        }
        v + rng.gen_range(0.0..0.02)
    })
}

/// A smooth random field translated by `velocity` nodes per step.
pub fn advected_stack(dims: [usize; 2], steps: usize, velocity: [f64; 2], seed: u64) -> Result<TemporalStack> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes: Vec<([f64; 2], f64, f64)> = (0..6)
        .map(|_| {
            let ang = rng.gen_range(0.0..std::f64::consts::TAU);
            let k = rng.gen_range(0.04..0.25);
            ([k * ang.cos(), k * ang.sin()], rng.gen_range(0.0..6.3), rng.gen_range(0.2..1.0))
        })
        .collect();
    let slices = (0..steps)
        .map(|t| {
            let shift = [velocity[0] * t as f64, velocity[1] * t as f64];
            Field::from_fn(&dims, |i| {
                let (x, y) = (i[0] as f64 - shift[0], i[1] as f64 - shift[1]);
                modes.iter().map(|(k, p, a)| a * (k[0] * x + k[1] * y + p).sin()).sum()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TemporalStack::new(slices)
}
