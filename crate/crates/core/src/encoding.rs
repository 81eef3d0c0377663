//! Image → input spike trains.
//!
//! The image is convolved with a 5×5 on-center receptive field (zero padded
//! so the response keeps the image size), negative responses are dropped,
//! the rest is scaled so the strongest pixel fires at `f_max`, and each pixel
//! then emits Bernoulli spikes with probability `rate · 1 ms` per step.

use rand::Rng;

use crate::seed::rng_for;
use crate::snn::{SpikeRecord, Time};

/// Default maximum input firing rate (spikes per second).
pub const F_MAX: f64 = 150.0;

/// Kernel weights indexed by Manhattan distance from the center.
pub const ON_CENTER_WEIGHTS: [f64; 5] = [1.0, 0.625, 0.125, -0.125, -0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Self {
        assert_eq!(bytes.len(), height * width);
        Self {
            height,
            width,
            pixels: bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptiveFieldKernel {
    pub size: usize,
    pub weights: Vec<f64>,
}

impl ReceptiveFieldKernel {
    /// The 5×5 on-center field.
    pub fn on_center() -> Self {
        let size: usize = 5;
        let c = size / 2;
        let weights = (0..size * size)
            .map(|idx| {
                let (r, col) = (idx / size, idx % size);
                ON_CENTER_WEIGHTS[r.abs_diff(c) + col.abs_diff(c)]
            })
            .collect();
        Self { size, weights }
    }

    pub fn identity(size: usize) -> Self {
        assert!(size % 2 == 1);
        let mut weights = vec![0.0; size * size];
        weights[(size / 2) * size + size / 2] = 1.0;
        Self { size, weights }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.size + c]
    }
}

/// Same-size correlation with a zero border of `size / 2` pixels.
pub fn convolve(image: &Image, kernel: &ReceptiveFieldKernel) -> Vec<f64> {
    let (h, w) = (image.height as isize, image.width as isize);
    let k = kernel.size as isize;
    let pad = k / 2;
    let mut out = vec![0.0; image.pixels.len()];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for k1 in 0..k {
                let r = i + k1 - pad;
                if r < 0 || r >= h {
                    continue;
                }
                for k2 in 0..k {
                    let c = j + k2 - pad;
                    if c < 0 || c >= w {
                        continue;
                    }
                    acc += image.pixels[(r * w + c) as usize] * kernel.at(k1 as usize, k2 as usize);
                }
            }
            out[(i * w + j) as usize] = acc;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateMap {
    /// Firing rate per input channel, spikes per second.
    pub rates: Vec<f64>,
}

impl RateMap {
    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }
}

/// Clamps negatives to zero and scales by the per-image maximum so the
/// strongest channel fires at `f_max`. An all-nonpositive response maps to
/// all-zero rates.
pub fn to_rates(response: &[f64], f_max: f64) -> RateMap {
    let max = response.iter().copied().fold(0.0, f64::max);
    let rates = if max > 0.0 {
        response.iter().map(|&r| r.max(0.0) / max * f_max).collect()
    } else {
        vec![0.0; response.len()]
    };
    RateMap { rates }
}

/// A pre-encoded dataset item. `id` keys its random streams; `label` is the
/// true class, or a pseudo-label once self-training has assigned one.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub label: usize,
    pub rates: RateMap,
}

pub fn encode_image(image: &Image, f_max: f64) -> RateMap {
    to_rates(&convolve(image, &ReceptiveFieldKernel::on_center()), f_max)
}

/// Bernoulli approximation of a Poisson process on the 1 ms grid, for
/// `t = 1..=duration`.
pub fn poisson_encode<R: Rng + ?Sized>(rates: &RateMap, duration: Time, rng: &mut R) -> SpikeRecord {
    let probs: Vec<(usize, f64)> = rates
        .rates
        .iter()
        .enumerate()
        .filter(|(_, &r)| r > 0.0)
        .map(|(i, &r)| (i, (r * 1e-3).min(1.0)))
        .collect();
    let mut events = Vec::new();
    for t in 1..=duration {
        for &(i, p) in &probs {
            if rng.random::<f64>() < p {
                events.push((t, i));
            }
        }
    }
    // Generated in (t, index) order, so no sort is needed.
    SpikeRecord::from_events(rates.len(), events).expect("events generated in order")
}

pub fn poisson_encode_seeded(rates: &RateMap, duration: Time, seed: u64) -> SpikeRecord {
    poisson_encode(rates, duration, &mut rng_for(seed, "poisson", 0, 0))
}
