//! Synthetic class-conditional blob dataset.
//!
//! A CI-friendly stand-in: each class paints a Gaussian blob with a
//! class-specific color direction and size at a random position over a gray
//! background, plus pixel noise. Class geometry is derived from the seed
//! alone, so train and test splits generated from the same seed share the
//! same classes. Amplitudes default low enough that trained classifiers
//! keep small margins, which is what makes small-budget gradient attacks
//! behave the way they do on natural images.

use super::{quantize_pixel, Dataset, Split};
use crate::error::Result;
use crate::seed;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Peak additive amplitude of the class blob.
    pub amplitude: f32,
    /// Std of iid per-pixel Gaussian noise.
    pub noise_sigma: f32,
    /// Blob std as a fraction of the image side.
    pub blob_sigma_frac: f32,
    /// Half-width of the per-sample uniform amplitude factor: each image
    /// scales its blob by `uniform(1 - j, 1 + j)`. Spreads class margins so
    /// instances range from barely separable to easy.
    pub amplitude_jitter: f32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 10,
            channels: 3,
            height: 16,
            width: 16,
            train_per_class: 150,
            test_per_class: 50,
            amplitude: 0.12,
            noise_sigma: 0.05,
            blob_sigma_frac: 0.18,
            amplitude_jitter: 0.5,
        }
    }
}

struct ClassGeometry {
    /// Unit color direction per channel.
    color: Vec<f32>,
    /// Blob std in pixels.
    sigma: f32,
}

fn class_geometry(spec: &SyntheticSpec, class: usize) -> ClassGeometry {
    let c = spec.classes as f32;
    let k = class as f32;
    // well-spread unit color directions: a Fibonacci sphere for 3 channels,
    // a cosine lattice otherwise
    let mut color: Vec<f32> = if spec.channels == 3 {
        let z = 1.0 - 2.0 * (k + 0.5) / c;
        let r = (1.0 - z * z).max(0.0).sqrt();
        let phi = k * 2.399_963; // golden angle
        vec![r * phi.cos(), r * phi.sin(), z]
    } else {
        (0..spec.channels)
            .map(|ch| (std::f32::consts::TAU * k * (ch as f32 + 1.0) / c + 0.7 * ch as f32).cos())
            .collect()
    };
    let norm = color.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
    for v in &mut color {
        *v /= norm;
    }
    let base = spec.blob_sigma_frac * spec.height.min(spec.width) as f32;
    let sigma = base * (1.0 + 0.6 * k / c);
    ClassGeometry { color, sigma }
}

/// Generate one split. Same `(spec, seed)` always yields the same data;
/// the two splits draw from disjoint sample streams.
pub fn synthetic_dataset(spec: &SyntheticSpec, master_seed: u64, split: Split) -> Result<Dataset> {
    let per_class = match split {
        Split::Train => spec.train_per_class,
        Split::Test => spec.test_per_class,
    };
    let (h, w, ch) = (spec.height, spec.width, spec.channels);
    let chw = ch * h * w;
    let n = spec.classes * per_class;
    let mut images = vec![0.0f32; n * chw];
    let mut labels = vec![0u8; n];
    let noise = Normal::new(0.0f32, spec.noise_sigma).expect("noise sigma");
    let stream_tag = match split {
        Split::Train => "synthetic-train",
        Split::Test => "synthetic-test",
    };
    for class in 0..spec.classes {
        let geom = class_geometry(spec, class);
        let mut rng = seed::stream(master_seed, stream_tag, class as u64);
        for sample in 0..per_class {
            let idx = class * per_class + sample;
            labels[idx] = class as u8;
            let img = &mut images[idx * chw..(idx + 1) * chw];
            // keep the blob center inside the middle of the frame
            let cy = rng.random_range(0.3..0.7) * h as f32;
            let cx = rng.random_range(0.3..0.7) * w as f32;
            let jitter = spec.amplitude_jitter.clamp(0.0, 1.0);
            let amp = spec.amplitude * rng.random_range(1.0 - jitter..=1.0 + jitter);
            let inv_two_sigma2 = 1.0 / (2.0 * geom.sigma * geom.sigma);
            for c in 0..ch {
                for y in 0..h {
                    for x in 0..w {
                        let dy = y as f32 + 0.5 - cy;
                        let dx = x as f32 + 0.5 - cx;
                        let bump = (-(dy * dy + dx * dx) * inv_two_sigma2).exp();
                        let v = 0.5
                            + amp * geom.color[c] * bump
                            + noise.sample(&mut rng);
                        img[(c * h + y) * w + x] = quantize_pixel(v);
                    }
                }
            }
        }
    }
    Dataset::new(images, labels, (ch, h, w), split, "synthetic")
}

/// Train and test splits sharing one class geometry.
pub fn synthetic_pair(spec: &SyntheticSpec, master_seed: u64) -> Result<(Dataset, Dataset)> {
    Ok((
        synthetic_dataset(spec, master_seed, Split::Train)?,
        synthetic_dataset(spec, master_seed, Split::Test)?,
    ))
}
