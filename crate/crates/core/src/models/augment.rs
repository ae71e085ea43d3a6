//! Random horizontal flip and padded random crop.

use rand::Rng;

/// Augment one `[c, h, w]` image: flip horizontally with probability
/// `flip_p`, then crop the original extent out of a zero-padded frame at a
/// uniformly random offset. Output spatial size always equals the input.
///
/// The RNG is consumed in a fixed order (flip draw, then dy, then dx) even
/// when `pad` is 0, so augmentation streams stay aligned across
/// configurations.
pub fn augment(
    image: &[f32],
    dims: (usize, usize, usize),
    flip_p: f64,
    pad: usize,
    rng: &mut impl Rng,
) -> Vec<f32> {
    let mut out = vec![0.0f32; image.len()];
    augment_into(image, &mut out, dims, flip_p, pad, rng);
    out
}

pub(crate) fn augment_into(
    image: &[f32],
    out: &mut [f32],
    (c, h, w): (usize, usize, usize),
    flip_p: f64,
    pad: usize,
    rng: &mut impl Rng,
) {
    let flip = rng.random_bool(flip_p);
    let dy = rng.random_range(0..=2 * pad) as isize;
    let dx = rng.random_range(0..=2 * pad) as isize;
    let p = pad as isize;
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            let sy = y as isize + dy - p;
            for x in 0..w {
                let sx = x as isize + dx - p;
                out[base + y * w + x] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize
                {
                    let src_x = if flip { w - 1 - sx as usize } else { sx as usize };
                    image[base + sy as usize * w + src_x]
                } else {
                    0.0
                };
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn ramp(c: usize, h: usize, w: usize) -> Vec<f32> {
        (0..c * h * w).map(|v| (v % 256) as f32 / 255.0).collect()
    }

    #[test]
    fn no_pad_no_flip_is_identity() {
        let img = ramp(3, 4, 4);
        let mut rng = seed::stream(0, "aug", 0);
        let out = augment(&img, (3, 4, 4), 0.0, 0, &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ramp(2, 3, 5);
        // flip_p = 1.0 forces the flip; pad 0 keeps geometry fixed
        let mut rng = seed::stream(1, "aug", 0);
        let once = augment(&img, (2, 3, 5), 1.0, 0, &mut rng);
        let mut rng = seed::stream(2, "aug", 0);
        let twice = augment(&once, (2, 3, 5), 1.0, 0, &mut rng);
        assert_ne!(once, img);
        assert_eq!(twice, img);
    }

    #[test]
    fn crop_offsets_cover_padded_extent() {
        // pad=4 on a 32x32 frame: both offsets live in {0..8} and all values
        // appear over enough draws
        let img = ramp(1, 32, 32);
        let mut seen = [[false; 9]; 2];
        for i in 0..500 {
            let mut rng = seed::stream(3, "aug", i);
            let _ = rng.random_bool(0.5);
            let dy = rng.random_range(0..=8usize);
            let dx = rng.random_range(0..=8usize);
            seen[0][dy] = true;
            seen[1][dx] = true;
            // and the actual augment call agrees with the drawn offsets
            let mut rng2 = seed::stream(3, "aug", i);
            let out = augment(&img, (1, 32, 32), 0.0, 4, &mut rng2);
            assert_eq!(out.len(), img.len());
        }
        assert!(seen.iter().all(|axis| axis.iter().all(|&v| v)));
    }

    #[test]
    fn crop_shifts_content() {
        let mut img = vec![0.0f32; 16];
        img[5] = 1.0; // (1,1) of a 4x4
        // window offset (0,0) with pad 1 shifts content down-right by 1
        for s in 0..200 {
            let mut rng = seed::stream(4, "aug", s);
            let _flip = rng.random_bool(0.0);
            let dy = rng.random_range(0..=2usize);
            let dx = rng.random_range(0..=2usize);
            if (dy, dx) == (0, 0) {
                let mut rng2 = seed::stream(4, "aug", s);
                let out = augment(&img, (1, 4, 4), 0.0, 1, &mut rng2);
                assert_eq!(out[2 * 4 + 2], 1.0, "content moved down-right");
                assert_eq!(out[5], 0.0);
                return;
            }
        }
        panic!("no seed produced offset (0, 0)");
    }
}
