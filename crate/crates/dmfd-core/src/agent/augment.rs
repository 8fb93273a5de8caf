//! Random-crop augmentation for image observations.
//!
//! The image is zero-padded by `pad` pixels on every side and a full-size
//! window is cut back out at a uniformly random offset, so the content
//! shifts by up to `pad` pixels per axis and exposed borders are black.
//! With `pad = 0` the output is bit-identical to the input.

use rand::Rng as _;

use crate::rng::Rng;

/// Uniform crop window offsets: each axis independently in `[0, 2 * pad]`.
/// Offset `pad` on both axes is the identity window.
pub fn crop_offsets(pad: usize, rng: &mut Rng) -> (usize, usize) {
    let dx = rng.gen_range(0..=2 * pad);
    let dy = rng.gen_range(0..=2 * pad);
    (dx, dy)
}

/// Deterministic crop at window offset `(dx, dy)` (see [`crop_offsets`]).
/// `image` is interleaved row-major `side x side x channels`.
pub fn crop_at(
    image: &[u8],
    side: usize,
    channels: usize,
    pad: usize,
    dx: usize,
    dy: usize,
) -> Vec<u8> {
    assert_eq!(image.len(), side * side * channels, "image length mismatch");
    assert!(dx <= 2 * pad && dy <= 2 * pad, "offset outside window range");
    let mut out = vec![0u8; image.len()];
    for y in 0..side {
        let sy = y + dy;
        if sy < pad || sy >= side + pad {
            continue;
        }
        let sy = sy - pad;
        for x in 0..side {
            let sx = x + dx;
            if sx < pad || sx >= side + pad {
                continue;
            }
            let sx = sx - pad;
            let src = (sy * side + sx) * channels;
            let dst = (y * side + x) * channels;
            out[dst..dst + channels].copy_from_slice(&image[src..src + channels]);
        }
    }
    out
}

/// Randomly shifted copy of `image`; the augmentation applied to sampled
/// replay observations.
pub fn random_crop(image: &[u8], side: usize, channels: usize, pad: usize, rng: &mut Rng) -> Vec<u8> {
    let (dx, dy) = crop_offsets(pad, rng);
    crop_at(image, side, channels, pad, dx, dy)
}

/// Converts an interleaved row-major byte image to the channel-major float
/// layout the encoder consumes, scaled to `[0, 1]`.
pub fn image_to_chw(image: &[u8], side: usize, channels: usize) -> Vec<f64> {
    assert_eq!(image.len(), side * side * channels, "image length mismatch");
    let mut out = vec![0.0f64; image.len()];
    for y in 0..side {
        for x in 0..side {
            for c in 0..channels {
                out[(c * side + y) * side + x] = image[(y * side + x) * channels + c] as f64 / 255.0;
            }
        }
    }
    out
}
