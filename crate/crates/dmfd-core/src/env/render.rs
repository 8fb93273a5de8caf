//! Tiny deterministic rasterizer for the 32x32 RGB observation.
//!
//! A fixed top-down camera covers the square `[-0.4, 0.4]^2`. Springs render
//! as thick segments, particles and pickers as discs, painter's order:
//! background, object, pinned markers, pickers. Everything is plain f64
//! arithmetic with a fixed draw order, so a state renders to the same bytes
//! on every call and every platform.

use super::particle::ParticleSystem;
use super::Picker;

/// Observation image side length in pixels.
pub const IMAGE_SIDE: usize = 32;
/// Bytes in one RGB observation image.
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE * 3;
/// Half-extent of the camera square in world units.
pub const CAMERA_HALF: f64 = 0.4;

const BACKGROUND: [u8; 3] = [16, 16, 16];
const ROPE_COLOR: [u8; 3] = [230, 160, 40];
const CLOTH_COLOR: [u8; 3] = [70, 130, 220];
const PIN_COLOR: [u8; 3] = [240, 240, 240];
const PICKER_FREE: [u8; 3] = [220, 50, 50];
const PICKER_HOLDING: [u8; 3] = [50, 220, 50];

/// World point to fractional pixel coordinates `(col, row)`; row 0 is the
/// top of the image (world +y).
fn world_to_px(p: [f64; 2]) -> [f64; 2] {
    let side = IMAGE_SIDE as f64;
    [
        (p[0] + CAMERA_HALF) / (2.0 * CAMERA_HALF) * side - 0.5,
        (CAMERA_HALF - p[1]) / (2.0 * CAMERA_HALF) * side - 0.5,
    ]
}

fn put(img: &mut [u8], row: i64, col: i64, color: [u8; 3]) {
    if row < 0 || col < 0 || row >= IMAGE_SIDE as i64 || col >= IMAGE_SIDE as i64 {
        return;
    }
    let idx = (row as usize * IMAGE_SIDE + col as usize) * 3;
    img[idx..idx + 3].copy_from_slice(&color);
}

/// Paint every pixel whose center lies within `radius_px` of segment `ab`.
fn draw_segment(img: &mut [u8], a: [f64; 2], b: [f64; 2], radius_px: f64, color: [u8; 3]) {
    let pa = world_to_px(a);
    let pb = world_to_px(b);
    let lo_c = (pa[0].min(pb[0]) - radius_px).floor() as i64;
    let hi_c = (pa[0].max(pb[0]) + radius_px).ceil() as i64;
    let lo_r = (pa[1].min(pb[1]) - radius_px).floor() as i64;
    let hi_r = (pa[1].max(pb[1]) + radius_px).ceil() as i64;
    let dx = pb[0] - pa[0];
    let dy = pb[1] - pa[1];
    let len2 = dx * dx + dy * dy;
    for r in lo_r..=hi_r {
        for c in lo_c..=hi_c {
            let px = c as f64;
            let py = r as f64;
            let t = if len2 > 0.0 {
                (((px - pa[0]) * dx + (py - pa[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let qx = pa[0] + t * dx;
            let qy = pa[1] + t * dy;
            let d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy);
            if d2 <= radius_px * radius_px {
                put(img, r, c, color);
            }
        }
    }
}

fn draw_disc(img: &mut [u8], center: [f64; 2], radius_px: f64, color: [u8; 3]) {
    let p = world_to_px(center);
    let lo_c = (p[0] - radius_px).floor() as i64;
    let hi_c = (p[0] + radius_px).ceil() as i64;
    let lo_r = (p[1] - radius_px).floor() as i64;
    let hi_r = (p[1] + radius_px).ceil() as i64;
    for r in lo_r..=hi_r {
        for c in lo_c..=hi_c {
            let d2 = (c as f64 - p[0]).powi(2) + (r as f64 - p[1]).powi(2);
            if d2 <= radius_px * radius_px {
                put(img, r, c, color);
            }
        }
    }
}

/// Render the full scene to a fresh RGB buffer.
pub fn render_scene(sys: &ParticleSystem, pickers: &[Picker], is_cloth: bool) -> Vec<u8> {
    let mut img = Vec::with_capacity(IMAGE_LEN);
    for _ in 0..IMAGE_SIDE * IMAGE_SIDE {
        img.extend_from_slice(&BACKGROUND);
    }
    let object_color = if is_cloth { CLOTH_COLOR } else { ROPE_COLOR };
    for s in &sys.springs {
        draw_segment(
            &mut img,
            sys.positions[s.i],
            sys.positions[s.j],
            1.2,
            object_color,
        );
    }
    for (i, &pin) in sys.pinned.iter().enumerate() {
        if pin {
            draw_disc(&mut img, sys.positions[i], 1.0, PIN_COLOR);
        }
    }
    for picker in pickers {
        let color = if picker.grasped.is_some() {
            PICKER_HOLDING
        } else {
            PICKER_FREE
        };
        draw_disc(&mut img, picker.pos, 1.4, color);
    }
    img
}
