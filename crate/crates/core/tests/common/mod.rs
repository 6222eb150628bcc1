//! Slow, obviously-correct reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use edgeq_core::vision::{BinaryMask, BoundingBox, DetectionConfig, Frame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-pixel reference for `vision::detect`, returning boxes as a set.
pub fn naive_detect(
    prev: &Frame,
    cur: &Frame,
    next: &Frame,
    cfg: &DetectionConfig,
) -> BTreeSet<BoundingBox> {
    let (w, h, c) = (cur.width, cur.height, cur.channels);
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for ch in 0..c {
                let p = prev.get(x, y, ch) as i32;
                let q = cur.get(x, y, ch) as i32;
                let r = next.get(x, y, ch) as i32;
                px[ch] = ((q - p).abs() as u8) & ((r - q).abs() as u8);
            }
            let gray = if c == 1 {
                px[0] as f64
            } else {
                let v = (299.0 * px[0] as f64 + 587.0 * px[1] as f64 + 114.0 * px[2] as f64)
                    / 1000.0;
                (v + 0.5).floor()
            };
            bits[y * w + x] = gray > cfg.threshold as f64;
        }
    }
    let dilated = naive_morph(&bits, w, h, cfg.dilation_radius, true);
    let eroded = naive_morph(&dilated, w, h, cfg.erosion_radius, false);
    bfs_boxes(&eroded, w, h)
        .into_iter()
        .filter(|b| {
            let area_ok = (b.w * b.h) as f64 >= cfg.min_box_area_fraction * (w * h) as f64;
            let r = b.w as f64 / b.h as f64;
            area_ok && r >= cfg.aspect_ratio_bounds.0 && r <= cfg.aspect_ratio_bounds.1
        })
        .collect()
}

/// Square window clipped to the image: dilation is "any set", erosion "all set".
pub fn naive_morph(bits: &[bool], w: usize, h: usize, r: usize, dilate: bool) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut any = false;
            let mut all = true;
            for dy in -(r as i64)..=r as i64 {
                for dx in -(r as i64)..=r as i64 {
                    let (xx, yy) = (x + dx, y + dy);
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let v = bits[yy as usize * w + xx as usize];
                    any |= v;
                    all &= v;
                }
            }
            out[y as usize * w + x as usize] = if dilate { any } else { all };
        }
    }
    out
}

/// Boxes of 8-connected components by breadth-first flood fill.
pub fn bfs_boxes(bits: &[bool], w: usize, h: usize) -> BTreeSet<BoundingBox> {
    let mut seen = vec![false; w * h];
    let mut out = BTreeSet::new();
    for start in 0..w * h {
        if !bits[start] || seen[start] {
            continue;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = q.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx < 0 || yy < 0 || xx >= w as i64 || yy >= h as i64 {
                        continue;
                    }
                    let j = yy as usize * w + xx as usize;
                    if bits[j] && !seen[j] {
                        seen[j] = true;
                        q.push_back(j);
                    }
                }
            }
        }
        out.insert(BoundingBox {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        });
    }
    out
}

pub fn mask_bits(m: &BinaryMask) -> Vec<bool> {
    (0..m.height)
        .flat_map(|y| (0..m.width).map(move |x| (x, y)))
        .map(|(x, y)| m.is_set(x, y))
        .collect()
}

/// Three frames with a textured background, a few moving rectangles and
/// salt noise, so every pipeline stage has something to do.
pub fn random_triple(seed: u64, w: usize, h: usize, channels: usize) -> [Frame; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background: Vec<u8> = (0..w * h * channels).map(|_| rng.random_range(0..90)).collect();
    let objects: Vec<(i64, i64, usize, usize, i64, i64, [u8; 3])> = (0..rng.random_range(0..5))
        .map(|_| {
            (
                rng.random_range(0..w as i64),
                rng.random_range(0..h as i64),
                rng.random_range(1..16),
                rng.random_range(1..16),
                rng.random_range(-4..=4),
                rng.random_range(-4..=4),
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let noise = rng.random_range(0.0..0.05);
    let mut frames = Vec::with_capacity(3);
    for k in 0..3i64 {
        let mut data = background.clone();
        for &(x, y, ow, oh, vx, vy, color) in &objects {
            let (ox, oy) = (x + vx * k, y + vy * k);
            for yy in oy.max(0)..(oy + oh as i64).min(h as i64) {
                for xx in ox.max(0)..(ox + ow as i64).min(w as i64) {
                    for ch in 0..channels {
                        data[(yy as usize * w + xx as usize) * channels + ch] = color[ch];
                    }
                }
            }
        }
        for v in data.iter_mut() {
            if rng.random_bool(noise) {
                *v = rng.random();
            }
        }
        frames.push(Frame::new(w, h, channels, data).unwrap());
    }
    frames.try_into().unwrap()
}
