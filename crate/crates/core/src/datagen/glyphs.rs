use rand_distr::{Distribution, Normal};

use crate::rng::RngStream;

pub const IMAGE_SIDE: usize = 8;

const FONT: [[&str; 7]; 10] = [
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."],
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
];

/// 8×8 glyph of `digit` in row-major order: shifted horizontally by up to one
/// pixel, random stroke intensity, additive Gaussian noise.
pub fn render_digit(digit: usize, noise: f64, rng: &mut RngStream) -> Vec<f64> {
    let dx = rng.below(3) as isize - 1;
    let stroke = 0.6 + 0.4 * rng.uniform();
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    let mut img = vec![0.0; IMAGE_SIDE * IMAGE_SIDE];
    for (r, row) in FONT[digit].iter().enumerate() {
        for (c, ch) in row.bytes().enumerate() {
            if ch != b'#' {
                continue;
            }
            let (y, x) = (r as isize, c as isize + 1 + dx);
            if (0..IMAGE_SIDE as isize).contains(&y) && (0..IMAGE_SIDE as isize).contains(&x) {
                img[y as usize * IMAGE_SIDE + x as usize] = stroke;
            }
        }
    }
    for v in &mut img {
        *v += normal.sample(rng);
    }
    img
}
