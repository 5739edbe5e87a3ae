//! Geometric augmentation of square `[1, C, n, n]` patches.

use contexp_tensor::Tensor;

/// Quarter-turn count plus optional mirror flips, applied in the order
/// rotate, horizontal flip, vertical flip.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl Transform {
    pub fn is_identity(&self) -> bool {
        self.quarter_turns % 4 == 0 && !self.flip_h && !self.flip_v
    }

    /// Source coordinates `(sx, sy)` for output pixel `(x, y)` in an `n × n` patch.
    fn source(&self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let (mut x, mut y) = (x, y);
        if self.flip_v {
            y = n - 1 - y;
        }
        if self.flip_h {
            x = n - 1 - x;
        }
        // undo counter-clockwise quarter turns one at a time
        for _ in 0..self.quarter_turns % 4 {
            (x, y) = (n - 1 - y, x);
        }
        (x, y)
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        if self.is_identity() {
            return t.clone();
        }
        let s = t.shape();
        assert!(s.len() == 4 && s[2] == s[3], "augmentation expects square [N, C, n, n] patches");
        let n = s[2];
        let planes = s[0] * s[1];
        let src = t.data();
        let mut out = vec![0.0f32; src.len()];
        for p in 0..planes {
            let base = p * n * n;
            for y in 0..n {
                for x in 0..n {
                    let (sx, sy) = self.source(x, y, n);
                    out[base + y * n + x] = src[base + sy * n + sx];
                }
            }
        }
        Tensor::new(s.to_vec(), out).expect("same shape")
    }
}

/// Copies the `[.., y0..y0+size, x0..x0+size]` window of a `[1, C, H, W]` tensor.
pub fn crop_square(t: &Tensor, x0: usize, y0: usize, size: usize) -> Tensor {
    let s = t.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    assert!(x0 + size <= w && y0 + size <= h, "crop window out of bounds");
    let src = t.data();
    let mut out = Vec::with_capacity(c * size * size);
    for ci in 0..c {
        for y in y0..y0 + size {
            let row = ci * h * w + y * w;
            out.extend_from_slice(&src[row + x0..row + x0 + size]);
        }
    }
    Tensor::new([1, c, size, size], out).expect("crop shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Tensor {
        Tensor::from_fn([1, 1, n, n], |i| i as f32)
    }

    #[test]
    fn quarter_turn_moves_corners() {
        let t = grid(2);
        let r = Transform { quarter_turns: 1, ..Default::default() }.apply(&t);
        // [[0,1],[2,3]] rotated counter-clockwise -> [[1,3],[0,2]]
        assert_eq!(r.data(), &[1.0, 3.0, 0.0, 2.0]);
    }

    #[test]
    fn four_turns_and_double_flips_are_identity() {
        let t = grid(5);
        let mut r = t.clone();
        for _ in 0..4 {
            r = Transform { quarter_turns: 1, ..Default::default() }.apply(&r);
        }
        assert_eq!(r, t);
        let f = Transform { flip_h: true, flip_v: true, quarter_turns: 0 };
        assert_eq!(f.apply(&f.apply(&t)), t);
    }

    #[test]
    fn transforms_are_permutations() {
        let t = grid(4);
        for q in 0..4 {
            for fh in [false, true] {
                for fv in [false, true] {
                    let mut d = Transform { quarter_turns: q, flip_h: fh, flip_v: fv }.apply(&t).into_data();
                    d.sort_by(f32::total_cmp);
                    assert_eq!(d, t.data());
                }
            }
        }
    }

    #[test]
    fn crop_window() {
        let t = Tensor::from_fn([1, 2, 4, 4], |i| i as f32);
        let c = crop_square(&t, 1, 2, 2);
        assert_eq!(c.data(), &[9.0, 10.0, 13.0, 14.0, 25.0, 26.0, 29.0, 30.0]);
    }
}
