//! Random-shift augmentation: replicate pad, then a random crop of the original size.

use rand::Rng;

use super::{Real, Tensor};

/// Crop of the `pad`-replicate-padded `size x size` image at offset `(dx, dy)`,
/// each in `0..=2 pad`. `(pad, pad)` is the identity.
pub fn shift_image<T: Copy>(src: &[T], size: usize, pad: usize, dx: usize, dy: usize, dst: &mut [T]) {
    let clamp = |v: isize| v.clamp(0, size as isize - 1) as usize;
    for y in 0..size {
        let sy = clamp(y as isize + dy as isize - pad as isize);
        let row = &src[sy * size..(sy + 1) * size];
        for x in 0..size {
            dst[y * size + x] = row[clamp(x as isize + dx as isize - pad as isize)];
        }
    }
}

/// Shifts one square image by a uniformly drawn offset.
pub fn random_shift<T: Copy, R: Rng + ?Sized>(src: &[T], size: usize, pad: usize, rng: &mut R) -> Vec<T> {
    let dx = rng.random_range(0..=2 * pad);
    let dy = rng.random_range(0..=2 * pad);
    let mut out = src.to_vec();
    shift_image(src, size, pad, dx, dy, &mut out);
    out
}

/// Independent random shift of every image in a `[B, C, H, W]` batch (square planes).
pub fn random_shift_batch<T: Real, R: Rng + ?Sized>(x: &Tensor<T>, pad: usize, rng: &mut R) -> Tensor<T> {
    let (c, size) = (x.shape[1], x.shape[2]);
    let plane = size * size;
    let mut out = x.clone();
    for b in 0..x.batch() {
        let dx = rng.random_range(0..=2 * pad);
        let dy = rng.random_range(0..=2 * pad);
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            shift_image(&x.data[off..off + plane], size, pad, dx, dy, &mut out.data[off..off + plane]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_offset_is_identity() {
        let img: Vec<u16> = (0..84 * 84).map(|i| i as u16).collect();
        let mut out = vec![0; img.len()];
        shift_image(&img, 84, 4, 4, 4, &mut out);
        assert_eq!(out, img);
    }

    #[test]
    fn shift_moves_content_and_replicates_edges() {
        let img: Vec<u16> = (0..16).collect();
        let mut out = vec![0; 16];
        shift_image(&img, 4, 1, 0, 0, &mut out);
        // content moves right/down by one; first row/column replicated
        assert_eq!(out, vec![0, 0, 1, 2, 0, 0, 1, 2, 4, 4, 5, 6, 8, 8, 9, 10]);
    }

    #[test]
    fn offsets_uniform_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let size = 84;
        // a unique marker pixel reveals the offset
        let mut img = vec![0u32; size * size];
        img[40 * size + 40] = 1;
        let mut counts = [[0usize; 9]; 9];
        let draws = 10_000;
        for _ in 0..draws {
            let out = random_shift(&img, size, 4, &mut rng);
            let pos = out.iter().position(|&v| v == 1).unwrap();
            let (x, y) = (pos % size, pos / size);
            counts[44 - y][44 - x] += 1;
        }
        let expect = draws as f64 / 81.0;
        let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 80 dof, p = 0.001 critical value 124.8
        assert!(chi2 < 124.8, "chi2 {chi2}");
    }

    #[test]
    fn batch_shape_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::zeros(&[3, 1, 84, 84]);
        assert_eq!(random_shift_batch(&x, 4, &mut rng).shape, vec![3, 1, 84, 84]);
    }
}
