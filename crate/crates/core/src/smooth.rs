//! Separable Gaussian smoothing and factor-2 pyramids.

use crate::error::Result;
use crate::field::{DisplacementField, Grid, ScalarImage};

/// Normalized Gaussian taps truncated at `ceil(3 sigma)`. `sigma <= 0` yields `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Convolve `channels` interleaved planes with a separable kernel, clamping at the borders.
fn convolve<const C: usize>(grid: Grid, data: &[[f64; C]], kernel: &[f64]) -> Vec<[f64; C]> {
    if kernel.len() == 1 {
        return data.to_vec();
    }
    let (h, w) = (grid.height() as isize, grid.width() as isize);
    let radius = (kernel.len() / 2) as isize;
    let mut tmp = vec![[0.0; C]; data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; C];
            for (k, &t) in kernel.iter().enumerate() {
                let cc = (c + k as isize - radius).clamp(0, w - 1);
                let v = data[(r * w + cc) as usize];
                for ch in 0..C {
                    acc[ch] += t * v[ch];
                }
            }
            tmp[(r * w + c) as usize] = acc;
        }
    }
    let mut out = vec![[0.0; C]; data.len()];
    for r in 0..h {
        for c in 0..w {
            let mut acc = [0.0; C];
            for (k, &t) in kernel.iter().enumerate() {
                let rr = (r + k as isize - radius).clamp(0, h - 1);
                let v = tmp[(rr * w + c) as usize];
                for ch in 0..C {
                    acc[ch] += t * v[ch];
                }
            }
            out[(r * w + c) as usize] = acc;
        }
    }
    out
}

pub fn smooth_image(image: &ScalarImage, sigma: f64) -> ScalarImage {
    let grid = image.grid();
    let planes: Vec<[f64; 1]> = image.values().iter().map(|&v| [v]).collect();
    let out = convolve(grid, &planes, &gaussian_kernel(sigma));
    ScalarImage::from_fn(grid, |r, c| out[grid.index(r, c)][0])
}

pub fn smooth_field(field: &DisplacementField, sigma: f64) -> DisplacementField {
    let out = convolve(field.grid(), field.data(), &gaussian_kernel(sigma));
    DisplacementField::from_raw(field.grid(), out)
}

pub(crate) fn smooth_vectors(grid: Grid, data: &[[f64; 2]], sigma: f64) -> Vec<[f64; 2]> {
    convolve(grid, data, &gaussian_kernel(sigma))
}

/// Coarse grid for one pyramid step: `ceil(n / 2)` per axis.
pub fn coarser_grid(grid: Grid) -> Result<Grid> {
    Grid::new(grid.height().div_ceil(2), grid.width().div_ceil(2))
}

/// Gaussian pre-filter (sigma 1) followed by taking every second pixel, so
/// coarse pixel `i` sits at fine coordinate `2 i`.
pub fn downsample(image: &ScalarImage) -> Result<ScalarImage> {
    let blurred = smooth_image(image, 1.0);
    let coarse = coarser_grid(image.grid())?;
    Ok(ScalarImage::from_fn(coarse, |r, c| blurred.get(2 * r, 2 * c)))
}

/// Map a coarse field onto `fine`: displacements are sampled at `x / 2` and doubled.
pub fn upsample_field(coarse: &DisplacementField, fine: Grid) -> DisplacementField {
    DisplacementField::from_fn(fine, |r, c| {
        let u = coarse.sample(r as f64 / 2.0, c as f64 / 2.0);
        [2.0 * u[0], 2.0 * u[1]]
    })
}

/// Image pyramid, finest first. Levels stop early once a further halving would
/// drop below 8 pixels on a side.
pub fn pyramid(image: &ScalarImage, levels: usize) -> Result<Vec<ScalarImage>> {
    let mut out = vec![image.clone()];
    while out.len() < levels {
        let last = out.last().expect("non-empty");
        let g = last.grid();
        if g.height().div_ceil(2) < 8 || g.width().div_ceil(2) < 8 {
            break;
        }
        let next = downsample(last)?;
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for i in 0..k.len() {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn smoothing_preserves_constants() {
        let grid = Grid::new(9, 7).unwrap();
        let f = DisplacementField::constant(grid, [1.25, -2.0]);
        let s = smooth_field(&f, 2.0);
        for v in s.data() {
            assert!((v[0] - 1.25).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pyramid_sizes() {
        let grid = Grid::new(64, 64).unwrap();
        let img = ScalarImage::constant(grid, 0.5);
        let p = pyramid(&img, 3).unwrap();
        let sizes: Vec<_> = p.iter().map(|i| i.grid().height()).collect();
        assert_eq!(sizes, vec![64, 32, 16]);
        let small = ScalarImage::constant(Grid::new(10, 10).unwrap(), 0.0);
        assert_eq!(pyramid(&small, 3).unwrap().len(), 1);
    }

    #[test]
    fn upsample_doubles_translation() {
        let coarse = DisplacementField::constant(Grid::new(8, 8).unwrap(), [0.5, -1.0]);
        let fine = upsample_field(&coarse, Grid::new(16, 16).unwrap());
        assert!(fine.data().iter().all(|v| *v == [1.0, -2.0]));
    }
}
