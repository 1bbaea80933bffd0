use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::PrefilterError;

/// 2D spectrum stored row-major with the DC coefficient at `(h/2, w/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    /// Centered frequency coordinates `(u, v)` of storage index `(row, col)`.
    pub fn frequency(&self, row: usize, col: usize) -> (isize, isize) {
        centered_frequency(self.height, self.width, row, col)
    }

    pub fn get(&self, u: isize, v: isize) -> Complex64 {
        let row = (u + (self.height / 2) as isize).rem_euclid(self.height as isize) as usize;
        let col = (v + (self.width / 2) as isize).rem_euclid(self.width as isize) as usize;
        self.data[row * self.width + col]
    }
}

pub(super) fn centered_frequency(height: usize, width: usize, row: usize, col: usize) -> (isize, isize) {
    (row as isize - (height / 2) as isize, col as isize - (width / 2) as isize)
}

/// Unnormalised forward DFT of a real row-major field.
pub fn dft2(field: &[f64], height: usize, width: usize) -> Result<Spectrum, PrefilterError> {
    check_len(field.len(), height, width)?;
    let mut buf: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut buf, height, width, false);
    let mut data = vec![Complex64::new(0.0, 0.0); buf.len()];
    let (sh, sw) = (height / 2, width / 2);
    for r in 0..height {
        for c in 0..width {
            data[((r + sh) % height) * width + (c + sw) % width] = buf[r * width + c];
        }
    }
    Ok(Spectrum {
        height,
        width,
        data,
    })
}

/// Inverse DFT including the `1/(HW)` factor.
pub fn idft2(spectrum: &Spectrum) -> Vec<Complex64> {
    let (height, width) = (spectrum.height, spectrum.width);
    let (sh, sw) = (height / 2, width / 2);
    let mut buf = vec![Complex64::new(0.0, 0.0); height * width];
    for r in 0..height {
        for c in 0..width {
            buf[r * width + c] = spectrum.data[((r + sh) % height) * width + (c + sw) % width];
        }
    }
    transform_2d(&mut buf, height, width, true);
    let scale = 1.0 / (height * width) as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

pub fn idft2_real(spectrum: &Spectrum) -> Vec<f64> {
    idft2(spectrum).into_iter().map(|c| c.re).collect()
}

fn check_len(len: usize, height: usize, width: usize) -> Result<(), PrefilterError> {
    if len != height * width || len == 0 {
        return Err(PrefilterError::FieldSize { len, height, width });
    }
    Ok(())
}

fn transform_2d(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = buf[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            buf[r * width + c] = column[r];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(h: usize, w: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..h * w).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn constant_field_has_only_dc() {
        let s = dft2(&[0.75; 16], 4, 4).unwrap();
        assert!((s.get(0, 0) - Complex64::new(12.0, 0.0)).norm() < 1e-9);
        let others: f64 = (0..16).filter(|&i| i != 2 * 4 + 2).map(|i| s.data[i].norm()).sum();
        assert!(others < 1e-9);
    }

    #[test]
    fn round_trip() {
        let x = random_field(8, 8, 1);
        let back = idft2_real(&dft2(&x, 8, 8).unwrap());
        let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
    }

    #[test]
    fn linearity() {
        let (a, b) = (0.7, -1.3);
        let x = random_field(8, 8, 2);
        let y = random_field(8, 8, 3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (sx, sy, sm) = (dft2(&x, 8, 8).unwrap(), dft2(&y, 8, 8).unwrap(), dft2(&mix, 8, 8).unwrap());
        for i in 0..64 {
            assert!((sm.data[i] - (sx.data[i] * a + sy.data[i] * b)).norm() < 1e-6);
        }
    }

    #[test]
    fn parseval() {
        let x = random_field(6, 10, 5);
        let s = dft2(&x, 6, 10).unwrap();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spectral: f64 = s.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / 60.0;
        assert!(((energy - spectral) / energy).abs() < 1e-6);
    }

    #[test]
    fn rejects_mismatched_length() {
        assert!(dft2(&[1.0; 5], 2, 3).is_err());
    }
}
