//! Three-dimensional DFT on flat x-fastest buffers.
//!
//! Conventions shared by every module: the forward kernel is `e^{-i q.r}` and
//! unnormalized, the inverse kernel is `e^{+i q.r}` with a `1/V` factor.
//! Centered layouts put zero frequency (or zero lag) at index `n / 2`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::volume::Dims;

pub struct Fft3 {
    dims: Dims,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: Dims) -> Self {
        let mut planner = FftPlanner::new();
        let forward = [0, 1, 2].map(|a| planner.plan_fft_forward(dims.0[a]));
        let inverse = [0, 1, 2].map(|a| planner.plan_fft_inverse(dims.0[a]));
        Fft3 {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
        let norm = 1.0 / self.dims.len() as f64;
        for v in data.iter_mut() {
            *v *= norm;
        }
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        assert_eq!(data.len(), self.dims.len(), "buffer does not match FFT dims");
        let [nx, ny, nz] = self.dims.0;
        let scratch_len = plans.iter().map(|p| p.get_inplace_scratch_len()).max().unwrap_or(0);
        let mut scratch = vec![Complex64::new(0.0, 0.0); scratch_len];
        // x lines are contiguous
        plans[0].process_with_scratch(data, &mut scratch);
        let mut buf = vec![Complex64::new(0.0, 0.0); nx * ny.max(nz)];
        if ny > 1 {
            for z in 0..nz {
                let slab = &mut data[z * nx * ny..(z + 1) * nx * ny];
                gather_lines(slab, &mut buf[..nx * ny], nx, ny, nx);
                plans[1].process_with_scratch(&mut buf[..nx * ny], &mut scratch);
                scatter_lines(slab, &buf[..nx * ny], nx, ny, nx);
            }
        }
        if nz > 1 {
            // one y row at a time: the nz rows of nx values are each contiguous
            let plane = nx * ny;
            for y in 0..ny {
                for z in 0..nz {
                    let row = &data[z * plane + y * nx..z * plane + y * nx + nx];
                    for (x, v) in row.iter().enumerate() {
                        buf[x * nz + z] = *v;
                    }
                }
                plans[2].process_with_scratch(&mut buf[..nx * nz], &mut scratch);
                for z in 0..nz {
                    let row = &mut data[z * plane + y * nx..z * plane + y * nx + nx];
                    for (x, v) in row.iter_mut().enumerate() {
                        *v = buf[x * nz + z];
                    }
                }
            }
        }
    }
}

/// Copies `count` lines of length `n` (element stride `stride`) into contiguous rows.
fn gather_lines(src: &[Complex64], buf: &mut [Complex64], count: usize, n: usize, stride: usize) {
    for k in 0..n {
        let row = &src[k * stride..k * stride + count];
        for (s, v) in row.iter().enumerate() {
            buf[s * n + k] = *v;
        }
    }
}

fn scatter_lines(dst: &mut [Complex64], buf: &[Complex64], count: usize, n: usize, stride: usize) {
    for k in 0..n {
        let row = &mut dst[k * stride..k * stride + count];
        for (s, v) in row.iter_mut().enumerate() {
            *v = buf[s * n + k];
        }
    }
}

/// Moves index 0 to the center (`n / 2`) along every axis.
pub fn fftshift<T: Copy>(data: &[T], dims: Dims) -> Vec<T> {
    let c = dims.center();
    roll(data, dims, [c[0] as i64, c[1] as i64, c[2] as i64])
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Copy>(data: &[T], dims: Dims) -> Vec<T> {
    let c = dims.center();
    roll(data, dims, [-(c[0] as i64), -(c[1] as i64), -(c[2] as i64)])
}

/// Periodic roll, `out(r + shift) = data(r)`.
pub fn roll<T: Copy>(data: &[T], dims: Dims, shift: [i64; 3]) -> Vec<T> {
    let mut out = data.to_vec();
    for (i, v) in data.iter().enumerate() {
        out[dims.wrapped_index(dims.coords(i), shift)] = *v;
    }
    out
}

/// Forward DFT of a real-space array, returned in centered layout.
pub fn forward_centered(fft: &Fft3, data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    fft.forward(&mut buf);
    fftshift(&buf, fft.dims())
}

/// Inverse DFT of a centered spectrum, returned with zero lag at the center.
pub fn inverse_centered(fft: &Fft3, spectrum: &[Complex64]) -> Vec<Complex64> {
    let mut buf = ifftshift(spectrum, fft.dims());
    fft.inverse(&mut buf);
    fftshift(&buf, fft.dims())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn naive_dft(data: &[Complex64], dims: Dims) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); dims.len()];
        for (k, o) in out.iter_mut().enumerate() {
            let kk = dims.coords(k);
            for (r, v) in data.iter().enumerate() {
                let rr = dims.coords(r);
                let mut ph = 0.0;
                for a in 0..3 {
                    ph += (kk[a] * rr[a]) as f64 / dims.0[a] as f64;
                }
                *o += v * Complex64::from_polar(1.0, -2.0 * PI * ph);
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_axes() {
        let dims = Dims([4, 3, 5]);
        let data: Vec<Complex64> = (0..dims.len())
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let fft = Fft3::new(dims);
        let mut fast = data.clone();
        fft.forward(&mut fast);
        let slow = naive_dft(&data, dims);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12);
        }
        fft.inverse(&mut fast);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn shifts_are_inverse() {
        let dims = Dims([4, 5, 3]);
        let v: Vec<usize> = (0..dims.len()).collect();
        assert_eq!(ifftshift(&fftshift(&v, dims), dims), v);
        // index 0 lands on the center
        let s = fftshift(&v, dims);
        let c = dims.center();
        assert_eq!(s[dims.index(c[0], c[1], c[2])], 0);
    }
}
