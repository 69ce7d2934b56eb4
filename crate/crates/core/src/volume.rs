//! Voxel containers shared by every stage of the pipeline.
//!
//! All volumes are stored flat in x-fastest order: `index = x + nx * (y + ny * z)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Array extent along x, y and z.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims(pub [usize; 3]);

impl Dims {
    pub fn cube(n: usize) -> Self {
        Dims([n, n, n])
    }

    pub fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline(always)]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.0[0] * (y + self.0[1] * z)
    }

    #[inline(always)]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.0[0];
        let ny = self.0[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Index of `p + shift` with periodic wrap-around.
    #[inline(always)]
    pub fn wrapped_index(&self, p: [usize; 3], shift: [i64; 3]) -> usize {
        let w = |a: usize| -> usize {
            let n = self.0[a] as i64;
            (p[a] as i64 + shift[a]).rem_euclid(n) as usize
        };
        self.index(w(0), w(1), w(2))
    }

    /// Index of the array center (`n / 2` per axis), where zero frequency or
    /// zero lag lives in centered layouts.
    pub fn center(&self) -> [usize; 3] {
        [self.0[0] / 2, self.0[1] / 2, self.0[2] / 2]
    }
}

/// Complex voxel array with the position of the crystal box inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVolume {
    pub data: Vec<Complex64>,
    pub dims: Dims,
    /// Voxel pitch (nm).
    pub pitch: f64,
    /// Corner of the crystal box inside the array.
    pub origin: [usize; 3],
    /// Size of the crystal box in voxels.
    pub cells: Dims,
}

impl ComplexVolume {
    pub fn zeros(dims: Dims, pitch: f64) -> Self {
        ComplexVolume {
            data: vec![Complex64::new(0.0, 0.0); dims.len()],
            dims,
            pitch,
            origin: [0; 3],
            cells: dims,
        }
    }

    pub fn with_box(mut self, origin: [usize; 3], cells: Dims) -> Self {
        self.origin = origin;
        self.cells = cells;
        self
    }

    #[inline(always)]
    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn amplitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Mask of the crystal box.
    pub fn box_mask(&self) -> Mask {
        Mask::from_box(self.dims, self.origin, self.cells)
    }

    /// Copy of the crystal box as a standalone volume.
    pub fn crop_box(&self) -> ComplexVolume {
        let c = self.cells;
        let mut out = ComplexVolume::zeros(c, self.pitch);
        for z in 0..c.0[2] {
            for y in 0..c.0[1] {
                for x in 0..c.0[0] {
                    out.data[c.index(x, y, z)] =
                        self.get(x + self.origin[0], y + self.origin[1], z + self.origin[2]);
                }
            }
        }
        out
    }

    /// Places a box-sized volume at `origin` inside a zero array of `dims`.
    pub fn embed(boxed: &ComplexVolume, dims: Dims, origin: [usize; 3]) -> Result<ComplexVolume> {
        let c = boxed.dims;
        for a in 0..3 {
            if origin[a] + c.0[a] > dims.0[a] {
                return Err(Error::DimensionMismatch(format!(
                    "box of {:?} at {:?} does not fit in {:?}",
                    c.0, origin, dims.0
                )));
            }
        }
        let mut out = ComplexVolume::zeros(dims, boxed.pitch).with_box(origin, c);
        for z in 0..c.0[2] {
            for y in 0..c.0[1] {
                for x in 0..c.0[0] {
                    let i = dims.index(x + origin[0], y + origin[1], z + origin[2]);
                    out.data[i] = boxed.data[c.index(x, y, z)];
                }
            }
        }
        Ok(out)
    }

    /// Periodic translation: `out(r + shift) = self(r)`.
    pub fn rolled(&self, shift: [i64; 3]) -> ComplexVolume {
        let mut out = self.clone();
        for (i, v) in self.data.iter().enumerate() {
            let j = self.dims.wrapped_index(self.dims.coords(i), shift);
            out.data[j] = *v;
        }
        out
    }

    /// Conjugate-inverted copy, `out(r) = conj(self(-r))` with periodic indices.
    pub fn twin(&self) -> ComplexVolume {
        let mut out = self.clone();
        let n = self.dims.0;
        for (i, v) in self.data.iter().enumerate() {
            let p = self.dims.coords(i);
            let j = self.dims.index(
                (n[0] - p[0]) % n[0],
                (n[1] - p[1]) % n[1],
                (n[2] - p[2]) % n[2],
            );
            out.data[j] = v.conj();
        }
        out
    }
}

/// Non-negative real array on the reciprocal-space grid, q = 0 at the center.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityVolume {
    pub data: Vec<f64>,
    pub dims: Dims,
    /// Real-space voxel pitch the grid was sampled for.
    pub pitch: f64,
    /// Calibration factor: the data equal `scale * |DFT(object)|^2` for an
    /// object in natural (unit-amplitude) units.
    pub scale: f64,
    /// Photons-per-unit factor applied by the noise stage, if any.
    pub photon_scale: Option<f64>,
}

impl IntensityVolume {
    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(0.0, f64::max)
    }
}

/// Boolean voxel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub data: Vec<bool>,
    pub dims: Dims,
}

impl Mask {
    pub fn empty(dims: Dims) -> Self {
        Mask {
            data: vec![false; dims.len()],
            dims,
        }
    }

    pub fn full(dims: Dims) -> Self {
        Mask {
            data: vec![true; dims.len()],
            dims,
        }
    }

    pub fn from_box(dims: Dims, origin: [usize; 3], cells: Dims) -> Self {
        let mut m = Mask::empty(dims);
        for z in origin[2]..(origin[2] + cells.0[2]).min(dims.0[2]) {
            for y in origin[1]..(origin[1] + cells.0[1]).min(dims.0[1]) {
                for x in origin[0]..(origin[0] + cells.0[0]).min(dims.0[0]) {
                    m.data[dims.index(x, y, z)] = true;
                }
            }
        }
        m
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}
