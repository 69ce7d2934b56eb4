//! Kinematical far-field intensity of the crystal on the oversampled q-grid.
//!
//! Two routes compute the same quantity:
//!
//! * [`simulate_intensity_direct`] evaluates the four-term lattice-sum
//!   expansion (shape term, two cross terms, deviation term) voxel by voxel.
//!   It costs O(V * N_dev) and exists as an oracle.
//! * [`simulate_intensity_fft`] takes the modulus squared of the DFT of the
//!   object array, which is the same expansion collapsed back into `|.|^2`.
//!
//! With the exact finite lattice sum as shape term and `Z(q) = 1` the two
//! agree to rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Fft3};
use crate::model::CrystalSpec;
use crate::volume::{ComplexVolume, Dims, IntensityVolume};

/// Default array-volume cap for the direct sum (32^3).
pub const DEFAULT_ORACLE_CAP: usize = 32 * 32 * 32;

/// Regular reciprocal-space grid dual to the real-space array.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QGrid {
    pub dims: Dims,
    /// Real-space pitch a.
    pub pitch: f64,
}

impl QGrid {
    pub fn new(dims: Dims, pitch: f64) -> Self {
        QGrid { dims, pitch }
    }

    /// Reciprocal pitch `2 pi / (n a)` per axis.
    pub fn dq(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 2.0 * PI / (self.dims.0[a] as f64 * self.pitch))
    }

    /// Centered frequency at index `k` of axis `axis`, zero at `n / 2`.
    #[inline]
    pub fn q(&self, axis: usize, k: usize) -> f64 {
        let n = self.dims.0[axis];
        (k as f64 - (n / 2) as f64) * 2.0 * PI / (n as f64 * self.pitch)
    }

    /// All centered frequencies along one axis.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        (0..self.dims.0[axis]).map(|k| self.q(axis, k)).collect()
    }

    pub fn dc_index(&self) -> usize {
        let c = self.dims.center();
        self.dims.index(c[0], c[1], c[2])
    }
}

/// Shape term of the lattice sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKernel {
    /// Exact finite geometric sum `sum_n e^{-i q a n}` (Dirichlet kernel).
    #[default]
    Dirichlet,
    /// Continuum approximation `N sin(q a N / 2) / (q a N / 2)` with the same phase factor.
    Sinc,
}

pub type FormFactorFn = Arc<dyn Fn([f64; 3]) -> Complex64 + Send + Sync>;

/// Interference function Z(q) of the sub-cell scatterers.
#[derive(Clone, Default)]
pub enum FormFactor {
    /// One effective scatterer per cell.
    #[default]
    Unity,
    Custom(FormFactorFn),
}

impl FormFactor {
    fn eval(&self, q: [f64; 3]) -> Complex64 {
        match self {
            FormFactor::Unity => Complex64::new(1.0, 0.0),
            FormFactor::Custom(f) => f(q),
        }
    }
}

impl std::fmt::Debug for FormFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormFactor::Unity => write!(f, "Unity"),
            FormFactor::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardConfig {
    /// Overall constant C.
    pub intensity_scale: f64,
    pub shape: ShapeKernel,
    /// Largest array the direct sum accepts.
    pub oracle_cap: usize,
    #[serde(skip)]
    pub form_factor: FormFactor,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig {
            intensity_scale: 1.0,
            shape: ShapeKernel::Dirichlet,
            oracle_cap: DEFAULT_ORACLE_CAP,
            form_factor: FormFactor::Unity,
        }
    }
}

impl PartialEq for ForwardConfig {
    fn eq(&self, other: &Self) -> bool {
        self.intensity_scale == other.intensity_scale
            && self.shape == other.shape
            && self.oracle_cap == other.oracle_cap
            && matches!(
                (&self.form_factor, &other.form_factor),
                (FormFactor::Unity, FormFactor::Unity)
            )
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.intensity_scale > 0.0 && self.intensity_scale.is_finite()) {
            return Err(Error::InvalidParameter(
                "intensity_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One axis of the lattice sum, `sum_{n<N} e^{-i q a n}`.
fn axis_sum(q: f64, a: f64, n: usize, shape: ShapeKernel) -> Complex64 {
    let phase = Complex64::from_polar(1.0, -q * a * (n as f64 - 1.0) / 2.0);
    match shape {
        ShapeKernel::Dirichlet => {
            let s = (q * a / 2.0).sin();
            if s.abs() < 1e-12 {
                // q a is a multiple of 2 pi: every term equals e^{-i q a n}
                return (0..n)
                    .map(|k| Complex64::from_polar(1.0, -q * a * k as f64))
                    .sum();
            }
            phase * ((q * a * n as f64 / 2.0).sin() / s)
        }
        ShapeKernel::Sinc => {
            let x = q * a * n as f64 / 2.0;
            let sinc = if x.abs() < 1e-12 { 1.0 } else { x.sin() / x };
            phase * (n as f64 * sinc)
        }
    }
}

/// Shape amplitude `S(q) = prod_axis sum_{n<N} e^{-i q a n}` on the centered grid.
pub fn ideal_lattice_amplitude(
    qgrid: &QGrid,
    spec: &CrystalSpec,
    shape: ShapeKernel,
) -> ComplexVolume {
    let a = qgrid.pitch;
    let per_axis: Vec<Vec<Complex64>> = (0..3)
        .map(|ax| {
            qgrid
                .axis(ax)
                .into_iter()
                .map(|q| axis_sum(q, a, spec.n_cells[ax], shape))
                .collect()
        })
        .collect();
    let mut out = ComplexVolume::zeros(qgrid.dims, a);
    for (i, v) in out.data.iter_mut().enumerate() {
        let [x, y, z] = qgrid.dims.coords(i);
        *v = per_axis[0][x] * per_axis[1][y] * per_axis[2][z];
    }
    out
}

/// Literal four-term evaluation of the kinematical intensity. Oracle only.
pub fn simulate_intensity_direct(
    object: &ComplexVolume,
    spec: &CrystalSpec,
    cfg: &ForwardConfig,
) -> Result<IntensityVolume> {
    cfg.validate()?;
    let dims = object.dims;
    if dims.len() > cfg.oracle_cap {
        return Err(Error::OracleTooLarge {
            voxels: dims.len(),
            cap: cfg.oracle_cap,
        });
    }
    let qgrid = QGrid::new(dims, object.pitch);
    let shape = ideal_lattice_amplitude(&qgrid, spec, cfg.shape);

    // cells p whose beta e^{-i h.u} differs from the ideal value 1
    let cells = object.cells;
    let mut deviations: Vec<([f64; 3], Complex64)> = Vec::new();
    for z in 0..cells.0[2] {
        for y in 0..cells.0[1] {
            for x in 0..cells.0[0] {
                let o = object.get(x + object.origin[0], y + object.origin[1], z + object.origin[2]);
                let dev = o - 1.0;
                if dev != Complex64::new(0.0, 0.0) {
                    let r = [x, y, z].map(|c| c as f64 * object.pitch);
                    deviations.push((r, dev));
                }
            }
        }
    }

    let qs: [Vec<f64>; 3] = [qgrid.axis(0), qgrid.axis(1), qgrid.axis(2)];
    let mut data = vec![0.0; dims.len()];
    for (i, out) in data.iter_mut().enumerate() {
        let [kx, ky, kz] = dims.coords(i);
        let q = [qs[0][kx], qs[1][ky], qs[2][kz]];
        let z = cfg.form_factor.eval(q);
        let f_dev: Complex64 = deviations
            .iter()
            .map(|(r, d)| d * Complex64::from_polar(1.0, -(q[0] * r[0] + q[1] * r[1] + q[2] * r[2])))
            .sum();
        let s = shape.data[i];
        let zf = z * f_dev;
        let shape_term = s.norm_sqr();
        let cross = s.conj() * zf + s * zf.conj();
        let dev_term = zf.norm_sqr();
        // the sum is |S + Z F_dev|^2; clip the rounding-level negatives at its zeros
        *out = (cfg.intensity_scale * (shape_term + cross.re + dev_term)).max(0.0);
    }
    Ok(IntensityVolume {
        data,
        dims,
        pitch: object.pitch,
        scale: cfg.intensity_scale,
        photon_scale: None,
    })
}

/// Kinematical intensity through the DFT of the object array.
pub fn simulate_intensity_fft(object: &ComplexVolume, cfg: &ForwardConfig) -> Result<IntensityVolume> {
    cfg.validate()?;
    let fft = Fft3::new(object.dims);
    Ok(simulate_intensity_with(&fft, object, cfg))
}

/// [`simulate_intensity_fft`] with a caller-owned plan.
pub fn simulate_intensity_with(fft: &Fft3, object: &ComplexVolume, cfg: &ForwardConfig) -> IntensityVolume {
    let dims = object.dims;
    let c = cfg.intensity_scale;
    let data = match &cfg.form_factor {
        FormFactor::Unity => fft::forward_centered(fft, &object.data)
            .iter()
            .map(|f| c * f.norm_sqr())
            .collect(),
        FormFactor::Custom(_) => {
            // split into the ideal box and the deviation so Z(q) weights only the latter
            let mask = object.box_mask();
            let ideal: Vec<Complex64> = mask
                .data
                .iter()
                .map(|&m| Complex64::new(if m { 1.0 } else { 0.0 }, 0.0))
                .collect();
            let deviation: Vec<Complex64> = object
                .data
                .iter()
                .zip(&ideal)
                .map(|(o, s)| o - s)
                .collect();
            let s = fft::forward_centered(fft, &ideal);
            let d = fft::forward_centered(fft, &deviation);
            let qgrid = QGrid::new(dims, object.pitch);
            (0..dims.len())
                .map(|i| {
                    let [x, y, z] = dims.coords(i);
                    let zq = cfg.form_factor.eval([qgrid.q(0, x), qgrid.q(1, y), qgrid.q(2, z)]);
                    c * (s[i] + zq * d[i]).norm_sqr()
                })
                .collect()
        }
    };
    IntensityVolume {
        data,
        dims,
        pitch: object.pitch,
        scale: c,
        photon_scale: None,
    }
}

/// Inverse DFT of the intensity with zero lag at the array center:
/// `A(R) = sum_r o(r + R) conj(o(r))` times the intensity scale.
pub fn autocorrelation(intensity: &IntensityVolume) -> ComplexVolume {
    let fft = Fft3::new(intensity.dims);
    let spectrum: Vec<Complex64> = intensity.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let data = fft::inverse_centered(&fft, &spectrum);
    let c = intensity.dims.center();
    ComplexVolume {
        data,
        dims: intensity.dims,
        pitch: intensity.pitch,
        origin: c,
        cells: Dims([1, 1, 1]),
    }
}
