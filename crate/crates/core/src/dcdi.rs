//! Deterministic holographic reconstruction.
//!
//! The measured intensity is weighted by a third mixed derivative kernel and
//! transformed back, giving the auxiliary function `U`, the mixed third
//! derivative of the autocorrelation. Each corner of the ideal reference
//! half turns into a delta under that derivative, so `U` holds translated
//! copies of the object (and of its conjugate twin). One copy is cropped out,
//! and the unknown complex scale is fixed by fitting the measured intensity.
//!
//! With z pointing down from the top surface, the defects live in `z < L/2`
//! and the reference in `z >= L/2`. Under forward differences the direct copy
//! of a defect-half voxel `r` sits at lag `r - (0, 0, N)`, clear of every other
//! term, so only the defect rows of the window are taken from `U`.

use nalgebra::{Matrix5, Vector5};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{self, Fft3};
use crate::forward::QGrid;
use crate::metrics::rms_d;
use crate::model::CrystalSpec;
use crate::shrinkwrap::MetricTrace;
use crate::volume::{ComplexVolume, Dims, IntensityVolume, Mask};

/// Per-axis derivative weight applied in reciprocal space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeKernel {
    /// `(e^{i q a} - 1) / (i a)`: the lattice form of `q`, a forward difference in real space.
    #[default]
    Difference,
    /// The bare frequency `q`.
    Spectral,
}

impl DerivativeKernel {
    fn axis_weight(self, q: f64, a: f64) -> Complex64 {
        match self {
            DerivativeKernel::Difference => {
                (Complex64::from_polar(1.0, q * a) - 1.0) / Complex64::new(0.0, a)
            }
            DerivativeKernel::Spectral => Complex64::new(q, 0.0),
        }
    }
}

/// Product weight `w_x(q_x) w_y(q_y) w_z(q_z)` on the centered grid.
pub fn derivative_weights(qgrid: &QGrid, kernel: DerivativeKernel) -> Vec<Complex64> {
    let axes: Vec<Vec<Complex64>> = (0..3)
        .map(|ax| {
            qgrid
                .axis(ax)
                .into_iter()
                .map(|q| kernel.axis_weight(q, qgrid.pitch))
                .collect()
        })
        .collect();
    (0..qgrid.dims.len())
        .map(|i| {
            let [x, y, z] = qgrid.dims.coords(i);
            axes[0][x] * axes[1][y] * axes[2][z]
        })
        .collect()
}

/// Auxiliary function with the default kernel, zero lag at the array center.
pub fn auxiliary_u(intensity: &IntensityVolume) -> ComplexVolume {
    auxiliary_u_with(intensity, DerivativeKernel::Difference)
}

pub fn auxiliary_u_with(intensity: &IntensityVolume, kernel: DerivativeKernel) -> ComplexVolume {
    let fft = Fft3::new(intensity.dims);
    auxiliary_u_planned(&fft, intensity, kernel)
}

fn auxiliary_u_planned(fft: &Fft3, intensity: &IntensityVolume, kernel: DerivativeKernel) -> ComplexVolume {
    let qgrid = QGrid::new(intensity.dims, intensity.pitch);
    let spectrum: Vec<Complex64> = derivative_weights(&qgrid, kernel)
        .iter()
        .zip(&intensity.data)
        .map(|(w, &v)| w * v)
        .collect();
    ComplexVolume {
        data: fft::inverse_centered(fft, &spectrum),
        dims: intensity.dims,
        pitch: intensity.pitch,
        origin: intensity.dims.center(),
        cells: Dims([1, 1, 1]),
    }
}

/// `U` of the intensity minus its smallest off-origin value. A flat background
/// only reaches the lags next to the origin, which fall in the reference rows
/// of the window, so removing it changes nothing that is read back and keeps
/// its magnitude out of the transform.
fn background_free_u(fft: &Fft3, intensity: &IntensityVolume) -> ComplexVolume {
    let dc = QGrid::new(intensity.dims, intensity.pitch).dc_index();
    let floor = intensity
        .data
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != dc)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() || floor == 0.0 {
        return auxiliary_u_planned(fft, intensity, DerivativeKernel::Difference);
    }
    let mut shifted = intensity.clone();
    for (i, v) in shifted.data.iter_mut().enumerate() {
        if i != dc {
            *v -= floor;
        }
    }
    auxiliary_u_planned(fft, &shifted, DerivativeKernel::Difference)
}

/// Box of `U` holding one object copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExtractionWindow {
    pub offset: [usize; 3],
    pub size: Dims,
    /// The copy is the conjugate twin: read it reversed and conjugated.
    pub conjugate: bool,
}

/// Copies span lags `-N-1 ..= N` per axis, so the array needs `2N + 2` voxels
/// to keep them from wrapping onto each other.
fn required_oversampling(n: usize) -> usize {
    (2 * n + 2).div_ceil(n)
}

/// Window of the direct copy whose reference corner is `(0, 0, N)`.
pub fn locate_window(spec: &CrystalSpec) -> Result<ExtractionWindow> {
    spec.validate()?;
    let n = spec.n();
    let required = required_oversampling(n);
    if spec.oversampling < required {
        return Err(Error::InsufficientOversampling {
            oversampling: spec.oversampling,
            required,
        });
    }
    let c = spec.array_dims().center();
    Ok(ExtractionWindow {
        offset: [c[0], c[1], c[2] - spec.n_cells[2]],
        size: spec.cells(),
        conjugate: false,
    })
}

/// Crops the window from `u` into a box-sized volume.
pub fn extract(u: &ComplexVolume, window: &ExtractionWindow) -> Result<ComplexVolume> {
    let s = window.size;
    for a in 0..3 {
        if window.offset[a] + s.0[a] > u.dims.0[a] {
            return Err(Error::DimensionMismatch(format!(
                "window {:?}+{:?} outside array {:?}",
                window.offset, s.0, u.dims.0
            )));
        }
    }
    let mut out = ComplexVolume::zeros(s, u.pitch);
    for (i, v) in out.data.iter_mut().enumerate() {
        let p = s.coords(i);
        let src = if window.conjugate {
            [0, 1, 2].map(|a| window.offset[a] + s.0[a] - 1 - p[a])
        } else {
            [0, 1, 2].map(|a| window.offset[a] + p[a])
        };
        let val = u.get(src[0], src[1], src[2]);
        *v = if window.conjugate { val.conj() } else { val };
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Dcdi,
    ShrinkwrapFromDcdi,
    ShrinkwrapFromAutocorr,
    ShrinkwrapFromTruth,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::Dcdi => "dcdi",
            Method::ShrinkwrapFromDcdi => "shrinkwrap-from-dcdi",
            Method::ShrinkwrapFromAutocorr => "shrinkwrap-from-autocorr",
            Method::ShrinkwrapFromTruth => "shrinkwrap-from-truth",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    /// Full oversampled array, zero outside `support`, in natural units.
    pub object: ComplexVolume,
    pub support: Mask,
    pub method: Method,
    /// Factor mapping `|DFT(object)|^2` onto the measured intensity.
    pub intensity_scale: f64,
    pub trace: Option<MetricTrace>,
}

pub fn dcdi_reconstruct(intensity: &IntensityVolume, spec: &CrystalSpec) -> Result<ReconstructionResult> {
    let window = locate_window(spec)?;
    reconstruct_with_window(intensity, spec, &window)
}

pub fn reconstruct_with_window(
    intensity: &IntensityVolume,
    spec: &CrystalSpec,
    window: &ExtractionWindow,
) -> Result<ReconstructionResult> {
    check_grid(intensity, spec)?;
    let fft = Fft3::new(intensity.dims);
    let u = background_free_u(&fft, intensity);
    reconstruct_from_u(&fft, &u, intensity, spec, window)
}

fn check_grid(intensity: &IntensityVolume, spec: &CrystalSpec) -> Result<()> {
    spec.validate()?;
    if intensity.dims != spec.array_dims() {
        return Err(Error::DimensionMismatch(format!(
            "intensity {:?} vs crystal array {:?}",
            intensity.dims.0,
            spec.array_dims().0
        )));
    }
    Ok(())
}

fn reconstruct_from_u(
    fft: &Fft3,
    u: &ComplexVolume,
    intensity: &IntensityVolume,
    spec: &CrystalSpec,
    window: &ExtractionWindow,
) -> Result<ReconstructionResult> {
    let copy = extract(u, window)?;
    let cells = spec.cells();
    let split = spec.defect_layers();
    let mut reference = ComplexVolume::zeros(cells, spec.lattice_const);
    let mut defect = ComplexVolume::zeros(cells, spec.lattice_const);
    for i in 0..cells.len() {
        if cells.coords(i)[2] < split {
            defect.data[i] = copy.data[i];
        } else {
            reference.data[i] = Complex64::new(1.0, 0.0);
        }
    }

    let u_max = u.data.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let defect_cells = split * cells.0[0] * cells.0[1];
    let mean = defect.data.iter().map(|c| c.norm()).sum::<f64>() / defect_cells.max(1) as f64;
    if !(mean >= 1e-6 * u_max) || u_max == 0.0 {
        return Err(Error::ReconstructionFailed(format!(
            "extracted copy is degenerate (mean {mean:e}, max |U| {u_max:e})"
        )));
    }

    let dims = spec.array_dims();
    let origin = spec.box_origin();
    let fr = fft::forward_centered(fft, &ComplexVolume::embed(&reference, dims, origin)?.data);
    let fd = fft::forward_centered(fft, &ComplexVolume::embed(&defect, dims, origin)?.data);
    let dc = QGrid::new(dims, intensity.pitch).dc_index();
    let (scale, mu) = fit_copy_scale(&intensity.data, &fr, &fd, dc)?;

    let mut rec = reference;
    for (i, r) in rec.data.iter_mut().enumerate() {
        if cells.coords(i)[2] < split {
            *r = mu * defect.data[i];
        }
    }
    let object = ComplexVolume::embed(&rec, dims, origin)?;
    Ok(ReconstructionResult {
        support: object.box_mask(),
        object,
        method: Method::Dcdi,
        intensity_scale: scale,
        trace: None,
    })
}

/// Weighted least squares for `I = x1 |F_R|^2 + 2 Re(conj(F_R) F_D x2) + x3 |F_D|^2`
/// with complex `x2`, skipping the q = 0 voxel. Returns `(x1, x2 / x1)`.
/// Relative singular value below which a direction of the normalization fit is dropped.
const SINGULAR_CUTOFF: f64 = 1e-13;

/// Fits `I ~ s |F_R + mu F_D|^2 + b` linearly in `(s, s mu, s |mu|^2, b)`,
/// skipping the q = 0 voxel. The background column and weights built from
/// `I - min I` make the result independent of a uniform offset in `I`.
fn fit_copy_scale(
    intensity: &[f64],
    fr: &[Complex64],
    fd: &[Complex64],
    dc: usize,
) -> Result<(f64, Complex64)> {
    let n = intensity.len();
    let used = || (0..n).filter(move |&i| i != dc);
    let floor = used().map(|i| intensity[i]).fold(f64::INFINITY, f64::min);
    let mean = used().map(|i| intensity[i] - floor).sum::<f64>() / (n - 1).max(1) as f64;
    if !(mean > 0.0) {
        return Err(Error::ZeroIntensity);
    }
    let weight = |i: usize| 1.0 / (intensity[i] - floor + mean);
    let basis = |i: usize| {
        let p = fr[i].conj() * fd[i];
        Vector5::new(fr[i].norm_sqr(), 2.0 * p.re, -2.0 * p.im, fd[i].norm_sqr(), 1.0)
    };
    // column scaling keeps the normal matrix well conditioned
    let mut norms = Vector5::zeros();
    for i in used() {
        norms += basis(i).map(|b| b * b);
    }
    let norms = norms.map(|s| if s > 0.0 { 1.0 / s.sqrt() } else { 1.0 });
    let mut ata = Matrix5::<f64>::zeros();
    for i in used() {
        let b = basis(i).component_mul(&norms);
        ata += weight(i) * b * b.transpose();
    }
    // pseudo-inverse: a defect half that is a plain translate of the reference
    // makes the two self terms identical, and the minimum-norm split is exact
    let svd = ata.svd(true, true);
    let cutoff = SINGULAR_CUTOFF * svd.singular_values.max();
    // normal equations plus two rounds of refinement on the true residual
    let mut x = Vector5::<f64>::zeros();
    for _ in 0..3 {
        let mut atr = Vector5::<f64>::zeros();
        for i in used() {
            let b = basis(i).component_mul(&norms);
            atr += weight(i) * (intensity[i] - b.dot(&x)) * b;
        }
        let dx = svd
            .solve(&atr, cutoff)
            .map_err(|e| Error::ReconstructionFailed(format!("normalization fit: {e}")))?;
        x += dx;
    }
    let x = x.component_mul(&norms);
    let scale = x[0];
    if !(scale > 0.0 && scale.is_finite()) || !x.iter().all(|v| v.is_finite()) {
        return Err(Error::ReconstructionFailed(format!(
            "normalization fit gave scale {scale:e}"
        )));
    }
    Ok((scale, Complex64::new(x[1], x[2]) / scale))
}

/// One scanned window and the amplitude error of its reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationCandidate {
    pub window: ExtractionWindow,
    pub d_abs: f64,
}

/// Reconstructs through every window on the lattice of corner translations
/// (octant offsets `M/2 - N` or `M/2` per axis, one voxel of slack either way,
/// direct or conjugate) and scores each against `truth`. Sorted by `d_abs`.
pub fn calibrate_window(
    intensity: &IntensityVolume,
    spec: &CrystalSpec,
    truth: &ComplexVolume,
) -> Result<Vec<CalibrationCandidate>> {
    check_grid(intensity, spec)?;
    let fft = Fft3::new(intensity.dims);
    let u = background_free_u(&fft, intensity);
    let c = spec.array_dims().center();
    let n = spec.n_cells;
    let truth_amp: Vec<f64> = truth.crop_box().amplitude();
    let mask = vec![true; truth_amp.len()];

    let per_axis = |a: usize| -> Vec<usize> {
        let mut v = Vec::new();
        for base in [c[a] as i64 - n[a] as i64, c[a] as i64] {
            for j in -1..=1 {
                let o = base + j;
                if o >= 0 && o as usize + n[a] <= spec.array_dims().0[a] {
                    v.push(o as usize);
                }
            }
        }
        v
    };
    let (xs, ys, zs) = (per_axis(0), per_axis(1), per_axis(2));
    let mut out = Vec::new();
    for conjugate in [false, true] {
        for &oz in &zs {
            for &oy in &ys {
                for &ox in &xs {
                    let window = ExtractionWindow {
                        offset: [ox, oy, oz],
                        size: spec.cells(),
                        conjugate,
                    };
                    let d_abs = match reconstruct_from_u(&fft, &u, intensity, spec, &window) {
                        Ok(rec) => rms_d(&rec.object.crop_box().amplitude(), &truth_amp, &mask)?,
                        Err(Error::ReconstructionFailed(_)) => f64::INFINITY,
                        Err(e) => return Err(e),
                    };
                    out.push(CalibrationCandidate { window, d_abs });
                }
            }
        }
    }
    out.sort_by(|a, b| a.d_abs.total_cmp(&b.d_abs));
    Ok(out)
}
