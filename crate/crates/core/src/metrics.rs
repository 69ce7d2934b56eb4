//! Error metrics and registration against ground truth.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dcdi::ReconstructionResult;
use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::volume::{ComplexVolume, Dims, IntensityVolume};

/// Fourier-space residual `sum (sqrt(I_meas) - sqrt(I_model))^2 / sum I_meas`.
pub fn chi2(measured: &IntensityVolume, model: &IntensityVolume) -> Result<f64> {
    if measured.dims != model.dims {
        return Err(Error::DimensionMismatch(format!(
            "measured {:?} vs model {:?}",
            measured.dims.0, model.dims.0
        )));
    }
    chi2_slices(&measured.data, &model.data)
}

pub(crate) fn chi2_slices(measured: &[f64], model: &[f64]) -> Result<f64> {
    for (index, &value) in measured.iter().chain(model).enumerate() {
        if !(value >= 0.0) {
            return Err(Error::NegativeIntensity {
                index: index % measured.len(),
                value,
            });
        }
    }
    let total: f64 = measured.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedMetric("chi2 needs a nonzero measured intensity"));
    }
    let num: f64 = measured
        .iter()
        .zip(model)
        .map(|(m, c)| (m.sqrt() - c.sqrt()).powi(2))
        .sum();
    Ok(num / total)
}

fn check_lengths(rec: &[f64], ideal: &[f64], mask: &[bool]) -> Result<()> {
    if rec.len() != ideal.len() || rec.len() != mask.len() {
        return Err(Error::DimensionMismatch(format!(
            "field lengths {}, {} and mask {}",
            rec.len(),
            ideal.len(),
            mask.len()
        )));
    }
    Ok(())
}

/// Normalized RMS error `sqrt(sum (rec - ideal)^2 / sum (ideal - <ideal>)^2)` over the mask.
pub fn rms_d(rec: &[f64], ideal: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(rec, ideal, mask)?;
    let picked = || (0..rec.len()).filter(|&i| mask[i]);
    let count = picked().count();
    if count == 0 {
        return Err(Error::UndefinedMetric("empty metric mask"));
    }
    let mean = picked().map(|i| ideal[i]).sum::<f64>() / count as f64;
    let den: f64 = picked().map(|i| (ideal[i] - mean).powi(2)).sum();
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("d is undefined for a constant ideal field"));
    }
    let num: f64 = picked().map(|i| (rec[i] - ideal[i]).powi(2)).sum();
    Ok((num / den).sqrt())
}

/// Absolute-difference ratio `sum |rec - ideal| / sum |ideal|` without the root.
pub fn abs_r_plain(rec: &[f64], ideal: &[f64], mask: &[bool]) -> Result<f64> {
    check_lengths(rec, ideal, mask)?;
    let picked = || (0..rec.len()).filter(|&i| mask[i]);
    let den: f64 = picked().map(|i| ideal[i].abs()).sum();
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric("r is undefined for a zero ideal field"));
    }
    let num: f64 = picked().map(|i| (rec[i] - ideal[i]).abs()).sum();
    Ok(num / den)
}

/// `sqrt(sum |rec - ideal| / sum |ideal|)`, the printed form of r.
pub fn abs_r(rec: &[f64], ideal: &[f64], mask: &[bool]) -> Result<f64> {
    abs_r_plain(rec, ideal, mask).map(f64::sqrt)
}

/// d/dz of a real field on `dims`: central differences inside, one-sided on the two z faces.
pub fn phase_z_derivative(phase: &[f64], dims: Dims, pitch: f64) -> Result<Vec<f64>> {
    z_derivative(dims, pitch, phase.len(), |i, j| phase[i] - phase[j])
}

/// Same stencil on a complex field, differencing through `arg(o[i] conj(o[j]))`
/// so no phase unwrapping is needed while neighbours differ by less than pi.
pub fn complex_phase_z_derivative(field: &ComplexVolume) -> Result<Vec<f64>> {
    let d = &field.data;
    z_derivative(field.dims, field.pitch, d.len(), |i, j| (d[i] * d[j].conj()).arg())
}

fn z_derivative(
    dims: Dims,
    pitch: f64,
    len: usize,
    diff: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    if len != dims.len() {
        return Err(Error::DimensionMismatch(format!(
            "field of {len} values on {:?}",
            dims.0
        )));
    }
    let [nx, ny, nz] = dims.0;
    if nz < 2 {
        return Err(Error::InvalidParameter(format!(
            "z derivative needs at least 2 layers, got {nz}"
        )));
    }
    let mut out = vec![0.0; len];
    for z in 0..nz {
        let (hi, lo, span) = if z == 0 {
            (1, 0, 1.0)
        } else if z == nz - 1 {
            (nz - 1, nz - 2, 1.0)
        } else {
            (z + 1, z - 1, 2.0)
        };
        for y in 0..ny {
            for x in 0..nx {
                out[dims.index(x, y, z)] = diff(dims.index(x, y, hi), dims.index(x, y, lo)) / (span * pitch);
            }
        }
    }
    Ok(out)
}

/// Integer translation and twin choice that best align a reconstruction with truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub aligned: ComplexVolume,
    /// `rec` equals the (possibly twinned) aligned field translated by this shift.
    pub shift: [i64; 3],
    pub twin: bool,
}

/// Signed lag of the amplitude cross-correlation peak: `b(r + s) ~ a(r)`.
fn correlation_peak(fft: &Fft3, a: &[f64], b: &[f64]) -> [i64; 3] {
    let dims = fft.dims();
    let to_c = |v: &[f64]| v.iter().map(|&x| Complex64::new(x, 0.0)).collect::<Vec<_>>();
    let mut fa = to_c(a);
    let mut fb = to_c(b);
    fft.forward(&mut fa);
    fft.forward(&mut fb);
    for (x, y) in fb.iter_mut().zip(&fa) {
        *x *= y.conj();
    }
    fft.inverse(&mut fb);
    let mut best = 0;
    for (i, v) in fb.iter().enumerate() {
        if v.re > fb[best].re {
            best = i;
        }
    }
    let p = dims.coords(best);
    [0, 1, 2].map(|k| {
        let n = dims.0[k] as i64;
        let s = p[k] as i64;
        if s >= n / 2 {
            s - n
        } else {
            s
        }
    })
}

fn box_amplitudes(v: &ComplexVolume, origin: [usize; 3], cells: Dims) -> Vec<f64> {
    v.clone().with_box(origin, cells).crop_box().amplitude()
}

/// Residual after the best global phase: `sum |a|^2 + sum |b|^2 - 2 |sum a conj(b)|`.
fn phase_free_residual(a: &ComplexVolume, b: &ComplexVolume) -> f64 {
    let cross: Complex64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y.conj()).sum();
    a.energy() + b.energy() - 2.0 * cross.norm()
}

/// Aligns `rec` to `truth` by the amplitude cross-correlation peak, trying
/// both `rec` and its twin, and keeps the candidate with the lower `d_abs`
/// on the truth box.
pub fn register(rec: &ComplexVolume, truth: &ComplexVolume) -> Result<Registration> {
    if rec.dims != truth.dims {
        return Err(Error::DimensionMismatch(format!(
            "reconstruction {:?} vs truth {:?}",
            rec.dims.0, truth.dims.0
        )));
    }
    let fft = Fft3::new(truth.dims);
    let truth_amp = truth.amplitude();
    let truth_box = box_amplitudes(truth, truth.origin, truth.cells);
    let mask = vec![true; truth_box.len()];
    let mut best: Option<(f64, f64, Registration)> = None;
    for twin in [false, true] {
        let cand = if twin { rec.twin() } else { rec.clone() };
        let shift = correlation_peak(&fft, &truth_amp, &cand.amplitude());
        let aligned = cand
            .rolled(shift.map(|s| -s))
            .with_box(truth.origin, truth.cells);
        let d = rms_d(&aligned.crop_box().amplitude(), &truth_box, &mask).unwrap_or_else(|_| {
            // constant truth amplitude: fall back to the plain squared error
            aligned
                .crop_box()
                .amplitude()
                .iter()
                .zip(&truth_box)
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        });
        let tie = phase_free_residual(&aligned, truth);
        let better = match &best {
            None => true,
            Some((bd, bt, _)) => {
                let scale = d.abs().max(bd.abs()).max(1e-300);
                if (d - bd).abs() <= 1e-12 * scale {
                    tie < *bt
                } else {
                    d < *bd
                }
            }
        };
        if better {
            best = Some((d, tie, Registration { aligned, shift, twin }));
        }
    }
    Ok(best.expect("two candidates evaluated").2)
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub chi2: f64,
    pub d_abs: f64,
    pub r_abs: f64,
    pub d_ph_z: f64,
    pub r_ph_z: f64,
    /// r without the square root.
    pub r_abs_plain: f64,
    pub r_ph_z_plain: f64,
    pub shift: [i64; 3],
    pub twin: bool,
}

/// Real-space metrics of an aligned field against truth on the truth box.
pub(crate) struct RealSpace {
    pub d_abs: f64,
    pub r_abs: f64,
    pub d_ph_z: f64,
    pub r_ph_z: f64,
    pub r_abs_plain: f64,
    pub r_ph_z_plain: f64,
}

pub(crate) fn real_space(aligned: &ComplexVolume, truth: &ComplexVolume) -> Result<RealSpace> {
    let rec_box = aligned.clone().with_box(truth.origin, truth.cells).crop_box();
    let truth_box = truth.crop_box();
    let mask = vec![true; truth_box.data.len()];
    let (ra, ta) = (rec_box.amplitude(), truth_box.amplitude());
    let rd = complex_phase_z_derivative(&rec_box)?;
    let td = complex_phase_z_derivative(&truth_box)?;
    Ok(RealSpace {
        d_abs: rms_d(&ra, &ta, &mask)?,
        r_abs: abs_r(&ra, &ta, &mask)?,
        d_ph_z: rms_d(&rd, &td, &mask)?,
        r_ph_z: abs_r(&rd, &td, &mask)?,
        r_abs_plain: abs_r_plain(&ra, &ta, &mask)?,
        r_ph_z_plain: abs_r_plain(&rd, &td, &mask)?,
    })
}

/// Model intensity `scale * |DFT(object)|^2` in centered layout.
pub fn model_intensity(fft: &Fft3, object: &ComplexVolume, scale: f64) -> IntensityVolume {
    let data = crate::fft::forward_centered(fft, &object.data)
        .iter()
        .map(|f| scale * f.norm_sqr())
        .collect();
    IntensityVolume {
        data,
        dims: object.dims,
        pitch: object.pitch,
        scale,
        photon_scale: None,
    }
}

/// Registers `rec` against `truth`, then scores amplitudes, z phase
/// derivatives (on the truth box) and the Fourier residual.
pub fn evaluate(
    rec: &ReconstructionResult,
    truth: &ComplexVolume,
    measured: &IntensityVolume,
) -> Result<MetricsReport> {
    let fft = Fft3::new(measured.dims);
    evaluate_planned(&fft, &rec.object, rec.intensity_scale, truth, measured)
}

pub(crate) fn evaluate_planned(
    fft: &Fft3,
    object: &ComplexVolume,
    scale: f64,
    truth: &ComplexVolume,
    measured: &IntensityVolume,
) -> Result<MetricsReport> {
    if object.dims != measured.dims {
        return Err(Error::DimensionMismatch(format!(
            "reconstruction {:?} vs intensity {:?}",
            object.dims.0, measured.dims.0
        )));
    }
    let reg = register(object, truth)?;
    let rs = real_space(&reg.aligned, truth)?;
    let model = model_intensity(fft, &reg.aligned, scale);
    Ok(MetricsReport {
        chi2: chi2(measured, &model)?,
        d_abs: rs.d_abs,
        r_abs: rs.r_abs,
        d_ph_z: rs.d_ph_z,
        r_ph_z: rs.r_ph_z,
        r_abs_plain: rs.r_abs_plain,
        r_ph_z_plain: rs.r_ph_z_plain,
        shift: reg.shift,
        twin: reg.twin,
    })
}

/// Column order of summary rows.
pub const SUMMARY_HEADER: [&str; 8] = ["method", "seed", "noise", "r_abs", "r_ph_z", "d_abs", "d_ph_z", "chi2"];

impl MetricsReport {
    pub fn csv_row(&self, method: &str, seed: &str, noise: &str) -> Vec<String> {
        vec![
            method.to_string(),
            seed.to_string(),
            noise.to_string(),
            self.r_abs.to_string(),
            self.r_ph_z.to_string(),
            self.d_abs.to_string(),
            self.d_ph_z.to_string(),
            self.chi2.to_string(),
        ]
    }
}
