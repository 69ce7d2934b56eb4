//! Shrink-wrap refinement: hybrid input-output iterations with a support
//! that is periodically re-estimated from the blurred current amplitude,
//! finished by a few error-reduction iterations.
//!
//! The iterate is kept in data units, so `|DFT(g)|^2` is compared to the
//! measured intensity directly; the result is divided by `sqrt(scale)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dcdi::{Method, ReconstructionResult};
use crate::error::{Error, Result};
use crate::fft::{self, Fft3};
use crate::forward::autocorrelation;
use crate::metrics;
use crate::volume::{ComplexVolume, IntensityVolume, Mask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShrinkwrapParams {
    pub max_iterations: usize,
    pub hio_beta: f64,
    pub support_update_every: usize,
    pub blur_sigma_start: f64,
    /// Multiplier applied to sigma after each support update.
    pub blur_sigma_decay: f64,
    pub blur_sigma_min: f64,
    /// Fraction of the blurred maximum kept in the support.
    pub support_threshold: f64,
    pub er_final_iters: usize,
    /// Reserved for randomized variants; the current algorithm draws nothing.
    pub rng_seed: u64,
}

impl Default for ShrinkwrapParams {
    fn default() -> Self {
        ShrinkwrapParams {
            max_iterations: 2000,
            hio_beta: 0.9,
            support_update_every: 20,
            blur_sigma_start: 2.0,
            blur_sigma_decay: 0.99,
            blur_sigma_min: 1.5,
            support_threshold: 0.20,
            er_final_iters: 50,
            rng_seed: 0,
        }
    }
}

impl ShrinkwrapParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.hio_beta > 0.0 && self.hio_beta < 1.0) {
            return bad(format!("hio_beta must lie in (0, 1), got {}", self.hio_beta));
        }
        if !(self.support_threshold > 0.0 && self.support_threshold < 1.0) {
            return bad(format!(
                "support_threshold must lie in (0, 1), got {}",
                self.support_threshold
            ));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.support_update_every == 0 {
            return bad("support_update_every must be at least 1".into());
        }
        if !(self.blur_sigma_min > 0.0 && self.blur_sigma_start >= self.blur_sigma_min) {
            return bad("need 0 < blur_sigma_min <= blur_sigma_start".into());
        }
        if !(self.blur_sigma_decay > 0.0 && self.blur_sigma_decay <= 1.0) {
            return bad(format!(
                "blur_sigma_decay must lie in (0, 1], got {}",
                self.blur_sigma_decay
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedKind {
    #[serde(rename = "autocorr")]
    Autocorrelation,
    Dcdi,
    GroundTruth,
}

impl SeedKind {
    pub fn tag(self) -> &'static str {
        match self {
            SeedKind::Autocorrelation => "autocorr",
            SeedKind::Dcdi => "dcdi",
            SeedKind::GroundTruth => "ground-truth",
        }
    }

    fn method(self) -> Method {
        match self {
            SeedKind::Autocorrelation => Method::ShrinkwrapFromAutocorr,
            SeedKind::Dcdi => Method::ShrinkwrapFromDcdi,
            SeedKind::GroundTruth => Method::ShrinkwrapFromTruth,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Seed {
    pub object0: ComplexVolume,
    pub support0: Mask,
    pub kind: SeedKind,
}

/// Fraction of the autocorrelation maximum kept in the seed support.
pub const AUTOCORR_SUPPORT_FRACTION: f64 = 0.04;

pub fn seed_from_autocorrelation(intensity: &IntensityVolume) -> Result<Seed> {
    if !intensity.data.iter().any(|&v| v != 0.0) {
        return Err(Error::ZeroIntensity);
    }
    let a = autocorrelation(intensity);
    let amp = a.amplitude();
    let max = amp.iter().cloned().fold(0.0, f64::max);
    let support0 = Mask {
        data: amp.iter().map(|&v| v >= AUTOCORR_SUPPORT_FRACTION * max).collect(),
        dims: a.dims,
    };
    Ok(Seed {
        object0: a,
        support0,
        kind: SeedKind::Autocorrelation,
    })
}

/// The deterministic reconstruction with the known crystal box as support.
pub fn seed_from_dcdi(recon: &ReconstructionResult) -> Seed {
    Seed {
        support0: recon.object.box_mask(),
        object0: recon.object.clone(),
        kind: SeedKind::Dcdi,
    }
}

/// Debugging seed: the true object on its own box.
pub fn seed_from_truth(truth: &ComplexVolume) -> Seed {
    Seed {
        support0: truth.box_mask(),
        object0: truth.clone(),
        kind: SeedKind::GroundTruth,
    }
}

/// Measured moduli in native FFT order with a reusable plan.
pub struct ModulusConstraint {
    fft: Fft3,
    moduli: Vec<f64>,
    total: f64,
}

impl ModulusConstraint {
    pub fn new(intensity: &IntensityVolume) -> Result<Self> {
        if let Some((index, &value)) = intensity.data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeIntensity { index, value });
        }
        let total = intensity.total();
        if !(total > 0.0) {
            return Err(Error::ZeroIntensity);
        }
        let native = fft::ifftshift(&intensity.data, intensity.dims);
        Ok(ModulusConstraint {
            fft: Fft3::new(intensity.dims),
            moduli: native.iter().map(|v| v.sqrt()).collect(),
            total,
        })
    }

    pub fn fft(&self) -> &Fft3 {
        &self.fft
    }

    /// Replaces Fourier moduli by the measured ones in place (native order
    /// spectrum), keeping voxels with zero measurement. Returns chi^2 of the
    /// spectrum as it was passed in.
    fn project_spectrum(&self, spec: &mut [Complex64]) -> f64 {
        let mut num = 0.0;
        for (f, &m) in spec.iter_mut().zip(&self.moduli) {
            let a = f.norm_sqr().sqrt();
            num += (m - a).powi(2);
            if m > 0.0 {
                *f = if a > 0.0 { *f * (m / a) } else { Complex64::new(m, 0.0) };
            }
        }
        num / self.total
    }

    /// chi^2 of `g`, transforming the buffer in place.
    fn chi2_in_place(&self, buf: &mut [Complex64]) -> f64 {
        self.fft.forward(buf);
        buf.iter()
            .zip(&self.moduli)
            .map(|(f, m)| (m - f.norm_sqr().sqrt()).powi(2))
            .sum::<f64>()
            / self.total
    }

    /// Modulus projection `P_M g` and the chi^2 of `g`.
    pub fn project(&self, g: &[Complex64]) -> (Vec<Complex64>, f64) {
        let mut buf = g.to_vec();
        self.fft.forward(&mut buf);
        let chi2 = self.project_spectrum(&mut buf);
        self.fft.inverse(&mut buf);
        (buf, chi2)
    }

    pub fn chi2(&self, g: &[Complex64]) -> f64 {
        self.chi2_in_place(&mut g.to_vec())
    }
}

fn hio_update(g: &mut [Complex64], projected: &[Complex64], support: &Mask, beta: f64) {
    for ((v, p), &inside) in g.iter_mut().zip(projected).zip(&support.data) {
        *v = if inside { *p } else { *v - beta * p };
    }
}

fn er_update(g: &mut [Complex64], projected: &[Complex64], support: &Mask) {
    for ((v, p), &inside) in g.iter_mut().zip(projected).zip(&support.data) {
        *v = if inside { *p } else { Complex64::new(0.0, 0.0) };
    }
}

/// One hybrid input-output iteration.
pub fn hio_step(
    object: &ComplexVolume,
    support: &Mask,
    constraint: &ModulusConstraint,
    beta: f64,
) -> ComplexVolume {
    let (p, _) = constraint.project(&object.data);
    let mut out = object.clone();
    hio_update(&mut out.data, &p, support, beta);
    out
}

/// One error-reduction iteration.
pub fn er_step(object: &ComplexVolume, support: &Mask, constraint: &ModulusConstraint) -> ComplexVolume {
    let (p, _) = constraint.project(&object.data);
    let mut out = object.clone();
    er_update(&mut out.data, &p, support);
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (4.0 * sigma).ceil() as i64;
    let w: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable periodic Gaussian blur, kernel truncated at `ceil(4 sigma)`.
pub fn gaussian_blur(field: &[f64], dims: crate::volume::Dims, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let mut cur = field.to_vec();
    let mut next = vec![0.0; cur.len()];
    let mut line = Vec::new();
    for axis in 0..3 {
        let n = dims.0[axis];
        let stride = [1, dims.0[0], dims.0[0] * dims.0[1]][axis];
        let outer = dims.len() / n;
        for o in 0..outer {
            // first element of line o along `axis`
            let start = match axis {
                0 => o * n,
                1 => (o % dims.0[0]) + (o / dims.0[0]) * dims.0[0] * dims.0[1],
                _ => o,
            };
            line.clear();
            line.extend((0..n).map(|k| cur[start + k * stride]));
            for k in 0..n {
                let mut acc = 0.0;
                for (j, w) in kernel.iter().enumerate() {
                    let src = (k as i64 + j as i64 - r).rem_euclid(n as i64) as usize;
                    acc += w * line[src];
                }
                next[start + k * stride] = acc;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Blurs `|object|` and keeps voxels at or above `threshold * max`.
pub fn update_support(object: &ComplexVolume, sigma: f64, threshold: f64) -> Result<Mask> {
    let blurred = gaussian_blur(&object.amplitude(), object.dims, sigma);
    let max = blurred.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::SupportCollapse { iteration: 0 });
    }
    let cut = threshold * max;
    let mask = Mask {
        data: blurred.iter().map(|&v| v >= cut).collect(),
        dims: object.dims,
    };
    if mask.count() == 0 {
        return Err(Error::SupportCollapse { iteration: 0 });
    }
    Ok(mask)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub chi2: f64,
    pub d_abs: Option<f64>,
    pub r_abs: Option<f64>,
    pub d_ph_z: Option<f64>,
    pub r_ph_z: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    pub records: Vec<TraceRecord>,
}

impl MetricTrace {
    pub fn final_chi2(&self) -> Option<f64> {
        self.records.last().map(|r| r.chi2)
    }

    /// First iteration whose chi^2 is at or below `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.chi2 <= target).map(|r| r.iteration)
    }
}

pub fn run_shrinkwrap(
    intensity: &IntensityVolume,
    seed: &Seed,
    params: &ShrinkwrapParams,
    truth: Option<&ComplexVolume>,
) -> Result<ReconstructionResult> {
    run_shrinkwrap_with(intensity, seed, params, truth, &mut |_| Ok(()))
}

/// [`run_shrinkwrap`] that hands every trace record to `sink` as soon as it exists.
pub fn run_shrinkwrap_with(
    intensity: &IntensityVolume,
    seed: &Seed,
    params: &ShrinkwrapParams,
    truth: Option<&ComplexVolume>,
    sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
) -> Result<ReconstructionResult> {
    params.validate()?;
    let dims = intensity.dims;
    if seed.object0.dims != dims || seed.support0.dims != dims {
        return Err(Error::DimensionMismatch(format!(
            "seed {:?} vs intensity {:?}",
            seed.object0.dims.0, dims.0
        )));
    }
    if seed.support0.count() == 0 {
        return Err(Error::SupportCollapse { iteration: 0 });
    }
    if let Some(t) = truth {
        if t.dims != dims {
            return Err(Error::DimensionMismatch("truth grid differs from intensity".into()));
        }
    }
    let constraint = ModulusConstraint::new(intensity)?;
    let unit = intensity.scale.sqrt();

    // seed masked by its support, then energy-matched to the data (Parseval)
    let mut support = seed.support0.clone();
    let mut g: Vec<Complex64> = seed
        .object0
        .data
        .iter()
        .zip(&support.data)
        .map(|(v, &m)| if m { *v } else { Complex64::new(0.0, 0.0) })
        .collect();
    let energy: f64 = g.iter().map(|v| v.norm_sqr()).sum();
    if !(energy > 0.0) {
        return Err(Error::InvalidParameter("seed is zero on its support".into()));
    }
    let alpha = (constraint.total / (dims.len() as f64 * energy)).sqrt();
    for v in g.iter_mut() {
        *v *= alpha;
    }

    let template = seed.object0.clone();
    let natural = |g: &[Complex64], support: &Mask| -> ComplexVolume {
        let mut o = template.clone();
        for ((dst, v), &m) in o.data.iter_mut().zip(g).zip(&support.data) {
            *dst = if m { v / unit } else { Complex64::new(0.0, 0.0) };
        }
        o
    };
    let mut trace = MetricTrace::default();
    let mut record = |iteration: usize, chi2: f64, g: &[Complex64], support: &Mask, with_truth: bool| -> Result<()> {
        if !chi2.is_finite() {
            return Err(Error::NumericalFailure { iteration });
        }
        let mut rec = TraceRecord {
            iteration,
            chi2,
            ..Default::default()
        };
        if let (Some(t), true) = (truth, with_truth) {
            let reg = metrics::register(&natural(g, support), t)?;
            let rs = metrics::real_space(&reg.aligned, t)?;
            rec.d_abs = Some(rs.d_abs);
            rec.r_abs = Some(rs.r_abs);
            rec.d_ph_z = Some(rs.d_ph_z);
            rec.r_ph_z = Some(rs.r_ph_z);
        }
        sink(&rec)?;
        trace.records.push(rec);
        Ok(())
    };

    let max = params.max_iterations;
    let er_start = max.saturating_sub(params.er_final_iters);
    let mut sigma = params.blur_sigma_start;
    let mut buf = vec![Complex64::new(0.0, 0.0); dims.len()];
    let masked_chi2 = |g: &[Complex64], support: &Mask, buf: &mut Vec<Complex64>| -> f64 {
        for ((b, v), &m) in buf.iter_mut().zip(g).zip(&support.data) {
            *b = if m { *v } else { Complex64::new(0.0, 0.0) };
        }
        constraint.chi2_in_place(buf)
    };
    let chi2 = masked_chi2(&g, &support, &mut buf);
    record(0, chi2, &g, &support, truth.is_some())?;
    for it in 1..=max {
        buf.copy_from_slice(&g);
        constraint.fft.forward(&mut buf);
        constraint.project_spectrum(&mut buf);
        constraint.fft.inverse(&mut buf);
        if it > er_start {
            er_update(&mut g, &buf, &support);
        } else {
            hio_update(&mut g, &buf, &support, params.hio_beta);
        }
        // the estimate is the iterate on the support the step used
        let chi2 = masked_chi2(&g, &support, &mut buf);
        let metric_due = it % params.support_update_every == 0 || it == max;
        record(it, chi2, &g, &support, metric_due)?;
        if it % params.support_update_every == 0 && it <= er_start {
            let masked = natural(&g, &support);
            support = update_support(&masked, sigma, params.support_threshold)
                .map_err(|_| Error::SupportCollapse { iteration: it })?;
            sigma = (sigma * params.blur_sigma_decay).max(params.blur_sigma_min);
        }
    }
    Ok(ReconstructionResult {
        object: natural(&g, &support),
        support,
        method: seed.kind.method(),
        intensity_scale: intensity.scale,
        trace: Some(trace),
    })
}
