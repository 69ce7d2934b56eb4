//! Ground-truth crystal: a cubic box of unit cells carrying
//! `beta_h(r) * exp(i * phase(r))`, embedded in an oversampled array.
//!
//! Geometry follows the diffraction setup: the xy plane is the top surface
//! and z runs down into the crystal, so `z < L/2` is the upper half. The upper
//! half holds the defects; the lower half (`z >= L/2`) is the holographic
//! reference, where the curved deformation field is weakest.
//!
//! All fields are sampled at cell centers, `((i + 1/2) a, (j + 1/2) a, (k + 1/2) a)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims};

/// Spherical structural defect with a reduced structure-factor ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    /// Center in cell units, measured from the crystal corner.
    pub center: [f64; 3],
    /// Radius in cell units.
    pub radius: f64,
    pub beta: f64,
}

/// Where the curved displacement field acts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Deformation {
    /// Throughout the crystal.
    #[default]
    Whole,
    /// Only in the upper (defect) half; the reference half stays ideal.
    DefectHalf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrystalSpec {
    /// Cell counts (N_x, N_y, N_z); must be equal.
    pub n_cells: [usize; 3],
    /// Lattice constant a in nm, also the voxel pitch.
    pub lattice_const: f64,
    /// Curvature coefficient (rad / nm^2). Derived from `max_phase` when unset.
    pub gamma: Option<f64>,
    /// Phase reached at the top corners of the crystal (rad).
    pub max_phase: f64,
    /// Explicit inclusions; `None` selects the default three spheres scaled to the crystal.
    pub inclusions: Option<Vec<Inclusion>>,
    /// Array-to-crystal size ratio per axis.
    pub oversampling: usize,
    /// Reflection h; only the z component may be nonzero.
    pub reflection: [i32; 3],
    pub deformation: Deformation,
}

pub const DEFAULT_CELLS: usize = 32;
pub const DEFAULT_OVERSAMPLING: usize = 4;
pub const DEFAULT_MAX_PHASE: f64 = 0.25 * std::f64::consts::PI;
pub const MIN_INCLUSION_BETA: f64 = 0.9;

impl Default for CrystalSpec {
    fn default() -> Self {
        CrystalSpec {
            n_cells: [DEFAULT_CELLS; 3],
            lattice_const: 80.0,
            gamma: None,
            max_phase: DEFAULT_MAX_PHASE,
            inclusions: None,
            oversampling: DEFAULT_OVERSAMPLING,
            reflection: [0, 0, 1],
            deformation: Deformation::Whole,
        }
    }
}

/// Default defect set: three disjoint spheres in the upper half with radii
/// 2, 3 and 4 cells at N = 32, scaled with N (never below one cell).
pub fn default_inclusions(n: usize) -> Vec<Inclusion> {
    let s = n as f64;
    let r = |cells: f64| (cells * s / 32.0).max(1.0);
    vec![
        Inclusion {
            center: [0.28 * s, 0.30 * s, 0.22 * s],
            radius: r(4.0),
            beta: MIN_INCLUSION_BETA,
        },
        Inclusion {
            center: [0.70 * s, 0.32 * s, 0.28 * s],
            radius: r(3.0),
            beta: 0.95,
        },
        Inclusion {
            center: [0.45 * s, 0.72 * s, 0.20 * s],
            radius: r(2.0),
            beta: 0.93,
        },
    ]
}

impl CrystalSpec {
    /// Cubic crystal of `n` cells per edge with the remaining parameters at their defaults.
    pub fn cubic(n: usize) -> Self {
        CrystalSpec {
            n_cells: [n; 3],
            ..Default::default()
        }
    }

    pub fn n(&self) -> usize {
        self.n_cells[0]
    }

    pub fn cells(&self) -> Dims {
        Dims(self.n_cells)
    }

    /// Oversampled array extent.
    pub fn array_dims(&self) -> Dims {
        Dims(self.n_cells.map(|n| n * self.oversampling))
    }

    /// Corner of the crystal box inside the oversampled array (box centered).
    pub fn box_origin(&self) -> [usize; 3] {
        let a = self.array_dims().0;
        [0, 1, 2].map(|i| (a[i] - self.n_cells[i]) / 2)
    }

    /// Edge lengths L = N a.
    pub fn lengths(&self) -> [f64; 3] {
        self.n_cells.map(|n| n as f64 * self.lattice_const)
    }

    /// Number of z layers in the upper (defect) half; the rest form the reference.
    pub fn defect_layers(&self) -> usize {
        self.n_cells[2] / 2
    }

    pub fn resolved_inclusions(&self) -> Vec<Inclusion> {
        self.inclusions
            .clone()
            .unwrap_or_else(|| default_inclusions(self.n()))
    }

    pub fn validate(&self) -> Result<()> {
        let [nx, ny, nz] = self.n_cells;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidSpec("cell counts must be positive".into()));
        }
        if nx != ny || ny != nz {
            return Err(Error::InvalidSpec(format!(
                "crystal must be cubic, got {:?}",
                self.n_cells
            )));
        }
        if !(self.lattice_const > 0.0 && self.lattice_const.is_finite()) {
            return Err(Error::InvalidSpec("lattice_const must be positive".into()));
        }
        if self.oversampling < 2 {
            return Err(Error::InvalidSpec(format!(
                "oversampling must be at least 2, got {}",
                self.oversampling
            )));
        }
        if self.reflection[0] != 0 || self.reflection[1] != 0 || self.reflection[2] == 0 {
            return Err(Error::InvalidSpec(format!(
                "reflection must be of (00L) type, got {:?}",
                self.reflection
            )));
        }
        if !self.max_phase.is_finite() || self.gamma.is_some_and(|g| !g.is_finite()) {
            return Err(Error::InvalidSpec("phase parameters must be finite".into()));
        }
        let n = self.n() as f64;
        for (i, inc) in self.resolved_inclusions().iter().enumerate() {
            if !(inc.beta > 0.0 && inc.beta <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "inclusion {i}: beta must lie in (0, 1], got {}",
                    inc.beta
                )));
            }
            if !(inc.radius > 0.0 && inc.radius.is_finite()) {
                return Err(Error::InvalidSpec(format!("inclusion {i}: radius must be positive")));
            }
            if inc.center.iter().any(|&c| !(0.0..=n).contains(&c)) {
                return Err(Error::InvalidSpec(format!("inclusion {i}: center outside the crystal")));
            }
            if inc.center[2] >= n / 2.0 {
                return Err(Error::InvalidSpec(format!(
                    "inclusion {i}: center z = {} is not in the upper half (z < {})",
                    inc.center[2],
                    n / 2.0
                )));
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> Result<f64> {
        match self.gamma {
            Some(g) => Ok(g),
            None => gamma_from_max_phase(self),
        }
    }
}

/// Curvature coefficient that puts `max_phase` at the top corners:
/// `gamma = max_phase / ((L_x/2)^2 + (L_y/2)^2)`.
pub fn gamma_from_max_phase(spec: &CrystalSpec) -> Result<f64> {
    let [lx, ly, _] = spec.lengths();
    if !(lx > 0.0 && ly > 0.0) {
        return Err(Error::InvalidSpec("zero crystal dimensions".into()));
    }
    Ok(spec.max_phase / ((lx / 2.0).powi(2) + (ly / 2.0).powi(2)))
}

/// Continuous phase `gamma [(x - L_x/2)^2 + (y - L_y/2)^2] (1 - z / L_z)` at a point in nm.
pub fn phase_at(gamma: f64, lengths: [f64; 3], p: [f64; 3]) -> f64 {
    let [lx, ly, lz] = lengths;
    gamma * ((p[0] - lx / 2.0).powi(2) + (p[1] - ly / 2.0).powi(2)) * (1.0 - p[2] / lz)
}

/// Phase sampled at cell centers on the crystal box (dims = `n_cells`).
pub fn build_phase_field(spec: &CrystalSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let gamma = spec.gamma()?;
    let cells = spec.cells();
    let a = spec.lattice_const;
    let lengths = spec.lengths();
    let split = spec.defect_layers();
    let mut out = vec![0.0; cells.len()];
    for (i, v) in out.iter_mut().enumerate() {
        let [x, y, z] = cells.coords(i);
        if spec.deformation == Deformation::DefectHalf && z >= split {
            continue;
        }
        let p = [x, y, z].map(|c| (c as f64 + 0.5) * a);
        *v = phase_at(gamma, lengths, p);
    }
    Ok(out)
}

/// `beta_h` sampled at cell centers: 1 in the bulk, the smallest covering
/// inclusion value inside spheres.
pub fn build_amplitude_field(spec: &CrystalSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let cells = spec.cells();
    let inclusions = spec.resolved_inclusions();
    let mut out = vec![1.0f64; cells.len()];
    for (i, v) in out.iter_mut().enumerate() {
        let p = cells.coords(i).map(|c| c as f64 + 0.5);
        for inc in &inclusions {
            let d2: f64 = (0..3).map(|a| (p[a] - inc.center[a]).powi(2)).sum();
            if d2 <= inc.radius * inc.radius {
                *v = v.min(inc.beta);
            }
        }
    }
    Ok(out)
}

/// `beta_h(r) exp(-i h.u(r))` in the crystal box of the oversampled array, zero elsewhere.
pub fn build_object(spec: &CrystalSpec) -> Result<ComplexVolume> {
    let amp = build_amplitude_field(spec)?;
    let phase = build_phase_field(spec)?;
    let mut boxed = ComplexVolume::zeros(spec.cells(), spec.lattice_const);
    for (v, (&b, &p)) in boxed.data.iter_mut().zip(amp.iter().zip(&phase)) {
        *v = Complex64::from_polar(b, p);
    }
    ComplexVolume::embed(&boxed, spec.array_dims(), spec.box_origin())
}
