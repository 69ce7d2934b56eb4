//! Volume dumps: a TOML sidecar (`<stem>.toml`) describing a raw body
//! (`<stem>.bin`) of little-endian f64 values in x-fastest order. Complex
//! volumes store interleaved (re, im) pairs.

use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, IntensityVolume};

const FORMAT: &str = "bcdi-volume";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    /// `complex` or `real`.
    pub kind: String,
    pub dims: [usize; 3],
    pub pitch: f64,
    pub order: String,
    pub endianness: String,
    pub scalar: String,
    pub body: String,
    /// Crystal box inside the array (complex volumes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<[usize; 3]>,
    /// Intensity scale and photon scale (real volumes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photon_scale: Option<f64>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("toml"), stem.with_extension("bin"))
}

fn sidecar(kind: &str, dims: Dims, pitch: f64, body: &Path) -> Sidecar {
    Sidecar {
        format: FORMAT.into(),
        version: 1,
        kind: kind.into(),
        dims: dims.0,
        pitch,
        order: "x-fastest".into(),
        endianness: "little".into(),
        scalar: "f64".into(),
        body: body
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        origin: None,
        cells: None,
        scale: None,
        photon_scale: None,
    }
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn write_pair(stem: &Path, header: &Sidecar, values: impl Iterator<Item = f64>) -> Result<()> {
    let (head, body) = paths(stem);
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&body, &bytes)?;
    let text = toml::to_string(header).map_err(|e| Error::VolumeFormat(e.to_string()))?;
    write_atomic(&head, text.as_bytes())
}

pub fn write_complex(stem: &Path, v: &ComplexVolume) -> Result<()> {
    let (_, body) = paths(stem);
    let mut h = sidecar("complex", v.dims, v.pitch, &body);
    h.origin = Some(v.origin);
    h.cells = Some(v.cells.0);
    write_pair(stem, &h, v.data.iter().flat_map(|c| [c.re, c.im]))
}

pub fn write_intensity(stem: &Path, v: &IntensityVolume) -> Result<()> {
    let (_, body) = paths(stem);
    let mut h = sidecar("real", v.dims, v.pitch, &body);
    h.scale = Some(v.scale);
    h.photon_scale = v.photon_scale;
    write_pair(stem, &h, v.data.iter().copied())
}

fn read_pair(stem: &Path, kind: &str) -> Result<(Sidecar, Vec<f64>)> {
    let (head, _) = paths(stem);
    let text = std::fs::read_to_string(&head)?;
    let h: Sidecar = toml::from_str(&text).map_err(|e| Error::VolumeFormat(e.to_string()))?;
    let expect = |field: &str, got: &str, want: &str| {
        if got == want {
            Ok(())
        } else {
            Err(Error::VolumeFormat(format!("{field} is {got:?}, expected {want:?}")))
        }
    };
    expect("format", &h.format, FORMAT)?;
    expect("kind", &h.kind, kind)?;
    expect("order", &h.order, "x-fastest")?;
    expect("endianness", &h.endianness, "little")?;
    expect("scalar", &h.scalar, "f64")?;
    if h.version != 1 {
        return Err(Error::VolumeFormat(format!("unsupported version {}", h.version)));
    }
    let body = head.with_file_name(&h.body);
    let bytes = std::fs::read(&body)?;
    let per = if kind == "complex" { 2 } else { 1 };
    let want = Dims(h.dims).len() * per * 8;
    if bytes.len() != want {
        return Err(Error::VolumeFormat(format!(
            "body has {} bytes, header implies {want}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((h, values))
}

pub fn read_complex(stem: &Path) -> Result<ComplexVolume> {
    let (h, values) = read_pair(stem, "complex")?;
    let dims = Dims(h.dims);
    Ok(ComplexVolume {
        data: values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect(),
        dims,
        pitch: h.pitch,
        origin: h.origin.unwrap_or([0; 3]),
        cells: h.cells.map(Dims).unwrap_or(dims),
    })
}

pub fn read_intensity(stem: &Path) -> Result<IntensityVolume> {
    let (h, data) = read_pair(stem, "real")?;
    Ok(IntensityVolume {
        data,
        dims: Dims(h.dims),
        pitch: h.pitch,
        scale: h.scale.unwrap_or(1.0),
        photon_scale: h.photon_scale,
    })
}
