//! On-disk formats: little-endian binary blobs with JSON sidecars that carry
//! a sha256 of the blob.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::dynamics::{Model, OrbitalSet};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Representation};
use crate::inversion::ReconstructionResult;
use crate::kernels::KernelMatrix;
use crate::potential::PotentialSpec;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `x` with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Sidecar path of a blob: same stem, `.json` extension.
pub fn sidecar_path(blob: &Path) -> PathBuf {
    blob.with_extension("json")
}

/// Pretty JSON with every float written by [`fmt_f64`].
struct Digits17<'a>(PrettyFormatter<'a>);

impl Formatter for Digits17<'_> {
    fn write_f64<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + std::io::Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + std::io::Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + std::io::Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty-printed JSON, floats with 17 significant digits, trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Digits17(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes utf-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn read_verified(path: &Path, expected: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let found = sha256_hex(&bytes);
    if found != expected {
        return Err(Error::Integrity {
            path: path.display().to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(bytes)
}

fn complex_bytes(values: &[C], out: &mut Vec<u8>) {
    for z in values {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
}

fn real_bytes(values: &[f64], out: &mut Vec<u8>) {
    for x in values {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn decode_reals(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidInput(format!(
            "blob length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn decode_complex(bytes: &[u8]) -> Result<Vec<C>> {
    let r = decode_reals(bytes)?;
    if r.len() % 2 != 0 {
        return Err(Error::InvalidInput("odd number of complex components".into()));
    }
    Ok(r.chunks_exact(2).map(|c| C::new(c[0], c[1])).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub dim: usize,
    #[serde(rename = "M")]
    pub points: usize,
    #[serde(rename = "L")]
    pub half_extent: f64,
    pub representation: Representation,
    pub label: String,
    pub sha256: String,
}

impl FieldSidecar {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.points, self.half_extent)
    }
}

fn field_sidecar(field: &Field, sha256: String) -> FieldSidecar {
    let g = field.grid();
    FieldSidecar {
        dim: g.dim(),
        points: g.points_per_axis(),
        half_extent: g.half_extent(),
        representation: field.representation(),
        label: field.label().to_string(),
        sha256,
    }
}

/// Write `field` as interleaved re/im float64 to `path` and its sidecar next to it.
pub fn write_field(field: &Field, path: &Path) -> Result<FieldSidecar> {
    let mut bytes = Vec::with_capacity(16 * field.values().len());
    complex_bytes(field.values(), &mut bytes);
    fs::write(path, &bytes)?;
    let meta = field_sidecar(field, sha256_hex(&bytes));
    write_json(&sidecar_path(path), &meta)?;
    Ok(meta)
}

pub fn read_field(path: &Path) -> Result<Field> {
    let meta: FieldSidecar = read_json(&sidecar_path(path))?;
    let bytes = read_verified(path, &meta.sha256)?;
    Field::new(&meta.grid()?, meta.representation, decode_complex(&bytes)?, meta.label)
}

/// Checkpoint manifest: the orbitals are stored back to back in one blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: Model,
    pub potential: PotentialSpec,
    pub t: f64,
    pub dt: f64,
    pub dim: usize,
    #[serde(rename = "M")]
    pub points: usize,
    #[serde(rename = "L")]
    pub half_extent: f64,
    pub orbitals: Vec<OrbitalEntry>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitalEntry {
    pub label: String,
    pub representation: Representation,
}

pub fn write_checkpoint(
    set: &OrbitalSet,
    model: Model,
    potential: &PotentialSpec,
    dt: f64,
    path: &Path,
) -> Result<CheckpointManifest> {
    let mut bytes = Vec::new();
    for u in set.orbitals() {
        complex_bytes(u.values(), &mut bytes);
    }
    fs::write(path, &bytes)?;
    let g = set.grid();
    let manifest = CheckpointManifest {
        model,
        potential: potential.clone(),
        t: set.time(),
        dt,
        dim: g.dim(),
        points: g.points_per_axis(),
        half_extent: g.half_extent(),
        orbitals: set
            .orbitals()
            .iter()
            .map(|u| OrbitalEntry {
                label: u.label().to_string(),
                representation: u.representation(),
            })
            .collect(),
        sha256: sha256_hex(&bytes),
    };
    write_json(&sidecar_path(path), &manifest)?;
    Ok(manifest)
}

pub fn read_checkpoint(path: &Path) -> Result<(OrbitalSet, CheckpointManifest)> {
    let manifest: CheckpointManifest = read_json(&sidecar_path(path))?;
    let bytes = read_verified(path, &manifest.sha256)?;
    let grid = Grid::new(manifest.dim, manifest.points, manifest.half_extent)?;
    let values = decode_complex(&bytes)?;
    if values.len() != grid.len() * manifest.orbitals.len() {
        return Err(Error::Dimension(format!(
            "checkpoint holds {} samples, expected {} orbitals of {}",
            values.len(),
            manifest.orbitals.len(),
            grid.len()
        )));
    }
    let orbitals = manifest
        .orbitals
        .iter()
        .zip(values.chunks_exact(grid.len()))
        .map(|(e, v)| Field::new(&grid, e.representation, v.to_vec(), e.label.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((OrbitalSet::new(orbitals, manifest.t)?, manifest))
}

/// Move the listed array members of a JSON object into a float64 blob.
fn split_arrays(value: Value, keys: &[&str]) -> Result<(Map<String, Value>, Vec<u8>, Vec<usize>)> {
    let Value::Object(mut map) = value else {
        return Err(Error::InvalidInput("expected a JSON object".into()));
    };
    let mut bytes = Vec::new();
    let mut lens = Vec::with_capacity(keys.len());
    for key in keys {
        let arr: Vec<f64> = match map.remove(*key) {
            Some(v) => serde_json::from_value::<Vec<Vec<f64>>>(v.clone())
                .map(|rows| rows.concat())
                .or_else(|_| serde_json::from_value::<Vec<f64>>(v))?,
            None => Vec::new(),
        };
        lens.push(arr.len());
        real_bytes(&arr, &mut bytes);
    }
    Ok((map, bytes, lens))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BlobHeader {
    sha256: String,
    lengths: Vec<usize>,
    #[serde(flatten)]
    rest: Map<String, Value>,
}

/// Write a kernel as row-major float64 entries plus a JSON header.
pub fn write_kernel(k: &KernelMatrix, path: &Path) -> Result<String> {
    let (rest, bytes, lengths) = split_arrays(serde_json::to_value(k)?, &["entries"])?;
    fs::write(path, &bytes)?;
    let sha256 = sha256_hex(&bytes);
    write_json(
        &sidecar_path(path),
        &BlobHeader {
            sha256: sha256.clone(),
            lengths,
            rest,
        },
    )?;
    Ok(sha256)
}

pub fn read_kernel(path: &Path) -> Result<KernelMatrix> {
    let header: BlobHeader = read_json(&sidecar_path(path))?;
    let data = decode_reals(&read_verified(path, &header.sha256)?)?;
    let rows = header.rest.get("lambda_grid").and_then(Value::as_array).map_or(0, Vec::len);
    if rows == 0 || data.len() % rows != 0 {
        return Err(Error::Dimension(format!(
            "kernel blob of {} entries does not split into {rows} rows",
            data.len()
        )));
    }
    let cols = data.len() / rows;
    let mut map = header.rest;
    map.insert(
        "entries".into(),
        serde_json::to_value(data.chunks_exact(cols).map(<[f64]>::to_vec).collect::<Vec<_>>())?,
    );
    Ok(serde_json::from_value(Value::Object(map))?)
}

const RESULT_ARRAYS: [&str; 4] = ["v_hat", "xi_radii", "picard_coefficients", "residual_curve"];

/// Write scalars and diagnostics as JSON and the vectors as one float64 blob.
pub fn write_reconstruction(r: &ReconstructionResult, path: &Path) -> Result<String> {
    let (rest, bytes, lengths) = split_arrays(serde_json::to_value(r)?, &RESULT_ARRAYS)?;
    fs::write(path, &bytes)?;
    let sha256 = sha256_hex(&bytes);
    write_json(
        &sidecar_path(path),
        &BlobHeader {
            sha256: sha256.clone(),
            lengths,
            rest,
        },
    )?;
    Ok(sha256)
}

pub fn read_reconstruction(path: &Path) -> Result<ReconstructionResult> {
    let header: BlobHeader = read_json(&sidecar_path(path))?;
    let data = decode_reals(&read_verified(path, &header.sha256)?)?;
    if header.lengths.len() != RESULT_ARRAYS.len()
        || header.lengths.iter().sum::<usize>() != data.len()
    {
        return Err(Error::Dimension("reconstruction blob lengths disagree".into()));
    }
    let mut map = header.rest;
    let mut at = 0;
    for (key, len) in RESULT_ARRAYS.iter().zip(&header.lengths) {
        map.insert((*key).into(), serde_json::to_value(&data[at..at + len])?);
        at += len;
    }
    Ok(serde_json::from_value(Value::Object(map))?)
}

/// CSV of `(xi, V^_true, V^_est)`; the truth column is empty when absent.
pub fn reconstruction_csv(r: &ReconstructionResult, truth: Option<&[f64]>) -> String {
    let mut out = String::from("xi,v_hat_true,v_hat_est\n");
    for (i, (xi, est)) in r.xi_radii.iter().zip(&r.v_hat).enumerate() {
        let t = truth.and_then(|t| t.get(i)).map(|&x| fmt_f64(x)).unwrap_or_default();
        out.push_str(&format!("{},{t},{}\n", fmt_f64(*xi), fmt_f64(*est)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, ProbeSpec};
    use crate::inversion::{reconstruct, singular_system_raw, Regularization};

    #[test]
    fn field_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(2, 16, 4.0).unwrap();
        let f = ProbeSpec::centered(2, 1.0).realize(&g).unwrap().with_label("probe");
        let path = dir.path().join("probe.bin");
        let meta = write_field(&f, &path).unwrap();
        assert_eq!(meta.points, 16);
        let back = read_field(&path).unwrap();
        assert_eq!(back.label(), "probe");
        assert_eq!(back.grid(), &g);
        assert!(back.values().iter().zip(f.values()).all(|(a, b)| a == b));
        let json = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(json.contains("\"M\": 16") && json.contains("\"representation\": \"position\""));
    }

    #[test]
    fn tampered_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(1, 32, 4.0).unwrap();
        let f = ProbeSpec::centered(1, 1.0).realize(&g).unwrap();
        let path = dir.path().join("f.bin");
        write_field(&f, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_field(&path), Err(Error::Integrity { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(1, 32, 4.0).unwrap();
        let a = ProbeSpec::centered(1, 1.0).realize(&g).unwrap().with_label("a");
        let b = a.to_frequency().with_label("b");
        let set = OrbitalSet::new(vec![a, b], 0.75).unwrap();
        let path = dir.path().join("ckpt.bin");
        let v = PotentialSpec::gaussian(1.0, 1.0, 2.0, 1.0);
        write_checkpoint(&set, Model::Hf, &v, 0.01, &path).unwrap();
        let (back, m) = read_checkpoint(&path).unwrap();
        assert_eq!(m.model, Model::Hf);
        assert_eq!(m.potential, v);
        assert_eq!(back.time(), 0.75);
        assert_eq!(back.orbital(1).representation(), Representation::Frequency);
        assert_eq!(back.orbital(1).values(), set.orbital(1).values());
    }

    #[test]
    fn reconstruction_round_trip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let k = vec![vec![2.0, 0.0, 0.0], vec![0.0, 1.0, 0.5]];
        let sys = singular_system_raw(&k, &[1.0; 3], &[1.0; 2], 1e-10).unwrap();
        let r = reconstruct(&[1.0, 0.3], &sys, Regularization::Tsvd { k: None }).unwrap();
        let r = ReconstructionResult {
            xi_radii: vec![0.5, 1.0, 1.5],
            ..r
        };
        let path = dir.path().join("rec.bin");
        write_reconstruction(&r, &path).unwrap();
        let back = read_reconstruction(&path).unwrap();
        assert_eq!(back.v_hat, r.v_hat);
        assert_eq!(back.residual_curve, r.residual_curve);
        assert_eq!(back.regularization, r.regularization);
        let csv = reconstruction_csv(&r, None);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("5.0000000000000000e-1,,"));
    }

    #[test]
    fn kernel_round_trip_is_exact() {
        use crate::kernels::{kernel_g, lambda_grid, TimeQuadrature, XiGrid};
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(1, 64, 8.0).unwrap();
        let lam = lambda_grid(0.0, 0.3, 3).unwrap();
        let xi = XiGrid::radial_shells(&g, 2.0).unwrap();
        let k = kernel_g(&g, &ProbeSpec::centered(1, 1.0), &lam, &xi, &TimeQuadrature::window(2.0))
            .unwrap();
        let path = dir.path().join("k.bin");
        write_kernel(&k, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 8 * (k.rows() * k.cols()) as u64);
        assert_eq!(read_kernel(&path).unwrap(), k);
    }

    #[test]
    fn json_floats_have_seventeen_digits_and_round_trip() {
        let v = vec![0.1, -2.5e-300, 1.0 / 3.0];
        let s = to_json_string(&v).unwrap();
        assert!(s.contains("1.0000000000000001e-1"));
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(to_json_string(&f64::NAN).unwrap(), "null\n");
    }

    #[test]
    fn formats_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }
}
