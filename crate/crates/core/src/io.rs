//! Artifact files: operator cache, field snapshots, CSV series, JSON reports
//! and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::{assemble_linearized, CollisionQuadrature, LinearizedOperator, POSITIVITY_TOL};
use crate::config::sha256_hex;
use crate::error::{Error, Result};
use crate::model::Operators;
use crate::spatial::{DistributionField, Representation, SpatialGrid};
use crate::sphere::SphereRule;
use crate::velocity::{moments, EquilibriumState, NullSpaceBasis, VelocityGrid};

const OPERATOR_MAGIC: &[u8; 8] = b"KLOPv001";

/// Identity of a cached operator: everything its entries depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorKey {
    pub grid: String,
    pub state: EquilibriumState,
    pub sphere_rule: SphereRule,
    pub positivity_tol: f64,
}

impl OperatorKey {
    pub fn new(state: &EquilibriumState, grid: &VelocityGrid, rule: SphereRule) -> Self {
        Self { grid: grid.descriptor(), state: *state, sphere_rule: rule, positivity_tol: POSITIVITY_TOL }
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("key serializes").as_bytes())
    }
}

/// JSON sidecar of an operator dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatorSidecar {
    pub format: String,
    pub grid_hash: String,
    pub key: OperatorKey,
    pub n_velocity: usize,
    /// SHA-256 of the binary file
    pub content_hash: String,
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_f64s(bytes: &[u8], count: usize, at: &mut usize) -> Result<Vec<f64>> {
    let end = *at + 8 * count;
    if end > bytes.len() {
        return Err(Error::InvalidParameter("operator dump is truncated".into()));
    }
    let out = bytes[*at..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    *at = end;
    Ok(out)
}

/// Little-endian dump: magic, `n` (u64), `ν` (n), asymmetry, `K` (n², column major).
pub fn encode_operator(op: &LinearizedOperator) -> Vec<u8> {
    let n = op.len();
    let mut buf = Vec::with_capacity(24 + 8 * (n * n + n + 1));
    buf.extend_from_slice(OPERATOR_MAGIC);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    push_f64s(&mut buf, &op.nu);
    push_f64s(&mut buf, &[op.asymmetry]);
    push_f64s(&mut buf, op.k_matrix.as_slice());
    buf
}

pub fn decode_operator(bytes: &[u8], basis: NullSpaceBasis) -> Result<LinearizedOperator> {
    if bytes.len() < 16 || &bytes[..8] != OPERATOR_MAGIC {
        return Err(Error::InvalidParameter("not an operator dump".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let mut at = 16;
    let nu = read_f64s(bytes, n, &mut at)?;
    let asym = read_f64s(bytes, 1, &mut at)?[0];
    let k = read_f64s(bytes, n * n, &mut at)?;
    if at != bytes.len() {
        return Err(Error::InvalidParameter("operator dump has trailing bytes".into()));
    }
    LinearizedOperator::from_parts(nu, DMatrix::from_column_slice(n, n, &k), basis, asym)
}

fn cache_paths(dir: &Path, key: &OperatorKey) -> (PathBuf, PathBuf) {
    let h = key.hash();
    let stem = format!("operator_{}", &h[..16]);
    (dir.join(format!("{stem}.bin")), dir.join(format!("{stem}.json")))
}

pub fn save_operator(dir: &Path, key: &OperatorKey, op: &LinearizedOperator) -> Result<OperatorSidecar> {
    fs::create_dir_all(dir)?;
    let (bin, side) = cache_paths(dir, key);
    let bytes = encode_operator(op);
    let sidecar = OperatorSidecar {
        format: "kinlayer-operator-le-f64".into(),
        grid_hash: key.hash(),
        key: key.clone(),
        n_velocity: op.len(),
        content_hash: git_blob_hash(&bytes),
    };
    fs::write(&bin, &bytes)?;
    fs::write(&side, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(sidecar)
}

/// Loads a cached operator matching `key`; `None` when absent or stale.
pub fn load_operator(
    dir: &Path,
    key: &OperatorKey,
    basis: NullSpaceBasis,
) -> Result<Option<(LinearizedOperator, OperatorSidecar)>> {
    let (bin, side) = cache_paths(dir, key);
    if !bin.exists() || !side.exists() {
        return Ok(None);
    }
    let sidecar: OperatorSidecar = match serde_json::from_str(&fs::read_to_string(&side)?) {
        Ok(s) => s,
        Err(_) => return Ok(None),
    };
    if &sidecar.key != key || sidecar.grid_hash != key.hash() {
        return Ok(None);
    }
    let bytes = fs::read(&bin)?;
    if git_blob_hash(&bytes) != sidecar.content_hash {
        return Ok(None);
    }
    Ok(Some((decode_operator(&bytes, basis)?, sidecar)))
}

/// Operators on `grid`, restored from `cache_dir` when a matching dump
/// exists (unless `rebuild`), otherwise assembled and dumped. Returns the
/// content hash of the operator used.
pub fn cached_operators(
    state: &EquilibriumState,
    grid: &VelocityGrid,
    rule: SphereRule,
    cache_dir: Option<&Path>,
    rebuild: bool,
) -> Result<(Operators, String)> {
    let quad = CollisionQuadrature::new(state, grid, rule)?;
    let key = OperatorKey::new(state, grid, rule);
    if let Some(dir) = cache_dir {
        if !rebuild {
            if let Some((op, side)) = load_operator(dir, &key, quad.basis().clone())? {
                return Ok((Operators::from_parts(quad, op)?, side.content_hash));
            }
        }
        let op = assemble_linearized(&quad)?;
        let side = save_operator(dir, &key, &op)?;
        return Ok((Operators::from_parts(quad, op)?, side.content_hash));
    }
    let op = assemble_linearized(&quad)?;
    let hash = git_blob_hash(&encode_operator(&op));
    Ok((Operators::from_parts(quad, op)?, hash))
}

/// Git-style object id of a blob, `SHA-256("blob <len>\0" ‖ bytes)`, as in a
/// repository with the SHA-256 object format.
pub fn git_blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON header of a columnar field snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub time: f64,
    pub representation: Representation,
    pub n_x: usize,
    pub n_modes: usize,
    pub n_v: usize,
    pub x_nodes: Vec<f64>,
    pub modes: Vec<[i32; 2]>,
    pub velocity_grid: String,
    /// flat index of `(ix, m, iv)`
    pub layout: String,
    /// `(name, byte offset)` of each f64 little-endian column
    pub columns: Vec<(String, usize)>,
    pub data_file: String,
}

/// Writes `name.json` and `name.bin` (all real parts, then all imaginary parts).
pub fn write_snapshot(
    dir: &Path,
    name: &str,
    field: &DistributionField,
    xgrid: &SpatialGrid,
    vgrid: &VelocityGrid,
) -> Result<(PathBuf, PathBuf)> {
    let len = field.data.len();
    let mut buf = Vec::with_capacity(16 * len);
    for v in &field.data {
        buf.extend_from_slice(&v.re.to_le_bytes());
    }
    for v in &field.data {
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    let header = SnapshotHeader {
        format: "kinlayer-field-columnar".into(),
        time: field.time,
        representation: field.repr,
        n_x: field.n_x,
        n_modes: field.n_modes,
        n_v: field.n_v,
        x_nodes: xgrid.nodes().to_vec(),
        modes: xgrid.modes().to_vec(),
        velocity_grid: vgrid.descriptor(),
        layout: "(ix * n_modes + m) * n_v + iv".into(),
        columns: vec![("re".into(), 0), ("im".into(), 8 * len)],
        data_file: format!("{name}.bin"),
    };
    let bin = dir.join(format!("{name}.bin"));
    let json = dir.join(format!("{name}.json"));
    fs::write(&bin, &buf)?;
    fs::write(&json, serde_json::to_string_pretty(&header)? + "\n")?;
    Ok((json, bin))
}

pub fn read_snapshot(header_path: &Path) -> Result<(SnapshotHeader, DistributionField)> {
    let header: SnapshotHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let bytes = fs::read(dir.join(&header.data_file))?;
    let len = header.n_x * header.n_modes * header.n_v;
    let col = |name: &str| -> Result<Vec<f64>> {
        let off = header
            .columns
            .iter()
            .find(|c| c.0 == name)
            .map(|c| c.1)
            .ok_or_else(|| Error::MissingInput(format!("snapshot column {name}")))?;
        let mut at = off;
        read_f64s(&bytes, len, &mut at)
    };
    let (re, im) = (col("re")?, col("im")?);
    let mut f = DistributionField::zeros(header.n_x, header.n_modes, header.n_v, header.representation);
    f.data = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
    f.time = header.time;
    Ok((header, f))
}

/// Shortest round-trip formatting, in exponent form outside `[1e-4, 1e15)`.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// CSV with a header row.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub const MOMENT_COLUMNS: [&str; 6] = ["x", "mass", "momentum_1", "momentum_2", "momentum_3", "energy"];

/// `x₁`-profiles of the moments of `W₀·f` in the zero mode (real part).
pub fn moment_profile(f: &DistributionField, xgrid: &SpatialGrid, vgrid: &VelocityGrid, w0: &[f64]) -> Vec<Vec<f64>> {
    xgrid
        .nodes()
        .iter()
        .enumerate()
        .map(|(ix, x)| {
            let v: Vec<f64> = f.slice(ix, 0).iter().zip(w0).map(|(c, w)| c.re * w).collect();
            let m = moments(&v, vgrid).as_array();
            std::iter::once(*x).chain(m).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// content hashes of the operator dumps used
    pub operators: BTreeMap<String, String>,
    /// artifact name → SHA-256
    pub files: BTreeMap<String, String>,
}

/// Output directory that records every artifact for the manifest.
pub struct ArtifactDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.record(name, text.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
        self.record(name, csv_string(header, rows).as_bytes())
    }

    pub fn write_snapshot(
        &mut self,
        name: &str,
        field: &DistributionField,
        xgrid: &SpatialGrid,
        vgrid: &VelocityGrid,
    ) -> Result<()> {
        let (json, bin) = write_snapshot(&self.root, name, field, xgrid, vgrid)?;
        for p in [json, bin] {
            let rel = p.file_name().unwrap().to_string_lossy().to_string();
            self.files.insert(rel, sha256_hex(&fs::read(&p)?));
        }
        Ok(())
    }

    /// Writes `manifest.json` and returns its SHA-256.
    pub fn finish(self, command: &str, config_hash: &str, seed: u64, operators: BTreeMap<String, String>) -> Result<String> {
        let m = Manifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            operators,
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&m)? + "\n";
        fs::write(self.root.join("manifest.json"), &text)?;
        Ok(sha256_hex(text.as_bytes()))
    }
}
