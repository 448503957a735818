//! Binary cache for the expensive dense operators.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` key, then `A0`, the tail
//! part of `A0`, `B` and `b_ext`, each as `u64 rows, u64 cols` followed by
//! row-major little-endian `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{assemble_mass, dense, AssembledOperators, ExteriorDatum, MassRegion};
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Mesh};
use crate::kernel::FracOrder;

const MAGIC: &[u8; 8] = b"FRACOPS\0";
pub const FORMAT_VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Cache key of a discretisation.
pub fn operator_key(spec: &DomainSpec, s: f64, datum: &ExteriorDatum) -> u64 {
    let mut text = format!(
        "v{FORMAT_VERSION};d={};R={:e};a={:e};eps={:e};h={:e};s={:e};",
        spec.dim, spec.r, spec.omega_half, spec.eps_gap, spec.h, s
    );
    match datum {
        ExteriorDatum::Cutoff { width } => text.push_str(&format!("cutoff={width:e}")),
        ExteriorDatum::Nodal(v) => {
            text.push_str("nodal=");
            for x in v {
                text.push_str(&format!("{:016x}", x.to_bits()));
            }
        }
    }
    fnv1a(text.as_bytes())
}

fn write_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Numerical("operator cache is truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn matrix(&mut self) -> Result<DMatrix<f64>> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let raw = self.take(rows * cols * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

pub fn save(path: &Path, key: u64, ops: &AssembledOperators) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&key.to_le_bytes());
    write_matrix(&mut out, &ops.a0);
    write_matrix(&mut out, &ops.a0_tail);
    write_matrix(&mut out, &ops.b);
    write_matrix(
        &mut out,
        &DMatrix::from_column_slice(ops.b_ext.len(), 1, ops.b_ext.as_slice()),
    );
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Loads cached operators; `Ok(None)` when the file is absent, stale or
/// belongs to another discretisation.
pub fn load(
    path: &Path,
    key: u64,
    mesh: Arc<Mesh>,
    fo: FracOrder,
    datum: &ExteriorDatum,
) -> Result<Option<AssembledOperators>> {
    let mut buf = Vec::new();
    match fs::File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    }
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Ok(None);
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION || r.u64()? != key {
        return Ok(None);
    }
    let a0 = r.matrix()?;
    let a0_tail = r.matrix()?;
    let b = r.matrix()?;
    let b_ext = r.matrix()?;
    let (n0, nw) = (mesh.n_dofs(), mesh.n_obs());
    if a0.shape() != (n0, n0) || b.shape() != (nw, n0) || b_ext.shape() != (n0, 1) {
        return Ok(None);
    }
    let m0 = assemble_mass(&mesh, MassRegion::Interior);
    let s = &a0 + dense(&m0);
    let w_obs = assemble_mass(&mesh, MassRegion::Observation);
    let u_hf = datum.nodal_values(&mesh)?;
    Ok(Some(AssembledOperators {
        fo,
        a0,
        a0_tail,
        m0,
        s,
        b,
        w_obs,
        b_ext: DVector::from_column_slice(b_ext.as_slice()),
        u_hf,
        mesh,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::AssemblyOptions;
    use crate::geometry::{build_mesh, Aabb};

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn round_trip() {
        let spec = DomainSpec {
            dim: 1,
            r: 2.0,
            omega_half: 1.0,
            eps_gap: 0.25,
            omega_prime: Aabb::cube(1, 0.5),
            h: 0.25,
        };
        let mesh = Arc::new(build_mesh(&spec).unwrap());
        let fo = FracOrder::new(0.4, 1).unwrap();
        let datum = ExteriorDatum::Cutoff { width: 0.25 };
        let ops = AssembledOperators::assemble(mesh.clone(), fo, &datum, &AssemblyOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ops.bin");
        let key = operator_key(&spec, 0.4, &datum);
        save(&path, key, &ops).unwrap();
        let back = load(&path, key, mesh.clone(), fo, &datum).unwrap().unwrap();
        assert_eq!(back.a0, ops.a0);
        assert_eq!(back.b, ops.b);
        assert_eq!(back.b_ext, ops.b_ext);
        assert!(load(&path, key ^ 1, mesh, fo, &datum).unwrap().is_none());
    }
}
