//! Binary cache of spectral data.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `GLEIG001` |
//! | 1 | kind: 0 dense, 1 separable |
//! | 8 | `u64` axes (separable dimension, 0 for dense) |
//! | 8 | `u64` rows `R` |
//! | 8 | `u64` eigenpairs `J` |
//! | 8 | `f64` cell mass (separable, 0 for dense) |
//! | 8·J | eigenvalues |
//! | 8·R·J | eigenvectors, column-major |
//! | 32 | SHA-256 of all preceding bytes |

use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use super::spectral::AxisBasis;
use super::{Eigendata, Spectral};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"GLEIG001";

pub fn write_eigendata(path: &Path, spectral: &Spectral) -> Result<()> {
    let (kind, axes, lambda, vecs, cell) = match spectral {
        Spectral::Dense(e) => (0u8, 0u64, &e.lambda, &e.phi, 0.0),
        Spectral::Separable(b) => (1u8, b.dim as u64, &b.lambda, &b.vectors, b.cell_mass),
    };
    let mut buf = Vec::with_capacity(49 + 8 * (lambda.len() + vecs.len()) + 32);
    buf.extend_from_slice(MAGIC);
    buf.push(kind);
    buf.extend_from_slice(&axes.to_le_bytes());
    buf.extend_from_slice(&(vecs.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(vecs.ncols() as u64).to_le_bytes());
    buf.extend_from_slice(&cell.to_le_bytes());
    for v in lambda.iter().chain(vecs.as_slice()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_eigendata(path: &Path) -> Result<Spectral> {
    let buf = std::fs::read(path)?;
    let corrupt = |m: &str| Error::Corrupt(format!("eigendata cache {}: {m}", path.display()));
    if buf.len() < 41 + 32 || &buf[..8] != MAGIC {
        return Err(corrupt("bad header"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(body[o..o + 8].try_into().expect("8 bytes"));
    let kind = body[8];
    let axes = u64_at(9) as usize;
    let rows = u64_at(17) as usize;
    let j = u64_at(25) as usize;
    let cell = f64_at(33);
    let start = 41;
    if body.len() != start + 8 * (j + rows * j) {
        return Err(corrupt("length does not match header"));
    }
    let lambda: Vec<f64> = (0..j).map(|k| f64_at(start + 8 * k)).collect();
    let vals: Vec<f64> = (0..rows * j).map(|k| f64_at(start + 8 * (j + k))).collect();
    let vecs = DMatrix::from_column_slice(rows, j, &vals);
    match kind {
        0 => Ok(Spectral::Dense(Eigendata { lambda, phi: vecs })),
        1 => Ok(Spectral::Separable(AxisBasis {
            dim: axes,
            lambda,
            vectors: vecs,
            cell_mass: cell,
        })),
        _ => Err(corrupt("unknown kind")),
    }
}
