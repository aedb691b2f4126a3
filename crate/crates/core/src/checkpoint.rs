//! Binary field checkpoints.
//!
//! Layout: magic "BSQ1", then N (u32 LE), component count (u32 LE), time
//! (f64 LE), seed (u64 LE), then for each component the (re, im) pairs of
//! its coefficients as f64 LE in row-major FFT-bin order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{SpectralField, StateU, VectorField};
use crate::grid::Grid;

const MAGIC: &[u8; 4] = b"BSQ1";

pub fn write_fields(
    path: &Path,
    fields: &[&SpectralField],
    time: f64,
    seed: u64,
) -> Result<()> {
    assert!(!fields.is_empty());
    let n = fields[0].grid().n();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(n as u32).to_le_bytes())?;
    w.write_all(&(fields.len() as u32).to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    w.write_all(&seed.to_le_bytes())?;
    for f in fields {
        for c in f.coeffs() {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_state(path: &Path, state: &StateU, time: f64, seed: u64) -> Result<()> {
    let c = state.components();
    write_fields(path, &[c[0], c[1], c[2], c[3]], time, seed)
}

pub struct Checkpoint {
    pub fields: Vec<SpectralField>,
    pub time: f64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn into_state(mut self) -> Result<StateU> {
        if self.fields.len() != 4 {
            return Err(Error::BadCheckpoint(format!(
                "expected 4 components for a state, found {}",
                self.fields.len()
            )));
        }
        let rho = self.fields.pop().unwrap();
        let c2 = self.fields.pop().unwrap();
        let c1 = self.fields.pop().unwrap();
        let c0 = self.fields.pop().unwrap();
        StateU::new(VectorField::new([c0, c1, c2]), rho)
    }
}

pub fn read_fields(path: &Path, dealias_fraction: f64) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::BadCheckpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let time = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let seed = u64::from_le_bytes(b8);

    let grid = Grid::new(n, dealias_fraction)
        .map_err(|e| Error::BadCheckpoint(format!("invalid grid in header: {e}")))?;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        let mut f = SpectralField::zeros(grid);
        for c in f.coeffs_mut() {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            *c = Complex64::new(re, im);
        }
        fields.push(f);
    }
    Ok(Checkpoint { fields, time, seed })
}
