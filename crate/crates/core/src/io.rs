//! Binary field container ("CGOF") and matrix blob ("CGOM") formats.
//!
//! CGOF layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "CGOF"
//! version u32      (currently 1)
//! kind    u8       0 = scalar, 1 = vector / 1-form, 2 = 2-form
//! N       u32      points per axis
//! L       f64      box half-width
//! data    complex f64 pairs (re, im), components outermost,
//!         spatial index with axis 3 fastest
//! ```
//!
//! CGOM holds a dense complex matrix: magic "CGOM", version u32, rows u32,
//! cols u32, then row-major complex f64 pairs. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{make_grid, AnyField, ScalarField, TwoFormField, VectorField};

pub const CGOF_MAGIC: &[u8; 4] = b"CGOF";
pub const CGOM_MAGIC: &[u8; 4] = b"CGOM";
pub const FORMAT_VERSION: u32 = 1;

fn write_complex_slice(out: &mut impl Write, values: &[Complex64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 16);
    for v in values {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_exact_or_truncated(inp: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    inp.read_exact(buf)
        .map_err(|_| Error::Format(format!("truncated file while reading {what}")))
}

fn read_complex_slice(inp: &mut impl Read, count: usize, what: &str) -> Result<Vec<Complex64>> {
    let mut buf = vec![0u8; count * 16];
    read_exact_or_truncated(inp, &mut buf, what)?;
    let mut values = Vec::with_capacity(count);
    for chunk in buf.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
        values.push(Complex64::new(re, im));
    }
    Ok(values)
}

/// Serialize a field into CGOF bytes.
pub fn field_to_bytes(field: &AnyField) -> Result<Vec<u8>> {
    let g = field.grid();
    let mut out = Vec::new();
    out.write_all(CGOF_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[field.degree().as_u8()])?;
    out.write_all(&(g.n() as u32).to_le_bytes())?;
    out.write_all(&g.half_width().to_le_bytes())?;
    for comp in field.component_slices() {
        write_complex_slice(&mut out, comp)?;
    }
    Ok(out)
}

/// Parse CGOF bytes back into a field (the grid is rebuilt from the header).
pub fn field_from_bytes(bytes: &[u8]) -> Result<AnyField> {
    let mut inp = bytes;
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut inp, &mut magic, "magic")?;
    if &magic != CGOF_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CGOF\"",
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    read_exact_or_truncated(&mut inp, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported CGOF version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let mut kind = [0u8; 1];
    read_exact_or_truncated(&mut inp, &mut kind, "kind")?;
    read_exact_or_truncated(&mut inp, &mut u32buf, "N")?;
    let n = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    read_exact_or_truncated(&mut inp, &mut f64buf, "L")?;
    let l = f64::from_le_bytes(f64buf);
    let grid = make_grid(l, n)?;
    let nodes = grid.node_count();
    let field = match kind[0] {
        0 => AnyField::Scalar(ScalarField::from_values(
            &grid,
            read_complex_slice(&mut inp, nodes, "scalar data")?,
        )),
        1 => AnyField::Vector(VectorField::from_components(
            &grid,
            [
                read_complex_slice(&mut inp, nodes, "component 1")?,
                read_complex_slice(&mut inp, nodes, "component 2")?,
                read_complex_slice(&mut inp, nodes, "component 3")?,
            ],
        )),
        2 => AnyField::TwoForm(TwoFormField::from_components(
            &grid,
            [
                read_complex_slice(&mut inp, nodes, "component (1,2)")?,
                read_complex_slice(&mut inp, nodes, "component (1,3)")?,
                read_complex_slice(&mut inp, nodes, "component (2,3)")?,
            ],
        )),
        k => return Err(Error::Format(format!("unknown field kind {k}"))),
    };
    if !inp.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after field data",
            inp.len()
        )));
    }
    Ok(field)
}

/// Write a field to a CGOF file.
pub fn save_field(path: impl AsRef<Path>, field: &AnyField) -> Result<()> {
    std::fs::write(path, field_to_bytes(field)?)?;
    Ok(())
}

/// Read a field from a CGOF file.
pub fn load_field(path: impl AsRef<Path>) -> Result<AnyField> {
    field_from_bytes(&std::fs::read(path)?)
}

/// Serialize a dense complex matrix (vector of rows) into CGOM bytes.
pub fn matrix_to_bytes(rows: &[Vec<Complex64>]) -> Result<Vec<u8>> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Format("ragged matrix rows".into()));
    }
    let mut out = Vec::new();
    out.write_all(CGOM_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(r as u32).to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    for row in rows {
        write_complex_slice(&mut out, row)?;
    }
    Ok(out)
}

/// Parse CGOM bytes.
pub fn matrix_from_bytes(bytes: &[u8]) -> Result<Vec<Vec<Complex64>>> {
    let mut inp = bytes;
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut inp, &mut magic, "magic")?;
    if &magic != CGOM_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"CGOM\"",
            magic
        )));
    }
    let mut u32buf = [0u8; 4];
    read_exact_or_truncated(&mut inp, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported CGOM version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    read_exact_or_truncated(&mut inp, &mut u32buf, "rows")?;
    let r = u32::from_le_bytes(u32buf) as usize;
    read_exact_or_truncated(&mut inp, &mut u32buf, "cols")?;
    let c = u32::from_le_bytes(u32buf) as usize;
    let mut rows = Vec::with_capacity(r);
    for i in 0..r {
        rows.push(read_complex_slice(&mut inp, c, &format!("matrix row {i}"))?);
    }
    if !inp.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after matrix data",
            inp.len()
        )));
    }
    Ok(rows)
}

pub fn save_matrix(path: impl AsRef<Path>, rows: &[Vec<Complex64>]) -> Result<()> {
    std::fs::write(path, matrix_to_bytes(rows)?)?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Vec<Vec<Complex64>>> {
    matrix_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::band_limited_vector;
    use crate::grid::make_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn field_roundtrip_bitexact() {
        let g = make_grid(2.5, 8).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let v = band_limited_vector(&g, 4.0, &mut rng);
        let bytes = field_to_bytes(&AnyField::Vector(v.clone())).unwrap();
        let back = field_from_bytes(&bytes).unwrap();
        match back {
            AnyField::Vector(w) => {
                assert_eq!(w.grid().n(), 8);
                assert_eq!(w.grid().half_width(), 2.5);
                for (a, b) in w.components.iter().zip(&v.components) {
                    for (x, y) in a.iter().zip(b) {
                        assert_eq!(x.re.to_bits(), y.re.to_bits());
                        assert_eq!(x.im.to_bits(), y.im.to_bits());
                    }
                }
            }
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn truncated_and_bad_headers_rejected() {
        let g = make_grid(1.0, 8).unwrap();
        let f = AnyField::Scalar(crate::grid::ScalarField::zeros(&g));
        let bytes = field_to_bytes(&f).unwrap();

        let truncated = &bytes[..bytes.len() - 7];
        assert!(matches!(field_from_bytes(truncated), Err(Error::Format(_))));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(field_from_bytes(&bad_magic), Err(Error::Format(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        let err = field_from_bytes(&bad_version);
        match err {
            Err(Error::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected version error, got {other:?}"),
        }

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(field_from_bytes(&trailing), Err(Error::Format(_))));
    }

    #[test]
    fn matrix_roundtrip() {
        let rows = vec![
            vec![Complex64::new(1.5, -2.0), Complex64::new(0.0, 3.25)],
            vec![Complex64::new(-0.125, 0.5), Complex64::new(7.0, 0.0)],
        ];
        let bytes = matrix_to_bytes(&rows).unwrap();
        let back = matrix_from_bytes(&bytes).unwrap();
        assert_eq!(rows.len(), back.len());
        for (r, b) in rows.iter().zip(&back) {
            for (x, y) in r.iter().zip(b) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
    }
}
