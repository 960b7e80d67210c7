//! Binary dump format for complex matrices (DD maps, completed channels).
//!
//! Layout: one ASCII header line `CMAT v1 M N\n`, then M*N complex entries
//! in row-major order, each as two little-endian f64 values (real then
//! imaginary).

use ndarray::Array2;
use num_complex::Complex64;
use std::io::{BufRead, Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CmatError {
    #[error("malformed CMAT input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn dump_cmat<W: Write>(mut w: W, matrix: &Array2<Complex64>) -> Result<(), CmatError> {
    let (m, n) = matrix.dim();
    writeln!(w, "CMAT v1 {m} {n}")?;
    let mut buf = Vec::with_capacity(16 * m * n);
    for row in matrix.rows() {
        for v in row {
            buf.extend_from_slice(&v.re.to_le_bytes());
            buf.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn load_cmat<R: BufRead>(mut r: R) -> Result<Array2<Complex64>, CmatError> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "CMAT" || fields[1] != "v1" {
        return Err(CmatError::Malformed(format!("bad header {header:?}")));
    }
    let m: usize =
        fields[2].parse().map_err(|_| CmatError::Malformed(format!("bad rows {:?}", fields[2])))?;
    let n: usize =
        fields[3].parse().map_err(|_| CmatError::Malformed(format!("bad cols {:?}", fields[3])))?;
    let mut payload = vec![0u8; 16 * m * n];
    r.read_exact(&mut payload)
        .map_err(|e| CmatError::Malformed(format!("payload short of {m}x{n} entries: {e}")))?;
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => return Err(CmatError::Malformed("trailing bytes after payload".into())),
        Err(e) => return Err(e.into()),
    }
    let mut matrix = Array2::from_elem((m, n), Complex64::new(0.0, 0.0));
    for (idx, chunk) in payload.chunks_exact(16).enumerate() {
        let re = f64::from_le_bytes(chunk[..8].try_into().expect("8-byte slice"));
        let im = f64::from_le_bytes(chunk[8..].try_into().expect("8-byte slice"));
        matrix[[idx / n, idx % n]] = Complex64::new(re, im);
    }
    Ok(matrix)
}
