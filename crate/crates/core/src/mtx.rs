//! Matrix Market I/O for complex sparse matrices plus a raw binary dump for
//! block vectors.
//!
//! Matrices are written in `coordinate complex general` form with 1-based
//! indices and shortest round-tripping float formatting, so a write/read
//! cycle reproduces the entry set exactly. The reader additionally accepts
//! `hermitian`/`symmetric` files (mirroring the stored triangle) and `real`
//! entries.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sparsemat::{BlockVector, CrsMatrix, SparseMatrix};

type C = Complex64;

pub fn write_matrix(matrix: &SparseMatrix, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write_matrix_to(matrix, &mut w)
}

pub fn write_matrix_to(matrix: &SparseMatrix, w: &mut impl Write) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
    writeln!(w, "% complex Hermitian operator, all entries stored")?;
    writeln!(w, "{} {} {}", matrix.nrows(), matrix.ncols(), matrix.nnz())?;
    let entries = matrix.entry_set();
    for (i, j, v) in entries {
        writeln!(w, "{} {} {} {}", i + 1, j + 1, v.re, v.im)?;
    }
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<SparseMatrix> {
    let file = std::fs::File::open(path)?;
    read_matrix_from(BufReader::new(file))
}

pub fn read_matrix_from(r: impl BufRead) -> Result<SparseMatrix> {
    let mut lines = r.lines().enumerate();

    let (lineno, header) = match lines.next() {
        Some((n, l)) => (n + 1, l?),
        None => {
            return Err(Error::MtxParse {
                line: 1,
                msg: "empty file".into(),
            })
        }
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 5 || fields[0] != "%%MatrixMarket" || fields[1] != "matrix" {
        return Err(Error::MtxParse {
            line: lineno,
            msg: "expected '%%MatrixMarket matrix coordinate ...' header".into(),
        });
    }
    if fields[2] != "coordinate" {
        return Err(Error::MtxParse {
            line: lineno,
            msg: format!("unsupported storage '{}'", fields[2]),
        });
    }
    let complex = match fields[3] {
        "complex" => true,
        "real" | "integer" => false,
        other => {
            return Err(Error::MtxParse {
                line: lineno,
                msg: format!("unsupported field type '{other}'"),
            })
        }
    };
    let symmetry = fields[4].to_ascii_lowercase();
    let mirror = match symmetry.as_str() {
        "general" => false,
        "hermitian" | "symmetric" => true,
        other => {
            return Err(Error::MtxParse {
                line: lineno,
                msg: format!("unsupported symmetry '{other}'"),
            })
        }
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, C)> = Vec::new();
    let mut file_entries = 0usize;
    for (n, line) in lines {
        let lineno = n + 1;
        let line = line?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('%') {
            continue;
        }
        let mut it = body.split_whitespace();
        if dims.is_none() {
            let nrows = parse_field(&mut it, lineno, "row count")?;
            let ncols = parse_field(&mut it, lineno, "column count")?;
            let nnz = parse_field(&mut it, lineno, "entry count")?;
            dims = Some((nrows, ncols, nnz));
            triplets.reserve(nnz);
            continue;
        }
        let i: usize = parse_field(&mut it, lineno, "row index")?;
        let j: usize = parse_field(&mut it, lineno, "column index")?;
        let re: f64 = parse_field(&mut it, lineno, "real part")?;
        let im: f64 = if complex {
            parse_field(&mut it, lineno, "imaginary part")?
        } else {
            0.0
        };
        if i == 0 || j == 0 {
            return Err(Error::MtxParse {
                line: lineno,
                msg: "indices are 1-based".into(),
            });
        }
        let (i, j) = (i - 1, j - 1);
        let v = C::new(re, im);
        file_entries += 1;
        triplets.push((i, j, v));
        if mirror && i != j {
            let mirrored = if symmetry == "symmetric" { v } else { v.conj() };
            triplets.push((j, i, mirrored));
        }
    }

    let (nrows, ncols, nnz) = dims.ok_or(Error::MtxParse {
        line: 0,
        msg: "missing dimension line".into(),
    })?;
    if file_entries != nnz {
        return Err(Error::MtxParse {
            line: 0,
            msg: format!("expected {nnz} entries, found {file_entries}"),
        });
    }
    Ok(SparseMatrix::Crs(CrsMatrix::from_triplets(
        nrows, ncols, triplets,
    )?))
}

fn parse_field<'a, T: std::str::FromStr>(
    it: &mut impl Iterator<Item = &'a str>,
    line: usize,
    what: &str,
) -> Result<T> {
    it.next()
        .ok_or_else(|| Error::MtxParse {
            line,
            msg: format!("missing {what}"),
        })?
        .parse::<T>()
        .map_err(|_| Error::MtxParse {
            line,
            msg: format!("cannot parse {what}"),
        })
}

const BLOCKVEC_MAGIC: &[u8; 8] = b"KPMBVEC1";

/// Raw little-endian dump: magic, rows, width, element tag, interleaved data.
pub fn write_block_vector(v: &BlockVector, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(BLOCKVEC_MAGIC)?;
    w.write_all(&(v.nrows() as u64).to_le_bytes())?;
    w.write_all(&(v.width() as u64).to_le_bytes())?;
    w.write_all(b"c16\0")?;
    for x in v.as_slice() {
        w.write_all(&x.re.to_le_bytes())?;
        w.write_all(&x.im.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_block_vector(path: impl AsRef<Path>) -> Result<BlockVector> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BLOCKVEC_MAGIC {
        return Err(Error::InvalidArgument("not a block-vector dump".into()));
    }
    let mut u = [0u8; 8];
    r.read_exact(&mut u)?;
    let nrows = u64::from_le_bytes(u) as usize;
    r.read_exact(&mut u)?;
    let width = u64::from_le_bytes(u) as usize;
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    if &tag != b"c16\0" {
        return Err(Error::InvalidArgument("unsupported element type".into()));
    }
    let mut out = BlockVector::zeros(nrows, width);
    let mut f = [0u8; 8];
    for x in out.as_mut_slice() {
        r.read_exact(&mut f)?;
        let re = f64::from_le_bytes(f);
        r.read_exact(&mut f)?;
        let im = f64::from_le_bytes(f);
        *x = C::new(re, im);
    }
    Ok(out)
}
