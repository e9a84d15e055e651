//! Text edge lists and the binary CSR container.
//!
//! Text format: `#` starts a comment, the first data line is `n <N>`, every
//! following data line is a whitespace-separated `src dst` pair.
//!
//! Binary format (little endian):
//!
//! ```text
//! "EGCG" | version u32 | num_nodes u64 | num_edges u64
//! row_ptr  u64 × (num_nodes + 1)
//! col_idx  u32 × num_edges
//! has_coeff u8 (0 or 1)
//! coeff    f32 × num_edges   (only when has_coeff = 1)
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::CsrGraph;
use crate::error::{EgcError, Result};

pub const CSR_MAGIC: &[u8; 4] = b"EGCG";
pub const CSR_VERSION: u32 = 1;

/// Parse a text edge list into `(num_nodes, edges)`.
pub fn parse_edge_list<R: BufRead>(reader: R) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut num_nodes = None;
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let data = line.split('#').next().unwrap_or("").trim();
        if data.is_empty() {
            continue;
        }
        let fields: Vec<&str> = data.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| EgcError::Parse {
                line: lineno,
                msg: format!("expected a non-negative integer, found `{s}`"),
            })
        };
        match num_nodes {
            None => {
                if fields.len() != 2 || fields[0] != "n" {
                    return Err(EgcError::Parse {
                        line: lineno,
                        msg: "expected header `n <num_nodes>`".into(),
                    });
                }
                num_nodes = Some(parse(fields[1])?);
            }
            Some(n) => {
                if fields.len() != 2 {
                    return Err(EgcError::Parse {
                        line: lineno,
                        msg: format!("expected `src dst`, found {} fields", fields.len()),
                    });
                }
                let (s, d) = (parse(fields[0])?, parse(fields[1])?);
                if s >= n || d >= n {
                    return Err(EgcError::Parse {
                        line: lineno,
                        msg: format!("node index out of range for n = {n}"),
                    });
                }
                edges.push((s, d));
            }
        }
    }
    let num_nodes = num_nodes.ok_or(EgcError::Parse {
        line: 0,
        msg: "missing `n <num_nodes>` header".into(),
    })?;
    Ok((num_nodes, edges))
}

pub fn read_edge_list(path: &Path) -> Result<CsrGraph> {
    let (n, edges) = parse_edge_list(BufReader::new(File::open(path)?))?;
    CsrGraph::from_edges(&edges, n)
}

pub fn write_edge_list<W: Write>(g: &CsrGraph, mut w: W) -> Result<()> {
    writeln!(w, "n {}", g.num_nodes())?;
    for (src, dst) in g.to_edge_list() {
        writeln!(w, "{src} {dst}")?;
    }
    Ok(())
}

pub fn write_csr<W: Write>(g: &CsrGraph, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(CSR_MAGIC)?;
    w.write_all(&CSR_VERSION.to_le_bytes())?;
    w.write_all(&(g.num_nodes() as u64).to_le_bytes())?;
    w.write_all(&(g.num_edges() as u64).to_le_bytes())?;
    for &p in g.row_ptr() {
        w.write_all(&(p as u64).to_le_bytes())?;
    }
    for &c in g.col_idx() {
        w.write_all(&c.to_le_bytes())?;
    }
    match g.coeff() {
        Some(coeff) => {
            w.write_all(&[1])?;
            for &c in coeff {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        None => w.write_all(&[0])?,
    }
    w.flush()?;
    Ok(())
}

pub fn read_csr<R: Read>(r: R) -> Result<CsrGraph> {
    let mut r = LeReader::new(r, "CSR graph");
    r.expect_magic(CSR_MAGIC)?;
    let version = r.u32()?;
    if version != CSR_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let n = r.len_u64()?;
    let e = r.len_u64()?;
    let row_ptr = (0..=n).map(|_| r.len_u64()).collect::<Result<Vec<_>>>()?;
    let col_idx = (0..e).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let coeff = match r.u8()? {
        0 => None,
        1 => Some((0..e).map(|_| r.f32()).collect::<Result<Vec<_>>>()?),
        other => return Err(r.err(format!("invalid coefficient flag {other}"))),
    };
    r.expect_eof()?;
    CsrGraph::from_parts(n, row_ptr, col_idx, coeff)
}

pub fn save_csr(g: &CsrGraph, path: &Path) -> Result<()> {
    write_csr(g, File::create(path)?)
}

pub fn load_csr(path: &Path) -> Result<CsrGraph> {
    read_csr(BufReader::new(File::open(path)?))
}

/// Little-endian primitive reader shared by the binary formats.
pub(crate) struct LeReader<R> {
    inner: R,
    kind: &'static str,
}

impl<R: Read> LeReader<R> {
    pub(crate) fn new(inner: R, kind: &'static str) -> Self {
        Self { inner, kind }
    }

    pub(crate) fn err(&self, msg: impl Into<String>) -> EgcError {
        EgcError::Format {
            kind: self.kind,
            msg: msg.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.err("truncated"),
            _ => e.into(),
        })?;
        Ok(buf)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.bytes::<4>()?;
        if &got != magic {
            return Err(self.err(format!("bad magic {got:?}")));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("length {v} too large")))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    pub(crate) fn f32_vec(&mut self, len: usize) -> Result<Vec<f32>> {
        (0..len).map(|_| self.f32()).collect()
    }

    pub(crate) fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(self.err("trailing bytes")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let text = "# a tiny graph\nn 3\n0 1  # edge\n\n1 2\n";
        let (n, edges) = parse_edge_list(text.as_bytes()).unwrap();
        assert_eq!(n, 3);
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn reports_line_numbers() {
        let text = "n 3\n0 1\n0 x\n";
        match parse_edge_list(text.as_bytes()) {
            Err(EgcError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_edge_list("n 2\n0 5\n".as_bytes()) {
            Err(EgcError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_edge_list("0 1\n".as_bytes()).is_err());
        assert!(parse_edge_list("".as_bytes()).is_err());
    }

    #[test]
    fn binary_layout() {
        let g = CsrGraph::from_edges(&[(0, 1), (1, 0)], 2).unwrap();
        let mut buf = Vec::new();
        write_csr(&g, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"EGCG");
        // header 4+4+8+8, row_ptr 3*8, col_idx 2*4, flag 1
        assert_eq!(buf.len(), 24 + 24 + 8 + 1);
        assert_eq!(read_csr(buf.as_slice()).unwrap(), g);

        let gn = g.normalized();
        let mut buf = Vec::new();
        write_csr(&gn, &mut buf).unwrap();
        assert_eq!(read_csr(buf.as_slice()).unwrap(), gn);
    }

    #[test]
    fn rejects_corruption() {
        let g = CsrGraph::from_edges(&[(0, 1)], 2).unwrap();
        let mut buf = Vec::new();
        write_csr(&g, &mut buf).unwrap();
        assert!(read_csr(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_csr(extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_csr(bad.as_slice()).is_err());
    }
}
