//! Checkpoint and CSV persistence.
//!
//! Checkpoint layout, all integers and floats little-endian:
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `CLGV`                     |
//! | 1            | format version, ASCII `1`        |
//! | 4 + 4        | `N`, `d` as `u32`                |
//! | 8·N·d        | `q`, row-major                   |
//! | 8·N·d        | `p`, row-major                   |
//! | 4 + k        | RNG state length `k` and bytes   |
//!
//! Trajectory CSV columns: `t,H,logW,minDist,kinetic,q_0_0,...,p_0_0,...`
//! with one row per snapshot. Chain CSV columns:
//! `iteration,H,accept,q_0_0,...`. Floats are written in shortest
//! round-trip form, so a file read back gives bit-identical values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrators::TrajectoryRecord;
use crate::rng::StreamRng;
use crate::samplers::HmcChain;
use crate::system::ParticleState;

pub const MAGIC: &[u8; 4] = b"CLGV";
pub const FORMAT_VERSION: u8 = b'1';

pub fn encode_checkpoint(state: &ParticleState, rng: &StreamRng) -> Vec<u8> {
    let rng_bytes = rng.to_bytes();
    let mut out = Vec::with_capacity(21 + 16 * state.q.len() + rng_bytes.len());
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&(state.n() as u32).to_le_bytes());
    out.extend_from_slice(&(state.dim() as u32).to_le_bytes());
    for x in state.q.iter().chain(&state.p) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&(rng_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&rng_bytes);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParticleState, StreamRng)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            "CLGV"
        )));
    }
    let version = cur.take(1, "version")?[0];
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let n = cur.u32("N")? as usize;
    let d = cur.u32("d")? as usize;
    let len = n
        .checked_mul(d)
        .filter(|&l| l <= bytes.len() / 8)
        .ok_or(Error::Truncated("positions"))?;
    let mut floats = |what| -> Result<Vec<f64>> {
        Ok(cur
            .take(8 * len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let q = floats("positions")?;
    let p = floats("momenta")?;
    let k = cur.u32("rng length")? as usize;
    let rng = StreamRng::from_bytes(cur.take(k, "rng state")?)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after rng state",
            bytes.len() - cur.pos
        )));
    }
    let state = ParticleState::new(n, d, q, p).map_err(|e| Error::Format(e.to_string()))?;
    Ok((state, rng))
}

pub fn write_checkpoint(path: &Path, state: &ParticleState, rng: &StreamRng) -> Result<()> {
    fs::write(path, encode_checkpoint(state, rng))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(ParticleState, StreamRng)> {
    decode_checkpoint(&fs::read(path)?)
}

fn coordinate_names(prefix: char, n: usize, d: usize) -> impl Iterator<Item = String> {
    (0..n).flat_map(move |i| (0..d).map(move |k| format!("{prefix}_{i}_{k}")))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 5] = ["t", "H", "logW", "minDist", "kinetic"];
pub const CHAIN_COLUMNS: [&str; 3] = ["iteration", "H", "accept"];

/// Writes one row per snapshot of `record`.
pub fn write_trajectory_csv<W: Write>(out: W, record: &TrajectoryRecord) -> Result<()> {
    let (n, d) = (record.final_state.n(), record.final_state.dim());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = TRAJECTORY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(coordinate_names('q', n, d))
        .chain(coordinate_names('p', n, d))
        .collect();
    w.write_record(&header).map_err(csv_error)?;
    for (k, s) in record.snapshots.iter().enumerate() {
        let i = k * record.stride;
        let row = [
            record.times[i],
            record.energy[i],
            record.log_w[i],
            record.min_dist[i],
            record.kinetic[i],
        ];
        let fields = row.iter().chain(&s.q).chain(&s.p).map(|x| x.to_string());
        w.write_record(fields).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub n: usize,
    pub dim: usize,
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub log_w: Vec<f64>,
    pub min_dist: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub states: Vec<ParticleState>,
}

/// Infers `(N, d)` from `q_i_k` column names following `fixed` leading
/// columns and checks the exact header.
fn infer_shape(header: &csv::StringRecord, fixed: &[&str], with_p: bool) -> Result<(usize, usize)> {
    let bad = |message: String| Error::Parse { line: 1, message };
    for (k, name) in fixed.iter().enumerate() {
        if header.get(k) != Some(name) {
            return Err(bad(format!(
                "column {k} should be {name:?}, found {:?}",
                header.get(k).unwrap_or("")
            )));
        }
    }
    let q_cols: Vec<&str> = header
        .iter()
        .skip(fixed.len())
        .take_while(|c| c.starts_with("q_"))
        .collect();
    let dim = q_cols.iter().take_while(|c| c.starts_with("q_0_")).count();
    if dim == 0 || !q_cols.len().is_multiple_of(dim) {
        return Err(bad("cannot infer N and d from q columns".into()));
    }
    let n = q_cols.len() / dim;
    let expected: Vec<String> = fixed
        .iter()
        .map(|s| s.to_string())
        .chain(coordinate_names('q', n, dim))
        .chain(if with_p {
            coordinate_names('p', n, dim).collect()
        } else {
            Vec::new()
        })
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(bad(format!(
            "header does not match the expected {} columns for N = {n}, d = {dim}",
            expected.len()
        )));
    }
    Ok((n, dim))
}

fn parse_row(row: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    row.iter()
        .map(|f| {
            f.trim().parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("{f:?}: {e}"),
            })
        })
        .collect()
}

pub fn read_trajectory_csv<R: Read>(input: R) -> Result<TrajectoryTable> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?.clone();
    let (n, dim) = infer_shape(&header, &TRAJECTORY_COLUMNS, true)?;
    let mut t = TrajectoryTable {
        n,
        dim,
        times: Vec::new(),
        energy: Vec::new(),
        log_w: Vec::new(),
        min_dist: Vec::new(),
        kinetic: Vec::new(),
        states: Vec::new(),
    };
    for (k, row) in r.records().enumerate() {
        let v = parse_row(&row.map_err(csv_error)?, k + 2)?;
        t.times.push(v[0]);
        t.energy.push(v[1]);
        t.log_w.push(v[2]);
        t.min_dist.push(v[3]);
        t.kinetic.push(v[4]);
        let (q, p) = v[5..].split_at(n * dim);
        t.states
            .push(ParticleState::new(n, dim, q.to_vec(), p.to_vec())?);
    }
    Ok(t)
}

pub fn write_chain_csv<W: Write>(out: W, chain: &HmcChain) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = CHAIN_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain(coordinate_names('q', chain.n, chain.dim))
        .collect();
    w.write_record(&header).map_err(csv_error)?;
    for (i, q) in chain.positions.iter().enumerate() {
        let fields = [
            i.to_string(),
            chain.energy[i].to_string(),
            u8::from(chain.accepted[i]).to_string(),
        ]
        .into_iter()
        .chain(q.iter().map(|x| x.to_string()));
        w.write_record(fields).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTable {
    pub n: usize,
    pub dim: usize,
    pub energy: Vec<f64>,
    pub accepted: Vec<bool>,
    pub positions: Vec<Vec<f64>>,
}

pub fn read_chain_csv<R: Read>(input: R) -> Result<ChainTable> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_error)?.clone();
    let (n, dim) = infer_shape(&header, &CHAIN_COLUMNS, false)?;
    let mut t = ChainTable {
        n,
        dim,
        energy: Vec::new(),
        accepted: Vec::new(),
        positions: Vec::new(),
    };
    for (k, row) in r.records().enumerate() {
        let v = parse_row(&row.map_err(csv_error)?, k + 2)?;
        t.energy.push(v[1]);
        t.accepted.push(v[2] != 0.0);
        t.positions.push(v[3..].to_vec());
    }
    Ok(t)
}
