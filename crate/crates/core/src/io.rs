//! Binary checkpoints and the CSV flow trace.
//!
//! A checkpoint holds one endomorphism field plus the flow state needed to
//! resume a run. All numbers are little-endian:
//!
//! ```text
//! b"HYMF"  u32 version
//! u32 ndim   u64 grid_shape[ndim]   f64 periods[ndim]
//! u32 rank   u64 step   f64 t   f64 dt   f64 eps
//! u32 m      f64 recent_sup_f[m]
//! f64 (re, im) data[len][rank][rank]
//! ```
//!
//! Grid points are in row-major order (last axis fastest) and each matrix is
//! row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::bundle::BundleSpec;
use crate::endo::EndoField;
use crate::flows::{FlowState, TraceRow};
use crate::geometry::Geometry;
use crate::hermitian::HermitianField;
use crate::linalg::Mat;
use crate::{Error, Result, C64};

pub const MAGIC: &[u8; 4] = b"HYMF";
pub const VERSION: u32 = 1;
pub const TRACE_HEADER: &str = "# hymlab-trace v1";

/// Decoded checkpoint, before it is checked against a geometry and bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub grid_shape: Vec<usize>,
    pub periods: Vec<f64>,
    pub rank: usize,
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub eps: f64,
    pub recent_sup_f: Vec<f64>,
    pub data: EndoField,
}

impl Checkpoint {
    pub fn from_state(geom: &Geometry, state: &FlowState, eps: f64) -> Self {
        Checkpoint {
            grid_shape: geom.grid_shape().to_vec(),
            periods: geom.periods().to_vec(),
            rank: state.metric.rank(),
            step: state.step,
            t: state.t,
            dt: state.dt,
            eps,
            recent_sup_f: state.recent_sup_f.clone(),
            data: state.metric.endo().clone(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(self.grid_shape.len() as u32)?;
        for &s in &self.grid_shape {
            w.write_u64::<LE>(s as u64)?;
        }
        for &p in &self.periods {
            w.write_f64::<LE>(p)?;
        }
        w.write_u32::<LE>(self.rank as u32)?;
        w.write_u64::<LE>(self.step as u64)?;
        w.write_f64::<LE>(self.t)?;
        w.write_f64::<LE>(self.dt)?;
        w.write_f64::<LE>(self.eps)?;
        w.write_u32::<LE>(self.recent_sup_f.len() as u32)?;
        for &v in &self.recent_sup_f {
            w.write_f64::<LE>(v)?;
        }
        for idx in 0..self.data.len() {
            let m = self.data.at(idx);
            for i in 0..self.rank {
                for j in 0..self.rank {
                    let z = m.get(i, j);
                    w.write_f64::<LE>(z.re)?;
                    w.write_f64::<LE>(z.im)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let ndim = r.read_u32::<LE>()? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Format(format!("implausible dimension {ndim}")));
        }
        let grid_shape = (0..ndim).map(|_| r.read_u64::<LE>().map(|s| s as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let periods = (0..ndim).map(|_| r.read_f64::<LE>()).collect::<std::io::Result<Vec<_>>>()?;
        let rank = r.read_u32::<LE>()? as usize;
        if rank == 0 || rank > crate::linalg::MAX_RANK {
            return Err(Error::Format(format!("rank {rank} out of range")));
        }
        let step = r.read_u64::<LE>()? as usize;
        let t = r.read_f64::<LE>()?;
        let dt = r.read_f64::<LE>()?;
        let eps = r.read_f64::<LE>()?;
        let m = r.read_u32::<LE>()? as usize;
        let recent_sup_f = (0..m).map(|_| r.read_f64::<LE>()).collect::<std::io::Result<Vec<_>>>()?;
        let len: usize = grid_shape.iter().product();
        let mut mats = Vec::with_capacity(len);
        for _ in 0..len {
            let mut mat = Mat::zeros(rank);
            for i in 0..rank {
                for j in 0..rank {
                    let re = r.read_f64::<LE>()?;
                    let im = r.read_f64::<LE>()?;
                    mat.set(i, j, C64::new(re, im));
                }
            }
            mats.push(mat);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after field data".into()));
        }
        Ok(Checkpoint {
            grid_shape,
            periods,
            rank,
            step,
            t,
            dt,
            eps,
            recent_sup_f,
            data: EndoField::from_mats(&mats),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Flow state on `geom` for `spec`, after checking the grid, periods,
    /// rank and positivity of the stored metric.
    pub fn into_state(self, spec: &BundleSpec, geom: &Geometry) -> Result<FlowState> {
        if self.grid_shape != geom.grid_shape() {
            return Err(Error::Format(format!(
                "checkpoint grid {:?} differs from configured {:?}",
                self.grid_shape,
                geom.grid_shape()
            )));
        }
        if self.periods != geom.periods() {
            return Err(Error::Format(format!(
                "checkpoint periods {:?} differ from configured {:?}",
                self.periods,
                geom.periods()
            )));
        }
        if self.rank != spec.rank() {
            return Err(Error::Format(format!("checkpoint rank {} but bundle rank {}", self.rank, spec.rank())));
        }
        Ok(FlowState {
            step: self.step,
            t: self.t,
            dt: self.dt,
            metric: HermitianField::new(self.data, spec)?,
            recent_sup_f: self.recent_sup_f,
        })
    }
}

/// Streams trace rows as CSV under the versioned header comment.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut w: W) -> Result<Self> {
        writeln!(w, "{TRACE_HEADER}")?;
        Ok(TraceWriter { inner: csv::Writer::from_writer(w) })
    }

    /// Continues an existing trace file without repeating the headers.
    pub fn append(w: W) -> Self {
        TraceWriter { inner: csv::WriterBuilder::new().has_headers(false).from_writer(w) }
    }

    pub fn write_row(&mut self, row: &TraceRow) -> Result<()> {
        self.inner.serialize(row).map_err(csv_error)
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.inner.flush()?)
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("trace csv: {other:?}")),
    }
}

/// Parses a trace written by [`TraceWriter`], checking the schema comment.
pub fn read_trace(r: impl Read) -> Result<Vec<TraceRow>> {
    let mut text = String::new();
    BufReader::new(r).read_to_string(&mut text)?;
    let first = text.lines().next().unwrap_or("");
    if first.trim() != TRACE_HEADER {
        return Err(Error::Format(format!("missing trace header, found {first:?}")));
    }
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    rd.deserialize().map(|row| row.map_err(csv_error)).collect()
}

pub fn write_trace_file(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = TraceWriter::new(BufWriter::new(File::create(path)?))?;
    for row in rows {
        w.write_row(row)?;
    }
    w.flush()
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRow>> {
    read_trace(File::open(path)?)
}
