//! Single-file dataset container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "WHPADATA"
//! version      u32
//! n_records    u64
//! header_len   u32
//! header       header_len bytes of JSON (DatasetHeader)
//! records      n_records fixed-width records
//! ```
//!
//! A record is `index u64, field_seed u64, valid u8`, then the diagnostics
//! `sampled_mean, range, mass_balance_residual, tour_length f64,
//! n_clamped u64, recovery f64 x n_wells`, then `curves f64 x n_wells*k`,
//! `endpoints (x f64, y f64) x b`, `binary u8 x rows*cols`, `sd f64 x rows*cols`.
//! Images are row-major with row 0 at the southern edge.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::geometry::{SdImage, SubgridSpec};
use crate::pipeline::{Record, RecordDiagnostics};
use crate::raster::Point;

pub const DATA_MAGIC: &[u8; 8] = b"WHPADATA";
pub const DATA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub data_fingerprint: String,
    pub n_wells: usize,
    pub k: usize,
    pub n_endpoints: usize,
    pub sub: SubgridSpec,
    pub config: ScenarioConfig,
}

impl DatasetHeader {
    pub fn for_config(cfg: &ScenarioConfig) -> Self {
        DatasetHeader {
            format_version: DATA_VERSION,
            data_fingerprint: cfg.data_fingerprint(),
            n_wells: cfg.n_wells(),
            k: cfg.bel.k,
            n_endpoints: cfg.backtrack.n_particles,
            sub: cfg.subgrid.clone(),
            config: cfg.clone(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.sub.n_cells()
    }

    /// Bytes per record.
    pub fn record_size(&self) -> usize {
        let p = self.n_cells();
        17 + 8 * (5 + self.n_wells) + 8 * self.n_wells * self.k + 16 * self.n_endpoints + p + 8 * p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<Record>,
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        s
    }
    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }
    fn f64s(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.f64()).collect()
    }
}

fn encode_record(h: &DatasetHeader, r: &Record, buf: &mut Vec<u8>) -> Result<()> {
    let p = h.n_cells();
    if r.curves.len() != h.n_wells * h.k
        || r.endpoints.len() != h.n_endpoints
        || r.binary.len() != p
        || r.sd.len() != p
        || r.diag.recovery.len() != h.n_wells
    {
        return Err(Error::ShapeMismatch {
            expected: format!("record with {} wells x {} steps, {} endpoints, {p} cells", h.n_wells, h.k, h.n_endpoints),
            actual: format!(
                "{} curve values, {} endpoints, {} cells",
                r.curves.len(),
                r.endpoints.len(),
                r.sd.len()
            ),
        });
    }
    let start = buf.len();
    buf.extend_from_slice(&r.index.to_le_bytes());
    buf.extend_from_slice(&r.field_seed.to_le_bytes());
    buf.push(r.valid as u8);
    let d = &r.diag;
    for v in [d.sampled_mean, d.range, d.mass_balance_residual, d.tour_length] {
        put_f64(buf, v);
    }
    buf.extend_from_slice(&(d.n_clamped as u64).to_le_bytes());
    d.recovery.iter().for_each(|&v| put_f64(buf, v));
    r.curves.iter().for_each(|&v| put_f64(buf, v));
    for p in &r.endpoints {
        put_f64(buf, p.x);
        put_f64(buf, p.y);
    }
    buf.extend_from_slice(&r.binary);
    r.sd.iter().for_each(|&v| put_f64(buf, v));
    debug_assert_eq!(buf.len() - start, h.record_size());
    Ok(())
}

fn decode_record(h: &DatasetHeader, bytes: &[u8]) -> Record {
    let p = h.n_cells();
    let mut c = Cursor { b: bytes, pos: 0 };
    let index = c.u64();
    let field_seed = c.u64();
    let valid = c.take(1)[0] != 0;
    let sampled_mean = c.f64();
    let range = c.f64();
    let mass_balance_residual = c.f64();
    let tour_length = c.f64();
    let n_clamped = c.u64() as usize;
    let recovery = c.f64s(h.n_wells);
    let curves = c.f64s(h.n_wells * h.k);
    let endpoints = (0..h.n_endpoints).map(|_| Point::new(c.f64(), c.f64())).collect();
    let binary = c.take(p).to_vec();
    let sd = c.f64s(p);
    Record {
        index,
        field_seed,
        valid,
        curves,
        endpoints,
        binary,
        sd,
        diag: RecordDiagnostics { sampled_mean, range, mass_balance_residual, tour_length, n_clamped, recovery },
    }
}

fn read_header<R: Read>(r: &mut R) -> Result<(DatasetHeader, u64, u64)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATA_MAGIC {
        return Err(Error::Format("not a dataset file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != DATA_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    let len = u32::from_le_bytes(b4) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: DatasetHeader = serde_json::from_slice(&json)?;
    Ok((header, n, (24 + len) as u64))
}

impl Dataset {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Dataset { header: DatasetHeader::for_config(cfg), records: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.header.config
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = BufWriter::new(w);
        let json = serde_json::to_vec(&self.header)?;
        w.write_all(DATA_MAGIC)?;
        w.write_all(&DATA_VERSION.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(self.header.record_size());
        for r in &self.records {
            buf.clear();
            encode_record(&self.header, r, &mut buf)?;
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let (header, n, _) = read_header(&mut r)?;
        let size = header.record_size();
        let mut buf = vec![0u8; size];
        let mut records = Vec::with_capacity(n as usize);
        for i in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format(format!("dataset truncated: header says {n} records, found {i}")))?;
            records.push(decode_record(&header, &buf));
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format("trailing bytes after the last record".into()));
        }
        Ok(Dataset { header, records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }

    /// Header and record count only.
    pub fn peek(path: &Path) -> Result<(DatasetHeader, u64)> {
        let mut f = BufReader::new(File::open(path)?);
        let (h, n, _) = read_header(&mut f)?;
        Ok((h, n))
    }

    /// Append records to an existing file whose header matches `cfg`.
    /// Records must continue the index sequence.
    pub fn append(path: &Path, cfg: &ScenarioConfig, records: &[Record]) -> Result<u64> {
        let mut f = OpenOptions::new().read(true).write(true).open(path)?;
        let (header, n, offset) = read_header(&mut BufReader::new(&mut f))?;
        let expected = cfg.data_fingerprint();
        if header.data_fingerprint != expected {
            return Err(Error::FingerprintMismatch { expected, found: header.data_fingerprint });
        }
        let size = header.record_size() as u64;
        f.seek(SeekFrom::Start(offset + n * size))?;
        let mut buf = Vec::with_capacity(header.record_size() * records.len());
        for (i, r) in records.iter().enumerate() {
            if r.index != n + i as u64 {
                return Err(Error::InvalidInput(format!("record index {} does not continue at {}", r.index, n + i as u64)));
            }
            encode_record(&header, r, &mut buf)?;
        }
        f.write_all(&buf)?;
        let total = n + records.len() as u64;
        f.set_len(offset + total * size)?;
        f.seek(SeekFrom::Start(12))?;
        f.write_all(&total.to_le_bytes())?;
        f.flush()?;
        Ok(total)
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        self.records.iter().enumerate().filter(|(_, r)| r.valid).map(|(i, _)| i).collect()
    }

    /// Predictor rows for the given records: the listed wells' curves
    /// concatenated in order.
    pub fn predictor_matrix(&self, rows: &[usize], wells: &[usize]) -> Result<DMatrix<f64>> {
        let k = self.header.k;
        for &w in wells {
            if w >= self.header.n_wells {
                return Err(Error::InvalidInput(format!("well {} out of range (dataset has {})", w + 1, self.header.n_wells)));
            }
        }
        Ok(DMatrix::from_fn(rows.len(), wells.len() * k, |i, j| self.records[rows[i]].curves[wells[j / k] * k + j % k]))
    }

    pub fn predictor_row(&self, row: usize, wells: &[usize]) -> Vec<f64> {
        let k = self.header.k;
        wells.iter().flat_map(|&w| self.records[row].curve(w, k).iter().copied()).collect()
    }

    pub fn target_matrix(&self, rows: &[usize]) -> DMatrix<f64> {
        let p = self.header.n_cells();
        let mut m = DMatrix::zeros(rows.len(), p);
        for (i, &r) in rows.iter().enumerate() {
            for (j, &v) in self.records[r].sd.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn sd_image(&self, row: usize) -> SdImage {
        SdImage::from_flat(self.header.sub.clone(), self.records[row].sd.clone())
    }

    /// Write `records.csv`, `curves.csv`, `endpoints.csv` and `sd.csv` into `dir`.
    pub fn export_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let h = &self.header;
        let mut w = BufWriter::new(File::create(dir.join("records.csv"))?);
        write!(w, "index,field_seed,valid,sampled_mean,range,mass_balance_residual,tour_length,n_clamped")?;
        for j in 0..h.n_wells {
            write!(w, ",recovery_{}", j + 1)?;
        }
        writeln!(w)?;
        for r in &self.records {
            let d = &r.diag;
            write!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.index, r.field_seed, r.valid as u8, d.sampled_mean, d.range, d.mass_balance_residual, d.tour_length, d.n_clamped
            )?;
            for v in &d.recovery {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;

        let times = crate::transport::time_grid(h.k, h.config.transport.sim_duration);
        let mut w = BufWriter::new(File::create(dir.join("curves.csv"))?);
        write!(w, "index,well")?;
        for t in &times {
            write!(w, ",t{t}")?;
        }
        writeln!(w)?;
        for r in &self.records {
            for j in 0..h.n_wells {
                write!(w, "{},{}", r.index, j + 1)?;
                for v in r.curve(j, h.k) {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("endpoints.csv"))?);
        writeln!(w, "index,particle,x,y")?;
        for r in &self.records {
            for (i, p) in r.endpoints.iter().enumerate() {
                writeln!(w, "{},{},{},{}", r.index, i, p.x, p.y)?;
            }
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("sd.csv"))?);
        writeln!(w, "# rows={} cols={} cell={} x_min={} y_min={} row0=south", h.sub.rows(), h.sub.cols(), h.sub.cell, h.sub.x_min, h.sub.y_min)?;
        for r in &self.records {
            write!(w, "{}", r.index)?;
            for v in &r.sd {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}
