//! CSV tables and the `GPF1` binary grid dump.
//!
//! A dump is the four bytes `GPF1`, a little-endian `u32` header length,
//! that many bytes of JSON ([`GridHeader`]), then `nx · ny · channels`
//! little-endian `f64` values. Nodes are row-major (`x` fastest), and the
//! channels of one node are contiguous. Nodes outside a mask hold NaN.
//!
//! Floats in CSV use the shortest representation that round-trips, so
//! repeated runs give byte-identical files.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::atlas::AsymptoticChart;
use crate::characteristic::GridPairField;
use crate::error::{Error, Result};
use crate::korn::{QuotientRecord, ScalingFit};
use crate::regions::Lattice;
use crate::strain::{Displacement, StrainField};

pub const MAGIC: &[u8; 4] = b"GPF1";

/// JSON header of a grid dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub channels: Vec<String>,
    /// Anything else worth keeping with the grid (anchor samples, extent).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl GridHeader {
    pub fn new(l: &Lattice, channels: &[&str]) -> Self {
        GridHeader { nx: l.nx, ny: l.ny, x0: l.x0, y0: l.y0, dx: l.dx, dy: l.dy, channels: channels.iter().map(|s| s.to_string()).collect(), meta: serde_json::Value::Null }
    }

    pub fn lattice(&self) -> Lattice {
        Lattice { x0: self.x0, y0: self.y0, dx: self.dx, dy: self.dy, nx: self.nx, ny: self.ny }
    }

    pub fn values(&self) -> usize {
        self.nx * self.ny * self.channels.len()
    }
}

/// A decoded dump.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDump {
    pub header: GridHeader,
    pub data: Vec<f64>,
}

impl GridDump {
    /// Channel `c` at node `(i, j)`.
    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(j * self.header.nx + i) * self.header.channels.len() + c]
    }

    pub fn channel(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.header.channels.iter().position(|n| n == name)?;
        let nc = self.header.channels.len();
        Some(self.data.iter().skip(c).step_by(nc).cloned().collect())
    }
}

pub fn write_grid(mut w: impl Write, header: &GridHeader, data: &[f64]) -> Result<()> {
    if data.len() != header.values() {
        return Err(Error::Format(format!("{} values for a {}×{}×{} grid", data.len(), header.nx, header.ny, header.channels.len())));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("header too long".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(8 * data.len());
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(mut r: impl Read) -> Result<GridDump> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: GridHeader = serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != 8 * header.values() {
        return Err(Error::Format(format!("{} data bytes, header promises {}", raw.len(), 8 * header.values())));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(GridDump { header, data })
}

/// Interleaves per-node channels, writing NaN where `mask` is unset.
fn interleave(n: usize, mask: Option<&[bool]>, cols: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * cols.len());
    for k in 0..n {
        let on = mask.map_or(true, |m| m[k]);
        for c in cols {
            out.push(if on { c[k] } else { f64::NAN });
        }
    }
    out
}

/// Shortest round-trip text of a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes a numeric table.
pub fn write_csv(w: impl Write, columns: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(columns)?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::Format(format!("row of {} values for {} columns", row.len(), columns.len())));
        }
        out.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a numeric table written by [`write_csv`].
pub fn read_csv(r: impl Read) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let head = rd.headers()?.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        rows.push(rec.iter().map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("{s:?}: {e}")))).collect::<Result<Vec<f64>>>()?);
    }
    Ok((head, rows))
}

fn masked_rows<'a>(l: &'a Lattice, mask: &'a [bool], cols: Vec<&'a [f64]>) -> impl Iterator<Item = Vec<f64>> + 'a {
    (0..l.len()).filter(move |k| mask[*k]).map(move |k| {
        let mut row = vec![l.x(k % l.nx), l.y(k / l.nx)];
        row.extend(cols.iter().map(|c| c[k]));
        row
    })
}

/// `x1,x2,f1,f2` at the solved nodes.
pub fn field_csv(w: impl Write, f: &GridPairField) -> Result<()> {
    write_csv(w, &["x1", "x2", "f1", "f2"], masked_rows(&f.grid.lattice, &f.grid.mask, vec![&f.f1, &f.f2]))
}

pub fn field_dump(w: impl Write, f: &GridPairField) -> Result<()> {
    let l = &f.grid.lattice;
    write_grid(w, &GridHeader::new(l, &["f1", "f2"]), &interleave(l.len(), Some(&f.grid.mask), &[&f.f1, &f.f2]))
}

/// `x1,x2,W1,W2,w` at the valid nodes.
pub fn displacement_csv(w: impl Write, d: &Displacement) -> Result<()> {
    write_csv(w, &["x1", "x2", "W1", "W2", "w"], masked_rows(&d.lattice, &d.mask, vec![&d.w1, &d.w2, &d.w]))
}

pub fn displacement_dump(w: impl Write, d: &Displacement) -> Result<()> {
    write_grid(w, &GridHeader::new(&d.lattice, &["W1", "W2", "w"]), &interleave(d.lattice.len(), Some(&d.mask), &[&d.w1, &d.w2, &d.w]))
}

/// `x1,x2,U11,U12,U22` at the valid nodes.
pub fn strain_csv(w: impl Write, s: &StrainField) -> Result<()> {
    write_csv(w, &["x1", "x2", "U11", "U12", "U22"], masked_rows(&s.lattice, &s.mask, vec![&s.u11, &s.u12, &s.u22]))
}

pub fn strain_dump(w: impl Write, s: &StrainField) -> Result<()> {
    write_grid(w, &GridHeader::new(&s.lattice, &["U11", "U12", "U22"]), &interleave(s.lattice.len(), Some(&s.mask), &[&s.u11, &s.u12, &s.u22]))
}

/// Chart channels: surface parameters, metric, Christoffel symbols
/// `Γ^k_ij` (`i ≤ j`) and `ω`; the header keeps the anchor samples and leaf
/// steps.
pub const CHART_CHANNELS: [&str; 12] = ["u1", "u2", "g11", "g12", "g22", "G1_11", "G1_12", "G1_22", "G2_11", "G2_12", "G2_22", "omega"];

pub fn chart_dump(w: impl Write, c: &AsymptoticChart) -> Result<()> {
    let mut h = GridHeader::new(&c.lattice, &CHART_CHANNELS);
    h.meta = serde_json::json!({
        "surface": c.surface.name(),
        "anchor": c.anchor,
        "step": c.step,
        "steps": c.steps,
        "swapped": c.swapped,
    });
    let mut data = Vec::with_capacity(c.lattice.len() * CHART_CHANNELS.len());
    for k in 0..c.lattice.len() {
        let g = c.g[k];
        let gm = c.gamma[k];
        data.extend_from_slice(&[c.u[k][0], c.u[k][1], g[0][0], g[0][1], g[1][1], gm[0][0][0], gm[0][0][1], gm[0][1][1], gm[1][0][0], gm[1][0][1], gm[1][1][1], c.omega[k]]);
    }
    write_grid(w, &h, &data)
}

/// Korn records with the plot-ready `log h`, `log λ` columns.
pub fn records_csv(w: impl Write, recs: &[QuotientRecord]) -> Result<()> {
    write_csv(
        w,
        &["h", "lambda_max", "log_h", "log_lambda", "dim", "modes", "residual", "saturation"],
        recs.iter().map(|r| vec![r.h, r.lambda_max, r.h.ln(), r.lambda_max.ln(), r.dim as f64, r.modes as f64, r.residual, r.saturation.unwrap_or(f64::NAN)]),
    )
}

/// Records and fit as one JSON document.
pub fn scaling_json(recs: &[QuotientRecord], fit: &ScalingFit) -> serde_json::Value {
    serde_json::json!({ "records": recs, "fit": fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip_preserves_bits_and_nan() {
        let l = Lattice::covering([0.0, -1.0], [1.0, 1.0], 3, 2);
        let mut h = GridHeader::new(&l, &["a", "b"]);
        h.meta = serde_json::json!({"note": 1});
        let data = vec![0.1, -0.0, f64::NAN, 1e-300, 3.0, f64::INFINITY, -2.5, 7.0, 0.3, 1.0 / 3.0, 5e-324, -1.0];
        let mut buf = Vec::new();
        write_grid(&mut buf, &h, &data).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let back = read_grid(buf.as_slice()).unwrap();
        assert_eq!(back.header, h);
        for (a, b) in data.iter().zip(&back.data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.at(1, 0, 1), data[3]);
        assert_eq!(back.channel("b").unwrap().len(), 6);
    }

    #[test]
    fn truncated_or_foreign_dumps_are_rejected() {
        let l = Lattice::covering([0.0, 0.0], [1.0, 1.0], 2, 2);
        let h = GridHeader::new(&l, &["a"]);
        let mut buf = Vec::new();
        write_grid(&mut buf, &h, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(read_grid(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_grid(bad.as_slice()), Err(Error::Format(_))));
        assert!(matches!(write_grid(Vec::new(), &h, &[1.0]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trips_exactly() {
        let rows = vec![vec![0.1, 1.0 / 3.0, -2e-17], vec![1e300, -0.0, 42.0]];
        let mut buf = Vec::new();
        write_csv(&mut buf, &["a", "b", "c"], rows.clone()).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("a,b,c\n0.1,0.3333333333333333,-2e-17\n"), "{text}");
        let (head, back) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(head, vec!["a", "b", "c"]);
        assert_eq!(back, rows);
    }
}
