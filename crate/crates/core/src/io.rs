//! CSV interchange: waveforms, response curves, iteration traces and weight
//! tables. Every written file starts with a `#` header block carrying the
//! tool version, the config hash and the RNG seed.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::ansatz::SampledWaveform;
use crate::optimizer::TraceRow;
use crate::simulator::ResponseCurve;
use crate::{Error, Result};

pub const WAVEFORM_COLUMNS: [&str; 4] = ["t_s", "bx_rad_s", "by_rad_s", "bz_rad_s"];

/// Provenance lines written at the top of every output file.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHeader {
    pub tool_version: String,
    pub config_hash: String,
    pub rng_seed: Option<u64>,
}

impl FileHeader {
    pub fn new(config_hash: impl Into<String>, rng_seed: Option<u64>) -> Self {
        Self {
            tool_version: format!("adiabat {}", env!("CARGO_PKG_VERSION")),
            config_hash: config_hash.into(),
            rng_seed,
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# tool_version: {}", self.tool_version)?;
        writeln!(w, "# config_hash: {}", self.config_hash)?;
        match self.rng_seed {
            Some(s) => writeln!(w, "# rng_seed: {s}")?,
            None => writeln!(w, "# rng_seed: none")?,
        }
        Ok(())
    }

    /// Reads the header block from the leading `#` lines of `text`.
    pub fn parse(text: &str) -> Self {
        let mut h = FileHeader::default();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            if let Some((k, v)) = body.split_once(':') {
                let v = v.trim();
                match k.trim() {
                    "tool_version" => h.tool_version = v.to_string(),
                    "config_hash" => h.config_hash = v.to_string(),
                    "rng_seed" => h.rng_seed = v.parse().ok(),
                    _ => {}
                }
            }
        }
        h
    }
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn write_waveform_csv<W: Write>(
    mut w: W,
    header: &FileHeader,
    wave: &SampledWaveform,
) -> Result<()> {
    header.write(&mut w)?;
    let mut c = csv_writer(w);
    c.write_record(WAVEFORM_COLUMNS).map_err(csv_err)?;
    for i in 0..wave.times.len() {
        c.write_record(&[
            format!("{:e}", wave.times[i]),
            format!("{:e}", wave.bx[i]),
            format!("{:e}", wave.by[i]),
            format!("{:e}", wave.bz[i]),
        ])
        .map_err(csv_err)?;
    }
    c.flush()?;
    Ok(())
}

fn parse_f64(s: &str, line: u64, col: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| {
        Error::Parse(format!(
            "line {line}: `{s}` in column {col} is not a number"
        ))
    })
}

/// Reads a waveform CSV with the columns of [`WAVEFORM_COLUMNS`].
pub fn read_waveform_csv<R: Read>(r: R) -> Result<SampledWaveform> {
    let mut rd = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rd.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = WAVEFORM_COLUMNS
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == *c)
                .ok_or_else(|| Error::Parse(format!("missing waveform column `{c}`")))
        })
        .collect::<Result<_>>()?;
    let mut cols: [Vec<f64>; 4] = Default::default();
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        for (k, &i) in idx.iter().enumerate() {
            let s = rec.get(i).ok_or_else(|| {
                Error::Parse(format!(
                    "line {line}: missing column {}",
                    WAVEFORM_COLUMNS[k]
                ))
            })?;
            cols[k].push(parse_f64(s, line, WAVEFORM_COLUMNS[k])?);
        }
    }
    let [t, bx, by, bz] = cols;
    SampledWaveform::new(t, bx, by, bz)
}

/// One curve per file: abscissa, ordinate, and an error column that is empty
/// for successful points.
pub fn write_curve_csv<W: Write>(
    mut w: W,
    header: &FileHeader,
    curve: &ResponseCurve,
) -> Result<()> {
    header.write(&mut w)?;
    let mut c = csv_writer(w);
    c.write_record([
        curve.abscissa_name.as_str(),
        curve.ordinate_name.as_str(),
        "error",
    ])
    .map_err(csv_err)?;
    for i in 0..curve.len() {
        let err = curve.errors.get(i).cloned().flatten().unwrap_or_default();
        c.write_record(&[
            format!("{:e}", curve.abscissa[i]),
            format!("{:e}", curve.ordinate[i]),
            err,
        ])
        .map_err(csv_err)?;
    }
    c.flush()?;
    Ok(())
}

/// Several curves sharing one abscissa, one column each.
pub fn write_table_csv<W: Write>(
    mut w: W,
    header: &FileHeader,
    curves: &[ResponseCurve],
) -> Result<()> {
    header.write(&mut w)?;
    let Some(first) = curves.first() else {
        return Ok(());
    };
    if curves.iter().any(|c| c.abscissa != first.abscissa) {
        return Err(Error::domain("curves in one table must share the abscissa"));
    }
    let mut c = csv_writer(w);
    let mut names = vec![first.abscissa_name.clone()];
    names.extend(curves.iter().map(|c| c.ordinate_name.clone()));
    names.push("error".into());
    c.write_record(&names).map_err(csv_err)?;
    for i in 0..first.len() {
        let mut row = vec![format!("{:e}", first.abscissa[i])];
        row.extend(curves.iter().map(|c| format!("{:e}", c.ordinate[i])));
        row.push(first.errors.get(i).cloned().flatten().unwrap_or_default());
        c.write_record(&row).map_err(csv_err)?;
    }
    c.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(mut w: W, header: &FileHeader, trace: &[TraceRow]) -> Result<()> {
    header.write(&mut w)?;
    let mut c = csv_writer(w);
    c.write_record(["start", "attempt", "step", "phi", "grad_norm", "restart"])
        .map_err(csv_err)?;
    for r in trace {
        c.write_record(&[
            r.start.to_string(),
            r.attempt.to_string(),
            r.step.to_string(),
            format!("{:e}", r.phi),
            format!("{:e}", r.grad_norm),
            (r.restart as u8).to_string(),
        ])
        .map_err(csv_err)?;
    }
    c.flush()?;
    Ok(())
}

/// Two-column `(ω1, p)` table; `#` comments and a non-numeric header row are
/// skipped.
pub fn read_weight_table<R: Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut it = l.split(',').map(str::trim);
        let (a, b) = match (it.next(), it.next(), it.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse(format!(
                    "line {}: expected two columns",
                    n + 1
                )))
            }
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(p)) => out.push((x, p)),
            _ if out.is_empty() => continue,
            _ => {
                return Err(Error::Parse(format!(
                    "line {}: `{l}` is not numeric",
                    n + 1
                )))
            }
        }
    }
    if out.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::Parse(
            "weight table abscissa must be strictly increasing".into(),
        ));
    }
    Ok(out)
}
