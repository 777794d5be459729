//! Recording ingestion from CSV and EDF/EDF+ files.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate every estimator works at.
pub const MODEL_RATE_HZ: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Edf,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(Format::Csv),
            Some("edf") => Ok(Format::Edf),
            _ => Err(Error::Format(format!("{}: cannot infer format from extension", path.display()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSelector {
    Index(usize),
    Label(String),
}

impl Default for ChannelSelector {
    fn default() -> Self {
        ChannelSelector::Index(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestOptions {
    pub format: Option<Format>,
    pub channel: ChannelSelector,
    /// Needed for CSV files without a `t` column.
    pub sample_rate: Option<f64>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            format: None,
            channel: ChannelSelector::default(),
            sample_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSource {
    pub path: PathBuf,
    pub format: Format,
    pub label: String,
    /// Physical unit as declared by the file (empty when unknown).
    pub unit: String,
    pub original_rate: f64,
    pub resampled: bool,
    pub repaired_count: usize,
}

/// One channel at [`MODEL_RATE_HZ`], amplitude in the file's physical unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub source: RecordingSource,
}

impl Recording {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Reads one channel, repairs non-finite samples and resamples to 400 Hz.
pub fn ingest(path: &Path, opts: &IngestOptions) -> Result<Recording> {
    let format = match opts.format {
        Some(f) => f,
        None => Format::from_path(path)?,
    };
    let (raw, rate, label, unit) = match format {
        Format::Csv => read_csv_channel(path, &opts.channel, opts.sample_rate)?,
        Format::Edf => {
            let edf = read_edf(path)?;
            let idx = edf.select(&opts.channel)?;
            let s = &edf.signals[idx];
            (s.samples.clone(), s.sample_rate, s.label.clone(), s.unit.clone())
        }
    };
    if raw.is_empty() {
        return Err(Error::Empty(format!("{}: no samples", path.display())));
    }
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::Format(format!("{}: sample rate {rate} is not positive", path.display())));
    }
    let (mut samples, repaired) = repair_non_finite(&raw)?;
    if repaired > 0 {
        warn!("{}: repaired {repaired} non-finite samples", path.display());
    }
    let resampled = (rate - MODEL_RATE_HZ).abs() > 1e-9;
    if resampled {
        info!("{}: resampling {rate} Hz to {MODEL_RATE_HZ} Hz", path.display());
        samples = resample_linear(&samples, rate, MODEL_RATE_HZ);
    }
    Ok(Recording {
        samples,
        sample_rate: MODEL_RATE_HZ,
        source: RecordingSource {
            path: path.to_path_buf(),
            format,
            label,
            unit,
            original_rate: rate,
            resampled,
            repaired_count: repaired,
        },
    })
}

/// Linear interpolation across non-finite runs; edges copy the nearest
/// finite sample. Returns the repaired series and the number of repairs.
pub fn repair_non_finite(xs: &[f64]) -> Result<(Vec<f64>, usize)> {
    let finite: Vec<usize> = (0..xs.len()).filter(|&i| xs[i].is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Empty("recording has no finite samples".into()));
    }
    let repaired = xs.len() - finite.len();
    if repaired == 0 {
        return Ok((xs.to_vec(), 0));
    }
    let mut out = xs.to_vec();
    let (first, last) = (finite[0], *finite.last().expect("non-empty"));
    for v in &mut out[..first] {
        *v = xs[first];
    }
    for v in &mut out[last + 1..] {
        *v = xs[last];
    }
    for pair in finite.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for k in a + 1..b {
            let w = (k - a) as f64 / (b - a) as f64;
            out[k] = xs[a] + w * (xs[b] - xs[a]);
        }
    }
    Ok((out, repaired))
}

/// Linear-interpolation resampling from `from` Hz to `to` Hz over the same span.
pub fn resample_linear(xs: &[f64], from: f64, to: f64) -> Vec<f64> {
    if xs.len() < 2 {
        return xs.to_vec();
    }
    let span = (xs.len() - 1) as f64 / from;
    let n = (span * to + 1e-9).floor() as usize + 1;
    (0..n)
        .map(|k| {
            let pos = k as f64 * from / to;
            let i = (pos.floor() as usize).min(xs.len() - 2);
            let w = pos - i as f64;
            xs[i] + w * (xs[i + 1] - xs[i])
        })
        .collect()
}

fn parse_cell(s: &str) -> f64 {
    let s = s.trim();
    if s.is_empty() {
        return f64::NAN;
    }
    s.parse::<f64>().unwrap_or(f64::NAN)
}

/// CSV with a header row. The rate comes from a `t` column (seconds) or
/// from `sample_rate`; the channel is chosen by header label or by index
/// among the non-time columns.
fn read_csv_channel(path: &Path, sel: &ChannelSelector, rate: Option<f64>) -> Result<(Vec<f64>, f64, String, String)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(Error::Format(format!("{}: missing header row", path.display())));
    }
    let t_col = headers.iter().position(|h| h.eq_ignore_ascii_case("t") || h.eq_ignore_ascii_case("time"));
    let data_cols: Vec<usize> = (0..headers.len()).filter(|&i| Some(i) != t_col).collect();
    let col = match sel {
        ChannelSelector::Label(l) => headers
            .iter()
            .position(|h| h == l)
            .or_else(|| headers.iter().position(|h| h.eq_ignore_ascii_case(l)))
            .ok_or_else(|| Error::MissingChannel(format!("{}: no column '{l}'", path.display())))?,
        ChannelSelector::Index(i) => *data_cols
            .get(*i)
            .ok_or_else(|| Error::MissingChannel(format!("{}: no data column {i}", path.display())))?,
    };
    let mut ys = Vec::new();
    let mut ts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        ys.push(parse_cell(rec.get(col).unwrap_or("")));
        if let Some(tc) = t_col {
            ts.push(parse_cell(rec.get(tc).unwrap_or("")));
        }
    }
    if ys.is_empty() {
        return Err(Error::Empty(format!("{}: no data rows", path.display())));
    }
    let rate = match (rate, t_col) {
        (Some(r), _) => r,
        (None, Some(_)) => {
            let mut diffs: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).filter(|d| d.is_finite() && *d > 0.0).collect();
            if diffs.is_empty() {
                return Err(Error::Format(format!("{}: cannot infer sample rate from the t column", path.display())));
            }
            diffs.sort_by(f64::total_cmp);
            let r = 1.0 / diffs[diffs.len() / 2];
            if (r - r.round()).abs() < 1e-6 * r {
                r.round()
            } else {
                r
            }
        }
        (None, None) => return Err(Error::Format(format!("{}: no t column and no sample rate given", path.display()))),
    };
    Ok((ys, rate, headers[col].clone(), String::new()))
}

/// One decoded EDF signal in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct EdfSignal {
    pub label: String,
    pub unit: String,
    pub sample_rate: f64,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdfFile {
    pub record_duration: f64,
    pub signals: Vec<EdfSignal>,
}

impl EdfFile {
    pub fn select(&self, sel: &ChannelSelector) -> Result<usize> {
        let data: Vec<usize> = (0..self.signals.len()).filter(|&i| !self.signals[i].label.starts_with("EDF Annotations")).collect();
        match sel {
            ChannelSelector::Index(i) => data
                .get(*i)
                .copied()
                .ok_or_else(|| Error::MissingChannel(format!("no signal {i} ({} present)", data.len()))),
            ChannelSelector::Label(l) => data
                .iter()
                .copied()
                .find(|&i| self.signals[i].label == *l)
                .or_else(|| data.iter().copied().find(|&i| self.signals[i].label.eq_ignore_ascii_case(l)))
                .ok_or_else(|| Error::MissingChannel(format!("no signal labelled '{l}'"))),
        }
    }
}

fn field(h: &[u8], start: usize, len: usize) -> Result<String> {
    let b = h
        .get(start..start + len)
        .ok_or_else(|| Error::Format("EDF header truncated".into()))?;
    if !b.iter().all(|c| (0x20..=0x7e).contains(c)) {
        return Err(Error::Format(format!("EDF header field at byte {start} is not printable ASCII")));
    }
    Ok(String::from_utf8_lossy(b).trim().to_string())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse::<T>()
        .map_err(|_| Error::Format(format!("EDF header: cannot parse {what} from '{s}'")))
}

/// Parses an EDF/EDF+ file (16-bit little-endian data records).
pub fn read_edf(path: &Path) -> Result<EdfFile> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::Empty(format!("{}: empty file", path.display())));
    }
    if bytes.len() < 256 {
        return Err(Error::Format(format!("{}: shorter than an EDF header", path.display())));
    }
    let version = field(&bytes, 0, 8)?;
    if version != "0" {
        return Err(Error::Format(format!("{}: unsupported EDF version '{version}'", path.display())));
    }
    let header_bytes: usize = num(&field(&bytes, 184, 8)?, "header size")?;
    let n_records_decl: i64 = num(&field(&bytes, 236, 8)?, "number of data records")?;
    let record_duration: f64 = num(&field(&bytes, 244, 8)?, "record duration")?;
    let ns: usize = num(&field(&bytes, 252, 4)?, "number of signals")?;
    if ns == 0 || header_bytes != 256 * (ns + 1) {
        return Err(Error::Format(format!("{}: header size {header_bytes} inconsistent with {ns} signals", path.display())));
    }
    if bytes.len() < header_bytes {
        return Err(Error::Format(format!("{}: signal headers truncated", path.display())));
    }
    if !(record_duration > 0.0) {
        return Err(Error::Format(format!("{}: record duration must be positive", path.display())));
    }
    let per_signal = |offset: usize, width: usize, i: usize| field(&bytes, 256 + ns * offset + i * width, width);
    let mut signals = Vec::with_capacity(ns);
    let mut spr = Vec::with_capacity(ns);
    for i in 0..ns {
        let label = per_signal(0, 16, i)?;
        let unit = per_signal(16 + 80, 8, i)?;
        let pmin: f64 = num(&per_signal(104, 8, i)?, "physical minimum")?;
        let pmax: f64 = num(&per_signal(112, 8, i)?, "physical maximum")?;
        let dmin: i32 = num(&per_signal(120, 8, i)?, "digital minimum")?;
        let dmax: i32 = num(&per_signal(128, 8, i)?, "digital maximum")?;
        let n: usize = num(&per_signal(216, 8, i)?, "samples per record")?;
        if dmax <= dmin || pmax == pmin {
            return Err(Error::Format(format!("{}: signal {i} has a degenerate range", path.display())));
        }
        spr.push(n);
        signals.push(EdfSignal {
            label,
            unit,
            sample_rate: n as f64 / record_duration,
            physical_min: pmin,
            physical_max: pmax,
            digital_min: dmin,
            digital_max: dmax,
            samples: Vec::new(),
        });
    }
    let record_bytes: usize = spr.iter().sum::<usize>() * 2;
    let data = &bytes[header_bytes..];
    let n_records = if n_records_decl < 0 {
        data.len() / record_bytes
    } else {
        n_records_decl as usize
    };
    if data.len() < n_records * record_bytes {
        return Err(Error::Format(format!(
            "{}: {} data bytes, header promises {}",
            path.display(),
            data.len(),
            n_records * record_bytes
        )));
    }
    for (s, &n) in signals.iter_mut().zip(&spr) {
        s.samples.reserve(n * n_records);
    }
    for r in 0..n_records {
        let mut off = r * record_bytes;
        for (s, &n) in signals.iter_mut().zip(&spr) {
            let gain = (s.physical_max - s.physical_min) / (s.digital_max - s.digital_min) as f64;
            for k in 0..n {
                let d = i16::from_le_bytes([data[off + 2 * k], data[off + 2 * k + 1]]) as f64;
                s.samples.push(s.physical_min + (d - s.digital_min as f64) * gain);
            }
            off += 2 * n;
        }
    }
    Ok(EdfFile { record_duration, signals })
}

fn put(buf: &mut Vec<u8>, s: &str, width: usize) -> Result<()> {
    if s.len() > width || !s.is_ascii() {
        return Err(Error::Format(format!("EDF field '{s}' does not fit in {width} ASCII bytes")));
    }
    buf.extend_from_slice(s.as_bytes());
    buf.extend(std::iter::repeat_n(b' ', width - s.len()));
    Ok(())
}

fn fmt_num(x: f64) -> String {
    let s = format!("{x}");
    if s.len() <= 8 {
        s
    } else {
        format!("{x:.*}", 8usize.saturating_sub(format!("{}", x.trunc() as i64).len() + 1).max(0))
            .chars()
            .take(8)
            .collect()
    }
}

/// Writes signals as EDF with 16-bit samples. Every signal must span a
/// whole number of records of `record_duration` seconds. Physical ranges are
/// taken from the data.
pub fn write_edf(path: &Path, signals: &[(String, String, f64, Vec<f64>)], record_duration: f64) -> Result<()> {
    let ns = signals.len();
    if ns == 0 {
        return Err(Error::Empty("no signals to write".into()));
    }
    let mut spr = Vec::new();
    let mut n_records = None;
    let mut ranges = Vec::new();
    for (label, _, rate, xs) in signals {
        let per = rate * record_duration;
        if (per - per.round()).abs() > 1e-9 || per < 1.0 {
            return Err(Error::InvalidParameter(format!("signal '{label}': rate x record duration is not a whole number")));
        }
        let per = per.round() as usize;
        if xs.len() % per != 0 {
            return Err(Error::InvalidParameter(format!("signal '{label}' does not fill whole records")));
        }
        let nr = xs.len() / per;
        if *n_records.get_or_insert(nr) != nr {
            return Err(Error::InvalidParameter("signals span different numbers of records".into()));
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        // Round outward to what fits in the 8-byte fields.
        let lo: f64 = fmt_num(lo.floor()).parse().unwrap_or(lo.floor());
        let hi: f64 = fmt_num(hi.ceil()).parse().unwrap_or(hi.ceil());
        ranges.push((lo, hi));
        spr.push(per);
    }
    let n_records = n_records.unwrap_or(0);
    let mut h = Vec::with_capacity(256 * (ns + 1));
    put(&mut h, "0", 8)?;
    put(&mut h, "X X X X", 80)?;
    put(&mut h, "Startdate X X X X", 80)?;
    put(&mut h, "01.01.00", 8)?;
    put(&mut h, "00.00.00", 8)?;
    put(&mut h, &(256 * (ns + 1)).to_string(), 8)?;
    put(&mut h, "", 44)?;
    put(&mut h, &n_records.to_string(), 8)?;
    put(&mut h, &fmt_num(record_duration), 8)?;
    put(&mut h, &ns.to_string(), 4)?;
    for (label, ..) in signals {
        put(&mut h, label, 16)?;
    }
    for _ in signals {
        put(&mut h, "", 80)?;
    }
    for (_, unit, ..) in signals {
        put(&mut h, unit, 8)?;
    }
    for (lo, _) in &ranges {
        put(&mut h, &fmt_num(*lo), 8)?;
    }
    for (_, hi) in &ranges {
        put(&mut h, &fmt_num(*hi), 8)?;
    }
    for _ in signals {
        put(&mut h, "-32768", 8)?;
    }
    for _ in signals {
        put(&mut h, "32767", 8)?;
    }
    for _ in signals {
        put(&mut h, "", 80)?;
    }
    for n in &spr {
        put(&mut h, &n.to_string(), 8)?;
    }
    for _ in signals {
        put(&mut h, "", 32)?;
    }
    for r in 0..n_records {
        for ((_, _, _, xs), (&per, &(lo, hi))) in signals.iter().zip(spr.iter().zip(&ranges)) {
            for &x in &xs[r * per..(r + 1) * per] {
                let d = (x - lo) / (hi - lo) * 65535.0 - 32768.0;
                let d = d.round().clamp(-32768.0, 32767.0) as i16;
                h.extend_from_slice(&d.to_le_bytes());
            }
        }
    }
    fs::write(path, h)?;
    Ok(())
}
