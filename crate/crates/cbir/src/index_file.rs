//! Line-oriented text persistence for [`FeatureIndex`].
//!
//! ```text
//! CBIRIDX  1
//! space  normalized
//! percentile  10
//! max_pairs  250000
//! threshold  AverageRGB  0.1834
//! ...                                  (one line per technique)
//! records  2
//! record  <id>  <path>  <label>  AverageRGB=v,v,v  ColorMoments=...  ...
//! min  AverageRGB  v,v,v
//! max  AverageRGB  v,v,v
//! ...                                  (two lines per technique)
//! end
//! ```
//!
//! Fields are tab-separated (shown above as two spaces); backslash, tab, CR and LF inside strings are
//! escaped as `\\`, `\t`, `\r`, `\n`. An empty label field means unlabeled.
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use cbir_core::features::FeatureVector;
use cbir_core::index::{IndexOptions, FORMAT_VERSION};
use cbir_core::{DistanceSpace, FeatureIndex, ImageRecord, IndexError, NormalizationStats, Technique, ThresholdConfig};
use thiserror::Error;

pub const MAGIC: &str = "CBIRIDX";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an index file (missing {MAGIC} header)")]
    BadMagic,
    #[error("unsupported index format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Index(#[from] IndexError),
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match chars.next()? {
            '\\' => '\\',
            't' => '\t',
            'n' => '\n',
            'r' => '\r',
            _ => return None,
        });
    }
    Some(out)
}

fn push_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
}

/// Serializes `ix` to the canonical text form.
pub fn write_index(ix: &FeatureIndex, mut w: impl Write) -> io::Result<()> {
    let mut out = String::new();
    let opts = ix.options();
    writeln!(out, "{MAGIC}\t{FORMAT_VERSION}").unwrap();
    writeln!(out, "space\t{}", opts.space.name()).unwrap();
    writeln!(out, "percentile\t{}", opts.percentile).unwrap();
    writeln!(out, "max_pairs\t{}", opts.max_pairs).unwrap();
    for t in Technique::ALL {
        writeln!(out, "threshold\t{t}\t{}", ix.thresholds().get(t)).unwrap();
    }
    writeln!(out, "records\t{}", ix.len()).unwrap();
    for r in ix.records() {
        write!(
            out,
            "record\t{}\t{}\t{}",
            escape(&r.id),
            escape(&r.path),
            escape(r.class_label.as_deref().unwrap_or(""))
        )
        .unwrap();
        for v in r.vectors() {
            write!(out, "\t{}=", v.technique()).unwrap();
            push_values(&mut out, v.values());
        }
        out.push('\n');
    }
    for t in Technique::ALL {
        let (min, max) = ix.stats().bounds(t);
        for (label, values) in [("min", min), ("max", max)] {
            write!(out, "{label}\t{t}\t").unwrap();
            push_values(&mut out, values);
            out.push('\n');
        }
    }
    out.push_str("end\n");
    w.write_all(out.as_bytes())
}

/// Writes the index to `path` via a temporary sibling and a rename.
pub fn save_index(ix: &FeatureIndex, path: &Path) -> io::Result<()> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = io::BufWriter::new(fs::File::create(&tmp)?);
        write_index(ix, &mut f)?;
        f.flush()?;
    }
    fs::rename(tmp, path)
}

pub fn load_index(path: &Path) -> Result<FeatureIndex, FormatError> {
    read_index(fs::File::open(path)?)
}

struct Lines<R> {
    inner: io::Lines<BufReader<R>>,
    number: usize,
}

impl<R: Read> Lines<R> {
    fn next_line(&mut self) -> Result<String, FormatError> {
        self.number += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(self.error("unexpected end of file")),
        }
    }

    fn error(&self, message: impl Into<String>) -> FormatError {
        FormatError::Malformed {
            line: self.number,
            message: message.into(),
        }
    }

    /// Reads a line of the form `key<TAB>rest` and returns its fields after the key.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>, FormatError> {
        let line = self.next_line()?;
        let mut fields = line.split('\t');
        if fields.next() != Some(key) {
            return Err(self.error(format!("expected {key:?} line")));
        }
        Ok(fields.map(str::to_owned).collect())
    }

    fn parse<T: std::str::FromStr>(&self, s: &str, what: &str) -> Result<T, FormatError> {
        s.parse().map_err(|_| self.error(format!("invalid {what} {s:?}")))
    }

    fn technique(&self, s: &str) -> Result<Technique, FormatError> {
        Technique::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| self.error(format!("unknown technique {s:?}")))
    }

    fn floats(&self, s: &str) -> Result<Vec<f64>, FormatError> {
        s.split(',').map(|v| self.parse::<f64>(v, "number")).collect()
    }
}

fn single(lines: &Lines<impl Read>, fields: &[String]) -> Result<String, FormatError> {
    match fields {
        [v] => Ok(v.clone()),
        _ => Err(lines.error("expected exactly one value")),
    }
}

pub fn read_index(source: impl Read) -> Result<FeatureIndex, FormatError> {
    let mut lines = Lines {
        inner: BufReader::new(source).lines(),
        number: 0,
    };

    let header = lines.next_line().map_err(|_| FormatError::BadMagic)?;
    let (magic, version) = header.split_once('\t').ok_or(FormatError::BadMagic)?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version: u32 = lines.parse(version, "version")?;
    if version != FORMAT_VERSION {
        return Err(FormatError::Version(version));
    }

    let f = lines.keyed("space")?;
    let space: DistanceSpace = lines.parse(&single(&lines, &f)?, "distance space")?;
    let f = lines.keyed("percentile")?;
    let percentile: f64 = lines.parse(&single(&lines, &f)?, "percentile")?;
    let f = lines.keyed("max_pairs")?;
    let max_pairs: usize = lines.parse(&single(&lines, &f)?, "max_pairs")?;

    let mut thresholds = ThresholdConfig::uniform(0.0).expect("valid");
    for expected in Technique::ALL {
        let f = lines.keyed("threshold")?;
        let [name, value] = f.as_slice() else {
            return Err(lines.error("threshold line needs technique and value"));
        };
        if lines.technique(name)? != expected {
            return Err(lines.error(format!("expected threshold for {expected}")));
        }
        let value: f64 = lines.parse(value, "threshold")?;
        thresholds
            .set(expected, value)
            .map_err(|e| lines.error(e.to_string()))?;
    }

    let f = lines.keyed("records")?;
    let count: usize = lines.parse(&single(&lines, &f)?, "record count")?;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let f = lines.keyed("record")?;
        if f.len() != 3 + Technique::ALL.len() {
            return Err(lines.error("record line has the wrong number of fields"));
        }
        let text = |s: &str| unescape(s).ok_or_else(|| lines.error("bad escape sequence"));
        let id = text(&f[0])?;
        let path = text(&f[1])?;
        let label = text(&f[2])?;
        let mut vectors = Vec::with_capacity(6);
        for field in &f[3..] {
            let (name, values) = field
                .split_once('=')
                .ok_or_else(|| lines.error("vector field lacks '='"))?;
            let t = lines.technique(name)?;
            let v =
                FeatureVector::new(t, lines.floats(values)?).map_err(|e| lines.error(format!("record {id:?}: {e}")))?;
            vectors.push(v);
        }
        let label = (!label.is_empty()).then_some(label);
        records.push(ImageRecord::new(id, path, label, vectors)?);
    }

    // Stored statistics must equal what the records imply; from_parts checks.
    let mut mins: [Vec<f64>; 6] = Default::default();
    let mut maxs: [Vec<f64>; 6] = Default::default();
    for t in Technique::ALL {
        for (key, slot) in [("min", &mut mins), ("max", &mut maxs)] {
            let f = lines.keyed(key)?;
            let [name, values] = f.as_slice() else {
                return Err(lines.error(format!("{key} line needs technique and values")));
            };
            if lines.technique(name)? != t {
                return Err(lines.error(format!("expected {key} for {t}")));
            }
            slot[t.ordinal()] = lines.floats(values)?;
        }
    }
    if lines.next_line()? != "end" {
        return Err(lines.error("expected end marker"));
    }

    let options = IndexOptions {
        space,
        percentile,
        max_pairs,
    };
    let stored = NormalizationStats::from_bounds(mins, maxs);
    Ok(FeatureIndex::from_parts(records, stored, thresholds, options)?)
}
