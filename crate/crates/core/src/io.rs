//! Reading paired p-value tables and writing result tables.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baselines::BaselineOutcome;
use crate::error::{Error, Result};
use crate::model::{PairedPValues, DEFAULT_P_FLOOR};
use crate::testing::TestOutcome;

/// Value substituted for p = 1 so that every p-value lies in (0, 1).
pub const ONE_CEILING: f64 = 1.0 - 1e-16;

const MISSING_TOKENS: [&str; 6] = ["", "NA", "na", "NaN", "nan", "."];

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOptions {
    pub id_column: String,
    pub p1_column: String,
    pub p2_column: String,
    /// Field delimiter; inferred from the extension and header when `None`.
    pub delimiter: Option<u8>,
    /// Replacement for p = 0.
    pub zero_floor: f64,
    /// Reorder rows by (`chrom`, `pos`) when both columns exist.
    pub sort_by_position: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            id_column: "id".into(),
            p1_column: "p1".into(),
            p2_column: "p2".into(),
            delimiter: None,
            zero_floor: DEFAULT_P_FLOOR,
            sort_by_position: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    /// 1-based line in the source file.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    pub data: PairedPValues,
    pub source: PathBuf,
    pub skipped: Vec<Diagnostic>,
    pub clamped_zeros: usize,
    pub clamped_ones: usize,
    /// Set when `chrom`/`pos` columns exist and rows are not in coordinate order.
    pub unsorted_warning: Option<String>,
    /// Whether rows were reordered by coordinate.
    pub sorted: bool,
}

impl InputTable {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn infer_delimiter(path: &Path, header: &str) -> u8 {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => b',',
        Some(e) if e.eq_ignore_ascii_case("tsv") || e.eq_ignore_ascii_case("txt") => b'\t',
        _ if header.contains('\t') => b'\t',
        _ => b',',
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Chromosome sort key: numeric names first in numeric order, then the rest.
fn chrom_key(c: &str) -> (u8, u64, String) {
    let bare = c.strip_prefix("chr").unwrap_or(c);
    match bare.parse::<u64>() {
        Ok(n) => (0, n, String::new()),
        Err(_) => (1, 0, bare.to_string()),
    }
}

/// Reads a delimited table of paired p-values, keeping file order.
pub fn read_paired_table(path: impl AsRef<Path>, opts: &ReadOptions) -> Result<InputTable> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = opts.delimiter.unwrap_or_else(|| infer_delimiter(path, header_line));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());

    let headers = reader.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let find = |name: &str| column(name).ok_or_else(|| parse_error(path, 1, format!("missing column '{name}'")));
    let id_col = find(&opts.id_column)?;
    let p1_col = find(&opts.p1_column)?;
    let p2_col = find(&opts.p2_column)?;
    let coords = column("chrom").zip(column("pos"));

    let mut ids = Vec::new();
    let mut y1 = Vec::new();
    let mut y2 = Vec::new();
    let mut keys: Vec<(u8, u64, String, f64)> = Vec::new();
    let mut seen = HashSet::new();
    let mut skipped = Vec::new();
    let (mut zeros, mut ones) = (0, 0);

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record[id_col].trim().to_string();
        let mut values = [0.0; 2];
        let mut missing = None;
        for (slot, (col, name)) in [(p1_col, &opts.p1_column), (p2_col, &opts.p2_column)].into_iter().enumerate() {
            let raw = record[col].trim();
            if MISSING_TOKENS.contains(&raw) {
                missing = Some(format!("missing {name} for '{id}'"));
                break;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_error(path, line, format!("non-numeric {name} '{raw}'")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(parse_error(path, line, format!("{name} = {v} outside [0, 1]")));
            }
            values[slot] = if v == 0.0 {
                zeros += 1;
                opts.zero_floor
            } else if v == 1.0 {
                ones += 1;
                ONE_CEILING
            } else {
                v
            };
        }
        if let Some(message) = missing {
            skipped.push(Diagnostic { line, message });
            continue;
        }
        if !seen.insert(id.clone()) {
            return Err(parse_error(path, line, format!("duplicate id '{id}'")));
        }
        if let Some((c, p)) = coords {
            let (rank, num, name) = chrom_key(record[c].trim());
            let pos: f64 = record[p].trim().parse().unwrap_or(f64::NAN);
            keys.push((rank, num, name, pos));
        }
        ids.push(id);
        y1.push(values[0]);
        y2.push(values[1]);
    }

    let mut unsorted_warning = None;
    let mut sorted = false;
    let mut data = PairedPValues::new(y1, y2)?.with_ids(ids)?;
    if !keys.is_empty() {
        let cmp = |a: &(u8, u64, String, f64), b: &(u8, u64, String, f64)| {
            (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)).then(a.3.total_cmp(&b.3))
        };
        if let Some(k) = keys.windows(2).position(|w| cmp(&w[0], &w[1]).is_gt()) {
            if opts.sort_by_position {
                let mut order: Vec<usize> = (0..keys.len()).collect();
                order.sort_by(|&i, &j| cmp(&keys[i], &keys[j]).then(i.cmp(&j)));
                data = data.permuted(&order);
                sorted = true;
            } else {
                unsorted_warning = Some(format!(
                    "rows are not sorted by (chrom, pos) (first out of order: '{}'); feature order is used as chain order",
                    data.id(k + 1)
                ));
            }
        }
    }

    Ok(InputTable {
        data,
        source: path.to_path_buf(),
        skipped,
        clamped_zeros: zeros,
        clamped_ones: ones,
        unsorted_warning,
        sorted,
    })
}

/// TSV float format: six significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.5e}")
}

pub const RESULTS_HEADER: &str = "feature_id\tp1\tp2\trlis\trejected";
pub const BASELINE_HEADER: &str = "method\tfeature_id\tp1\tp2\tstatistic\trejected";

/// Writes one row per feature, in input order.
pub fn write_results_tsv(mut w: impl Write, data: &PairedPValues, outcome: &TestOutcome) -> Result<()> {
    if outcome.rlis.len() != data.len() {
        return Err(Error::LengthMismatch(format!("{} statistics for {} features", outcome.rlis.len(), data.len())));
    }
    let mask = outcome.rejection_mask();
    writeln!(w, "{RESULTS_HEADER}")?;
    for j in 0..data.len() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            data.id(j),
            fmt_float(data.y1()[j]),
            fmt_float(data.y2()[j]),
            fmt_float(outcome.rlis[j]),
            u8::from(mask[j])
        )?;
    }
    Ok(())
}

/// Baseline rows; the statistic is `NA` for methods without one.
pub fn write_baseline_tsv(mut w: impl Write, data: &PairedPValues, outcome: &BaselineOutcome) -> Result<()> {
    let mut mask = vec![false; data.len()];
    for &j in &outcome.rejected {
        mask[j] = true;
    }
    writeln!(w, "{BASELINE_HEADER}")?;
    for j in 0..data.len() {
        let stat = outcome.statistic.as_ref().map_or_else(|| "NA".to_string(), |s| fmt_float(s[j]));
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            outcome.method,
            data.id(j),
            fmt_float(data.y1()[j]),
            fmt_float(data.y2()[j]),
            stat,
            u8::from(mask[j])
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub feature_id: String,
    pub p1: f64,
    pub p2: f64,
    pub rlis: f64,
    pub rejected: bool,
}

/// Reads a table written by [`write_results_tsv`].
pub fn read_results_tsv(r: impl Read, source: &str) -> Result<Vec<ResultRow>> {
    let perr = |line: u64, message: String| Error::Parse { path: source.to_string(), line, message };
    let mut rows = Vec::new();
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != RESULTS_HEADER {
        return Err(perr(1, "unexpected header".into()));
    }
    for (k, line) in lines.enumerate() {
        let line = line?;
        let lineno = k as u64 + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(perr(lineno, format!("expected 5 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| perr(lineno, format!("non-numeric field '{s}'")));
        let rejected = match fields[4] {
            "0" => false,
            "1" => true,
            other => return Err(perr(lineno, format!("rejected flag '{other}' is not 0 or 1"))),
        };
        rows.push(ResultRow {
            feature_id: fields[0].to_string(),
            p1: num(fields[1])?,
            p2: num(fields[2])?,
            rlis: num(fields[3])?,
            rejected,
        });
    }
    Ok(rows)
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(name: &str, body: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        (dir, path)
    }

    #[test]
    fn well_formed_tsv() {
        let (_d, path) = write_tmp("a.tsv", "id\tp1\tp2\nrs1\t0.1\t0.2\nrs2\t0.5\t0.6\nrs3\t0.9\t0.01\n");
        let t = read_paired_table(&path, &ReadOptions::default()).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.skipped.is_empty());
        assert_eq!((t.clamped_zeros, t.clamped_ones), (0, 0));
        assert_eq!(t.data.id(2), "rs3");
        assert_eq!(t.data.y2(), &[0.2, 0.6, 0.01]);
    }

    #[test]
    fn missing_value_skipped_with_line() {
        let (_d, path) = write_tmp("a.tsv", "id\tp1\tp2\nrs1\t0.1\t0.2\nrs2\tNA\t0.6\nrs3\t0.9\t0.01\n");
        let t = read_paired_table(&path, &ReadOptions::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.skipped.len(), 1);
        assert_eq!(t.skipped[0].line, 3);
    }

    #[test]
    fn zero_and_one_clamped() {
        let (_d, path) = write_tmp("a.csv", "id,p1,p2\nrs1,0,0.2\nrs2,0.3,1\n");
        let t = read_paired_table(&path, &ReadOptions::default()).unwrap();
        assert_eq!(t.clamped_zeros, 1);
        assert_eq!(t.clamped_ones, 1);
        assert_eq!(t.data.y1()[0], DEFAULT_P_FLOOR);
        assert!(t.data.y2()[1] < 1.0);
    }

    #[test]
    fn structured_errors() {
        let cases = [
            ("id\tp1\tp2\nrs1\tabc\t0.2\n", 2, "non-numeric"),
            ("id\tp1\tp2\nrs1\t0.1\t0.2\nrs1\t0.3\t0.4\n", 3, "duplicate"),
            ("id\tp1\tp2\nrs1\t1.5\t0.2\n", 2, "outside"),
            ("id\tp1\tq2\nrs1\t0.1\t0.2\n", 1, "missing column"),
        ];
        for (body, want_line, want_msg) in cases {
            let (_d, path) = write_tmp("a.tsv", body);
            match read_paired_table(&path, &ReadOptions::default()) {
                Err(Error::Parse { line, message, .. }) => {
                    assert_eq!(line, want_line, "{body}");
                    assert!(message.contains(want_msg), "{message}");
                }
                other => panic!("expected parse error, got {other:?}"),
            }
        }
    }

    #[test]
    fn coordinate_order() {
        let body = "id\tchrom\tpos\tp1\tp2\na\tchr2\t5\t0.1\t0.2\nb\tchr1\t9\t0.3\t0.4\nc\tchr10\t1\t0.5\t0.6\nd\tchr1\t3\t0.7\t0.8\n";
        let (_d, path) = write_tmp("a.tsv", body);
        let t = read_paired_table(&path, &ReadOptions::default()).unwrap();
        assert!(t.unsorted_warning.is_some());
        assert_eq!(t.data.id(0), "a");
        let opts = ReadOptions { sort_by_position: true, ..ReadOptions::default() };
        let t = read_paired_table(&path, &opts).unwrap();
        assert!(t.sorted && t.unsorted_warning.is_none());
        let ids: Vec<String> = (0..4).map(|j| t.data.id(j)).collect();
        assert_eq!(ids, ["d", "b", "a", "c"]);
        assert_eq!(t.data.y1()[0], 0.7);
    }

    #[test]
    fn float_format() {
        assert_eq!(fmt_float(0.000123456789), "1.23457e-4");
        assert_eq!(fmt_float(1.0), "1.00000e0");
    }
}
