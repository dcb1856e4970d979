//! Result files.
//!
//! An experiment writes four files into its output directory:
//! `<name>_raw`, `<name>_aggregate` and `<name>_timing` in the configured
//! format, plus `<name>_config.toml` holding the fully resolved config.
//! Everything except the timing file is a pure function of the config.
//!
//! CSV files name the sweep variable in the header of the value column.
//! JSONL files start with a schema line `{"schema": ..., "version": 1,
//! "sweep": ...}` followed by one object per row.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{EstimatorKind, ExperimentSpec, Format, SweepVar};
use crate::error::{BenchError, Result};
use crate::table::{AggregateRow, RawRow, ResultTable, TimingRow};

pub const SCHEMA_VERSION: u32 = 1;

const RAW_COLUMNS: [&str; 4] = ["trial", "nmse", "converged", "failed"];
const AGGREGATE_COLUMNS: [&str; 6] = ["trials", "failures", "mean_nmse", "mean_nmse_db", "std_nmse", "stderr_nmse"];
const TIMING_COLUMNS: [&str; 2] = ["trial", "wall_time_s"];

const SWEEPS: [SweepVar; 4] = [SweepVar::SnrDb, SweepVar::Pilots, SweepVar::VrSparsity, SweepVar::Iterations];

fn sweep_from_name(name: &str) -> Option<SweepVar> {
    SWEEPS.into_iter().find(|s| s.name() == name)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPaths {
    pub raw: PathBuf,
    pub aggregate: PathBuf,
    pub timing: PathBuf,
    pub config: PathBuf,
}

pub fn output_paths(dir: &Path, name: &str, format: Format) -> OutputPaths {
    let ext = match format {
        Format::Csv => "csv",
        Format::Jsonl => "jsonl",
    };
    OutputPaths {
        raw: dir.join(format!("{name}_raw.{ext}")),
        aggregate: dir.join(format!("{name}_aggregate.{ext}")),
        timing: dir.join(format!("{name}_timing.{ext}")),
        config: dir.join(format!("{name}_config.toml")),
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaLine {
    schema: String,
    version: u32,
    sweep: SweepVar,
}

fn header(sweep: SweepVar, rest: &[&str]) -> Vec<String> {
    let mut h = vec!["estimator".to_string(), sweep.name().to_string()];
    h.extend(rest.iter().map(|c| c.to_string()));
    h
}

fn csv_err(e: csv::Error) -> BenchError {
    BenchError::parse("<csv>", e)
}

fn write_csv<T: Serialize>(w: impl Write, head: &[String], records: impl Iterator<Item = T>) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(head).map_err(csv_err)?;
    for r in records {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush().map_err(|e| BenchError::io("<csv>", e))
}

/// Parse a CSV body whose first two columns are the estimator and the
/// sweep value; returns the sweep named by the header.
fn read_csv<T: DeserializeOwned>(r: impl Read, rest: &[&str]) -> Result<(SweepVar, Vec<T>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let head = rdr.headers().map_err(csv_err)?.clone();
    let sweep = head
        .get(1)
        .and_then(sweep_from_name)
        .ok_or_else(|| BenchError::parse("<csv>", "second column must name the sweep variable"))?;
    let expected = header(sweep, rest);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(BenchError::parse("<csv>", format!("unexpected header {:?}", head)));
    }
    let rows = rdr.deserialize().collect::<std::result::Result<Vec<T>, _>>().map_err(csv_err)?;
    Ok((sweep, rows))
}

fn write_jsonl<T: Serialize>(mut w: impl Write, schema: &str, sweep: SweepVar, rows: &[T]) -> Result<()> {
    let io = |e| BenchError::io("<jsonl>", e);
    let line = SchemaLine {
        schema: schema.to_string(),
        version: SCHEMA_VERSION,
        sweep,
    };
    let json = |e: serde_json::Error| BenchError::parse("<jsonl>", e);
    writeln!(w, "{}", serde_json::to_string(&line).map_err(json)?).map_err(io)?;
    for r in rows {
        writeln!(w, "{}", serde_json::to_string(r).map_err(json)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_jsonl<T: DeserializeOwned>(r: impl Read, schema: &str) -> Result<(SweepVar, Vec<T>)> {
    let mut lines = BufReader::new(r).lines();
    let first = lines
        .next()
        .ok_or_else(|| BenchError::parse("<jsonl>", "missing schema line"))?
        .map_err(|e| BenchError::io("<jsonl>", e))?;
    let head: SchemaLine = serde_json::from_str(&first).map_err(|e| BenchError::parse("<jsonl>", e))?;
    if head.schema != schema || head.version != SCHEMA_VERSION {
        return Err(BenchError::parse(
            "<jsonl>",
            format!("expected schema {schema} v{SCHEMA_VERSION}, found {} v{}", head.schema, head.version),
        ));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| BenchError::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| BenchError::parse("<jsonl>", format!("line {}: {e}", i + 2)))?);
    }
    Ok((head.sweep, rows))
}

type RawRecord = (EstimatorKind, f64, usize, Option<f64>, bool, bool);
type AggregateRecord = (
    EstimatorKind,
    f64,
    usize,
    usize,
    Option<f64>,
    Option<f64>,
    Option<f64>,
    Option<f64>,
);
type TimingRecord = (EstimatorKind, f64, usize, f64);

pub fn write_raw(w: impl Write, table: &ResultTable, format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(
            w,
            &header(table.sweep, &RAW_COLUMNS),
            table
                .rows
                .iter()
                .map(|r| (r.estimator, r.value, r.trial, r.nmse, r.converged, r.failed)),
        ),
        Format::Jsonl => write_jsonl(w, "raw", table.sweep, &table.rows),
    }
}

/// Read raw rows back; the timing list of the result is empty.
pub fn read_raw(r: impl Read, format: Format) -> Result<ResultTable> {
    let (sweep, rows) = match format {
        Format::Csv => {
            let (sweep, recs) = read_csv::<RawRecord>(r, &RAW_COLUMNS)?;
            let rows = recs
                .into_iter()
                .map(|(estimator, value, trial, nmse, converged, failed)| RawRow {
                    estimator,
                    value,
                    trial,
                    nmse,
                    converged,
                    failed,
                })
                .collect();
            (sweep, rows)
        }
        Format::Jsonl => read_jsonl(r, "raw")?,
    };
    let mut t = ResultTable::new(sweep);
    t.rows = rows;
    Ok(t)
}

pub fn write_aggregates(w: impl Write, sweep: SweepVar, rows: &[AggregateRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(
            w,
            &header(sweep, &AGGREGATE_COLUMNS),
            rows.iter().map(|a| {
                (
                    a.estimator,
                    a.value,
                    a.trials,
                    a.failures,
                    a.mean_nmse,
                    a.mean_nmse_db,
                    a.std_nmse,
                    a.stderr_nmse,
                )
            }),
        ),
        Format::Jsonl => write_jsonl(w, "aggregate", sweep, rows),
    }
}

pub fn read_aggregates(r: impl Read, format: Format) -> Result<(SweepVar, Vec<AggregateRow>)> {
    match format {
        Format::Csv => {
            let (sweep, recs) = read_csv::<AggregateRecord>(r, &AGGREGATE_COLUMNS)?;
            let rows = recs
                .into_iter()
                .map(|(estimator, value, trials, failures, mean, db, std, se)| AggregateRow {
                    estimator,
                    value,
                    trials,
                    failures,
                    mean_nmse: mean,
                    mean_nmse_db: db,
                    std_nmse: std,
                    stderr_nmse: se,
                })
                .collect();
            Ok((sweep, rows))
        }
        Format::Jsonl => read_jsonl(r, "aggregate"),
    }
}

pub fn write_timings(w: impl Write, sweep: SweepVar, rows: &[TimingRow], format: Format) -> Result<()> {
    match format {
        Format::Csv => write_csv(
            w,
            &header(sweep, &TIMING_COLUMNS),
            rows.iter().map(|t| (t.estimator, t.value, t.trial, t.wall_time_s)),
        ),
        Format::Jsonl => write_jsonl(w, "timing", sweep, rows),
    }
}

pub fn read_timings(r: impl Read, format: Format) -> Result<(SweepVar, Vec<TimingRow>)> {
    match format {
        Format::Csv => {
            let (sweep, recs) = read_csv::<TimingRecord>(r, &TIMING_COLUMNS)?;
            let rows = recs
                .into_iter()
                .map(|(estimator, value, trial, wall_time_s)| TimingRow {
                    estimator,
                    value,
                    trial,
                    wall_time_s,
                })
                .collect();
            Ok((sweep, rows))
        }
        Format::Jsonl => read_jsonl(r, "timing"),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| BenchError::io(path, e))
}

/// Attach the file name to errors raised by the stream helpers.
fn at(path: &Path, e: BenchError) -> BenchError {
    match e {
        BenchError::Parse { detail, .. } => BenchError::Parse {
            path: path.to_path_buf(),
            detail,
        },
        BenchError::Io { source, .. } => BenchError::io(path, source),
        other => other,
    }
}

/// Write all result files for `table` under `dir`, creating it if needed.
pub fn write_results(table: &ResultTable, spec: &ExperimentSpec, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let format = spec.experiment.format;
    let paths = output_paths(dir, &spec.experiment.name, format);
    write_raw(create(&paths.raw)?, table, format).map_err(|e| at(&paths.raw, e))?;
    write_aggregates(create(&paths.aggregate)?, table.sweep, &table.aggregates(), format)
        .map_err(|e| at(&paths.aggregate, e))?;
    write_timings(create(&paths.timing)?, table.sweep, &table.timings, format).map_err(|e| at(&paths.timing, e))?;
    fs::write(&paths.config, spec.to_config_text()).map_err(|e| BenchError::io(&paths.config, e))?;
    Ok(paths)
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| BenchError::io(path, e))
}

pub fn read_raw_file(path: &Path, format: Format) -> Result<ResultTable> {
    read_raw(open(path)?, format).map_err(|e| at(path, e))
}

pub fn read_aggregate_file(path: &Path, format: Format) -> Result<(SweepVar, Vec<AggregateRow>)> {
    read_aggregates(open(path)?, format).map_err(|e| at(path, e))
}

pub fn read_timing_file(path: &Path, format: Format) -> Result<(SweepVar, Vec<TimingRow>)> {
    read_timings(open(path)?, format).map_err(|e| at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ResultTable {
        let mut t = ResultTable::new(SweepVar::SnrDb);
        for (i, e) in EstimatorKind::ALL.into_iter().enumerate() {
            for trial in 0..3 {
                let nmse = (i + trial != 4).then(|| 0.1 / (1.0 + i as f64) + 1e-3 * trial as f64 / 3.0);
                t.rows.push(RawRow {
                    estimator: e,
                    value: -2.5,
                    trial,
                    nmse,
                    converged: trial != 1,
                    failed: nmse.is_none(),
                });
                t.timings.push(TimingRow {
                    estimator: e,
                    value: -2.5,
                    trial,
                    wall_time_s: 0.125 * trial as f64,
                });
            }
        }
        t
    }

    #[test]
    fn raw_round_trip() {
        for format in [Format::Csv, Format::Jsonl] {
            let t = sample();
            let mut buf = Vec::new();
            write_raw(&mut buf, &t, format).unwrap();
            let back = read_raw(buf.as_slice(), format).unwrap();
            assert_eq!(back.sweep, t.sweep);
            assert_eq!(back.rows, t.rows);
        }
    }

    #[test]
    fn aggregates_round_trip() {
        for format in [Format::Csv, Format::Jsonl] {
            let a = sample().aggregates();
            let mut buf = Vec::new();
            write_aggregates(&mut buf, SweepVar::SnrDb, &a, format).unwrap();
            assert_eq!(read_aggregates(buf.as_slice(), format).unwrap(), (SweepVar::SnrDb, a));
        }
    }

    #[test]
    fn timings_round_trip() {
        for format in [Format::Csv, Format::Jsonl] {
            let t = sample();
            let mut buf = Vec::new();
            write_timings(&mut buf, t.sweep, &t.timings, format).unwrap();
            assert_eq!(read_timings(buf.as_slice(), format).unwrap(), (t.sweep, t.timings));
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ResultTable::new(SweepVar::Pilots);
        let mut buf = Vec::new();
        write_raw(&mut buf, &t, Format::Csv).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "estimator,pilots,trial,nmse,converged,failed\n");
        let back = read_raw(buf.as_slice(), Format::Csv).unwrap();
        assert_eq!((back.sweep, back.rows.len()), (SweepVar::Pilots, 0));

        let mut buf = Vec::new();
        write_aggregates(&mut buf, SweepVar::Pilots, &[], Format::Jsonl).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1);
        assert_eq!(read_aggregates(buf.as_slice(), Format::Jsonl).unwrap(), (SweepVar::Pilots, vec![]));
    }

    #[test]
    fn missing_values_are_blank_in_csv() {
        let mut t = ResultTable::new(SweepVar::SnrDb);
        t.rows.push(RawRow::failed(EstimatorKind::Sbl, 10.0, 4));
        let mut buf = Vec::new();
        write_raw(&mut buf, &t, Format::Csv).unwrap();
        assert!(String::from_utf8(buf).unwrap().ends_with("\nsbl,10.0,4,,false,true\n"));
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(read_raw("estimator,bogus,trial,nmse,converged,failed\n".as_bytes(), Format::Csv).is_err());
        assert!(read_raw("estimator,pilots,trial\n".as_bytes(), Format::Csv).is_err());
        assert!(read_raw("estimator,pilots,trial,nmse,converged,failed\nlasso,1,0,,true,false\n".as_bytes(), Format::Csv).is_err());
        assert!(read_raw("".as_bytes(), Format::Jsonl).is_err());
        assert!(read_raw("{\"schema\":\"aggregate\",\"version\":1,\"sweep\":\"pilots\"}\n".as_bytes(), Format::Jsonl).is_err());
    }
}
