//! CSV input and output: long-format observations, factor matrices and
//! trajectories. Floats are written with 17 significant digits so they
//! read back bit-identical.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::model::FactorModel;
use crate::scalar::Scalar;
use crate::tensor::{GlobalGrid, Labels, Record};
use crate::trajectory::TrajectoryPoint;

pub const RECORD_HEADER: [&str; 4] = ["subject", "feature", "time", "value"];

/// Lossless decimal form of a float.
pub fn fmt_float<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn parse_float<T: Scalar>(s: &str, line: u64, what: &str) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|e| Error::Parse {
            line,
            message: format!("bad {what} {s:?}: {e}"),
        })
}

/// Reads `subject,feature,time,value` records. Line numbers in errors are
/// 1-based and count the header.
pub fn read_records<T: Scalar, R: Read>(reader: R) -> Result<Vec<Record<T>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != 4 || header.iter().zip(RECORD_HEADER).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {:?}, got {:?}", RECORD_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 fields, got {}", row.len()),
            });
        }
        out.push(Record::new(
            &row[0],
            &row[1],
            parse_float(&row[2], line, "time")?,
            parse_float(&row[3], line, "value")?,
        ));
    }
    Ok(out)
}

pub fn read_records_path<T: Scalar>(path: &Path) -> Result<Vec<Record<T>>> {
    read_records(File::open(path)?)
}

pub fn write_records<T: Scalar, W: Write>(writer: W, records: &[Record<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record([r.subject.as_str(), r.feature.as_str(), &fmt_float(r.time), &fmt_float(r.value)])?;
    }
    w.flush()?;
    Ok(())
}

/// Headerless CSV, one matrix row per line.
pub fn write_matrix<T: Scalar, W: Write>(writer: W, m: &Array2<T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for row in m.rows() {
        w.write_record(row.iter().map(|&v| fmt_float(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix<T: Scalar, R: Read>(reader: R) -> Result<Array2<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {c} fields, got {}", row.len()),
                })
            }
            _ => {}
        }
        for f in row.iter() {
            data.push(parse_float(f, line, "entry")?);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::DimensionMismatch(e.to_string()))
}

pub fn write_matrix_path<T: Scalar>(path: &Path, m: &Array2<T>) -> Result<()> {
    write_matrix(File::create(path)?, m)
}

pub fn read_matrix_path<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    read_matrix(File::open(path)?)
}

/// `iteration,<loss_column>,wall_time_sec,plan_seed`; the seed is empty for
/// unsketched steps.
pub fn write_trajectory<W: Write>(writer: W, loss_column: &str, trajectory: &[TrajectoryPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", loss_column, "wall_time_sec", "plan_seed"])?;
    for pt in trajectory {
        w.write_record([
            pt.iteration.to_string(),
            fmt_float(pt.loss),
            fmt_float(pt.wall_time_sec),
            pt.plan_seed.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `kind,index,label` rows for subjects and features.
pub fn write_labels<W: Write>(writer: W, labels: &Labels) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "index", "label"])?;
    for (k, s) in labels.subjects.iter().enumerate() {
        w.write_record(["subject", &k.to_string(), s])?;
    }
    for (k, s) in labels.features.iter().enumerate() {
        w.write_record(["feature", &k.to_string(), s])?;
    }
    w.flush()?;
    Ok(())
}

/// File names used by [`save_model`] and [`load_model`].
pub const MODEL_FILES: [&str; 4] = ["A.csv", "B.csv", "theta.csv", "grid.csv"];

/// Writes `A.csv`, `B.csv`, `theta.csv` and `grid.csv` (one time per line).
pub fn save_model<T: Scalar>(dir: &Path, model: &FactorModel<T>) -> Result<()> {
    write_matrix_path(&dir.join(MODEL_FILES[0]), &model.a)?;
    write_matrix_path(&dir.join(MODEL_FILES[1]), &model.b)?;
    write_matrix_path(&dir.join(MODEL_FILES[2]), &model.theta)?;
    let pts = model.grid.points();
    let grid = Array2::from_shape_vec((pts.len(), 1), pts.to_vec()).expect("column shape");
    write_matrix_path(&dir.join(MODEL_FILES[3]), &grid)
}

pub fn load_model<T: Scalar>(dir: &Path, kernel: KernelSpec) -> Result<FactorModel<T>> {
    let a = read_matrix_path(&dir.join(MODEL_FILES[0]))?;
    let b = read_matrix_path(&dir.join(MODEL_FILES[1]))?;
    let theta = read_matrix_path(&dir.join(MODEL_FILES[2]))?;
    let grid: Array2<T> = read_matrix_path(&dir.join(MODEL_FILES[3]))?;
    let grid = GlobalGrid::from_points(grid.column(0).to_vec())?;
    FactorModel::new(a, b, theta, grid, kernel)
}
