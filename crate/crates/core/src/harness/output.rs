use std::fs::File;
use std::io::Write;
use std::path::Path;

use super::sweep::SweepRow;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "param",
    "param_value",
    "policy",
    "mean_energy",
    "mean_energy_db",
    "stderr",
    "gain",
    "gain_db",
    "trials",
];

/// Writes rows as CSV. Floats use the shortest decimal form that reads back
/// to the same value.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.param.to_string(),
            r.param_value.to_string(),
            r.policy.to_string(),
            r.mean_energy.to_string(),
            r.mean_energy_db.to_string(),
            r.stderr.to_string(),
            r.gain.to_string(),
            r.gain_db.to_string(),
            r.trials.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(rows, file).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::Config(format!(
            "{}: bad `{}` field `{raw}` on line {}",
            path.display(),
            CSV_HEADER[i],
            rec.position().map_or(0, |p| p.line())
        ))
    })
}

/// Reads a file written by [`emit_csv`].
pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Config(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(SweepRow {
            param: field(&rec, 0, path)?,
            param_value: field(&rec, 1, path)?,
            policy: field(&rec, 2, path)?,
            mean_energy: field(&rec, 3, path)?,
            mean_energy_db: field(&rec, 4, path)?,
            stderr: field(&rec, 5, path)?,
            gain: field(&rec, 6, path)?,
            gain_db: field(&rec, 7, path)?,
            trials: field(&rec, 8, path)?,
        });
    }
    Ok(rows)
}
