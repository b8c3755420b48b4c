//! Delimited-text dataset files.
//!
//! ```text
//! <version>,<D>
//! footprint_id,tile_id,year,day_of_year,lon,lat,y_norm,p_0,...,p_{9D-1}
//! ```
//!
//! `lon`/`lat` are region-normalized. Patch values are row-major over
//! (row, col, channel). Floats use Rust's shortest round-trip formatting, so
//! a write/read cycle reproduces every `f64` bit for bit. The temporal
//! encoding is not stored; it is recomputed from `year` and `day_of_year`
//! against the study period supplied to [`read_dataset`].

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::anp::{coord_for, Footprint, StudyPeriod};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

const FIXED_COLS: usize = 7;

pub fn write_dataset(footprints: &[Footprint], path: &Path) -> Result<()> {
    let d = footprints.first().map_or(0, Footprint::embed_dim);
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{DATASET_VERSION},{d}")?;
    let mut line = String::new();
    for f in footprints {
        if f.embed_dim() != d || f.patch.len() != 9 * d {
            return Err(Error::Format(format!("footprint {} has embedding width {}, expected {d}", f.id, f.embed_dim())));
        }
        line.clear();
        write!(
            line,
            "{},{},{},{},{},{},{}",
            f.id, f.tile_id, f.year, f.day_of_year, f.coord.lon_norm, f.coord.lat_norm, f.y_norm
        )
        .expect("write to string");
        for v in f.patch.data() {
            write!(line, ",{v}").expect("write to string");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {what} value {field:?}"),
    })
}

pub fn read_dataset(path: &Path, period: &StudyPeriod) -> Result<Vec<Footprint>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let head: Vec<&str> = header.split(',').collect();
    if head.len() != 2 {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be `version,D`".into(),
        });
    }
    let version: u32 = parse(head[0], 1, "version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let d: usize = parse(head[1], 1, "D")?;
    let width = FIXED_COLS + 9 * d;

    let mut out = Vec::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != width {
            return Err(Error::Format(format!(
                "row at line {lineno} has {} fields, header D={d} requires {width}",
                fields.len()
            )));
        }
        let id: u64 = parse(fields[0], lineno, "footprint_id")?;
        let tile_id: u32 = parse(fields[1], lineno, "tile_id")?;
        let year: i32 = parse(fields[2], lineno, "year")?;
        let day_of_year: u32 = parse(fields[3], lineno, "day_of_year")?;
        let lon: f64 = parse(fields[4], lineno, "lon")?;
        let lat: f64 = parse(fields[5], lineno, "lat")?;
        let y_norm: f64 = parse(fields[6], lineno, "y_norm")?;
        let patch = fields[FIXED_COLS..]
            .iter()
            .map(|f| parse::<f64>(f, lineno, "patch"))
            .collect::<Result<Vec<_>>>()?;
        let coord = coord_for(lon, lat, year, day_of_year, period).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        out.push(Footprint {
            id,
            coord,
            patch: Tensor::new(vec![3, 3, d], patch)?,
            y_norm,
            year,
            day_of_year,
            tile_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{World, WorldConfig};

    fn small() -> (Vec<Footprint>, StudyPeriod) {
        let w = World::new(WorldConfig {
            footprints_per_tile_year: 8.0,
            embed_dim: 4,
            ..WorldConfig::default()
        })
        .unwrap();
        (w.sample_footprints().unwrap().footprints, *w.period())
    }

    #[test]
    fn round_trip_is_exact() {
        let (fps, period) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&fps, &path).unwrap();
        let back = read_dataset(&path, &period).unwrap();
        assert_eq!(fps, back);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let (fps, period) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&fps, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() * 2 / 3]).unwrap();
        assert!(read_dataset(&path, &period).is_err());
    }

    #[test]
    fn width_mismatch_names_the_row() {
        let (_, period) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let row16 = format!("0,0,2020,10,0.5,0.5,0.7{}", ",0.1".repeat(9 * 16));
        let row15 = format!("1,0,2020,10,0.5,0.5,0.7{}", ",0.1".repeat(9 * 15));
        fs::write(&path, format!("1,16\n{row16}\n{row15}\n")).unwrap();
        match read_dataset(&path, &period) {
            Err(Error::Format(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_number_is_a_parse_error() {
        let (_, period) = small();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let row = format!("0,0,2020,10,abc,0.5,0.7{}", ",0.1".repeat(9 * 2));
        fs::write(&path, format!("1,2\n{row}\n")).unwrap();
        assert!(matches!(read_dataset(&path, &period), Err(Error::Parse { line: 2, .. })));
    }
}
