//! Landmark tables: whitespace-separated text, one point per row.
//!
//! Two layouts are accepted. A 3-column file holds one point set; a
//! 6-column file holds fixed and moving points side by side. `#` starts
//! a comment. Coordinates are world millimeters unless the caller
//! converts them.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::LandmarkSet;

fn parse_rows(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| super::io_at(path, e))?;
    let mut rows = Vec::new();
    let mut offset = 0usize;
    for raw_line in text.split('\n') {
        let line_offset = offset;
        offset += raw_line.len() + 1;
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(columns);
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                offset: line_offset,
                msg: format!("{}: bad coordinate '{tok}'", path.display()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    offset: line_offset,
                    msg: format!("{}: non-finite coordinate '{tok}'", path.display()),
                });
            }
            row.push(v);
        }
        if row.len() != columns {
            return Err(Error::Parse {
                offset: line_offset,
                msg: format!(
                    "{}: expected {columns} columns, found {}",
                    path.display(),
                    row.len()
                ),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptySet(format!(
            "{}: no landmark rows",
            path.display()
        )));
    }
    Ok(rows)
}

/// Reads a 3-column point file.
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<[f64; 3]>> {
    let rows = parse_rows(path.as_ref(), 3)?;
    Ok(rows.into_iter().map(|r| [r[0], r[1], r[2]]).collect())
}

/// Reads a 6-column file of (fixed, moving) coordinate pairs.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<LandmarkSet> {
    let rows = parse_rows(path.as_ref(), 6)?;
    LandmarkSet::new(
        rows.into_iter()
            .map(|r| ([r[0], r[1], r[2]], [r[3], r[4], r[5]]))
            .collect(),
    )
}

/// Pairs up two 3-column files; the row counts must agree.
pub fn read_pair_files(
    fixed_path: impl AsRef<Path>,
    moving_path: impl AsRef<Path>,
) -> Result<LandmarkSet> {
    let fixed = read_points(fixed_path.as_ref())?;
    let moving = read_points(moving_path.as_ref())?;
    if fixed.len() != moving.len() {
        return Err(Error::Input(format!(
            "landmark files disagree: {} has {} points, {} has {}",
            fixed_path.as_ref().display(),
            fixed.len(),
            moving_path.as_ref().display(),
            moving.len()
        )));
    }
    LandmarkSet::new(fixed.into_iter().zip(moving).collect())
}
