//! Run-directory layout and raster writers.
//!
//! Every invocation gets a fresh timestamped subdirectory under the output
//! root unless `--overwrite` pins the root itself, so prior runs are never
//! touched.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use uqbench::experiments::UncertaintyGrid;
use uqbench::{Error, Result};

#[derive(Debug, Clone)]
pub struct OutputLayout {
    root: PathBuf,
}

impl OutputLayout {
    /// Creates the run root: `out` itself with `overwrite`, else a
    /// `YYYYMMDD-HHMMSS` subdirectory (suffixed `-2`, `-3`, ... if the
    /// second is already taken).
    pub fn prepare(out: &Path, overwrite: bool) -> Result<Self> {
        let root = if overwrite {
            out.to_path_buf()
        } else {
            let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S").to_string();
            let mut candidate = out.join(&stamp);
            let mut counter = 2;
            while candidate.exists() {
                candidate = out.join(format!("{stamp}-{counter}"));
                counter += 1;
            }
            candidate
        };
        fs::create_dir_all(&root).map_err(|e| Error::io(root.display().to_string(), e))?;
        Ok(OutputLayout { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes a file under the run root, creating parent directories.
    pub fn write(&self, relative: &Path, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    }
}

/// Long-format CSV for one grid: `x,y,au,eu`, rows sweeping x fastest with
/// y ascending, matching the raster's row 0 = minimum y orientation.
pub fn grid_csv(grid: &UncertaintyGrid) -> String {
    let mut out = String::from("x,y,au,eu\n");
    for (i, &y) in grid.ys.iter().enumerate() {
        for (j, &x) in grid.xs.iter().enumerate() {
            let _ = writeln!(out, "{x},{y},{},{}", grid.au.get(i, j), grid.eu.get(i, j));
        }
    }
    out
}

/// Renders one channel as an ASCII PGM (P2), 256 gray levels scaled over
/// the channel's own min..max. Raster row 0 is the minimum y, like the CSV;
/// image viewers that draw row 0 at the top show the plane y-flipped.
pub fn grid_pgm(grid: &UncertaintyGrid, channel: &str) -> Result<String> {
    let raster = match channel {
        "au" => &grid.au,
        "eu" => &grid.eu,
        other => {
            return Err(Error::Config(format!(
                "unknown grid channel '{other}' (au or eu)"
            )))
        }
    };
    let values = raster.as_slice();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = String::from("P2\n");
    let _ = writeln!(
        out,
        "# {channel} raster, row 0 = min y; values scaled from [{lo}, {hi}]"
    );
    let _ = writeln!(out, "{} {}", grid.resolution, grid.resolution);
    out.push_str("255\n");
    for i in 0..grid.resolution {
        let mut first = true;
        for j in 0..grid.resolution {
            if !first {
                out.push(' ');
            }
            let v = raster.get(i, j);
            let level = if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u32
            } else {
                0
            };
            let _ = write!(out, "{level}");
            first = false;
        }
        out.push('\n');
    }
    Ok(out)
}
