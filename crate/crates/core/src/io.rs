//! On-disk formats: ensembles (binary and CSV), fit records (JSON),
//! density grids and reports (CSV).
//!
//! Binary ensemble layout, all little-endian:
//!
//! | bytes | field |
//! |-------|-------|
//! | 4 | magic `TDEN` |
//! | 4 | format version (u32, currently 1) |
//! | 1 | model tag (0 = none, 1 = ou, 2 = tanh_ou, 3 = cir) |
//! | 1 | flags: bit 0 seed present, bit 1 parameters present |
//! | 2 | reserved, zero |
//! | 8 | N (u64) |
//! | 8 | n_steps (u64) |
//! | 8 | Δ (f64) |
//! | 8 | r (f64) |
//! | 8 | γ (f64) |
//! | 8 | d (u64) |
//! | 8 | seed (u64) |
//! | 8 · N · (n_steps + 1) | states, row-major (path by path) |
//!
//! Floats are written with shortest round-trip formatting in every text
//! format, so re-reading a file reproduces the in-memory values bitwise.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::estimator::{GramMatrix, TransitionFit};
use crate::experiment::ExperimentReport;
use crate::selection::SelectionResult;
use crate::sim::{Model, OuParams, PathEnsemble, SimGrid};

pub const ENSEMBLE_MAGIC: [u8; 4] = *b"TDEN";
pub const ENSEMBLE_VERSION: u32 = 1;
const HEADER_LEN: usize = 68;
const FLAG_SEED: u8 = 1;
const FLAG_PARAMS: u8 = 2;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

fn rebuild(
    values: Vec<f64>,
    n_paths: usize,
    grid: SimGrid,
    model: Option<Model>,
    params: Option<OuParams>,
    seed: Option<u64>,
) -> Result<PathEnsemble> {
    PathEnsemble::from_flat(values, n_paths, grid, model, params, seed)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_ensemble_binary<W: Write>(ens: &PathEnsemble, mut w: W) -> Result<()> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(&ENSEMBLE_MAGIC);
    header.extend_from_slice(&ENSEMBLE_VERSION.to_le_bytes());
    header.push(ens.model().map_or(0, Model::tag));
    let mut flags = 0;
    if ens.seed().is_some() {
        flags |= FLAG_SEED;
    }
    if ens.params().is_some() {
        flags |= FLAG_PARAMS;
    }
    header.push(flags);
    header.extend_from_slice(&[0, 0]);
    let grid = ens.grid();
    header.extend_from_slice(&(ens.n_paths() as u64).to_le_bytes());
    header.extend_from_slice(&(grid.n_steps() as u64).to_le_bytes());
    header.extend_from_slice(&grid.delta().to_le_bytes());
    let (r, gamma, d) = ens
        .params()
        .map_or((0.0, 0.0, 0), |p| (p.r(), p.gamma(), p.d() as u64));
    header.extend_from_slice(&r.to_le_bytes());
    header.extend_from_slice(&gamma.to_le_bytes());
    header.extend_from_slice(&d.to_le_bytes());
    header.extend_from_slice(&ens.seed().unwrap_or(0).to_le_bytes());
    debug_assert_eq!(header.len(), HEADER_LEN);
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(8 * ens.values().len());
    for v in ens.values() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_ensemble_binary<R: Read>(mut r: R) -> Result<PathEnsemble> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated ensemble header".into()))?;
    if header[0..4] != ENSEMBLE_MAGIC {
        return format_err("not a binary ensemble file (bad magic)");
    }
    let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().expect("8-byte slice"));
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().expect("8-byte slice"));
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4-byte slice"));
    if version != ENSEMBLE_VERSION {
        return format_err(format!("unsupported ensemble version {version}"));
    }
    let model = match header[8] {
        0 => None,
        t => Some(
            Model::from_tag(t).ok_or_else(|| Error::Format(format!("unknown model tag {t}")))?,
        ),
    };
    let flags = header[9];
    let n_paths = u64_at(12) as usize;
    let n_steps = u64_at(20) as usize;
    let grid = SimGrid::new(f64_at(28), n_steps).map_err(|e| Error::Format(e.to_string()))?;
    let params = if flags & FLAG_PARAMS != 0 {
        Some(
            OuParams::new(f64_at(36), f64_at(44), u64_at(52) as usize)
                .map_err(|e| Error::Format(e.to_string()))?,
        )
    } else {
        None
    };
    let seed = (flags & FLAG_SEED != 0).then(|| u64_at(60));
    let count = n_paths
        .checked_mul(grid.n_points())
        .ok_or_else(|| Error::Format("ensemble size overflows".into()))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != 8 * count {
        return format_err(format!(
            "expected {} bytes of states, found {}",
            8 * count,
            body.len()
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    rebuild(values, n_paths, grid, model, params, seed)
}

/// CSV layout: a `#` header line of `key=value` pairs, then one path per row.
pub fn write_ensemble_csv<W: Write>(ens: &PathEnsemble, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    let grid = ens.grid();
    let mut header = format!(
        "# n_paths={},n_steps={},delta={}",
        ens.n_paths(),
        grid.n_steps(),
        grid.delta()
    );
    if let Some(m) = ens.model() {
        let _ = write!(header, ",model={m}");
    }
    if let Some(p) = ens.params() {
        let _ = write!(header, ",r={},gamma={},d={}", p.r(), p.gamma(), p.d());
    }
    if let Some(s) = ens.seed() {
        let _ = write!(header, ",seed={s}");
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for path in ens.paths() {
        line.clear();
        for (k, v) in path.iter().enumerate() {
            if k > 0 {
                line.push(',');
            }
            let _ = write!(line, "{v}");
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ensemble_csv<R: Read>(r: R) -> Result<PathEnsemble> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty ensemble file".into()))??;
    let Some(fields) = header.strip_prefix('#') else {
        return format_err("ensemble CSV must start with a '#' header line");
    };
    let (mut n_paths, mut n_steps, mut delta, mut model, mut seed) = (None, None, None, None, None);
    let (mut r_, mut gamma, mut d) = (None, None, None);
    for kv in fields.trim().split(',') {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header field '{kv}'")))?;
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number for {k}: '{v}'")))
        };
        let int = |v: &str| {
            v.trim()
                .parse::<u64>()
                .map_err(|_| Error::Format(format!("bad integer for {k}: '{v}'")))
        };
        match k.trim() {
            "n_paths" => n_paths = Some(int(v)? as usize),
            "n_steps" => n_steps = Some(int(v)? as usize),
            "delta" => delta = Some(num(v)?),
            "model" => {
                model = Some(
                    v.parse::<Model>()
                        .map_err(|e| Error::Format(e.to_string()))?,
                )
            }
            "r" => r_ = Some(num(v)?),
            "gamma" => gamma = Some(num(v)?),
            "d" => d = Some(int(v)? as usize),
            "seed" => seed = Some(int(v)?),
            other => return format_err(format!("unknown header field '{other}'")),
        }
    }
    let (Some(n_paths), Some(n_steps), Some(delta)) = (n_paths, n_steps, delta) else {
        return format_err("header needs n_paths, n_steps and delta");
    };
    let params = match (r_, gamma, d) {
        (Some(r), Some(g), Some(d)) => {
            Some(OuParams::new(r, g, d).map_err(|e| Error::Format(e.to_string()))?)
        }
        (None, None, None) => None,
        _ => return format_err("header parameters r, gamma, d must appear together"),
    };
    let grid = SimGrid::new(delta, n_steps).map_err(|e| Error::Format(e.to_string()))?;
    let mut values = Vec::with_capacity(n_paths * grid.n_points());
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: bad value '{cell}'", i + 1)))?;
            values.push(v);
        }
        if values.len() - before != grid.n_points() {
            return format_err(format!(
                "row {} has {} values, expected {}",
                i + 1,
                values.len() - before,
                grid.n_points()
            ));
        }
        rows += 1;
    }
    if rows != n_paths {
        return format_err(format!("header declares {n_paths} paths, found {rows}"));
    }
    rebuild(values, n_paths, grid, model, params, seed)
}

/// Dispatches on the extension: `.csv` is text, anything else binary.
pub fn save_ensemble(ens: &PathEnsemble, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        write_ensemble_csv(ens, file)
    } else {
        write_ensemble_binary(ens, file)
    }
}

pub fn load_ensemble(path: &Path) -> Result<PathEnsemble> {
    let file = BufReader::new(File::open(path)?);
    if is_csv(path) {
        read_ensemble_csv(file)
    } else {
        read_ensemble_binary(file)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub min_eig: f64,
    pub max_eig: f64,
    pub relative_residual: f64,
    pub empirical_sq_norm: f64,
}

/// Self-describing JSON form of a [`TransitionFit`]; matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub format: String,
    pub version: u32,
    pub m1: usize,
    pub m2: usize,
    pub lag: f64,
    pub phi: BasisSpec,
    pub psi: BasisSpec,
    pub n_paths: usize,
    pub t_eff: f64,
    pub truncated: bool,
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
    pub gram: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

const FIT_FORMAT: &str = "transden-fit";

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return format_err(format!(
            "{what}: expected {} entries, found {}",
            rows * cols,
            data.len()
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

impl FitRecord {
    pub fn from_fit(fit: &TransitionFit) -> Self {
        let (m1, m2) = fit.dims();
        Self {
            format: FIT_FORMAT.into(),
            version: 1,
            m1,
            m2,
            lag: fit.lag(),
            phi: *fit.phi(),
            psi: *fit.psi(),
            n_paths: fit.n_paths(),
            t_eff: fit.t_eff(),
            truncated: fit.truncated(),
            theta: row_major(fit.theta()),
            z: row_major(fit.z()),
            gram: row_major(fit.gram().matrix()),
            diagnostics: FitDiagnostics {
                min_eig: fit.gram().min_eig(),
                max_eig: fit.gram().max_eig(),
                relative_residual: fit.relative_residual(),
                empirical_sq_norm: fit.empirical_sq_norm(),
            },
        }
    }

    pub fn into_fit(self) -> Result<TransitionFit> {
        if self.format != FIT_FORMAT || self.version != 1 {
            return format_err(format!(
                "unsupported fit record {} v{}",
                self.format, self.version
            ));
        }
        let theta = from_row_major(self.m1, self.m2, &self.theta, "theta")?;
        let z = from_row_major(self.m1, self.m2, &self.z, "z")?;
        let gram = GramMatrix::new(from_row_major(self.m1, self.m1, &self.gram, "gram")?)?;
        TransitionFit::from_parts(
            theta,
            gram,
            z,
            self.lag,
            self.phi,
            self.psi,
            self.truncated,
            self.n_paths,
            self.t_eff,
        )
        .map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn fit_to_json(fit: &TransitionFit) -> Result<String> {
    Ok(serde_json::to_string_pretty(&FitRecord::from_fit(fit))?)
}

pub fn fit_from_json(s: &str) -> Result<TransitionFit> {
    serde_json::from_str::<FitRecord>(s)?.into_fit()
}

pub fn save_fit(fit: &TransitionFit, path: &Path) -> Result<()> {
    std::fs::write(path, fit_to_json(fit)?)?;
    Ok(())
}

pub fn load_fit(path: &Path) -> Result<TransitionFit> {
    fit_from_json(&std::fs::read_to_string(path)?)
}

/// Grid CSV: the first row holds the y-axis, the first column the x-axis,
/// `values[(i, j)]` sits at `(xs[i], ys[j])`.
pub fn grid_to_csv(xs: &[f64], ys: &[f64], values: &DMatrix<f64>) -> Result<String> {
    if values.shape() != (xs.len(), ys.len()) {
        return Err(Error::Parameter(format!(
            "grid values are {:?}, axes are {} x {}",
            values.shape(),
            xs.len(),
            ys.len()
        )));
    }
    let mut out = String::from("x\\y");
    for y in ys {
        let _ = write!(out, ",{y}");
    }
    out.push('\n');
    for (i, x) in xs.iter().enumerate() {
        let _ = write!(out, "{x}");
        for j in 0..ys.len() {
            let _ = write!(out, ",{}", values[(i, j)]);
        }
        out.push('\n');
    }
    Ok(out)
}

/// Inverse of [`grid_to_csv`]: `(xs, ys, values)`.
pub fn grid_from_csv(s: &str) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let parse = |c: &str| {
        c.trim()
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("bad grid value '{c}'")))
    };
    let mut lines = s.lines().filter(|l| !l.trim().is_empty());
    let head = lines
        .next()
        .ok_or_else(|| Error::Format("empty grid file".into()))?;
    let ys: Vec<f64> = head.split(',').skip(1).map(parse).collect::<Result<_>>()?;
    let mut xs = Vec::new();
    let mut body = Vec::new();
    for line in lines {
        let mut cells = line.split(',');
        xs.push(parse(cells.next().unwrap_or_default())?);
        let before = body.len();
        for c in cells {
            body.push(parse(c)?);
        }
        if body.len() - before != ys.len() {
            return format_err(format!(
                "grid row {} has {} values, expected {}",
                xs.len(),
                body.len() - before,
                ys.len()
            ));
        }
    }
    let values = DMatrix::from_row_slice(xs.len(), ys.len(), &body);
    Ok((xs, ys, values))
}

pub fn save_grid(path: &Path, xs: &[f64], ys: &[f64], values: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, grid_to_csv(xs, ys, values)?)?;
    Ok(())
}

pub fn save_selection_table(path: &Path, selection: &SelectionResult) -> Result<()> {
    std::fs::write(path, selection.table_csv())?;
    Ok(())
}

/// Writes `report.csv` and `report.json` into `dir`, creating it if needed.
pub fn save_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report.to_csv())?;
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::simulate;

    fn small(model: Model) -> PathEnsemble {
        simulate(
            model,
            model.default_params(),
            SimGrid::new(0.01, 20).unwrap(),
            3,
            42,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        for model in [Model::Ou, Model::TanhOu, Model::Cir] {
            let ens = small(model);
            let mut buf = Vec::new();
            write_ensemble_binary(&ens, &mut buf).unwrap();
            assert_eq!(buf.len(), HEADER_LEN + 8 * 3 * 21);
            let back = read_ensemble_binary(buf.as_slice()).unwrap();
            assert_eq!(back, ens);
        }
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let ens = small(Model::Cir);
        let mut buf = Vec::new();
        write_ensemble_csv(&ens, &mut buf).unwrap();
        let back = read_ensemble_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ens);
        let bare = PathEnsemble::from_rows(
            vec![vec![0.1, 0.2], vec![0.3, 1e-300]],
            SimGrid::new(0.5, 1).unwrap(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_ensemble_csv(&bare, &mut buf).unwrap();
        assert_eq!(read_ensemble_csv(buf.as_slice()).unwrap(), bare);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let ens = small(Model::Ou);
        let mut buf = Vec::new();
        write_ensemble_binary(&ens, &mut buf).unwrap();
        assert!(matches!(
            read_ensemble_binary(&buf[..buf.len() - 1]),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_ensemble_binary(bad.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(read_ensemble_csv("# n_paths=2,n_steps=1,delta=0.1\n0,1\n".as_bytes()).is_err());
        assert!(read_ensemble_csv("0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn grid_csv_layout() {
        let xs = [0.0, 0.5];
        let ys = [-1.0, 0.25, 1.0];
        let v = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let csv = grid_to_csv(&xs, &ys, &v).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "x\\y,-1,0.25,1");
        assert_eq!(csv.lines().nth(2).unwrap(), "0.5,4,5,6");
        let (bx, by, bv) = grid_from_csv(&csv).unwrap();
        assert_eq!((bx.as_slice(), by.as_slice(), bv), (&xs[..], &ys[..], v));
    }
}
