use std::f64::consts::TAU;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Whether a point set holds values as loaded or already transformed into
/// model space (log target, standardized features).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Raw,
    Model,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    /// `n x 2`, columns lon/lat (or any planar x/y).
    pub coords: Array2<f64>,
    /// `n x F`.
    pub features: Array2<f64>,
    pub target: Vec<f64>,
    pub names: Vec<String>,
    pub scale: Scale,
}

impl PointSet {
    pub fn new(coords: Array2<f64>, features: Array2<f64>, target: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let n = target.len();
        if coords.dim() != (n, 2) || features.nrows() != n || features.ncols() != names.len() {
            return Err(Error::contract(format!(
                "inconsistent point set: coords {:?}, features {:?}, {} names, {} targets",
                coords.dim(),
                features.dim(),
                names.len(),
                n
            )));
        }
        let ps = Self {
            coords,
            features,
            target,
            names,
            scale: Scale::Raw,
        };
        ps.validate()?;
        Ok(ps)
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.len() {
            if self.coords.row(r).iter().any(|v| !v.is_finite()) {
                return Err(Error::data(r, Some("lon/lat"), "non-finite coordinate"));
            }
            if let Some(c) = self.features.row(r).iter().position(|v| !v.is_finite()) {
                return Err(Error::data(r, Some(&self.names[c]), "non-finite feature"));
            }
            let t = self.target[r];
            if !(t.is_finite() && (self.scale == Scale::Model || t > 0.0)) {
                return Err(Error::data(r, Some("target"), format!("target must be finite and positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> PointSet {
        PointSet {
            coords: self.coords.select(Axis(0), idx),
            features: self.features.select(Axis(0), idx),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            names: self.names.clone(),
            scale: self.scale,
        }
    }
}

/// Reads `lon,lat,<features...>,target`. Lines starting with `#` are skipped.
pub fn load_csv(path: &Path) -> Result<PointSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let ncol = header.len();
    if ncol < 3 || header[0] != "lon" || header[1] != "lat" || header[ncol - 1] != "target" {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: format!("header must be `lon,lat,<features...>,target`, got `{}`", header.join(",")),
        });
    }
    let names: Vec<String> = header[2..ncol - 1].to_vec();
    let f = names.len();

    let mut coords = Vec::new();
    let mut feats = Vec::new();
    let mut target = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != ncol {
            return Err(Error::data(row, None, format!("expected {ncol} columns, found {}", rec.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::data(row, Some(&header[c]), format!("not a number: `{cell}`")))?;
            if !v.is_finite() {
                return Err(Error::data(row, Some(&header[c]), "non-finite value"));
            }
            match c {
                0 | 1 => coords.push(v),
                c if c == ncol - 1 => {
                    if v <= 0.0 {
                        return Err(Error::data(row, Some("target"), format!("target must be positive, got {v}")));
                    }
                    target.push(v)
                }
                _ => feats.push(v),
            }
        }
    }
    let n = target.len();
    if n == 0 {
        return Err(Error::Format {
            path: path.to_owned(),
            msg: "no data rows".into(),
        });
    }
    PointSet::new(
        Array2::from_shape_vec((n, 2), coords).expect("two coordinates per row"),
        Array2::from_shape_vec((n, f), feats).expect("f features per row"),
        target,
        names,
    )
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        let row = e.position().map_or(0, |p| p.record() as usize);
        Error::data(row, None, e.to_string())
    }
}

/// Writes the dataset CSV, preceded by `#`-prefixed comment lines.
pub fn save_csv(ps: &PointSet, path: &Path, comments: &[String]) -> Result<()> {
    let mut buf = Vec::new();
    for c in comments {
        writeln!(buf, "# {c}").expect("write to memory");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["lon".to_string(), "lat".to_string()];
        header.extend(ps.names.iter().cloned());
        header.push("target".into());
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for r in 0..ps.len() {
            let mut rec: Vec<String> = ps.coords.row(r).iter().map(|v| v.to_string()).collect();
            rec.extend(ps.features.row(r).iter().map(|v| v.to_string()));
            rec.push(ps.target[r].to_string());
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub const SYNTH_MIN_POINTS: usize = 50;
pub const SYNTH_FEATURES: usize = 5;

/// Low-frequency plane waves `(amplitude, cycles_x, cycles_y, phase)`
/// summed into each synthetic covariate.
const FEATURE_WAVES: [[(f64, f64, f64, f64); 2]; SYNTH_FEATURES] = [
    [(1.0, 0.6, 0.2, 0.3), (0.5, 0.1, 0.9, 1.7)],
    [(1.0, -0.3, 0.8, 2.1), (0.6, 1.1, 0.4, 0.2)],
    [(1.0, 0.9, -0.5, 4.0), (0.4, 0.2, 0.3, 2.6)],
    [(1.0, 0.4, 0.4, 1.2), (0.7, -0.8, 0.6, 5.1)],
    [(1.0, 0.1, -1.0, 0.8), (0.5, 0.7, 0.7, 3.3)],
];

const LOG_TARGET_MEAN: f64 = 2.5;
const FEATURE_EFFECT: [f64; SYNTH_FEATURES] = [0.30, -0.25, 0.15, 0.0, 0.10];

fn wave(waves: &[(f64, f64, f64, f64)], x: f64, y: f64) -> f64 {
    waves
        .iter()
        .map(|&(a, fx, fy, ph)| a * (TAU * (fx * x + fy * y) + ph).sin())
        .sum()
}

/// Log-scale signal that is visible only through location, not through the
/// covariates.
fn spatial_effect(x: f64, y: f64) -> f64 {
    0.45 * (TAU * 2.5 * x + 0.7).sin() * (TAU * 2.0 * y).cos() + 0.2 * (TAU * 1.5 * (x + y)).sin()
}

/// Seeded stand-in for a soil-property survey: uniform locations on the unit
/// square, five smooth covariates, and a positive heavy-tailed target
/// `exp(g(location, covariates) + noise_sd * N(0, 1))`.
pub fn synth_dataset(n: usize, seed: u64, noise_sd: f64) -> Result<PointSet> {
    if n < SYNTH_MIN_POINTS {
        return Err(Error::config("n", format!("synthetic datasets need at least {SYNTH_MIN_POINTS} points, got {n}")));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::config("noise_sd", "must be a non-negative number"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Array2::zeros((n, 2));
    let mut features = Array2::zeros((n, SYNTH_FEATURES));
    let mut target = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = rng.random();
        let y: f64 = rng.random();
        coords[[i, 0]] = x;
        coords[[i, 1]] = y;
        let mut g = LOG_TARGET_MEAN + spatial_effect(x, y);
        for (m, waves) in FEATURE_WAVES.iter().enumerate() {
            let f = wave(waves, x, y);
            features[[i, m]] = f;
            g += FEATURE_EFFECT[m] * f;
        }
        g += 0.1 * features[[i, 0]] * features[[i, 1]];
        let eps: f64 = rng.sample(StandardNormal);
        target.push((g + noise_sd * eps).exp());
    }
    let names = (1..=SYNTH_FEATURES).map(|m| format!("f{m}")).collect();
    PointSet::new(coords, features, target, names)
}
