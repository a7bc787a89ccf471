//! Coordinate positional encoder.
//!
//! Coordinates pass through a fixed bank of multi-scale sinusoids and then a
//! trainable two-layer network (`4G -> embed -> embed`, relu in between).
//! Wavelengths are spaced geometrically between `sigma_min` and `sigma_max`.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Tensor};
use crate::error::{Error, Result};
use crate::init;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosEncoder {
    pub n_scales: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Encoder parameters bound to a tape for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PosEncoderVars {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl PosEncoderVars {
    pub fn tensors(&self) -> Vec<Tensor> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

fn check_scales(n_scales: usize, sigma_min: f64, sigma_max: f64) -> Result<()> {
    if n_scales == 0 {
        return Err(Error::config("n_scales", "must be at least 1"));
    }
    if !(sigma_min > 0.0 && sigma_min < sigma_max && sigma_max.is_finite()) {
        return Err(Error::config(
            "sigma_min",
            format!("need 0 < sigma_min < sigma_max, got {sigma_min} and {sigma_max}"),
        ));
    }
    Ok(())
}

impl PosEncoder {
    pub fn new(
        n_scales: usize,
        sigma_min: f64,
        sigma_max: f64,
        embed_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        check_scales(n_scales, sigma_min, sigma_max)?;
        let n_feat = 4 * n_scales;
        Ok(Self {
            n_scales,
            sigma_min,
            sigma_max,
            w1: init::uniform(rng, n_feat, embed_dim, n_feat),
            b1: init::uniform(rng, 1, embed_dim, n_feat),
            w2: init::uniform(rng, embed_dim, embed_dim, embed_dim),
            b2: init::uniform(rng, 1, embed_dim, embed_dim),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        wavelengths(self.n_scales, self.sigma_min, self.sigma_max)
    }

    pub fn parameters(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn bind(&self, tape: &mut Tape) -> PosEncoderVars {
        PosEncoderVars {
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            w2: tape.param(self.w2.clone()),
            b2: tape.param(self.b2.clone()),
        }
    }

    /// Embedding of each coordinate row, recorded on `tape`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        vars: &PosEncoderVars,
        coords: ArrayView2<'_, f64>,
    ) -> Result<Tensor> {
        let feats = sinusoidal_features(coords, self)?;
        let x = tape.constant(feats);
        let h = tape.matmul(x, vars.w1)?;
        let h = tape.add(h, vars.b1)?;
        let h = tape.relu(h);
        let out = tape.matmul(h, vars.w2)?;
        tape.add(out, vars.b2)
    }
}

pub fn wavelengths(n_scales: usize, sigma_min: f64, sigma_max: f64) -> Vec<f64> {
    if n_scales == 1 {
        return vec![sigma_min];
    }
    let ratio = sigma_max / sigma_min;
    (0..n_scales)
        .map(|g| sigma_min * ratio.powf(g as f64 / (n_scales - 1) as f64))
        .collect()
}

/// `[sin(x/s), cos(x/s), sin(y/s), cos(y/s)]` for every wavelength `s`.
pub fn sinusoidal_features(coords: ArrayView2<'_, f64>, params: &PosEncoder) -> Result<Array2<f64>> {
    check_scales(params.n_scales, params.sigma_min, params.sigma_max)?;
    if coords.ncols() != 2 {
        return Err(Error::Dimension {
            op: "sinusoidal_features",
            left: (coords.nrows(), 2),
            right: coords.dim(),
        });
    }
    let sigmas = params.wavelengths();
    let mut out = Array2::zeros((coords.nrows(), 4 * sigmas.len()));
    for (r, row) in coords.rows().into_iter().enumerate() {
        if !(row[0].is_finite() && row[1].is_finite()) {
            return Err(Error::data(r, None, "non-finite coordinate"));
        }
        for (g, s) in sigmas.iter().enumerate() {
            let (sx, cx) = (row[0] / s).sin_cos();
            let (sy, cy) = (row[1] / s).sin_cos();
            out[[r, 4 * g]] = sx;
            out[[r, 4 * g + 1]] = cx;
            out[[r, 4 * g + 2]] = sy;
            out[[r, 4 * g + 3]] = cy;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn encoder(g: usize, lo: f64, hi: f64, embed: usize, seed: u64) -> PosEncoder {
        PosEncoder::new(g, lo, hi, embed, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn origin_alternates_zero_one() {
        let p = encoder(16, 0.01, 1.0, 8, 0);
        let f = sinusoidal_features(array![[0.0, 0.0]].view(), &p).unwrap();
        for (i, v) in f.iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn single_scale_quarter_turn() {
        let p = encoder(1, 1.0, 2.0, 4, 0);
        assert_eq!(p.wavelengths(), vec![1.0]);
        let f = sinusoidal_features(array![[PI / 2.0, 0.0]].view(), &p).unwrap();
        assert_eq!(f[[0, 0]], 1.0);
        assert!(f[[0, 1]].abs() < 1e-12);
        assert_eq!(f[[0, 2]], 0.0);
        assert_eq!(f[[0, 3]], 1.0);
    }

    #[test]
    fn wavelengths_are_geometric() {
        let w = wavelengths(3, 0.01, 1.0);
        assert!((w[0] - 0.01).abs() < 1e-15);
        assert!((w[1] - 0.1).abs() < 1e-15);
        assert!((w[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_coordinates_give_identical_rows() {
        let p = encoder(5, 0.05, 2.0, 4, 0);
        let f = sinusoidal_features(array![[0.3, 0.7], [0.1, 0.2], [0.3, 0.7]].view(), &p).unwrap();
        assert_eq!(f.row(0), f.row(2));
    }

    #[test]
    fn periodic_per_scale() {
        let p = encoder(4, 0.1, 3.0, 4, 0);
        let base = array![[0.37, -0.81]];
        let f0 = sinusoidal_features(base.view(), &p).unwrap();
        for (g, s) in p.wavelengths().iter().enumerate() {
            let period = 2.0 * PI * s;
            let shifted = array![[0.37 + period, -0.81 - period]];
            let f1 = sinusoidal_features(shifted.view(), &p).unwrap();
            for c in 4 * g..4 * g + 4 {
                assert!((f0[[0, c]] - f1[[0, c]]).abs() < 1e-9, "scale {g} col {c}");
            }
        }
    }

    #[test]
    fn invalid_scales_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(PosEncoder::new(0, 0.1, 1.0, 4, &mut rng).is_err());
        assert!(PosEncoder::new(2, 1.0, 1.0, 4, &mut rng).is_err());
        assert!(PosEncoder::new(2, -1.0, 1.0, 4, &mut rng).is_err());
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let mut p = encoder(3, 0.1, 1.0, 5, 1);
        for m in p.parameters_mut() {
            m.fill(0.0);
        }
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let e = p
            .encode(&mut tape, &vars, array![[0.1, 0.2], [0.9, 0.4]].view())
            .unwrap();
        assert!(tape.value(e).iter().all(|&v| v == 0.0));
        assert_eq!(e.shape(), (2, 5));
    }

    #[test]
    fn distant_points_differ() {
        let p = encoder(16, 0.01, 1.0, 8, 2);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let e = p
            .encode(&mut tape, &vars, array![[0.0, 0.0], [40.0, -25.0]].view())
            .unwrap();
        let v = tape.value(e);
        assert_ne!(v.row(0), v.row(1));
    }

    #[test]
    fn encode_is_pure() {
        let p = encoder(6, 0.01, 1.0, 8, 3);
        let c = array![[0.2, 0.4], [0.6, 0.1]];
        let run = || {
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape);
            let e = p.encode(&mut tape, &vars, c.view()).unwrap();
            tape.value(e).clone()
        };
        assert_eq!(run(), run());
    }
}
