//! Fit artifacts on disk: `params.bin` holds beta0, B, Gamma and U as
//! little-endian f64 in row-major order, `params.json` describes the layout,
//! and CSV mirrors are written for inspection only.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{GlvmError, Result};
use crate::families::FamilyKind;
use crate::model::ParamSet;

const MAGIC: &[u8; 8] = b"GLVMPAR1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub k: usize,
    pub family: FamilyKind,
    pub lambda: f64,
    pub seed: u64,
    pub layout: Vec<String>,
    pub encoding: String,
}

impl ParamHeader {
    pub fn new(params: &ParamSet, family: FamilyKind, lambda: f64, seed: u64) -> Self {
        ParamHeader {
            n: params.u.nrows(),
            q: params.beta0.len(),
            p: params.b.ncols(),
            k: params.k(),
            family,
            lambda,
            seed,
            layout: ["beta0", "B", "Gamma", "U"].iter().map(|s| s.to_string()).collect(),
            encoding: "f64 little-endian, row-major, after an 8-byte magic".into(),
        }
    }
}

fn push_all(buf: &mut Vec<u8>, it: impl Iterator<Item = f64>) {
    for v in it {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn write_csv(path: &Path, m: &Array2<f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|c| format!("{prefix}{c}")))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the parameter set under `dir`, creating it if needed.
pub fn save_params(dir: &Path, params: &ParamSet, header: &ParamHeader) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut buf = Vec::with_capacity(8 + 8 * (params.beta0.len() + params.b.len() + params.gamma.len() + params.u.len()));
    buf.extend_from_slice(MAGIC);
    push_all(&mut buf, params.beta0.iter().copied());
    push_all(&mut buf, params.b.iter().copied());
    push_all(&mut buf, params.gamma.iter().copied());
    push_all(&mut buf, params.u.iter().copied());
    fs::write(dir.join("params.bin"), buf)?;
    fs::write(dir.join("params.json"), serde_json::to_string_pretty(header)?)?;
    write_csv(&dir.join("beta0.csv"), &params.beta0.clone().insert_axis(ndarray::Axis(1)), "beta0_")?;
    write_csv(&dir.join("B.csv"), &params.b, "x")?;
    write_csv(&dir.join("Gamma.csv"), &params.gamma, "u")?;
    write_csv(&dir.join("U.csv"), &params.u, "u")?;
    Ok(())
}

/// Reads a parameter set written by [`save_params`].
pub fn load_params(dir: &Path) -> Result<(ParamSet, ParamHeader)> {
    let header: ParamHeader = serde_json::from_str(&fs::read_to_string(dir.join("params.json"))?)?;
    let bytes = fs::read(dir.join("params.bin"))?;
    let (n, q, p, k) = (header.n, header.q, header.p, header.k);
    let count = q + q * p + q * k + n * k;
    if bytes.len() != 8 + 8 * count || &bytes[..8] != MAGIC {
        return Err(GlvmError::InvalidData(format!(
            "{}: expected {} bytes of parameters, found {}",
            dir.join("params.bin").display(),
            8 + 8 * count,
            bytes.len()
        )));
    }
    let vals: Vec<f64> = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut at = 0;
    let mut take = |len: usize| {
        let s = vals[at..at + len].to_vec();
        at += len;
        s
    };
    let beta0 = Array1::from(take(q));
    let shape_err = |e: ndarray::ShapeError| GlvmError::InvalidData(e.to_string());
    let b = Array2::from_shape_vec((q, p), take(q * p)).map_err(shape_err)?;
    let gamma = Array2::from_shape_vec((q, k), take(q * k)).map_err(shape_err)?;
    let u = Array2::from_shape_vec((n, k), take(n * k)).map_err(shape_err)?;
    Ok((ParamSet { beta0, b, gamma, u }, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_bit_exact(n in 1usize..6, q in 1usize..5, p in 0usize..4, k in 0usize..3, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || f64::from_bits(rng.random::<u64>() & !(0x7ffu64 << 52) | (rng.random_range(1000u64..1040) << 52));
            let params = ParamSet {
                beta0: Array1::from_shape_fn(q, |_| draw()),
                b: Array2::from_shape_fn((q, p), |_| draw()),
                gamma: Array2::from_shape_fn((q, k), |_| draw()),
                u: Array2::from_shape_fn((n, k), |_| draw()),
            };
            let dir = tempfile::tempdir().unwrap();
            let h = ParamHeader::new(&params, FamilyKind::BernoulliLogit, 0.1, 7);
            save_params(dir.path(), &params, &h).unwrap();
            let (back, h2) = load_params(dir.path()).unwrap();
            prop_assert_eq!(h, h2);
            let bits = |p: &ParamSet| -> Vec<u64> {
                p.beta0.iter().chain(p.b.iter()).chain(p.gamma.iter()).chain(p.u.iter()).map(|v| v.to_bits()).collect()
            };
            prop_assert_eq!(bits(&params), bits(&back));
            prop_assert_eq!(back.u.dim(), (n, k));
        }
    }

    #[test]
    fn truncated_file_is_rejected() {
        let params = ParamSet::zeros(3, 2, 1, 1);
        let dir = tempfile::tempdir().unwrap();
        save_params(dir.path(), &params, &ParamHeader::new(&params, FamilyKind::PoissonLog, 0.0, 0)).unwrap();
        let bin = dir.path().join("params.bin");
        let mut b = fs::read(&bin).unwrap();
        b.pop();
        fs::write(&bin, b).unwrap();
        assert!(load_params(dir.path()).is_err());
    }
}
