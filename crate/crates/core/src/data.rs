//! Synthetic regression data `Y = W*·X` and its spectral summary.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{matmul, singular_values, Matrix};
use crate::metafile::Meta;
use crate::rng::GaussianStream;

/// Singular values below `RANK_TOL · σ₁` count as zero.
pub const RANK_TOL: f64 = 1e-10;

const STREAM_INPUTS: u64 = 0xDA7A_0001;
const STREAM_TEACHER: u64 = 0xDA7A_0002;

/// Spectral statistics of the input matrix (and teacher, when known).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataStats {
    /// Numerical rank of X.
    pub rank: usize,
    /// λ_max(XᵀX) / λ_r(XᵀX).
    pub kappa: f64,
    /// ‖X‖_F² / ‖X‖².
    pub stable_rank: f64,
    /// σ_r(X), the smallest nonzero singular value.
    pub sigma_min_x: f64,
    pub norm_x: f64,
    pub frob_x: f64,
    pub norm_wstar: Option<f64>,
}

/// Computes [`DataStats`] for `x`; an all-zero `x` is rejected.
pub fn data_stats(x: &Matrix, wstar: Option<&Matrix>) -> Result<DataStats> {
    let sv = singular_values(x);
    let top = sv[0];
    if !(top > 0.0) || !top.is_finite() {
        return Err(Error::invalid("input matrix has no nonzero singular value"));
    }
    let rank = sv.iter().take_while(|&&s| s > RANK_TOL * top).count();
    let sigma_min = sv[rank - 1];
    let frob = x.frobenius_norm();
    Ok(DataStats {
        rank,
        kappa: (top / sigma_min).powi(2),
        stable_rank: (frob / top).powi(2),
        sigma_min_x: sigma_min,
        norm_x: top,
        frob_x: frob,
        norm_wstar: wstar.map(Matrix::spectral_norm),
    })
}

/// Training inputs `X` (d_x × n), targets `Y` (d_y × n) and, for generated
/// data, the teacher `W*` with `Y = W*·X`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Matrix,
    wstar: Option<Matrix>,
    stats: DataStats,
    seed: Option<u64>,
    normalized: bool,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, wstar: Option<Matrix>) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(Error::invalid(format!(
                "X has {} columns but Y has {}",
                x.cols(),
                y.cols()
            )));
        }
        if let Some(w) = &wstar {
            if w.shape() != (y.rows(), x.rows()) {
                return Err(Error::invalid(format!(
                    "W* is {:?}, expected {:?}",
                    w.shape(),
                    (y.rows(), x.rows())
                )));
            }
            let resid = matmul(w, &x)?.sub(&y)?.frobenius_norm();
            if resid > 1e-10 * y.frobenius_norm() {
                return Err(Error::invalid(format!(
                    "targets are not realizable by W* (residual {resid:e})"
                )));
            }
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("non-finite data entries"));
        }
        let stats = data_stats(&x, wstar.as_ref())?;
        Ok(Dataset {
            x,
            y,
            wstar,
            stats,
            seed: None,
            normalized: false,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn wstar(&self) -> Option<&Matrix> {
        self.wstar.as_ref()
    }

    pub fn stats(&self) -> &DataStats {
        &self.stats
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn d_x(&self) -> usize {
        self.x.rows()
    }

    pub fn d_y(&self) -> usize {
        self.y.rows()
    }

    pub fn n(&self) -> usize {
        self.x.cols()
    }

    /// Rescales to ‖X‖_F = ‖Y‖_F = 1, adjusting W* so the data stay
    /// realizable.
    pub fn normalized(&self) -> Result<Dataset> {
        let fx = self.x.frobenius_norm();
        let fy = self.y.frobenius_norm();
        if fy == 0.0 {
            return Err(Error::invalid("cannot normalize all-zero targets"));
        }
        let x = self.x.scale(1.0 / fx);
        let y = self.y.scale(1.0 / fy);
        let wstar = self.wstar.as_ref().map(|w| w.scale(fx / fy));
        let mut ds = Dataset::new(x, y, wstar)?;
        ds.seed = self.seed;
        ds.normalized = true;
        Ok(ds)
    }

    /// Writes `X.mat`, `Y.mat`, `Wstar.mat` (when known) and `meta`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.x.save(&dir.join("X.mat"))?;
        self.y.save(&dir.join("Y.mat"))?;
        if let Some(w) = &self.wstar {
            w.save(&dir.join("Wstar.mat"))?;
        }
        let mut meta = Meta::new();
        meta.set("d_x", self.d_x());
        meta.set("d_y", self.d_y());
        meta.set("n", self.n());
        meta.set("seed", self.seed.map_or("none".to_string(), |s| s.to_string()));
        meta.set("normalized", u8::from(self.normalized));
        meta.save(&dir.join("meta"))
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let x = Matrix::load(&dir.join("X.mat"))?;
        let y = Matrix::load(&dir.join("Y.mat"))?;
        let wpath = dir.join("Wstar.mat");
        let wstar = if wpath.exists() {
            Some(Matrix::load(&wpath)?)
        } else {
            None
        };
        let mut ds = Dataset::new(x, y, wstar)?;
        let meta_path = dir.join("meta");
        if meta_path.exists() {
            let meta = Meta::load(&meta_path)?;
            for (key, actual) in [("d_x", ds.d_x()), ("d_y", ds.d_y()), ("n", ds.n())] {
                if let Some(v) = meta.get_parsed::<usize>(key, &meta_path)? {
                    if v != actual {
                        return Err(Error::parse(
                            &meta_path,
                            format!("{key}={v} disagrees with matrix files ({actual})"),
                        ));
                    }
                }
            }
            ds.seed = match meta.get("seed") {
                Some("none") | None => None,
                Some(_) => meta.get_parsed::<u64>("seed", &meta_path)?,
            };
            ds.normalized = meta.get_parsed::<u8>("normalized", &meta_path)?.unwrap_or(0) == 1;
        }
        Ok(ds)
    }
}

/// Draws X (d_x × n) and W* (d_y × d_x) with iid N(0, 1) entries and sets
/// `Y = W*·X`.
pub fn gen_synthetic(d_x: usize, d_y: usize, n: usize, seed: u64) -> Result<Dataset> {
    if d_x == 0 || d_y == 0 || n == 0 {
        return Err(Error::invalid(format!(
            "dataset dimensions must be positive (d_x={d_x}, d_y={d_y}, n={n})"
        )));
    }
    let x = GaussianStream::derived(seed, &[STREAM_INPUTS]).matrix(d_x, n, 1.0);
    let wstar = GaussianStream::derived(seed, &[STREAM_TEACHER]).matrix(d_y, d_x, 1.0);
    let y = matmul(&wstar, &x)?;
    let mut ds = Dataset::new(x, y, Some(wstar))?;
    ds.seed = Some(seed);
    Ok(ds)
}

/// Replaces (X, Y) by (UΣ, Y·V) from the compact SVD `X = UΣVᵀ`, leaving
/// `r` columns. The squared loss of every W changes by the same constant.
pub fn reduce_wlog(ds: &Dataset) -> Result<Dataset> {
    let wstar = ds
        .wstar()
        .ok_or_else(|| Error::invalid("reduce_wlog needs realizable data with a known W*"))?;
    let rank = ds.stats().rank;
    if rank == 0 {
        return Err(Error::invalid("rank-zero input"));
    }
    let svd = ds.x().as_dmatrix().clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep = &order[..rank];

    let d_x = ds.d_x();
    let mut x_red = DMatrix::zeros(d_x, rank);
    let mut v = DMatrix::zeros(ds.n(), rank);
    for (col, &k) in keep.iter().enumerate() {
        let s = svd.singular_values[k];
        x_red.set_column(col, &(u.column(k) * s));
        v.set_column(col, &v_t.row(k).transpose());
    }
    let x_red = Matrix::from_dmatrix(x_red)?;
    let y_red = Matrix::from_dmatrix(ds.y().as_dmatrix() * v)?;
    let resid = matmul(wstar, &x_red)?.sub(&y_red)?.frobenius_norm();
    if resid >= 1e-9 * ds.y().frobenius_norm().max(1.0) {
        return Err(Error::Numerical(format!(
            "reduced data lost realizability (residual {resid:e})"
        )));
    }
    let mut out = Dataset::new(x_red, y_red, Some(wstar.clone()))?;
    out.seed = ds.seed;
    out.normalized = ds.normalized;
    Ok(out)
}
