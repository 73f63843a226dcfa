//! Grid evaluation against a reference grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Dims, Frame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("nothing to evaluate")]
    Empty,
    #[error("row {row} is outside frames of height {height}")]
    Row { row: usize, height: usize },
}

/// PSNR for signals in [0, 1]. Identical inputs give `db: None, exact: true`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Psnr {
    pub db: Option<f64>,
    pub exact: bool,
}

impl Psnr {
    fn from_mse(mse: f64) -> Self {
        if mse == 0.0 {
            Self { db: None, exact: true }
        } else {
            Self {
                db: Some(-10.0 * mse.log10()),
                exact: false,
            }
        }
    }

    /// The value in dB, with exact matches as +∞.
    pub fn value(&self) -> f64 {
        self.db.unwrap_or(f64::INFINITY)
    }

    /// Mean of several PSNRs; +∞ as soon as one of them is.
    pub fn mean(values: impl IntoIterator<Item = Psnr>) -> Option<Psnr> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut any_exact = false;
        for p in values {
            n += 1;
            match p.db {
                Some(db) => sum += db,
                None => any_exact = true,
            }
        }
        match (n, any_exact) {
            (0, _) => None,
            (_, true) => Some(Psnr { db: None, exact: true }),
            _ => Some(Psnr {
                db: Some(sum / n as f64),
                exact: false,
            }),
        }
    }

    pub fn at_least(&self, db: f64) -> bool {
        self.value() >= db
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.db {
            Some(db) => write!(f, "{db:.2} dB"),
            None => write!(f, "inf dB"),
        }
    }
}

fn check_dims(a: &Frame, b: &Frame) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64, MetricsError> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<Psnr, MetricsError> {
    Ok(Psnr::from_mse(mse(a, b)?))
}

/// Stacks image row `y` of every frame into an `F × W` image.
pub fn xt_slice(frames: &[Frame], y: usize) -> Result<Frame, MetricsError> {
    let first = frames.first().ok_or(MetricsError::Empty)?;
    let d = first.dims();
    if y >= d.height {
        return Err(MetricsError::Row {
            row: y,
            height: d.height,
        });
    }
    if let Some(f) = frames.iter().find(|f| f.dims() != d) {
        return Err(MetricsError::Shape(format!("{:?} vs {:?}", f.dims(), d)));
    }
    Ok(Frame::from_fn(
        Dims::new(frames.len(), d.width, d.channels),
        |t, x, c| frames[t].get(y, x, c),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub view: usize,
    pub time: usize,
    pub psnr: Psnr,
    pub max_abs_error: f64,
}

/// Whether each boundary line matches the reference bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryExactness {
    pub input_row: bool,
    pub first_column: bool,
    pub last_row: bool,
    pub last_column: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_views: usize,
    pub n_frames: usize,
    pub cells: Vec<CellMetrics>,
    pub per_view_mean: Vec<Psnr>,
    pub mean: Psnr,
    /// Mean over cells with `0 < view < N-1` and `0 < time < F-1`; absent
    /// when the grid has no interior.
    pub interior_mean: Option<Psnr>,
    pub boundary_exact: BoundaryExactness,
}

impl MetricsReport {
    /// Compares `[view][time]` grids of identical shape.
    pub fn compute(output: &[Vec<Frame>], reference: &[Vec<Frame>]) -> Result<Self, MetricsError> {
        let n = output.len();
        let f = output.first().map_or(0, Vec::len);
        if n == 0 || f == 0 {
            return Err(MetricsError::Empty);
        }
        if reference.len() != n || output.iter().chain(reference).any(|row| row.len() != f) {
            return Err(MetricsError::Shape(format!(
                "grids must both be {n}x{f} (reference has {} views)",
                reference.len()
            )));
        }

        let mut cells = Vec::with_capacity(n * f);
        let mut per_view_mean = Vec::with_capacity(n);
        for v in 0..n {
            let mut row = Vec::with_capacity(f);
            for t in 0..f {
                let (a, b) = (&output[v][t], &reference[v][t]);
                let p = psnr(a, b)?;
                row.push(p);
                cells.push(CellMetrics {
                    view: v,
                    time: t,
                    psnr: p,
                    max_abs_error: a.max_abs_diff(b) as f64,
                });
            }
            per_view_mean.push(Psnr::mean(row).expect("non-empty row"));
        }
        let mean = Psnr::mean(cells.iter().map(|c| c.psnr)).expect("non-empty grid");
        let interior_mean = Psnr::mean(
            cells
                .iter()
                .filter(|c| c.view > 0 && c.view + 1 < n && c.time > 0 && c.time + 1 < f)
                .map(|c| c.psnr),
        );
        let exact = |v: usize, t: usize| output[v][t].bit_eq(&reference[v][t]);
        let boundary_exact = BoundaryExactness {
            input_row: (0..f).all(|t| exact(0, t)),
            first_column: (0..n).all(|v| exact(v, 0)),
            last_row: (0..f).all(|t| exact(n - 1, t)),
            last_column: (0..n).all(|v| exact(v, f - 1)),
        };
        Ok(Self {
            n_views: n,
            n_frames: f,
            cells,
            per_view_mean,
            mean,
            interior_mean,
            boundary_exact,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_matches_closed_form() {
        let d = Dims::new(2, 2, 1);
        let a = Frame::filled(d, 0.5);
        let b = Frame::filled(d, 0.6);
        // MSE = 0.01 → 20 dB.
        let p = psnr(&a, &b).unwrap();
        assert!((p.db.unwrap() - 20.0).abs() < 1e-5);
        assert!(!p.exact);
        let same = psnr(&a, &a).unwrap();
        assert!(same.exact && same.db.is_none() && same.value().is_infinite());
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = Frame::zeros(Dims::new(2, 2, 1));
        let b = Frame::zeros(Dims::new(2, 2, 3));
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn xt_slice_layout() {
        let frames: Vec<Frame> = (0..3)
            .map(|t| Frame::from_fn(Dims::new(4, 5, 1), |r, c, _| (t * 100 + r * 10 + c) as f32))
            .collect();
        let s = xt_slice(&frames, 2).unwrap();
        assert_eq!(s.dims(), Dims::new(3, 5, 1));
        assert_eq!(s.get(1, 4, 0), 124.0);
        assert!(xt_slice(&frames, 4).is_err());
        assert!(xt_slice(&[], 0).is_err());
    }

    #[test]
    fn report_aggregates() {
        let d = Dims::new(2, 2, 1);
        let reference: Vec<Vec<Frame>> = (0..3)
            .map(|_| (0..3).map(|_| Frame::filled(d, 0.5)).collect())
            .collect();
        let mut output = reference.clone();
        output[1][1] = Frame::filled(d, 0.6);
        output[2][2] = Frame::filled(d, 0.51);
        let r = MetricsReport::compute(&output, &reference).unwrap();
        assert_eq!(r.cells.len(), 9);
        assert!((r.interior_mean.unwrap().db.unwrap() - 20.0).abs() < 1e-5);
        assert!(r.mean.exact);
        assert!(r.per_view_mean.iter().all(|p| p.exact));
        assert_eq!(
            r.boundary_exact,
            BoundaryExactness {
                input_row: true,
                first_column: true,
                last_row: false,
                last_column: false,
            }
        );
    }

    #[test]
    fn mean_of_finite_values() {
        let m = Psnr::mean([Psnr::from_mse(0.01), Psnr::from_mse(0.0001)]).unwrap();
        assert!((m.db.unwrap() - 30.0).abs() < 1e-9);
        assert!(Psnr::mean([]).is_none());
    }
}
