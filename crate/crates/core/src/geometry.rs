//! Nonparametric learning of utility-gradient fields along trajectories.
//!
//! The base point is `z = (x, u)` and the transported field is
//! `ξ = ∇_u U(z)`. Between consecutive samples the change of each component
//! is modelled as `δξ_j ≈ Δzᵀd_j + ΔzᵀΓ_jξ` with locally constant
//! coefficients; a quadratic utility makes `ξ` affine in `z`, so the fitted
//! `Γ_j` vanish (a flat connection).

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::linalg::{lstsq, Matrix, Vector};
use crate::model::LinearDynamics;
use crate::parametric::{format_float, Observation};

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// `(x, u)`, length `2d`.
    pub z: Vector,
    /// Observed `∇_u U` at `z`, length `d`.
    pub xi: Vector,
}

impl TrajectorySample {
    pub fn new(x: &Vector, u: &Vector, xi: Vector) -> Result<Self> {
        if x.len() != u.len() || xi.len() != u.len() {
            return Err(Error::dims("trajectory sample", u.len(), xi.len()));
        }
        let mut z = Vector::zeros(2 * u.len());
        z.rows_mut(0, x.len()).copy_from(x);
        z.rows_mut(x.len(), u.len()).copy_from(u);
        Ok(Self { z, xi })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

/// Per-component transport coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectionModel {
    /// `d_j`, each of length `2d`.
    pub linear: Vec<Vector>,
    /// `Γ_j`, each `2d × d`, acting as `ΔzᵀΓ_jξ`.
    pub christoffel: Vec<Matrix>,
    /// Frobenius norm of the stacked fit residual.
    pub residual: f64,
    pub rank: usize,
    pub rows: usize,
}

impl ConnectionModel {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn max_christoffel_norm(&self) -> f64 {
        self.christoffel.iter().map(|g| g.norm()).fold(0.0, f64::max)
    }

    /// Rows `d_jᵀ` stacked into a `d × 2d` matrix.
    pub fn linear_matrix(&self) -> Matrix {
        let d = self.dim();
        Matrix::from_fn(d, 2 * d, |j, a| self.linear[j][a])
    }

    /// Predicted `δξ` for a step `dz` from field value `xi`.
    pub fn predict_delta(&self, xi: &Vector, dz: &Vector) -> Result<Vector> {
        let d = self.dim();
        if xi.len() != d {
            return Err(Error::dims("transported field", d, xi.len()));
        }
        if dz.len() != 2 * d {
            return Err(Error::dims("base displacement", 2 * d, dz.len()));
        }
        Ok(Vector::from_fn(d, |j, _| dz.dot(&self.linear[j]) + (dz.transpose() * &self.christoffel[j] * xi)[(0, 0)]))
    }
}

fn regressor(dz: &Vector, xi: &Vector) -> Vec<f64> {
    let (n2, d) = (dz.len(), xi.len());
    let mut row = Vec::with_capacity(n2 + n2 * d);
    row.extend(dz.iter().copied());
    // Γ_j stored row-major: entry (a, b) multiplies Δz_a·ξ_b.
    for a in 0..n2 {
        for b in 0..d {
            row.push(dz[a] * xi[b]);
        }
    }
    row
}

/// Least-squares fit of the transport coefficients over consecutive samples.
///
/// Each component is fitted separately against the shared regressors
/// `(Δz, Δz ⊗ ξ)`, which needs at least `2d + 2d²` difference rows of full rank.
pub fn fit_connection(samples: &[TrajectorySample]) -> Result<ConnectionModel> {
    let d = samples.first().map_or(0, |s| s.dim());
    if d == 0 {
        return Err(Error::InvalidParameter("no trajectory samples".into()));
    }
    for s in samples {
        if s.dim() != d || s.z.len() != 2 * d {
            return Err(Error::dims("trajectory sample", d, s.dim()));
        }
    }
    let unknowns = 2 * d + 2 * d * d;
    let rows = samples.len().saturating_sub(1);
    if rows < unknowns {
        return Err(Error::RankDeficient { context: "connection fit".into(), rank: rows, required: unknowns, unknowns });
    }
    let mut design = Matrix::zeros(rows, unknowns);
    let mut targets = Matrix::zeros(rows, d);
    for (i, pair) in samples.windows(2).enumerate() {
        let dz = &pair[1].z - &pair[0].z;
        let reg = regressor(&dz, &pair[0].xi);
        design.row_mut(i).copy_from_slice(&reg);
        targets.row_mut(i).copy_from(&(&pair[1].xi - &pair[0].xi).transpose());
    }
    let (theta, rank) = lstsq(&design, &targets);
    let residual = (&design * &theta - &targets).norm();
    let linear = (0..d).map(|j| theta.column(j).rows(0, 2 * d).into_owned()).collect();
    let christoffel = (0..d)
        .map(|j| Matrix::from_row_slice(2 * d, d, theta.column(j).rows(2 * d, 2 * d * d).into_owned().as_slice()))
        .collect();
    if rank < unknowns {
        return Err(Error::RankDeficient { context: "connection fit".into(), rank, required: unknowns, unknowns });
    }
    Ok(ConnectionModel { linear, christoffel, residual, rank, rows })
}

/// Fits one model per window of `window` consecutive samples, advancing by
/// `stride`.
pub fn fit_connection_windows(
    samples: &[TrajectorySample],
    window: usize,
    stride: usize,
) -> Result<Vec<ConnectionModel>> {
    if window < 2 || stride == 0 {
        return Err(Error::InvalidParameter("window needs ≥ 2 samples and a positive stride".into()));
    }
    if samples.len() < window {
        return Err(Error::InvalidParameter(format!("{} samples cannot fill a window of {window}", samples.len())));
    }
    (0..=samples.len() - window).step_by(stride).map(|s| fit_connection(&samples[s..s + window])).collect()
}

/// Default window length for locally constant coefficients.
pub const DEFAULT_WINDOW: usize = 50;

/// `ξ + [dzᵀd_j + dzᵀΓ_jξ]_j`.
pub fn transport(model: &ConnectionModel, z: &Vector, xi: &Vector, dz: &Vector) -> Result<Vector> {
    if z.len() != 2 * model.dim() {
        return Err(Error::dims("base point", 2 * model.dim(), z.len()));
    }
    Ok(xi + model.predict_delta(xi, dz)?)
}

/// Trajectory CSV: the observation columns plus `delta`, which is 1 when a
/// row continues the previous one.
pub fn write_trajectory_csv<W: Write>(samples: &[TrajectorySample], writer: W) -> Result<()> {
    let d = samples.first().map_or(0, |s| s.dim());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "n".to_string()];
    for prefix in ["x", "u", "p"] {
        header.extend((0..d).map(|i| format!("{prefix}_{i}")));
    }
    header.push("delta".into());
    w.write_record(&header)?;
    for (t, s) in samples.iter().enumerate() {
        let mut rec = vec![t.to_string(), "0".to_string()];
        rec.extend(s.z.iter().chain(s.xi.iter()).map(|v| format_float(*v)));
        rec.push(if t == 0 { "0" } else { "1" }.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Splits a trajectory CSV into runs of consecutive samples.
pub fn read_trajectory_csv<R: Read>(reader: R) -> Result<Vec<Vec<TrajectorySample>>> {
    let mut rd = csv::Reader::from_reader(reader);
    let width = rd.headers()?.len();
    if width < 6 || (width - 3) % 3 != 0 {
        return Err(Error::Malformed { row: 0, message: format!("header has {width} columns") });
    }
    let d = (width - 3) / 3;
    let mut runs: Vec<Vec<TrajectorySample>> = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Malformed { row, message: e.to_string() })?;
        let parse = |k: usize| {
            rec[k].trim().parse::<f64>().map_err(|_| Error::Malformed { row, message: format!("bad number in column {k}") })
        };
        let values = (2..2 + 3 * d).map(parse).collect::<Result<Vec<_>>>()?;
        let sample = TrajectorySample {
            z: Vector::from_column_slice(&values[..2 * d]),
            xi: Vector::from_column_slice(&values[2 * d..]),
        };
        match (rec[width - 1].trim(), runs.last_mut()) {
            ("1", Some(run)) => run.push(sample),
            ("0", _) | ("1", None) => runs.push(vec![sample]),
            (other, _) => return Err(Error::Malformed { row, message: format!("delta flag `{other}`") }),
        }
    }
    Ok(runs)
}

/// Kernel model of a decomposable gradient field
/// `∇_u U(x, u) = Bᵀ∇U^x(x') + ∇U^u(u)` with
/// `∇U^x(x) = Σ k(x, x_i)c^x_i` and `∇U^u(u) = Σ k(u, u_i)c^u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelFieldModel {
    pub centers_x: Vec<Vector>,
    pub coeff_x: Vec<Vector>,
    pub centers_u: Vec<Vector>,
    pub coeff_u: Vec<Vector>,
    pub sigma: f64,
    pub ridge: f64,
    /// Constant added to `∇U^x`.
    pub offset_x: Vector,
    /// Constant added to `∇U^u`.
    pub offset_u: Vector,
    b: Matrix,
}

fn gaussian(a: &Vector, b: &Vector, sigma: f64) -> f64 {
    (-(a - b).norm_squared() / (2.0 * sigma * sigma)).exp()
}

fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) })
}

/// Median of all pairwise distances among the `x` centers and among the
/// `u` centers.
pub fn median_pairwise_distance(xs: &[Vector], us: &[Vector]) -> Option<f64> {
    let mut dists = Vec::new();
    for set in [xs, us] {
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                dists.push((&set[i] - &set[j]).norm());
            }
        }
    }
    median(dists)
}

impl KernelFieldModel {
    pub fn grad_x_part(&self, x: &Vector) -> Vector {
        let mut g = self.offset_x.clone();
        for (c, coef) in self.centers_x.iter().zip(&self.coeff_x) {
            g += coef * gaussian(x, c, self.sigma);
        }
        g
    }

    pub fn grad_u_part(&self, u: &Vector) -> Vector {
        let mut g = self.offset_u.clone();
        for (c, coef) in self.centers_u.iter().zip(&self.coeff_u) {
            g += coef * gaussian(u, c, self.sigma);
        }
        g
    }

    /// Moves `v` from the state part to the action part; predictions are unchanged.
    pub fn gauge_shift(&self, v: &Vector) -> Self {
        let mut out = self.clone();
        out.offset_x += v;
        out.offset_u -= self.b.transpose() * v;
        out
    }
}

/// Ridge regression of observed prices onto the decomposable kernel field.
///
/// With `K_ij = k(x_i, x_j)BᵀB + k(u_i, u_j)I` the coefficients solve
/// `(K + ridge·I)α = p`, and `c^x_i = Bα_i`, `c^u_i = α_i`. `sigma` defaults to
/// the median pairwise center distance and `ridge` to `1e-8·tr(K)`.
pub fn fit_decomposable(
    samples: &[Observation],
    dynamics: &LinearDynamics,
    sigma: Option<f64>,
    ridge: Option<f64>,
) -> Result<KernelFieldModel> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::InvalidParameter(format!("kernel fit needs ≥ 2 samples, got {m}")));
    }
    let d = dynamics.dim();
    for s in samples {
        if s.x.len() != d || s.u.len() != d || s.p.len() != d {
            return Err(Error::dims("kernel sample", d, s.u.len()));
        }
    }
    let centers_x: Vec<Vector> = samples.iter().map(|s| dynamics.predict(&s.x, &s.u)).collect();
    let centers_u: Vec<Vector> = samples.iter().map(|s| s.u.clone()).collect();
    let sigma = match sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::InvalidParameter(format!("bandwidth must be positive, got {s}"))),
        None => median_pairwise_distance(&centers_x, &centers_u)
            .filter(|s| *s > 0.0)
            .ok_or_else(|| Error::Degenerate("all kernel centers coincide".into()))?,
    };
    let b = dynamics.b();
    let btb = b.transpose() * b;
    let eye = Matrix::identity(d, d);
    let mut gram = Matrix::zeros(m * d, m * d);
    for i in 0..m {
        for j in 0..m {
            let block = &btb * gaussian(&centers_x[i], &centers_x[j], sigma) + &eye * gaussian(&centers_u[i], &centers_u[j], sigma);
            gram.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    let ridge = match ridge {
        Some(r) if r >= 0.0 && r.is_finite() => r,
        Some(r) => return Err(Error::InvalidParameter(format!("ridge must be non-negative, got {r}"))),
        None => 1e-8 * gram.trace(),
    };
    let mut system = gram;
    for k in 0..m * d {
        system[(k, k)] += ridge;
    }
    let mut rhs = Vector::zeros(m * d);
    for (i, s) in samples.iter().enumerate() {
        rhs.rows_mut(i * d, d).copy_from(&s.p);
    }
    let alpha = system.lu().solve(&rhs).ok_or(Error::Singular("regularized kernel system"))?;
    if !crate::linalg::all_finite(alpha.as_slice()) {
        return Err(Error::Singular("regularized kernel system"));
    }
    let coeff_u: Vec<Vector> = (0..m).map(|i| alpha.rows(i * d, d).into_owned()).collect();
    let coeff_x = coeff_u.iter().map(|a| b * a).collect();
    Ok(KernelFieldModel {
        centers_x,
        coeff_x,
        centers_u,
        coeff_u,
        sigma,
        ridge,
        offset_x: Vector::zeros(d),
        offset_u: Vector::zeros(d),
        b: b.clone(),
    })
}

/// `Bᵀ∇̂U^x(x') + ∇̂U^u(u)` at the next state `x' = Ax + Bu`.
pub fn predict_field(model: &KernelFieldModel, dynamics: &LinearDynamics, x: &Vector, u: &Vector) -> Vector {
    let x_next = dynamics.predict(x, u);
    dynamics.b().transpose() * model.grad_x_part(&x_next) + model.grad_u_part(u)
}

/// Mean squared residual of the fitted field on `samples`.
pub fn kernel_fit_residual(model: &KernelFieldModel, dynamics: &LinearDynamics, samples: &[Observation]) -> f64 {
    let total: f64 = samples.iter().map(|s| (predict_field(model, dynamics, &s.x, &s.u) - &s.p).norm_squared()).sum();
    total / samples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delta_model(d: usize, t: &Matrix) -> ConnectionModel {
        ConnectionModel {
            linear: (0..d).map(|j| t.row(j).transpose()).collect(),
            christoffel: vec![Matrix::zeros(2 * d, d); d],
            residual: 0.0,
            rank: 0,
            rows: 0,
        }
    }

    #[test]
    fn zero_displacement_leaves_field() {
        let t = Matrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let m = delta_model(1, &t);
        let xi = Vector::from_element(1, 0.7);
        assert_eq!(transport(&m, &Vector::zeros(2), &xi, &Vector::zeros(2)).unwrap(), xi);
    }

    #[test]
    fn flat_model_is_linear_transport() {
        let t = Matrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0]);
        let m = delta_model(2, &t);
        let xi = Vector::from_vec(vec![1.0, -2.0]);
        let dz = Vector::from_vec(vec![0.1, 0.2, -0.3, 0.4]);
        let out = transport(&m, &Vector::zeros(4), &xi, &dz).unwrap();
        assert!((out - (&xi + &t * &dz)).amax() < 1e-15);
    }

    #[test]
    fn too_few_rows_reported() {
        let s = TrajectorySample::new(&Vector::zeros(1), &Vector::zeros(1), Vector::zeros(1)).unwrap();
        assert!(matches!(fit_connection(&[s.clone(), s]), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn duplicate_centers_without_ridge_are_singular() {
        let dynamics =
            LinearDynamics::deterministic(Matrix::identity(1, 1), Matrix::identity(1, 1)).unwrap();
        let obs = Observation {
            t: 0,
            agent: 0,
            x: Vector::zeros(1),
            u: Vector::from_element(1, 1.0),
            p: Vector::from_element(1, -2.0),
        };
        let err = fit_decomposable(&[obs.clone(), obs], &dynamics, Some(1.0), Some(0.0)).unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let samples: Vec<TrajectorySample> = (0..3)
            .map(|k| {
                let v = Vector::from_element(1, k as f64 * 0.1);
                TrajectorySample::new(&v, &v, v.clone()).unwrap()
            })
            .collect();
        let mut buf = Vec::new();
        write_trajectory_csv(&samples, &mut buf).unwrap();
        let runs = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(runs, vec![samples]);
    }
}
