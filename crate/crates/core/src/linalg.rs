//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Block `n` (length `d`) of a stacked joint vector.
pub(crate) fn slot(joint: &Vector, n: usize, d: usize) -> Vector {
    joint.rows(n * d, d).into_owned()
}

pub(crate) fn set_slot(joint: &mut Vector, n: usize, d: usize, value: &Vector) {
    joint.rows_mut(n * d, d).copy_from(value);
}

pub(crate) fn stack(parts: &[Vector]) -> Vector {
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vector::zeros(total);
    let mut offset = 0;
    for p in parts {
        out.rows_mut(offset, p.len()).copy_from(p);
        offset += p.len();
    }
    out
}

pub(crate) fn symmetry_error(m: &Matrix) -> f64 {
    (m - m.transpose()).abs().max()
}

pub(crate) fn min_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

pub(crate) fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Max absolute eigenvalue of a general square matrix.
pub(crate) fn spectral_radius(m: &Matrix) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * aij));
            }
        }
    }
    out
}

/// Least-squares solution of `m·Θ = rhs` (one column per right-hand side)
/// through a truncated SVD, with one step of iterative refinement.
///
/// Singular values below `1e-10 · σ_max` are discarded; the returned rank is
/// the number kept. Block-structured designs with repeated singular values
/// should be split into their blocks first: the SVD loses accuracy on them.
pub(crate) fn lstsq(m: &Matrix, rhs: &Matrix) -> (Matrix, usize) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = 1e-10 * smax;
    let kept: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > cutoff && svd.singular_values[k] > 0.0)
        .collect();
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let apply = |b: &Matrix| {
        let mut theta = Matrix::zeros(m.ncols(), b.ncols());
        for &k in &kept {
            let coef = u.column(k).transpose() * b / svd.singular_values[k];
            theta += vt.row(k).transpose() * coef;
        }
        theta
    };
    let mut theta = apply(rhs);
    theta += apply(&(rhs - m * &theta));
    (theta, kept.len())
}

/// Central-difference Jacobian of a vector map.
pub(crate) fn fd_jacobian(f: &dyn Fn(&Vector) -> Vector, at: &Vector, h: f64) -> Matrix {
    let n = at.len();
    let mut probe = at.clone();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let step = h * at[j].abs().max(1.0);
        probe[j] = at[j] + step;
        let plus = f(&probe);
        probe[j] = at[j] - step;
        let minus = f(&probe);
        probe[j] = at[j];
        cols.push((plus - minus) / (2.0 * step));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Matrix::from_fn(rows, n, |i, j| cols[j][i])
}

pub(crate) fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Serializes a matrix as a list of rows.
pub(crate) mod serde_matrix {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    use super::Matrix;

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(D::Error::custom)
    }
}

pub(crate) mod serde_vector {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Vector;

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix, String> {
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("matrix rows have unequal lengths".into());
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}
