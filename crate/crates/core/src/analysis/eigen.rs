use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

const RADIX: f64 = 2.0;
/// Eigenvalues closer than this (relative) are candidates for one multiple eigenvalue.
const CLUSTER_RTOL: f64 = 1.0e-3;
/// Rank-test tolerance factor, multiplied by `n * eps * scale^m`.
const RANK_TOL_FACTOR: f64 = 1.0e1;

/// Diagonal similarity `D^-1 A D` with power-of-two entries that equalises row
/// and column norms. Returns the balanced matrix and the diagonal of `D`.
pub fn balance(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut scale = vec![1.0; n];
    let sqrdx = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let inv = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= inv;
                    a[(j, i)] *= f;
                }
                scale[i] *= f;
            }
        }
        if done {
            break;
        }
    }
    (a, scale)
}

/// All eigenvalues of a real square matrix, sorted by real then imaginary part.
///
/// The matrix is balanced and reduced with shifted QR (Schur form). Multiple
/// eigenvalues of defective matrices only come out of QR to roughly
/// `eps^(1/m)` accuracy, while the mean of such a cluster is well conditioned.
/// Clusters are therefore tested with a rank check on `(A - mu I)^m`; when that
/// confirms an `m`-fold eigenvalue at the cluster mean `mu`, the members are
/// replaced by `mu`.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigenvalue input"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (bal, _) = balance(m);
    let raw: Vec<Complex<f64>> = bal.clone().complex_eigenvalues().iter().copied().collect();
    let mut out = refine_clusters(&bal, raw);
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

fn refine_clusters(a: &DMatrix<f64>, mut values: Vec<Complex<f64>>) -> Vec<Complex<f64>> {
    let n = values.len();
    let norm = a.norm();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            let scale = values[i]
                .norm()
                .max(values[j].norm())
                .max(norm * f64::EPSILON);
            if (values[i] - values[j]).norm() <= CLUSTER_RTOL * scale {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri] = rj;
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_to_group[r] == usize::MAX {
            root_to_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_to_group[r]].push(i);
    }

    let ac = a.map(|v| Complex::new(v, 0.0));
    for g in groups.into_iter().filter(|g| g.len() > 1) {
        let mult = g.len();
        let mean = g.iter().map(|&i| values[i]).sum::<Complex<f64>>() / mult as f64;
        let mut shifted = ac.clone();
        for i in 0..n {
            shifted[(i, i)] -= mean;
        }
        let mut power = shifted.clone();
        for _ in 1..mult {
            power = &power * &shifted;
        }
        let mut sv: Vec<f64> = power.singular_values().iter().copied().collect();
        sv.sort_by(f64::total_cmp);
        let scale = (norm + mean.norm()).powi(mult as i32);
        let tol = RANK_TOL_FACTOR * n as f64 * f64::EPSILON * scale;
        if sv[mult - 1] <= tol {
            let mean = if mean.im.abs() <= f64::EPSILON * mean.norm() {
                Complex::new(mean.re, 0.0)
            } else {
                mean
            };
            for &i in &g {
                values[i] = mean;
            }
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn close(a: Complex<f64>, re: f64, im: f64, rtol: f64) -> bool {
        (a - Complex::new(re, im)).norm() <= rtol * (re * re + im * im).sqrt().max(1e-300)
    }

    #[test]
    fn identity() {
        let ev = eigenvalues(&DMatrix::identity(3, 3)).unwrap();
        assert!(ev.iter().all(|e| close(*e, 1.0, 0.0, 1e-12)));
    }

    #[test]
    fn pd_loop_double_pole() {
        let k = 80.0;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -k * k, -2.0 * k]);
        let ev = eigenvalues(&m).unwrap();
        assert_eq!(ev.len(), 2);
        for e in ev {
            assert!(close(e, -k, 0.0, 1e-8), "{e}");
        }
    }

    #[test]
    fn non_square() {
        assert!(eigenvalues(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn well_conditioned_distinct() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let ev = eigenvalues(&m).unwrap();
        // Symmetric tridiagonal: 3 and 3 +- sqrt(3).
        let s = 3f64.sqrt();
        assert!(close(ev[0], 3.0 - s, 0.0, 1e-12));
        assert!(close(ev[1], 3.0, 0.0, 1e-12));
        assert!(close(ev[2], 3.0 + s, 0.0, 1e-12));
    }

    #[test]
    fn close_but_distinct_are_not_merged() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0 + 1e-5, 5.0]));
        let ev = eigenvalues(&m).unwrap();
        assert!(close(ev[0], 1.0, 0.0, 1e-12));
        assert!(close(ev[1], 1.0 + 1e-5, 0.0, 1e-12));
    }

    #[test]
    fn rotation_has_conjugate_pair() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let ev = eigenvalues(&m).unwrap();
        assert!(close(ev[0], 0.0, -2.0, 1e-12));
        assert!(close(ev[1], 0.0, 2.0, 1e-12));
    }

    #[test]
    fn triple_root_companion() {
        for w in [1.0, 400.0, 3600.0, 1.0e5] {
            let m = DMatrix::from_row_slice(
                3,
                3,
                &[
                    -3.0 * w,
                    1.0,
                    0.0,
                    -3.0 * w * w,
                    0.0,
                    1.0,
                    -w * w * w,
                    0.0,
                    0.0,
                ],
            );
            for e in eigenvalues(&m).unwrap() {
                assert!(close(e, -w, 0.0, 1e-9), "w = {w}: {e}");
            }
        }
    }

    #[test]
    fn balancing_is_a_similarity() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 1e6, 0.0, 1e-6, 2.0, 1e3, 0.0, 1e-3, 3.0]);
        let (b, d) = balance(&m);
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(b[(i, j)], m[(i, j)] * d[j] / d[i], max_relative = 1e-15);
            }
        }
        assert_relative_eq!(b.trace(), m.trace());
    }
}
