//! Jukes-Cantor substitution model.

use crate::error::{Error, Result};

pub const N_STATES: usize = 4;

/// Uniform stationary distribution of JC69.
pub const STATIONARY: [f64; N_STATES] = [0.25; N_STATES];

/// JC69 rate matrix: off-diagonal 1/3, diagonal -1.
pub fn rate_matrix() -> [[f64; N_STATES]; N_STATES] {
    let mut q = [[1.0 / 3.0; N_STATES]; N_STATES];
    for (i, row) in q.iter_mut().enumerate() {
        row[i] = -1.0;
    }
    q
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidBranchLength(t));
    }
    Ok(())
}

/// `exp(-4t/3)`, the only time dependence of JC69.
#[inline]
pub fn decay(t: f64) -> f64 {
    (-4.0 * t / 3.0).exp()
}

/// `1 - decay(t)` without cancellation; for tiny t the subtraction would
/// give exactly zero and make any change along the branch impossible.
#[inline]
pub fn decay_complement(t: f64) -> f64 {
    -(-4.0 * t / 3.0).exp_m1()
}

/// Transition probabilities `P(t) = exp(tQ)`.
pub fn transition(t: f64) -> Result<[[f64; N_STATES]; N_STATES]> {
    check_time(t)?;
    let e = decay(t);
    let same = 0.25 + 0.75 * e;
    let diff = 0.25 * decay_complement(t);
    let mut p = [[diff; N_STATES]; N_STATES];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = same;
    }
    Ok(p)
}

/// `dP/dt = Q P(t)`.
pub fn transition_derivative(t: f64) -> Result<[[f64; N_STATES]; N_STATES]> {
    check_time(t)?;
    let e = decay(t);
    let mut p = [[e / 3.0; N_STATES]; N_STATES];
    for (i, row) in p.iter_mut().enumerate() {
        row[i] = -e;
    }
    Ok(p)
}

/// `out = P(t) v` given `e = decay(t)` and `m = decay_complement(t)`, in O(4).
#[inline]
pub(crate) fn apply(e: f64, m: f64, v: &[f64; N_STATES]) -> [f64; N_STATES] {
    let s = 0.25 * m * (v[0] + v[1] + v[2] + v[3]);
    [s + e * v[0], s + e * v[1], s + e * v[2], s + e * v[3]]
}

/// `out = P'(t) v` given `e = decay(t)`.
#[inline]
pub(crate) fn apply_derivative(e: f64, v: &[f64; N_STATES]) -> [f64; N_STATES] {
    let s = e / 3.0 * (v[0] + v[1] + v[2] + v[3]);
    let d = -(e + e / 3.0);
    [s + d * v[0], s + d * v[1], s + d * v[2], s + d * v[3]]
}

#[cfg(test)]
mod tests {
    use super::*;

    type M = [[f64; 4]; 4];

    fn mat_mul(a: &M, b: &M) -> M {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    // Scaling-and-squaring with a 20-term Taylor series.
    fn expm(a: &M) -> M {
        let squarings = 10;
        let scale = 0.5f64.powi(squarings);
        let mut x = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                x[i][j] = a[i][j] * scale;
            }
        }
        let mut result = [[0.0; 4]; 4];
        let mut term = [[0.0; 4]; 4];
        for i in 0..4 {
            result[i][i] = 1.0;
            term[i][i] = 1.0;
        }
        for k in 1..20 {
            term = mat_mul(&term, &x);
            for i in 0..4 {
                for j in 0..4 {
                    term[i][j] /= k as f64;
                    result[i][j] += term[i][j];
                }
            }
        }
        for _ in 0..squarings {
            result = mat_mul(&result, &result);
        }
        result
    }

    #[test]
    fn zero_time_is_identity() {
        let p = transition(0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn long_time_is_stationary() {
        let p = transition(1e6).unwrap();
        for row in p {
            for x in row {
                assert!((x - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_matrix_exponential() {
        let q = rate_matrix();
        let mut tq = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                tq[i][j] = 0.1 * q[i][j];
            }
        }
        let oracle = expm(&tq);
        let p = transition(0.1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((oracle[i][j] - p[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_times() {
        assert!(transition(-0.1).is_err());
        assert!(transition(f64::NAN).is_err());
        assert!(transition(f64::INFINITY).is_err());
    }

    #[test]
    fn chapman_kolmogorov_and_detailed_balance() {
        for &(s, t) in &[(0.01, 0.3), (0.5, 1.7), (2.0, 0.0)] {
            let ps = transition(s).unwrap();
            let pt = transition(t).unwrap();
            let pst = transition(s + t).unwrap();
            let prod = mat_mul(&ps, &pt);
            for i in 0..4 {
                for j in 0..4 {
                    assert!((prod[i][j] - pst[i][j]).abs() < 1e-12);
                    assert_eq!(STATIONARY[i] * pt[i][j], STATIONARY[j] * pt[j][i]);
                }
            }
        }
    }

    #[test]
    fn rate_matrix_rows_sum_to_zero() {
        let q = rate_matrix();
        for row in q {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        for j in 0..4 {
            let s: f64 = (0..4).map(|i| STATIONARY[i] * q[i][j]).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn derivative_matches_q_times_p() {
        let q = rate_matrix();
        let p = transition(0.37).unwrap();
        let qp = mat_mul(&q, &p);
        let d = transition_derivative(0.37).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((qp[i][j] - d[i][j]).abs() < 1e-14);
            }
        }
        let v = [0.1, 0.7, 0.2, 1.0];
        let applied = apply_derivative(decay(0.37), &v);
        for i in 0..4 {
            let direct: f64 = (0..4).map(|j| d[i][j] * v[j]).sum();
            assert!((applied[i] - direct).abs() < 1e-14);
        }
    }
}
