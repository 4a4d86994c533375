//! Square-root information filter for a 2-D constant-velocity target.
//!
//! State order is `[x, y, vx, vy]`. The filter carries `(R, z)` with the
//! estimate `x = R^-1 z` and information `R^T R`.

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionModel {
    /// White-noise acceleration power spectral density, m^2/s^3.
    pub accel_psd: f64,
}

impl MotionModel {
    pub fn transition(dt: f64) -> Matrix4<f64> {
        let mut f = Matrix4::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        f
    }

    pub fn process_noise(&self, dt: f64) -> Matrix4<f64> {
        let q = self.accel_psd;
        let (a, b, c) = (q * dt.powi(3) / 3.0, q * dt.powi(2) / 2.0, q * dt);
        let mut m = Matrix4::zeros();
        for i in 0..2 {
            m[(i, i)] = a;
            m[(i, i + 2)] = b;
            m[(i + 2, i)] = b;
            m[(i + 2, i + 2)] = c;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub pos: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl Measurement {
    pub fn new(t: f64, pos: [f64; 2], cov: [[f64; 2]; 2]) -> Self {
        Self {
            t,
            pos: Vector2::new(pos[0], pos[1]),
            cov: Matrix2::new(cov[0][0], cov[0][1], cov[1][0], cov[1][1]),
        }
    }

    pub fn isotropic(t: f64, pos: [f64; 2], std: f64) -> Self {
        let v = std * std;
        Self::new(t, pos, [[v, 0.0], [0.0, v]])
    }

    /// Whitening matrix `S` with `S cov S^T = I`.
    pub fn whitener(&self) -> Result<Matrix2<f64>> {
        if !self.t.is_finite() || !self.pos.iter().all(|v| v.is_finite()) {
            return Err(Error::input("measurement has non-finite time or position"));
        }
        let c = self.cov;
        let scale = c[(0, 0)].abs().max(c[(1, 1)].abs()).max(f64::MIN_POSITIVE);
        if !c.iter().all(|v| v.is_finite()) || (c[(0, 1)] - c[(1, 0)]).abs() > 1e-9 * scale {
            return Err(Error::input("measurement covariance is not symmetric"));
        }
        let chol = c
            .cholesky()
            .ok_or_else(|| Error::input("measurement covariance is not positive definite"))?;
        chol.l()
            .try_inverse()
            .ok_or_else(|| Error::input("measurement covariance is not positive definite"))
    }

    pub fn log_det_cov(&self) -> f64 {
        self.cov.determinant().ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrifState {
    pub r: Matrix4<f64>,
    pub z: Vector4<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrifUpdate {
    pub state: SrifState,
    /// Whitened residual; its squared norm is the normalized innovation.
    pub residual: Vector2<f64>,
    pub delta_llr: f64,
}

impl SrifState {
    /// From a mean and covariance.
    pub fn from_moments(x: Vector4<f64>, p: Matrix4<f64>, t: f64) -> Result<Self> {
        let info = p
            .try_inverse()
            .ok_or_else(|| Error::input("state covariance is singular"))?;
        let info = (info + info.transpose()) * 0.5;
        let chol = info
            .cholesky()
            .ok_or_else(|| Error::input("state covariance is not positive definite"))?;
        let r = chol.l().transpose();
        let z = r * x;
        Ok(Self { r, z, t })
    }

    /// Position from a measurement, zero-mean velocity with the given spread.
    pub fn from_measurement(m: &Measurement, velocity_std: f64) -> Result<Self> {
        let s = m.whitener()?;
        if !(velocity_std > 0.0) {
            return Err(Error::config("initial velocity std must be positive"));
        }
        // Row-reduce S into upper-triangular form for the position block.
        let mut a = DMatrix::zeros(2, 3);
        a.view_mut((0, 0), (2, 2)).copy_from(&s);
        a.view_mut((0, 2), (2, 1)).copy_from(&(s * m.pos));
        triangularize(&mut a, 2);
        let mut r = Matrix4::zeros();
        let mut z = Vector4::zeros();
        for i in 0..2 {
            for j in 0..2 {
                r[(i, j)] = a[(i, j)];
            }
            z[i] = a[(i, 2)];
            r[(i + 2, i + 2)] = 1.0 / velocity_std;
        }
        Ok(Self { r, z, t: m.t })
    }

    pub fn estimate(&self) -> Vector4<f64> {
        self.r
            .solve_upper_triangular(&self.z)
            .unwrap_or_else(Vector4::zeros)
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        let rinv = self
            .r
            .solve_upper_triangular(&Matrix4::identity())
            .unwrap_or_else(Matrix4::zeros);
        rinv * rinv.transpose()
    }

    pub fn log_det_r(&self) -> f64 {
        (0..4).map(|i| self.r[(i, i)].ln()).sum()
    }

    /// Time propagation to `t`.
    pub fn predict(&self, t: f64, motion: &MotionModel) -> Result<SrifState> {
        let dt = t - self.t;
        if !(dt >= 0.0) {
            return Err(Error::input(format!(
                "time regression: state at {} but requested {}",
                self.t, t
            )));
        }
        if dt == 0.0 {
            return Ok(self.clone());
        }
        let mut finv = Matrix4::identity();
        finv[(0, 2)] = -dt;
        finv[(1, 3)] = -dt;
        let rf = self.r * finv;
        if motion.accel_psd == 0.0 {
            return Ok(SrifState {
                r: rf,
                z: self.z,
                t,
            });
        }
        let q = motion.process_noise(dt);
        let rw = q
            .cholesky()
            .and_then(|c| c.l().try_inverse())
            .ok_or_else(|| Error::config("process noise is not positive definite"))?;
        let mut a = DMatrix::zeros(8, 9);
        a.view_mut((0, 0), (4, 4)).copy_from(&rw);
        a.view_mut((4, 0), (4, 4)).copy_from(&(-rf));
        a.view_mut((4, 4), (4, 4)).copy_from(&rf);
        a.view_mut((4, 8), (4, 1)).copy_from(&self.z);
        triangularize(&mut a, 8);
        Ok(SrifState {
            r: a.fixed_view::<4, 4>(4, 4).into_owned(),
            z: a.fixed_view::<4, 1>(4, 8).into_owned(),
            t,
        })
    }

    /// Measurement update on an already-propagated state.
    pub fn correct(&self, m: &Measurement) -> Result<SrifUpdate> {
        let s = m.whitener()?;
        let mut a = DMatrix::zeros(6, 5);
        a.view_mut((0, 0), (4, 4)).copy_from(&self.r);
        a.view_mut((0, 4), (4, 1)).copy_from(&self.z);
        a.view_mut((4, 0), (2, 2)).copy_from(&s);
        a.view_mut((4, 4), (2, 1)).copy_from(&(s * m.pos));
        triangularize(&mut a, 4);
        let state = SrifState {
            r: a.fixed_view::<4, 4>(0, 0).into_owned(),
            z: a.fixed_view::<4, 1>(0, 4).into_owned(),
            t: self.t,
        };
        let residual = Vector2::new(a[(4, 4)], a[(5, 4)]);
        let delta_llr = -0.5 * residual.norm_squared() - (state.log_det_r() - self.log_det_r());
        Ok(SrifUpdate {
            state,
            residual,
            delta_llr,
        })
    }
}

/// Propagate to the measurement time, then update.
pub fn srif_update(state: &SrifState, m: &Measurement, motion: &MotionModel) -> Result<SrifUpdate> {
    m.whitener()?;
    state.predict(m.t, motion)?.correct(m)
}

/// In-place Householder reduction of the first `ncols` columns to upper
/// triangular form. Leading diagonal entries are made nonnegative.
pub(crate) fn triangularize(a: &mut DMatrix<f64>, ncols: usize) {
    let (rows, cols) = a.shape();
    let steps = ncols.min(rows);
    let mut v = vec![0.0; rows];
    for j in 0..steps {
        let norm = (j..rows).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[(j, j)] > 0.0 { -norm } else { norm };
        for i in j..rows {
            v[i] = a[(i, j)];
        }
        v[j] -= alpha;
        let vnorm2: f64 = (j..rows).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for k in (j + 1)..cols {
            let s: f64 = (j..rows).map(|i| v[i] * a[(i, k)]).sum();
            let f = 2.0 * s / vnorm2;
            for i in j..rows {
                a[(i, k)] -= f * v[i];
            }
        }
        a[(j, j)] = alpha;
        for i in (j + 1)..rows {
            a[(i, j)] = 0.0;
        }
    }
    for j in 0..steps {
        if a[(j, j)] < 0.0 {
            for k in j..cols {
                a[(j, k)] = -a[(j, k)];
            }
        }
    }
}

/// Squared Mahalanobis distance of the predicted residual.
pub fn innovation_distance(
    state: &SrifState,
    m: &Measurement,
    motion: &MotionModel,
) -> Result<f64> {
    Ok(srif_update(state, m, motion)?.residual.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn motion() -> MotionModel {
        MotionModel { accel_psd: 0.5 }
    }

    #[test]
    fn moments_round_trip() {
        let x = Vector4::new(1.0, -2.0, 3.0, 0.5);
        let mut p = Matrix4::identity() * 2.0;
        p[(0, 2)] = 0.3;
        p[(2, 0)] = 0.3;
        let s = SrifState::from_moments(x, p, 0.0).unwrap();
        assert_relative_eq!(s.estimate(), x, epsilon = 1e-12);
        assert_relative_eq!(s.covariance(), p, epsilon = 1e-12);
        for i in 0..4 {
            assert!(s.r[(i, i)] > 0.0);
            for j in 0..i {
                assert_eq!(s.r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn zero_residual_term() {
        let s = SrifState::from_moments(Vector4::new(0.0, 0.0, 1.0, 0.0), Matrix4::identity(), 0.0)
            .unwrap();
        let pred = s.predict(1.0, &motion()).unwrap();
        let m = Measurement::isotropic(1.0, [1.0, 0.0], 1.0);
        let up = pred.correct(&m).unwrap();
        assert!(up.residual.norm() < 1e-12);
        assert_relative_eq!(
            up.delta_llr,
            -(up.state.log_det_r() - pred.log_det_r()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn stationary_converges() {
        let m0 = Measurement::isotropic(0.0, [5.0, 5.0], 1.0);
        let mut s = SrifState::from_measurement(&m0, 10.0).unwrap();
        let mut norms = Vec::new();
        for k in 1..40 {
            let m = Measurement::isotropic(k as f64, [5.0, 5.0], 1.0);
            let up = srif_update(&s, &m, &motion()).unwrap();
            norms.push(up.residual.norm());
            s = up.state;
        }
        let x = s.estimate();
        assert!((x[0] - 5.0).abs() < 1e-9 && (x[1] - 5.0).abs() < 1e-9);
        assert!(x[2].abs() < 1e-9 && x[3].abs() < 1e-9);
        assert!(norms.iter().all(|n| *n < 1e-9));
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = SrifState::from_moments(Vector4::zeros(), Matrix4::identity(), 5.0).unwrap();
        let early = Measurement::isotropic(4.0, [0.0, 0.0], 1.0);
        assert!(matches!(
            srif_update(&s, &early, &motion()),
            Err(Error::RejectedInput(_))
        ));
        let bad = Measurement::new(6.0, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            srif_update(&s, &bad, &motion()),
            Err(Error::RejectedInput(_))
        ));
        let asym = Measurement::new(6.0, [0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]]);
        assert!(matches!(
            srif_update(&s, &asym, &motion()),
            Err(Error::RejectedInput(_))
        ));
    }

    #[test]
    fn triangularize_preserves_gram() {
        let a0 = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, 2.0, 3.0, -1.0, 0.5, 2.0, 4.0, -2.0, 1.0, 0.0, 1.0, -3.0,
            ],
        );
        let mut a = a0.clone();
        triangularize(&mut a, 3);
        let g0 = a0.transpose() * &a0;
        let g1 = a.transpose() * &a;
        assert_relative_eq!(g0, g1, epsilon = 1e-10);
        assert!(a[(1, 0)] == 0.0 && a[(2, 1)] == 0.0 && a[(3, 2)] == 0.0);
        assert!((0..3).all(|i| a[(i, i)] >= 0.0));
    }
}
