//! Dense primal-dual interior point method for small convex QPs
//!
//! ```text
//! minimize    1/2 x^T P x + c^T x
//! subject to  G x <= h
//! ```
//!
//! with Mehrotra's predictor-corrector. Constraint rows are sparse; simple
//! bounds are rows with a single entry and only touch the diagonal of the
//! reduced system.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        Self {
            idx: Vec::new(),
            val: Vec::new(),
        }
    }

    pub fn unit(i: usize, v: f64) -> Self {
        Self {
            idx: vec![i],
            val: vec![v],
        }
    }

    pub fn push(&mut self, i: usize, v: f64) {
        if v != 0.0 {
            self.idx.push(i);
            self.val.push(v);
        }
    }

    pub fn dot(&self, x: &DVector<f64>) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, v)| v * x[i]).sum()
    }
}

impl Default for SparseRow {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug)]
pub struct Qp {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub rows: Vec<SparseRow>,
    pub h: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    /// Tolerances not met within the iteration limit; the returned point is
    /// the last iterate.
    NotConverged,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row, `z >= 0`.
    pub z: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    pub max_iterations: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 80,
            tol_primal: 1e-11,
            tol_dual: 1e-10,
            tol_gap: 1e-13,
        }
    }
}

impl Qp {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn g_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.rows.len(), self.rows.iter().map(|r| r.dot(x)))
    }

    fn gt_mul(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for (r, &zi) in self.rows.iter().zip(z.iter()) {
            for (&i, v) in r.idx.iter().zip(&r.val) {
                out[i] += v * zi;
            }
        }
        out
    }

    /// `P + G^T diag(w) G`.
    fn reduced_matrix(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.p.clone();
        for (r, &wi) in self.rows.iter().zip(w.iter()) {
            for (a, (&i, vi)) in r.idx.iter().zip(&r.val).enumerate() {
                let wv = wi * vi;
                m[(i, i)] += wv * vi;
                for (&j, vj) in r.idx[a + 1..].iter().zip(&r.val[a + 1..]) {
                    m[(i, j)] += wv * vj;
                    m[(j, i)] += wv * vj;
                }
            }
        }
        m
    }

    /// Stationarity residual `P x + c + G^T z`.
    pub fn dual_residual(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.c + self.gt_mul(z)
    }

    pub fn solve(&self, settings: &QpSettings) -> QpSolution {
        let n = self.dim();
        let m = self.rows.len();
        let h = DVector::from_column_slice(&self.h);

        if m == 0 {
            let x = factor(&self.p)
                .map(|f| f.solve(&(-&self.c)))
                .unwrap_or_else(|| DVector::zeros(n));
            return QpSolution {
                x,
                z: DVector::zeros(0),
                status: QpStatus::Solved,
                iterations: 1,
            };
        }

        let mut x = DVector::zeros(n);
        let mut s = h.map(|v| v.abs().max(1.0));
        let mut z = DVector::from_element(m, 1.0);

        let h_scale = 1.0 + h.amax();
        let c_scale = 1.0 + self.c.amax();
        let mut status = QpStatus::NotConverged;
        let mut iterations = 0;

        for it in 0..settings.max_iterations {
            iterations = it + 1;
            let r_d = self.dual_residual(&x, &z);
            let r_p = self.g_mul(&x) + &s - &h;
            let mu = s.dot(&z) / m as f64;
            if r_p.amax() <= settings.tol_primal * h_scale
                && r_d.amax() <= settings.tol_dual * c_scale
                && mu <= settings.tol_gap
            {
                status = QpStatus::Solved;
                iterations = it;
                break;
            }

            let w = z.component_div(&s);
            let mat = self.reduced_matrix(&w);
            let Some(chol) = factor(&mat) else {
                break;
            };

            // affine direction, r_c = -s.z
            let r_c_aff = -s.component_mul(&z);
            let (_, ds_a, dz_a) = self.direction(&chol, &w, &s, &r_d, &r_p, &r_c_aff);
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / m as f64;
            let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

            let r_c = &r_c_aff - ds_a.component_mul(&dz_a) + DVector::from_element(m, sigma * mu);
            let (dx, ds, dz) = self.direction(&chol, &w, &s, &r_d, &r_p, &r_c);
            let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
            x += &dx * alpha;
            s += &ds * alpha;
            z += &dz * alpha;
            // keep strictly interior
            s.apply(|v| *v = v.max(1e-300));
            z.apply(|v| *v = v.max(1e-300));
        }

        QpSolution {
            x,
            z,
            status,
            iterations,
        }
    }

    fn direction(
        &self,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        w: &DVector<f64>,
        s: &DVector<f64>,
        r_d: &DVector<f64>,
        r_p: &DVector<f64>,
        r_c: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let t = w.component_mul(r_p) + r_c.component_div(s);
        let rhs = -r_d - self.gt_mul(&t);
        let dx = chol.solve(&rhs);
        let gdx = self.g_mul(&dx);
        let dz = w.component_mul(&(&gdx + r_p)) + r_c.component_div(s);
        let ds = -r_p - gdx;
        (dx, ds, dz)
    }
}

/// Cholesky with escalating diagonal regularization.
fn factor(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Some(c);
    }
    let scale = m.diagonal().amax().max(1e-300);
    let mut reg = 1e-14 * scale;
    for _ in 0..8 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += reg;
        }
        if let Some(c) = shifted.cholesky() {
            return Some(c);
        }
        reg *= 100.0;
    }
    None
}

/// Largest `a` in `(0, 1]` with `v + a dv >= 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a: f64 = 1.0;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_rows(n: usize, lo: f64, hi: f64) -> (Vec<SparseRow>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut h = Vec::new();
        for i in 0..n {
            rows.push(SparseRow::unit(i, 1.0));
            h.push(hi);
            rows.push(SparseRow::unit(i, -1.0));
            h.push(-lo);
        }
        (rows, h)
    }

    #[test]
    fn unconstrained_minimum_inside_box() {
        let (rows, h) = box_rows(2, -10.0, 10.0);
        let qp = Qp {
            p: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
            c: DVector::from_vec(vec![-2.0, 4.0]),
            rows,
            h,
        };
        let sol = qp.solve(&QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-9);
        assert!((sol.x[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn active_bound_and_multiplier() {
        // min (x - 3)^2 s.t. x <= 1 -> x = 1, z = 4
        let qp = Qp {
            p: DMatrix::from_element(1, 1, 2.0),
            c: DVector::from_element(1, -6.0),
            rows: vec![SparseRow::unit(0, 1.0)],
            h: vec![1.0],
        };
        let sol = qp.solve(&QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-10);
        assert!((sol.z[0] - 4.0).abs() < 1e-8);
    }

    #[test]
    fn general_row_constraint() {
        // min x^2 + y^2 s.t. x + y >= 1 -> (0.5, 0.5)
        let mut row = SparseRow::new();
        row.push(0, -1.0);
        row.push(1, -1.0);
        let qp = Qp {
            p: DMatrix::identity(2, 2) * 2.0,
            c: DVector::zeros(2),
            rows: vec![row],
            h: vec![-1.0],
        };
        let sol = qp.solve(&QpSettings::default());
        assert!((sol.x[0] - 0.5).abs() < 1e-9 && (sol.x[1] - 0.5).abs() < 1e-9);
        assert!(qp.dual_residual(&sol.x, &sol.z).amax() < 1e-9);
    }

    #[test]
    fn tiny_slack_bounds_are_respected() {
        let (rows, h) = box_rows(3, -1e-12, 1e-12);
        let qp = Qp {
            p: DMatrix::identity(3, 3),
            c: DVector::from_vec(vec![5.0, -5.0, 0.1]),
            rows,
            h,
        };
        let sol = qp.solve(&QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.x.amax() <= 1e-11);
    }
}
