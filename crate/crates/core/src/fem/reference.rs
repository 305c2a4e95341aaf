//! Reference-cell data on `[0,1]²`: Gauss rules and the biquadratic /
//! bilinear shape functions.

/// Tensor Gauss rule on the unit square.
#[derive(Clone, Debug)]
pub struct QuadRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

/// Gauss–Legendre nodes and weights on `[0,1]` with `n` points (1..=5).
pub fn gauss_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (0.6f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let s = (6.0f64 / 5.0).sqrt();
            let a = ((3.0 - 2.0 * s) / 7.0).sqrt();
            let b = ((3.0 + 2.0 * s) / 7.0).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let s = 2.0 * (10.0f64 / 7.0).sqrt();
            let a = (5.0 - s).sqrt() / 3.0;
            let b = (5.0 + s).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, 128.0 / 225.0, wa, wb])
        }
        _ => panic!("Gauss rule with {n} points is not tabulated"),
    };
    (x.iter().map(|t| 0.5 * (t + 1.0)).collect(), w.iter().map(|v| 0.5 * v).collect())
}

impl QuadRule {
    pub fn gauss(n: usize) -> Self {
        let (x, w) = gauss_1d(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                points.push([x[i], x[j]]);
                weights.push(w[i] * w[j]);
            }
        }
        QuadRule { points, weights }
    }
}

fn lagrange2(t: f64) -> [f64; 3] {
    [(1.0 - t) * (1.0 - 2.0 * t), 4.0 * t * (1.0 - t), t * (2.0 * t - 1.0)]
}

fn lagrange2_d(t: f64) -> [f64; 3] {
    [4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0]
}

/// Biquadratic shape values at `(s, t)`, local index `3 * jj + ii`.
pub fn q2_values(s: f64, t: f64) -> [f64; 9] {
    let (a, b) = (lagrange2(s), lagrange2(t));
    std::array::from_fn(|k| a[k % 3] * b[k / 3])
}

/// Biquadratic shape gradients on the unit reference cell.
pub fn q2_grads(s: f64, t: f64) -> [[f64; 2]; 9] {
    let (a, b) = (lagrange2(s), lagrange2(t));
    let (da, db) = (lagrange2_d(s), lagrange2_d(t));
    std::array::from_fn(|k| [da[k % 3] * b[k / 3], a[k % 3] * db[k / 3]])
}

/// Bilinear shape values, local index `2 * jj + ii`.
pub fn q1_values(s: f64, t: f64) -> [f64; 4] {
    let (a, b) = ([1.0 - s, s], [1.0 - t, t]);
    std::array::from_fn(|k| a[k % 2] * b[k / 2])
}

pub fn q1_grads(s: f64, t: f64) -> [[f64; 2]; 4] {
    let (a, b) = ([1.0 - s, s], [1.0 - t, t]);
    let d = [-1.0, 1.0];
    std::array::from_fn(|k| [d[k % 2] * b[k / 2], a[k % 2] * d[k / 2]])
}

/// Element matrices of a uniform cell, expressed on the unit cell. Scale
/// mass-type matrices by `h²` and divergence matrices by `h`; stiffness
/// matrices are scale invariant in 2D.
#[derive(Clone, Debug)]
pub struct ElementMatrices {
    pub q2_stiffness: [[f64; 9]; 9],
    pub q2_mass: [[f64; 9]; 9],
    /// `∫ M_q ∂N_a/∂x` and `∫ M_q ∂N_a/∂y`, rows pressure, columns velocity.
    pub div_x: [[f64; 9]; 4],
    pub div_y: [[f64; 9]; 4],
    pub q1_stiffness: [[f64; 4]; 4],
    pub q1_mass: [[f64; 4]; 4],
}

impl ElementMatrices {
    pub fn new(order: usize) -> Self {
        let rule = QuadRule::gauss(order);
        let mut m = ElementMatrices {
            q2_stiffness: [[0.0; 9]; 9],
            q2_mass: [[0.0; 9]; 9],
            div_x: [[0.0; 9]; 4],
            div_y: [[0.0; 9]; 4],
            q1_stiffness: [[0.0; 4]; 4],
            q1_mass: [[0.0; 4]; 4],
        };
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let (n, g) = (q2_values(p[0], p[1]), q2_grads(p[0], p[1]));
            let (q, gq) = (q1_values(p[0], p[1]), q1_grads(p[0], p[1]));
            for a in 0..9 {
                for b in 0..9 {
                    m.q2_stiffness[a][b] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    m.q2_mass[a][b] += w * n[a] * n[b];
                }
            }
            for r in 0..4 {
                for a in 0..9 {
                    m.div_x[r][a] += w * q[r] * g[a][0];
                    m.div_y[r][a] += w * q[r] * g[a][1];
                }
                for c in 0..4 {
                    m.q1_stiffness[r][c] += w * (gq[r][0] * gq[c][0] + gq[r][1] * gq[c][1]);
                    m.q1_mass[r][c] += w * q[r] * q[c];
                }
            }
        }
        m
    }
}
