//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

/// Row-major `n × n` symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.data[i * n + j] = v;
                m.data[j * n + i] = v;
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    s += self.get(i, j).powi(2);
                }
            }
        }
        s.sqrt()
    }

    fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Eigenpairs sorted by decreasing eigenvalue; `vectors[k]` pairs with `values[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

const MAX_SWEEPS: usize = 100;

pub fn symmetric_eigen(m: &SymMatrix) -> Eigen {
    let n = m.n;
    let mut a = m.clone();
    let mut v = SymMatrix::zeros(n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale = a.frobenius().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        if a.off_diagonal_norm() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    Eigen {
        values: order.iter().map(|&i| a.get(i, i)).collect(),
        vectors: order.iter().map(|&i| (0..n).map(|k| v.get(k, i)).collect()).collect(),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_is_sorted() {
        let e = symmetric_eigen(&SymMatrix::from_fn(3, |i, j| if i == j { [2.0, 5.0, -1.0][i] } else { 0.0 }));
        assert_eq!(e.values, vec![5.0, 2.0, -1.0]);
        assert_eq!(e.vectors[0], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two() {
        let e = symmetric_eigen(&SymMatrix::from_fn(2, |i, j| if i == j { 2.0 } else { 1.0 }));
        assert!((e.values[0] - 3.0).abs() < 1e-14 && (e.values[1] - 1.0).abs() < 1e-14);
        assert!((e.vectors[0][0].abs() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn reconstructs_input(seed in any::<u64>(), n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = SymMatrix::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
            let e = symmetric_eigen(&m);
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                    prop_assert!((r - m.get(i, j)).abs() < 1e-10);
                }
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot(&e.vectors[i], &e.vectors[j]) - want).abs() < 1e-12);
                }
            }
            prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}
