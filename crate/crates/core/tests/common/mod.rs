//! Independent reference implementations used only by integration tests.
//! None of these call into the numerical routines they check.

#![allow(dead_code)]

/// Eigenvalues of a symmetric matrix (row-major `n x n`) by cyclic Jacobi
/// rotations, sorted descending.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Indices of the `k` rows nearest to `query` by full sort, ties to the
/// lower index, optionally skipping one row.
pub fn brute_force_knn(rows: &[Vec<f64>], query: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(i, r)| (r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Gaussian curvature of the implicit surface `F = 0` with
/// `F = x^2/a^2 + y^2/b^2 + z^2/c^2 - 1`, via
/// `K = grad F^T adj(Hess F) grad F / |grad F|^4`.
pub fn implicit_ellipsoid_curvature(a: f64, b: f64, c: f64, p: [f64; 3]) -> f64 {
    let h = [2.0 / (a * a), 2.0 / (b * b), 2.0 / (c * c)];
    let g = [h[0] * p[0], h[1] * p[1], h[2] * p[2]];
    let adj = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
    let num: f64 = (0..3).map(|i| g[i] * g[i] * adj[i]).sum();
    let norm2: f64 = g.iter().map(|v| v * v).sum();
    num / (norm2 * norm2)
}

/// Least-squares solution of `A x = b` through the normal equations and
/// Gaussian elimination with partial pivoting. `a` is row-major `m x n`.
pub fn normal_equations_solve(a: &[f64], m: usize, n: usize, b: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; n * (n + 1)];
    for r in 0..m {
        for i in 0..n {
            for j in 0..n {
                g[i * (n + 1) + j] += a[r * n + i] * a[r * n + j];
            }
            g[i * (n + 1) + n] += a[r * n + i] * b[r];
        }
    }
    let w = n + 1;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| g[x * w + col].abs().total_cmp(&g[y * w + col].abs()))
            .unwrap();
        for k in 0..w {
            g.swap(col * w + k, piv * w + k);
        }
        for r in 0..n {
            if r != col {
                let f = g[r * w + col] / g[col * w + col];
                for k in col..w {
                    g[r * w + k] -= f * g[col * w + k];
                }
            }
        }
    }
    (0..n).map(|i| g[i * w + n] / g[i * w + i]).collect()
}

/// Maximum-likelihood TwoNN dimension on all ratios, with brute-force
/// neighbor search. Assumes distinct points.
pub fn twonn_full_mle(rows: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for (i, q) in rows.iter().enumerate() {
        let nn = brute_force_knn(rows, q, 2, Some(i));
        let dist = |j: usize| {
            rows[j]
                .iter()
                .zip(q)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        sum += (dist(nn[1]) / dist(nn[0])).ln();
    }
    rows.len() as f64 / sum
}

/// Splitmix64 stream for test inputs that must not share the crate's RNG.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform(f64::MIN_POSITIVE, 1.0);
        let u2 = self.uniform(0.0, 1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Random orthogonal `n x n` matrix (row-major) by Gram-Schmidt on Gaussian rows.
pub fn random_orthogonal(n: usize, rng: &mut SplitMix) -> Vec<f64> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(n);
    while q.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            q.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    q.concat()
}

/// Procedural grayscale image with an approximately `1/f` amplitude spectrum,
/// built from random sinusoids.
pub fn one_over_f_image(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix(seed);
    let mut img = vec![0.0; h * w];
    for _ in 0..200 {
        let f = rng.uniform(0.5, (h.min(w) / 2) as f64);
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let (fx, fy) = (f * theta.cos() / w as f64, f * theta.sin() / h as f64);
        for i in 0..h {
            for j in 0..w {
                img[i * w + j] += (std::f64::consts::TAU * (fx * j as f64 + fy * i as f64) + phase).cos() / f;
            }
        }
    }
    let (lo, hi) = img
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
    img.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
