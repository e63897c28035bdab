//! Independent reference computations for the test suites: naive loops,
//! finite differences, a derivative-free-of-closed-forms numeric minimizer,
//! brute-force metric recomputation and random instance generators.
#![allow(dead_code)]

use edsh::data::center;
use edsh::linalg::DenseMatrix;
use edsh::model::{init_state, iterate};
use edsh::{Dataset, EdshModel, Hyperparams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut *rng))
}

pub fn random_signs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(
        rows,
        cols,
        |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 },
    )
}

/// Textbook triple loop, summing in ascending inner index.
pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows());
    let mut out = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for l in 0..a.cols() {
                s += a.get(i, l) * b.get(l, j);
            }
            out.set(i, j, s);
        }
    }
    out
}

pub fn sq(m: &DenseMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

fn diff(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) - b.get(i, j))
}

fn t(a: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.cols(), a.rows(), |i, j| a.get(j, i))
}

fn lin(terms: &[(f64, &DenseMatrix)]) -> DenseMatrix {
    let (r, c) = terms[0].1.shape();
    DenseMatrix::from_fn(r, c, |i, j| {
        terms.iter().map(|(s, m)| s * m.get(i, j)).sum()
    })
}

/// Orthonormal matrix from classical Gram-Schmidt on Gaussian columns
/// (independent of the SVD code path).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DenseMatrix {
    loop {
        let g = gaussian(rng, k, k);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut ok = true;
        for j in 0..k {
            let mut v = g.column(j);
            for _ in 0..2 {
                for u in &cols {
                    let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
                }
            }
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if n < 1e-6 {
                ok = false;
                break;
            }
            cols.push(v.into_iter().map(|a| a / n).collect());
        }
        if ok {
            return DenseMatrix::from_fn(k, k, |i, j| cols[j][i]);
        }
    }
}

pub fn rotation2(theta: f64) -> DenseMatrix {
    let (s, c) = theta.sin_cos();
    DenseMatrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap()
}

/// Objective value written out term by term, independently of the library.
pub fn naive_objective(m: &EdshModel, ds: &Dataset) -> f64 {
    let h = &m.hyper;
    h.lambda1 * sq(&diff(&ds.x1, &naive_matmul(&m.u1, &m.v)))
        + h.lambda2 * sq(&diff(&ds.x2, &naive_matmul(&m.u2, &m.v)))
        + h.gamma * sq(&diff(&ds.labels, &naive_matmul(&m.p, &m.b)))
        + h.alpha * sq(&diff(&m.b, &naive_matmul(&m.r, &m.v)))
        + h.beta1 * sq(&diff(&m.v, &naive_matmul(&m.w1, &ds.x1)))
        + h.beta2 * sq(&diff(&m.v, &naive_matmul(&m.w2, &ds.x2)))
        + h.mu * (sq(&m.u1) + sq(&m.u2) + sq(&m.v) + sq(&m.w1) + sq(&m.w2))
}

/// The B subproblem `alpha ||B - R V||^2 + gamma ||Y - P B||^2`, every term kept.
pub fn b_subproblem(m: &EdshModel, ds: &Dataset, b: &DenseMatrix) -> f64 {
    m.hyper.alpha * sq(&diff(b, &naive_matmul(&m.r, &m.v)))
        + m.hyper.gamma * sq(&diff(&ds.labels, &naive_matmul(&m.p, b)))
}

/// The part of the B subproblem that depends on B once `tr(B^T B)` and
/// `tr(B^T P^T P B)` are treated as constants:
/// `-2 alpha tr(V^T R^T B) - 2 gamma tr(Y^T P B)`.
pub fn b_subproblem_linear(m: &EdshModel, ds: &Dataset, b: &DenseMatrix) -> f64 {
    let rv = naive_matmul(&m.r, &m.v);
    let pb = naive_matmul(&m.p, b);
    let mut s = 0.0;
    for i in 0..b.rows() {
        for j in 0..b.cols() {
            s -= 2.0 * m.hyper.alpha * rv.get(i, j) * b.get(i, j);
        }
    }
    for i in 0..pb.rows() {
        for j in 0..pb.cols() {
            s -= 2.0 * m.hyper.gamma * ds.labels.get(i, j) * pb.get(i, j);
        }
    }
    s
}

/// Gradient of `lambda ||X - U V||^2 + mu ||U||^2` in U.
pub fn grad_u(m: &EdshModel, x: &DenseMatrix, u: &DenseMatrix, lambda: f64) -> DenseMatrix {
    let resid = diff(&naive_matmul(u, &m.v), x);
    lin(&[
        (2.0 * lambda, &naive_matmul(&resid, &t(&m.v))),
        (2.0 * m.hyper.mu, u),
    ])
}

/// Gradient of `beta ||V - W X||^2 + mu ||W||^2` in W.
pub fn grad_w(m: &EdshModel, x: &DenseMatrix, w: &DenseMatrix, beta: f64) -> DenseMatrix {
    let resid = diff(&naive_matmul(w, x), &m.v);
    lin(&[
        (2.0 * beta, &naive_matmul(&resid, &t(x))),
        (2.0 * m.hyper.mu, w),
    ])
}

/// Gradient of the full objective in V.
pub fn grad_v(m: &EdshModel, ds: &Dataset) -> DenseMatrix {
    let h = &m.hyper;
    let r1 = naive_matmul(&t(&m.u1), &diff(&naive_matmul(&m.u1, &m.v), &ds.x1));
    let r2 = naive_matmul(&t(&m.u2), &diff(&naive_matmul(&m.u2, &m.v), &ds.x2));
    let rr = naive_matmul(&t(&m.r), &diff(&naive_matmul(&m.r, &m.v), &m.b));
    let f1 = diff(&m.v, &naive_matmul(&m.w1, &ds.x1));
    let f2 = diff(&m.v, &naive_matmul(&m.w2, &ds.x2));
    lin(&[
        (2.0 * h.lambda1, &r1),
        (2.0 * h.lambda2, &r2),
        (2.0 * h.alpha, &rr),
        (2.0 * h.beta1, &f1),
        (2.0 * h.beta2, &f2),
        (2.0 * h.mu, &m.v),
    ])
}

/// Scale for a relative gradient residual: the sum of the Frobenius norms
/// of the individual gradient contributions.
pub fn grad_scale_u(m: &EdshModel, x: &DenseMatrix, u: &DenseMatrix, lambda: f64) -> f64 {
    let uvvt = naive_matmul(&naive_matmul(u, &m.v), &t(&m.v));
    let xvt = naive_matmul(x, &t(&m.v));
    2.0 * lambda * (sq(&uvvt).sqrt() + sq(&xvt).sqrt()) + 2.0 * m.hyper.mu * sq(u).sqrt()
}

pub fn grad_scale_w(m: &EdshModel, x: &DenseMatrix, w: &DenseMatrix, beta: f64) -> f64 {
    let wxxt = naive_matmul(&naive_matmul(w, x), &t(x));
    let vxt = naive_matmul(&m.v, &t(x));
    2.0 * beta * (sq(&wxxt).sqrt() + sq(&vxt).sqrt()) + 2.0 * m.hyper.mu * sq(w).sqrt()
}

pub fn grad_scale_v(m: &EdshModel, ds: &Dataset) -> f64 {
    let h = &m.hyper;
    let n = |a: DenseMatrix| sq(&a).sqrt();
    2.0 * (h.lambda1
        * (n(naive_matmul(&naive_matmul(&t(&m.u1), &m.u1), &m.v))
            + n(naive_matmul(&t(&m.u1), &ds.x1)))
        + h.lambda2
            * (n(naive_matmul(&naive_matmul(&t(&m.u2), &m.u2), &m.v))
                + n(naive_matmul(&t(&m.u2), &ds.x2)))
        + h.alpha
            * (n(naive_matmul(&naive_matmul(&t(&m.r), &m.r), &m.v))
                + n(naive_matmul(&t(&m.r), &m.b)))
        + h.beta1 * n(naive_matmul(&m.w1, &ds.x1))
        + h.beta2 * n(naive_matmul(&m.w2, &ds.x2))
        + (h.beta1 + h.beta2 + h.mu) * n(m.v.clone()))
}

/// Parameter block of the model, addressed for perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    U1,
    U2,
    P,
    V,
    W1,
    W2,
}

pub const BLOCKS: [Block; 6] = [
    Block::U1,
    Block::U2,
    Block::P,
    Block::V,
    Block::W1,
    Block::W2,
];

pub fn block_mut(m: &mut EdshModel, b: Block) -> &mut DenseMatrix {
    match b {
        Block::U1 => &mut m.u1,
        Block::U2 => &mut m.u2,
        Block::P => &mut m.p,
        Block::V => &mut m.v,
        Block::W1 => &mut m.w1,
        Block::W2 => &mut m.w2,
    }
}

pub fn block(m: &EdshModel, b: Block) -> &DenseMatrix {
    match b {
        Block::U1 => &m.u1,
        Block::U2 => &m.u2,
        Block::P => &m.p,
        Block::V => &m.v,
        Block::W1 => &m.w1,
        Block::W2 => &m.w2,
    }
}

fn with_block(m: &EdshModel, b: Block, values: &[f64]) -> EdshModel {
    let mut out = m.clone();
    let (r, c) = block(m, b).shape();
    *block_mut(&mut out, b) = DenseMatrix::from_vec(r, c, values.to_vec()).unwrap();
    out
}

/// Central finite-difference gradient of the full objective in one block.
pub fn fd_gradient(m: &EdshModel, ds: &Dataset, b: Block, h: f64) -> DenseMatrix {
    let base = block(m, b).clone();
    let x = base.as_slice().to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fp = naive_objective(&with_block(m, b, &xp), ds);
        let fm = naive_objective(&with_block(m, b, &xm), ds);
        g[i] = (fp - fm) / (2.0 * h);
    }
    DenseMatrix::from_vec(base.rows(), base.cols(), g).unwrap()
}

/// Minimizes the full objective over one block with Polak-Ribiere conjugate
/// gradients. Gradients are central finite differences and each line search
/// fits a parabola through three objective values, so no closed form is
/// consulted; the start point is the current block value.
pub fn numeric_block_minimizer(m: &EdshModel, ds: &Dataset, b: Block) -> DenseMatrix {
    let mut cur = m.clone();
    let n = block(m, b).as_slice().len();
    let mut g = fd_gradient(&cur, ds, b, 1e-3);
    let mut d: Vec<f64> = g.as_slice().iter().map(|v| -v).collect();
    for iter in 0..50 * n.max(1) {
        let f0 = naive_objective(&cur, ds);
        if sq(&g).sqrt() <= 1e-12 * f0.abs().max(1.0) {
            break;
        }
        let x = block(&cur, b).as_slice().to_vec();
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        // probe distance comparable to the step we expect to take
        let s = 1e-2 * (x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0)) / dn.max(1e-300);
        let at = |t: f64| -> Vec<f64> { x.iter().zip(&d).map(|(a, dd)| a + t * dd).collect() };
        let fp = naive_objective(&with_block(&cur, b, &at(s)), ds);
        let fm = naive_objective(&with_block(&cur, b, &at(-s)), ds);
        let curv = fp - 2.0 * f0 + fm;
        let t = if curv > 0.0 {
            s * (fm - fp) / (2.0 * curv)
        } else {
            s
        };
        let next = with_block(&cur, b, &at(t));
        if naive_objective(&next, ds) > f0 {
            // restart along steepest descent
            d = g.as_slice().iter().map(|v| -v).collect();
            continue;
        }
        cur = next;
        let g_new = fd_gradient(&cur, ds, b, 1e-3);
        let num: f64 = g_new
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(a, o)| a * (a - o))
            .sum();
        let beta = if (iter + 1) % n.max(1) == 0 {
            0.0
        } else {
            (num / sq(&g)).max(0.0)
        };
        d = g_new
            .as_slice()
            .iter()
            .zip(&d)
            .map(|(gn, dd)| -gn + beta * dd)
            .collect();
        g = g_new;
    }
    block(&cur, b).clone()
}

/// Random hyperparameters with every weight in [0.5, 10].
pub fn random_hyper(rng: &mut ChaCha8Rng, k: usize) -> Hyperparams {
    let mut w = || rng.random_range(0.5..10.0);
    Hyperparams {
        lambda1: w(),
        lambda2: w(),
        gamma: w(),
        alpha: w(),
        beta1: w(),
        beta2: w(),
        mu: w(),
        k,
        miter: 3,
        seed: 0,
        rel_tol: 0.0,
    }
}

/// A tiny centered dataset (k <= 3, N <= 5, d <= 4) and a model that has
/// been initialized and then run for 0-2 full iterations.
pub fn tiny_instance(seed: u64) -> (EdshModel, Dataset) {
    let mut rng = rng(seed);
    let k = rng.random_range(1..=3);
    let n = rng.random_range(2..=5);
    let d1 = rng.random_range(1..=4);
    let d2 = rng.random_range(1..=4);
    let c = rng.random_range(2..=3);
    let (x1, _) = center(&gaussian(&mut rng, d1, n));
    let (x2, _) = center(&gaussian(&mut rng, d2, n));
    let mut labels = DenseMatrix::zeros(c, n);
    for j in 0..n {
        labels.set(rng.random_range(0..c), j, 1.0);
        if rng.random::<f64>() < 0.3 {
            labels.set(rng.random_range(0..c), j, 1.0);
        }
    }
    let ds = Dataset::new(x1, x2, labels).unwrap();
    let mut hyper = random_hyper(&mut rng, k);
    hyper.seed = rng.random();
    let mut model = init_state(&ds, &hyper).unwrap();
    for _ in 0..rng.random_range(0..=2) {
        iterate(&mut model, &ds).unwrap();
    }
    (model, ds)
}

// ---------------------------------------------------------------------------
// Retrieval metrics, recomputed from raw distances.

/// Distances from every query to every database code, from +-1 matrices.
pub fn naive_distances(queries: &DenseMatrix, db: &DenseMatrix) -> Vec<Vec<usize>> {
    (0..queries.cols())
        .map(|q| {
            (0..db.cols())
                .map(|j| {
                    (0..db.rows())
                        .filter(|&b| queries.get(b, q) != db.get(b, j))
                        .count()
                })
                .collect()
        })
        .collect()
}

/// Stable sort of database indices by distance.
pub fn naive_ranking(dist: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dist.len()).collect();
    idx.sort_by_key(|&i| dist[i]);
    idx
}

pub fn naive_relevant(ql: &DenseMatrix, q: usize, dbl: &DenseMatrix, j: usize) -> bool {
    (0..ql.rows()).any(|c| ql.get(c, q) == 1.0 && dbl.get(c, j) == 1.0)
}

/// AP at cutoff `m` with `L = min(relevant, m)`, straight from the formula.
pub fn naive_ap(ranking: &[usize], rel: &[bool], m: usize) -> f64 {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let l = total.min(m);
    let mut s = 0.0;
    for i in 1..=m.min(ranking.len()) {
        if rel[ranking[i - 1]] {
            let p = ranking[..i].iter().filter(|&&x| rel[x]).count() as f64 / i as f64;
            s += p;
        }
    }
    s / l as f64
}

pub fn naive_precision_at(ranking: &[usize], rel: &[bool], k: usize) -> f64 {
    ranking[..k].iter().filter(|&&x| rel[x]).count() as f64 / k as f64
}

/// Interpolated precision at recall `level_tenths / 10` for one query.
pub fn naive_interp_precision(ranking: &[usize], rel: &[bool], level_tenths: usize) -> f64 {
    let total = rel.iter().filter(|&&r| r).count();
    let mut best: f64 = 0.0;
    for i in 1..=ranking.len() {
        let hits = ranking[..i].iter().filter(|&&x| rel[x]).count();
        if hits * 10 >= level_tenths * total {
            best = best.max(hits as f64 / i as f64);
        }
    }
    best
}

/// Random retrieval instance: ±1 codes and multi-hot labels.
pub struct MetricInstance {
    pub query_codes: DenseMatrix,
    pub db_codes: DenseMatrix,
    pub query_labels: DenseMatrix,
    pub db_labels: DenseMatrix,
}

/// Short codes so that distance ties are frequent; `n_db <= 50`.
pub fn metric_instance(seed: u64) -> MetricInstance {
    let mut r = rng(seed);
    let k = r.random_range(1..=8);
    let c = r.random_range(2..=5);
    let n_q = r.random_range(1..=10);
    let n_db = r.random_range(1..=50);
    let mut labels =
        |n: usize| DenseMatrix::from_fn(c, n, |_, _| if r.random_bool(0.3) { 1.0 } else { 0.0 });
    let query_labels = labels(n_q);
    let db_labels = labels(n_db);
    MetricInstance {
        query_codes: random_signs(&mut r, k, n_q),
        db_codes: random_signs(&mut r, k, n_db),
        query_labels,
        db_labels,
    }
}

impl MetricInstance {
    pub fn naive_rankings(&self) -> Vec<Vec<usize>> {
        naive_distances(&self.query_codes, &self.db_codes)
            .iter()
            .map(|d| naive_ranking(d))
            .collect()
    }

    pub fn naive_relevance(&self) -> Vec<Vec<bool>> {
        (0..self.query_labels.cols())
            .map(|q| {
                (0..self.db_labels.cols())
                    .map(|j| naive_relevant(&self.query_labels, q, &self.db_labels, j))
                    .collect()
            })
            .collect()
    }
}

pub fn naive_map(rankings: &[Vec<usize>], rel: &[Vec<bool>], m: usize) -> f64 {
    let mut s = 0.0;
    for (rk, rl) in rankings.iter().zip(rel) {
        s += naive_ap(rk, rl, m);
    }
    s / rankings.len() as f64
}

/// `(k, mean precision@k)` with `k` clamped to the ranking length and
/// duplicates dropped.
pub fn naive_topk(rankings: &[Vec<usize>], rel: &[Vec<bool>], ks: &[usize]) -> Vec<(usize, f64)> {
    let len = rankings.iter().map(Vec::len).min().unwrap();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for &k in ks {
        let k = k.min(len);
        if out.iter().any(|&(prev, _)| prev == k) {
            continue;
        }
        let mut s = 0.0;
        for (rk, rl) in rankings.iter().zip(rel) {
            s += naive_precision_at(rk, rl, k);
        }
        out.push((k, s / rankings.len() as f64));
    }
    out
}

/// 11-point curve averaged over queries that have a relevant item.
pub fn naive_pr(rankings: &[Vec<usize>], rel: &[Vec<bool>]) -> Vec<(f64, f64)> {
    let included: Vec<usize> = (0..rankings.len())
        .filter(|&q| rel[q].iter().any(|&r| r))
        .collect();
    (0..=10)
        .map(|level| {
            let mut s = 0.0;
            for &q in &included {
                s += naive_interp_precision(&rankings[q], &rel[q], level);
            }
            let p = if included.is_empty() {
                0.0
            } else {
                s / included.len() as f64
            };
            (level as f64 / 10.0, p)
        })
        .collect()
}
