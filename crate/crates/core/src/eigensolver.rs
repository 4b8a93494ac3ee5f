//! Smallest eigenpairs of K x = λ M x.
//!
//! Shift-invert block Lanczos on (K − σM)⁻¹M with full M-orthogonalisation and
//! Rayleigh–Ritz on K. The shifted matrix is factored by an envelope (skyline)
//! LDLᵀ after reverse Cuthill–McKee reordering; its inertia gives Sylvester counts.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{dot, norm2, SparseSymmetricMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    pub vector: Vec<f64>,
    /// ‖Kx − λMx‖₂ / ‖x‖_M.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub nev: usize,
    /// `None` selects −1e-3·‖K‖∞.
    pub shift: Option<f64>,
    /// Accept when ‖Kx − λMx‖₂/‖x‖_M ≤ tol·max(1, |λ|).
    pub tol: f64,
    /// Block expansion steps over all restarts.
    pub max_iter: usize,
    pub dense_fallback_threshold: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            nev: 6,
            shift: None,
            tol: 1e-10,
            max_iter: 400,
            dense_fallback_threshold: 400,
            block_size: 4,
            seed: 0x5eed,
        }
    }
}

impl SolverOptions {
    pub fn with_nev(nev: usize) -> Self {
        SolverOptions { nev, ..Default::default() }
    }

    fn validate(&self) -> Result<()> {
        if self.nev == 0 || !(self.tol > 0.0) || self.block_size == 0 {
            return Err(Error::InvalidConfig(format!(
                "solver needs nev >= 1, tol > 0 and a positive block size (nev={}, tol={})",
                self.nev, self.tol
            )));
        }
        Ok(())
    }
}

/// Reverse Cuthill–McKee ordering; returns `perm` with `perm[new] = old`.
pub fn rcm_ordering(a: &SparseSymmetricMatrix) -> Vec<usize> {
    let n = a.dim();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for (j, _) in a.row(i) {
            if j != i {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    let deg: Vec<usize> = adj.iter().map(Vec::len).collect();
    for l in adj.iter_mut() {
        l.sort_unstable_by_key(|&v| (deg[v], v));
    }
    let bfs = |start: usize, mark: &mut Vec<bool>| -> Vec<usize> {
        let mut order = vec![start];
        let mut q = VecDeque::from([start]);
        mark[start] = true;
        while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if !mark[w] {
                    mark[w] = true;
                    order.push(w);
                    q.push_back(w);
                }
            }
        }
        order
    };
    let mut visited = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start: repeat BFS from the last, lowest-degree node reached
        let mut start = seed;
        for _ in 0..4 {
            let mut mark = visited.clone();
            let order = bfs(start, &mut mark);
            let far = *order.last().unwrap();
            let candidate = order.iter().rev().take(8).copied().min_by_key(|&v| (deg[v], v)).unwrap_or(far);
            if candidate == start {
                break;
            }
            start = candidate;
        }
        perm.extend(bfs(start, &mut visited));
    }
    perm.reverse();
    perm
}

/// Envelope LDLᵀ of a symmetric matrix under a fill-reducing permutation.
#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    perm: Vec<usize>,
    first: Vec<usize>,
    offset: Vec<usize>,
    /// Row i holds L_{i,first[i]..i}; the diagonal slot holds d_i.
    env: Vec<f64>,
}

impl LdlFactor {
    pub fn new(a: &SparseSymmetricMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = rcm_ordering(a);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for (j, _) in a.row(i) {
                let (p, q) = (inv[i], inv[j]);
                let (lo, hi) = if p < q { (p, q) } else { (q, p) };
                first[hi] = first[hi].min(lo);
            }
        }
        let mut offset = vec![0usize; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut env = vec![0.0; offset[n]];
        let mut max_diag = 0.0f64;
        for i in 0..n {
            for (j, v) in a.row(i) {
                let (p, q) = (inv[i], inv[j]);
                let (lo, hi) = if p < q { (p, q) } else { (q, p) };
                env[offset[hi] + lo - first[hi]] += v;
                if i == j {
                    max_diag = max_diag.max(v.abs());
                }
            }
        }
        let floor = 1e-14 * max_diag;
        let mut w = Vec::new();
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = env.split_at_mut(offset[i]);
            let row = &mut rest[..i - fi + 1];
            // row[k - fi] becomes w_k = L_ik d_k for k < i
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let lj = &done[offset[j]..offset[j + 1]];
                let s = row[j - fi] - dot(&row[k0 - fi..j - fi], &lj[k0 - fj..j - fj]);
                row[j - fi] = s;
            }
            let mut di = row[i - fi];
            w.clear();
            for k in fi..i {
                let dk = done[offset[k + 1] - 1];
                let l = row[k - fi] / dk;
                di -= row[k - fi] * l;
                w.push(l);
            }
            row[..i - fi].copy_from_slice(&w);
            if !(di.abs() > floor) {
                return Err(Error::FactorizationSingular { row: perm[i], pivot: di });
            }
            row[i - fi] = di;
        }
        Ok(LdlFactor { n, perm, first, offset, env })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn pivot(&self, i: usize) -> f64 {
        self.env[self.offset[i + 1] - 1]
    }

    /// Number of negative pivots.
    pub fn negative_pivots(&self) -> usize {
        (0..self.n).filter(|&i| self.pivot(i) < 0.0).count()
    }

    /// Stored envelope entries, a proxy for factorisation cost.
    pub fn envelope_size(&self) -> usize {
        self.env.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.env[self.offset[i]..self.offset[i + 1] - 1];
            y[i] -= dot(row, &y[fi..i]);
        }
        for i in 0..self.n {
            y[i] /= self.pivot(i);
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let xi = y[i];
            let row = &self.env[self.offset[i]..self.offset[i + 1] - 1];
            for (k, l) in row.iter().enumerate() {
                y[fi + k] -= l * xi;
            }
        }
        let mut x = vec![0.0; self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

fn check_pencil(k: &SparseSymmetricMatrix, m: &SparseSymmetricMatrix) -> Result<()> {
    if k.dim() != m.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), got: m.dim() });
    }
    Ok(())
}

/// Number of eigenvalues of (K, M) strictly below σ, from the inertia of K − σM.
pub fn count_below(k: &SparseSymmetricMatrix, m: &SparseSymmetricMatrix, sigma: f64) -> Result<usize> {
    check_pencil(k, m)?;
    let a = SparseSymmetricMatrix::lincomb(1.0, k, -sigma, m)?;
    Ok(LdlFactor::new(&a)?.negative_pivots())
}

pub fn solve_gevp(k: &SparseSymmetricMatrix, m: &SparseSymmetricMatrix, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    check_pencil(k, m)?;
    opts.validate()?;
    let n = k.dim();
    if opts.nev > n {
        return Err(Error::InvalidConfig(format!("nev = {} exceeds dimension {n}", opts.nev)));
    }
    if n <= opts.dense_fallback_threshold {
        // the dense transform loses accuracy on badly scaled pencils; shift-invert does not
        match dense_gevp(k, m, opts) {
            Err(Error::NoConvergence { .. }) => {}
            other => return other,
        }
    }
    let base = opts.shift.unwrap_or(-1e-3 * k.norm_inf());
    let mut last_err = None;
    for attempt in 0..4 {
        let sigma = base + attempt as f64 * 1e-3 * (base.abs() + 1.0);
        let a = SparseSymmetricMatrix::lincomb(1.0, k, -sigma, m)?;
        match LdlFactor::new(&a) {
            Ok(f) => return lanczos(k, m, &f, opts),
            Err(e @ Error::FactorizationSingular { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap())
}

struct Basis<'a> {
    m: &'a SparseSymmetricMatrix,
    v: Vec<Vec<f64>>,
    mv: Vec<Vec<f64>>,
}

impl Basis<'_> {
    /// M-orthogonalises `x` against the basis (twice) and appends it if it survives.
    fn push(&mut self, mut x: Vec<f64>) -> bool {
        let before = dot(&x, &self.m.matvec(&x)).sqrt();
        if !(before > 0.0) {
            return false;
        }
        for _ in 0..2 {
            for (v, mv) in self.v.iter().zip(&self.mv) {
                let c = dot(&x, mv);
                x.iter_mut().zip(v).for_each(|(a, b)| *a -= c * b);
            }
        }
        let mx = self.m.matvec(&x);
        let nrm = dot(&x, &mx).sqrt();
        if !(nrm > 1e-10 * before) {
            return false;
        }
        x.iter_mut().for_each(|a| *a /= nrm);
        self.mv.push(mx.into_iter().map(|a| a / nrm).collect());
        self.v.push(x);
        true
    }

    fn len(&self) -> usize {
        self.v.len()
    }
}

fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn combine(vs: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; vs[0].len()];
    for (v, &c) in vs.iter().zip(y) {
        if c != 0.0 {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += c * b);
        }
    }
    x
}

fn lanczos(k: &SparseSymmetricMatrix, m: &SparseSymmetricMatrix, f: &LdlFactor, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    let n = k.dim();
    let nev = opts.nev;
    let b = opts.block_size.min(n);
    let mmax = (nev + 2 * b).max(3 * nev).max(nev + 30).min(n);
    let keep = (nev + b).min(mmax.saturating_sub(b)).max(nev);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let op = |x: &[f64]| f.solve(&m.matvec(x));

    let mut basis = Basis { m, v: Vec::new(), mv: Vec::new() };
    let mut block: Vec<Vec<f64>> = (0..b).map(|_| op(&random_vector(n, &mut rng))).collect();
    let mut steps = 0usize;
    loop {
        // expand the Krylov space block by block
        while basis.len() < mmax {
            let start = basis.len();
            for x in block.drain(..) {
                if basis.len() == mmax {
                    break;
                }
                if !basis.push(x) {
                    let r = random_vector(n, &mut rng);
                    basis.push(r);
                }
            }
            steps += 1;
            if basis.len() == start {
                break;
            }
            block = basis.v[start..].iter().map(|v| op(v)).collect();
        }

        // Rayleigh–Ritz with K
        let p = basis.len();
        let kv: Vec<Vec<f64>> = basis.v.iter().map(|v| k.matvec(v)).collect();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let s = 0.5 * (dot(&basis.v[i], &kv[j]) + dot(&basis.v[j], &kv[i]));
                h[(i, j)] = s;
                h[(j, i)] = s;
            }
        }
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));

        let mut pairs = Vec::with_capacity(keep);
        let mut worst = 0.0f64;
        for (rank, &idx) in order.iter().take(keep.min(p)).enumerate() {
            let y: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
            let lambda = eig.eigenvalues[idx];
            let x = combine(&basis.v, &y);
            let kx = combine(&kv, &y);
            let mx = combine(&basis.mv, &y);
            let xn = dot(&x, &mx).sqrt();
            let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, c)| a - lambda * c).collect();
            let residual = norm2(&r) / xn;
            if rank < nev {
                worst = worst.max(residual / lambda.abs().max(1.0));
            }
            pairs.push((EigenPair { lambda, vector: x, residual }, mx));
        }
        if worst <= opts.tol {
            let mut out: Vec<EigenPair> = pairs.into_iter().take(nev).map(|(e, _)| e).collect();
            out.iter_mut().for_each(|e| fix_sign(&mut e.vector));
            return Ok(out);
        }
        if steps >= opts.max_iter || p == n {
            return Err(Error::NoConvergence { iterations: steps, residual: worst });
        }
        // restart from the leading Ritz vectors; expand with the unconverged ones
        let unconverged: Vec<usize> =
            (0..pairs.len()).filter(|&i| pairs[i].0.residual > opts.tol * pairs[i].0.lambda.abs().max(1.0)).collect();
        basis.v.clear();
        basis.mv.clear();
        let mut seeds = Vec::new();
        for (i, (e, _)) in pairs.into_iter().enumerate() {
            if unconverged.contains(&i) && seeds.len() < b {
                seeds.push(op(&e.vector));
            }
            basis.push(e.vector);
        }
        block = seeds;
        while block.len() < b {
            block.push(op(&random_vector(n, &mut rng)));
        }
    }
}

/// Deterministic sign: the entry of largest magnitude (lowest index on ties) is positive.
fn fix_sign(x: &mut [f64]) {
    let mut best = 0;
    for i in 1..x.len() {
        if x[i].abs() > x[best].abs() * (1.0 + 1e-12) {
            best = i;
        }
    }
    if x.get(best).is_some_and(|v| *v < 0.0) {
        x.iter_mut().for_each(|v| *v = -*v);
    }
}

fn dense_gevp(k: &SparseSymmetricMatrix, m: &SparseSymmetricMatrix, opts: &SolverOptions) -> Result<Vec<EigenPair>> {
    let n = k.dim();
    let kd = k.to_dense();
    let chol = m
        .to_dense()
        .cholesky()
        .ok_or(Error::FactorizationSingular { row: 0, pivot: 0.0 })?;
    let l = chol.l();
    let linv_k = l.solve_lower_triangular(&kd).ok_or(Error::FactorizationSingular { row: 0, pivot: 0.0 })?;
    let c = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or(Error::FactorizationSingular { row: 0, pivot: 0.0 })?;
    let c = 0.5 * (&c + c.transpose());
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lt = l.transpose();
    let mut out = Vec::with_capacity(opts.nev);
    for &idx in order.iter().take(opts.nev) {
        let y = DVector::from_iterator(n, eig.eigenvectors.column(idx).iter().copied());
        let x = lt.solve_upper_triangular(&y).ok_or(Error::FactorizationSingular { row: 0, pivot: 0.0 })?;
        let mut x: Vec<f64> = x.iter().copied().collect();
        let lambda = eig.eigenvalues[idx];
        let mx = m.matvec(&x);
        let xn = dot(&x, &mx).sqrt();
        x.iter_mut().for_each(|v| *v /= xn);
        let (kx, mx) = (k.matvec(&x), m.matvec(&x));
        let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lambda * b).collect();
        let residual = norm2(&r);
        if residual > opts.tol * lambda.abs().max(1.0) {
            return Err(Error::NoConvergence { iterations: 1, residual });
        }
        fix_sign(&mut x);
        out.push(EigenPair { lambda, vector: x, residual });
    }
    Ok(out)
}
