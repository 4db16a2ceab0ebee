//! Integrated Euler-Maruyama simulation of the fake-stationary Volterra
//! square-root variance
//!
//! V_k = h_k + (ν/λ) Σ_{ℓ=1}^{k} ς(t_ℓ) √(V_{ℓ-1})⁺ I^ℓ_k,
//! h_k = x∞ + (V_0 - x∞) R(t_k),  I^ℓ_k = ∫_{t_{ℓ-1}}^{t_ℓ} f(t_k - s) dW_s.
//!
//! For a fixed step ℓ the vector (ΔW_ℓ, I^ℓ_ℓ, ..., I^ℓ_n) is Gaussian with a
//! covariance that depends only on the lags k - ℓ. The covariance for step ℓ
//! is therefore the leading (n-ℓ+2)-block of one matrix, and a single
//! unpivoted Cholesky factor of that matrix serves every step. The factor is
//! numerically of very low rank (the lagged densities are smooth), so it is
//! stored as an (n+1) × r matrix.
//!
//! Paths are generated in fixed-size blocks with one ChaCha8 stream per
//! (block, asset) pair, so results are bit-identical for any thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::kernels::KernelSpec;
use crate::model::{ModelParams, SimGrid};
use crate::quadrature::{adaptive, GaussLegendre};
use crate::stabilizer::Stabilizer;

/// Floor applied to Gaussian initial variances.
pub const V0_FLOOR: f64 = 1e-12;
/// Default number of paths per block.
pub const DEFAULT_BLOCK_SIZE: usize = 256;

const GL_NODES: usize = 16;
const QUAD_TOL: f64 = 1e-14;

/// Cov(I^ℓ_{k1}, I^ℓ_{k2}) = ∫_{t_{ℓ-1}}^{t_ℓ} f(t_{k1}-s) f(t_{k2}-s) ds for
/// 1 ≤ ℓ ≤ k1, k2 ≤ n.
pub fn gaussian_integral_covariance(
    spec: &KernelSpec,
    grid: &SimGrid,
    ell: usize,
    k1: usize,
    k2: usize,
) -> Result<f64> {
    let n = grid.n_steps;
    if ell == 0 || ell > n || k1 < ell || k2 < ell || k1 > n || k2 > n {
        return Err(Error::Domain(format!(
            "covariance indices need 1 <= ell <= k1, k2 <= n = {n}; got ell = {ell}, k1 = {k1}, k2 = {k2}"
        )));
    }
    let (m1, m2) = ((k1 - ell).min(k2 - ell), (k1 - ell).max(k2 - ell));
    Ok(lag_covariance(spec, grid.step(), m1, m2))
}

/// Cov(ΔW_ℓ, I^ℓ_k) = ∫_{t_{ℓ-1}}^{t_ℓ} f(t_k - s) ds = R(t_k - t_ℓ) - R(t_k - t_{ℓ-1}).
pub fn increment_covariance(spec: &KernelSpec, grid: &SimGrid, ell: usize, k: usize) -> Result<f64> {
    if ell == 0 || k < ell || k > grid.n_steps {
        return Err(Error::Domain(format!("need 1 <= ell <= k <= n, got ell = {ell}, k = {k}")));
    }
    Ok(lag_mass(spec, grid.step(), k - ell))
}

/// ∫_0^Δ f(mΔ + u) du by quadrature of the positive density; the resolvent
/// difference would lose digits to cancellation.
fn lag_mass(spec: &KernelSpec, dt: f64, m: usize) -> f64 {
    let a = spec.alpha;
    if m == 0 {
        // u = Δ w^{1/α}
        return adaptive(|w: f64| spec.density_regular(dt * w.powf(1.0 / a)), 0.0, 1.0, 0.0, QUAD_TOL).value
            * dt.powf(a)
            / a;
    }
    GaussLegendre::new(GL_NODES).integrate(0.0, dt, |u| spec.density(m as f64 * dt + u))
}

/// ∫_0^Δ f(m1 Δ + u) f(m2 Δ + u) du for m1 ≤ m2.
fn lag_covariance(spec: &KernelSpec, dt: f64, m1: usize, m2: usize) -> f64 {
    let a = spec.alpha;
    if m1 == 0 && m2 == 0 {
        // u = Δ w^p, p = 1/(2α-1): f(u)² du = p Δ^{2α-1} g(u)² dw
        let p = 1.0 / (2.0 * a - 1.0);
        return adaptive(|w: f64| spec.density_regular(dt * w.powf(p)).powi(2), 0.0, 1.0, 0.0, QUAD_TOL).value
            * p
            * dt.powf(2.0 * a - 1.0);
    }
    if m1 == 0 {
        // u = Δ w^{1/α}: u^{α-1} du = (Δ^α/α) dw
        let shift = m2 as f64 * dt;
        return adaptive(
            |w: f64| {
                let u = dt * w.powf(1.0 / a);
                spec.density_regular(u) * spec.density(shift + u)
            },
            0.0,
            1.0,
            0.0,
            QUAD_TOL,
        )
        .value
            * dt.powf(a)
            / a;
    }
    GaussLegendre::new(GL_NODES).integrate(0.0, dt, |u| {
        spec.density(m1 as f64 * dt + u) * spec.density(m2 as f64 * dt + u)
    })
}

/// Joint covariance of (ΔW, I_0, ..., I_{n-1}) where I_m is the integral over
/// one step evaluated m steps after that step ends.
pub fn joint_covariance(spec: &KernelSpec, grid: &SimGrid) -> DMatrix<f64> {
    let n = grid.n_steps;
    let dt = grid.step();
    let mut c = DMatrix::<f64>::zeros(n + 1, n + 1);
    c[(0, 0)] = dt;
    for m in 0..n {
        let v = lag_mass(spec, dt, m);
        c[(0, m + 1)] = v;
        c[(m + 1, 0)] = v;
    }
    for m in 0..n {
        let v = lag_covariance(spec, dt, 0, m);
        c[(1, m + 1)] = v;
        c[(m + 1, 1)] = v;
    }
    // lags ≥ 1 share one Gauss-Legendre table
    let (nodes, weights) = GaussLegendre::new(GL_NODES).mapped(0.0, dt);
    let table: Vec<Vec<f64>> = (1..n)
        .map(|m| nodes.iter().map(|&u| spec.density(m as f64 * dt + u)).collect())
        .collect();
    for i in 1..n {
        for j in i..n {
            let v: f64 = (0..GL_NODES).map(|q| weights[q] * table[i - 1][q] * table[j - 1][q]).sum();
            c[(i + 1, j + 1)] = v;
            c[(j + 1, i + 1)] = v;
        }
    }
    c
}

/// Rank-revealing unpivoted Cholesky: pivots below a relative threshold are
/// treated as zero and produce no column. Significantly negative pivots
/// trigger up to three diagonal jitters of 1e-12·trace/dim.
pub fn extended_cholesky(a: &DMatrix<f64>, block: &str) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Cholesky {
            block: block.into(),
            reason: "matrix is not square".into(),
        });
    }
    let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let base_jitter = 1e-12 * trace / n as f64;
    let mut last_reason = String::new();
    for attempt in 0..=3 {
        let jitter = base_jitter * attempt as f64;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut failed = None;
        for q in 0..n {
            let aqq = a[(q, q)] + jitter;
            let d = aqq - cols.iter().map(|c| c[q] * c[q]).sum::<f64>();
            let tol = (1e-12 * aqq.abs()).max(1e-14 * max_diag);
            if d > tol {
                let s = d.sqrt();
                let mut col = vec![0.0; n];
                col[q] = s;
                for i in q + 1..n {
                    let dot: f64 = cols.iter().map(|c| c[i] * c[q]).sum();
                    col[i] = (a[(i, q)] - dot) / s;
                }
                cols.push(col);
            } else if d < -(1e-8 * aqq.abs()).max(1e-12 * max_diag) {
                failed = Some(format!("pivot {q} = {d:e} after jitter {jitter:e}"));
                break;
            }
        }
        match failed {
            None => {
                let r = cols.len();
                let l = DMatrix::from_fn(n, r, |i, j| cols[j][i]);
                return Ok((l, jitter));
            }
            Some(reason) => last_reason = reason,
        }
    }
    Err(Error::Cholesky {
        block: block.into(),
        reason: last_reason,
    })
}

/// Low-rank factor L with L Lᵀ ≈ joint covariance of (ΔW, I_0, ..., I_{n-1}).
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    pub spec: KernelSpec,
    pub grid: SimGrid,
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

impl CovarianceFactor {
    pub fn build(spec: KernelSpec, grid: SimGrid) -> Result<Self> {
        let c = joint_covariance(&spec, &grid);
        let label = format!("kernel (alpha = {}, lambda = {}), n = {}", spec.alpha, spec.lambda, grid.n_steps);
        let (factor, jitter) = extended_cholesky(&c, &label)?;
        Ok(Self {
            spec,
            grid,
            factor,
            jitter,
        })
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }
}

/// How V_0 is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum V0Mode {
    /// V_0 = E[V_0] = x∞ on every path.
    Mean,
    /// V_0 ~ N(x∞, c ν² x∞), floored at `V0_FLOOR`.
    Gaussian,
}

/// Gaussian initial variances, one vector per asset.
pub fn sample_v0(params: &ModelParams, n_paths: usize, seed: u64) -> Vec<Vec<f64>> {
    params
        .assets
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(u64::MAX - i as u64);
            let sd = a.v0_var().sqrt();
            (0..n_paths)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (a.x_inf() + sd * z).max(V0_FLOOR)
                })
                .collect()
        })
        .collect()
}

/// Paths of one block. Matrices are column-per-path: `v[i]` is (n+1) × P,
/// increments are n × P with row k-1 holding the increment over (t_{k-1}, t_k].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPaths {
    pub n_paths: usize,
    /// Variance, floored at zero.
    pub v: Vec<DMatrix<f64>>,
    /// Stock Brownian increments ΔB.
    pub db: Vec<DMatrix<f64>>,
    /// Independent increments ΔB⊥; ΔW = ρ ΔB + √(1-ρ²) ΔB⊥.
    pub db_perp: Vec<DMatrix<f64>>,
    /// Own-step Gaussian integrals I^ℓ_ℓ; the lagged I^ℓ_k are regenerated from the seed.
    pub i_diag: Vec<DMatrix<f64>>,
    /// Conditional forward curves E[V_{t_j} | F_{t_k}] at requested steps k
    /// (rows j < k hold the realised unfloored values).
    pub forward: Vec<Vec<DMatrix<f64>>>,
}

/// Simulated variance paths and the Brownian drivers of the stocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub seed: u64,
    pub grid: SimGrid,
    pub n_paths: usize,
    pub rho: Vec<f64>,
    pub v: Vec<DMatrix<f64>>,
    pub db: Vec<DMatrix<f64>>,
    pub db_perp: Vec<DMatrix<f64>>,
    pub i_diag: Vec<DMatrix<f64>>,
}

impl PathBundle {
    /// ΔW^i = ρ_i ΔB^i + √(1-ρ_i²) ΔB^{⊥,i}.
    pub fn dw(&self, asset: usize) -> DMatrix<f64> {
        let rho = self.rho[asset];
        let s = (1.0 - rho * rho).sqrt();
        &self.db[asset] * rho + &self.db_perp[asset] * s
    }
}

/// Precomputed factors and tables for repeated path generation.
#[derive(Debug, Clone)]
pub struct VarianceEngine {
    params: ModelParams,
    grid: SimGrid,
    factors: Vec<CovarianceFactor>,
    /// ς(t_ℓ) per asset.
    sigma: Vec<Vec<f64>>,
    /// R(t_k) per asset.
    resolvent: Vec<Vec<f64>>,
    v0_mode: V0Mode,
    block_size: usize,
}

impl VarianceEngine {
    pub fn new(params: &ModelParams, stabilizers: &[Stabilizer], grid: SimGrid) -> Result<Self> {
        if stabilizers.len() != params.dim() {
            return Err(invalid("stabilizers", "need one stabilizer per asset"));
        }
        if (grid.horizon - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(invalid("grid", "horizon must match the model horizon"));
        }
        let times = grid.times();
        let factors = params
            .assets
            .iter()
            .map(|a| CovarianceFactor::build(a.kernel(), grid))
            .collect::<Result<Vec<_>>>()?;
        let sigma = stabilizers
            .iter()
            .map(|s| times.iter().map(|&t| s.value(t)).collect())
            .collect();
        let resolvent = params
            .assets
            .iter()
            .map(|a| times.iter().map(|&t| a.kernel().resolvent(t)).collect())
            .collect();
        Ok(Self {
            params: params.clone(),
            grid,
            factors,
            sigma,
            resolvent,
            v0_mode: V0Mode::Mean,
            block_size: DEFAULT_BLOCK_SIZE,
        })
    }

    pub fn with_v0_mode(mut self, mode: V0Mode) -> Self {
        self.v0_mode = mode;
        self
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size.max(1);
        self
    }

    pub fn grid(&self) -> SimGrid {
        self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn factors(&self) -> &[CovarianceFactor] {
        &self.factors
    }

    pub fn sigma_on_grid(&self, asset: usize) -> &[f64] {
        &self.sigma[asset]
    }

    /// Number of blocks and size of the last block for `n_paths`.
    pub fn block_layout(&self, n_paths: usize) -> Vec<usize> {
        let full = n_paths / self.block_size;
        let mut sizes = vec![self.block_size; full];
        if n_paths % self.block_size != 0 {
            sizes.push(n_paths % self.block_size);
        }
        sizes
    }

    /// Simulates block `block` with `n_paths` paths, recording forward curves
    /// after each step listed in `snapshots`.
    pub fn simulate_block(&self, seed: u64, block: usize, n_paths: usize, snapshots: &[usize]) -> BlockPaths {
        let d = self.params.dim();
        let mut out = BlockPaths {
            n_paths,
            v: Vec::with_capacity(d),
            db: Vec::with_capacity(d),
            db_perp: Vec::with_capacity(d),
            i_diag: Vec::with_capacity(d),
            forward: Vec::with_capacity(d),
        };
        for i in 0..d {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((block as u64) << 16) | i as u64);
            let asset = self.simulate_asset(i, &mut rng, n_paths, snapshots);
            out.v.push(asset.0);
            out.db.push(asset.1);
            out.db_perp.push(asset.2);
            out.i_diag.push(asset.3);
            out.forward.push(asset.4);
        }
        out
    }

    #[allow(clippy::type_complexity)]
    fn simulate_asset(
        &self,
        i: usize,
        rng: &mut ChaCha8Rng,
        p: usize,
        snapshots: &[usize],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>) {
        let a = &self.params.assets[i];
        let n = self.grid.n_steps;
        let sqdt = self.grid.step().sqrt();
        let l = &self.factors[i].factor;
        let r = l.ncols();
        let x_inf = a.x_inf();
        let scale = a.nu / a.lambda;
        let rho = a.rho;
        let rho_c = (1.0 - rho * rho).sqrt();
        let res = &self.resolvent[i];
        let sig = &self.sigma[i];

        let v0: Vec<f64> = match self.v0_mode {
            V0Mode::Mean => vec![x_inf; p],
            V0Mode::Gaussian => {
                let sd = a.v0_var().sqrt();
                (0..p)
                    .map(|_| {
                        let z: f64 = rng.sample(StandardNormal);
                        (x_inf + sd * z).max(V0_FLOOR)
                    })
                    .collect()
            }
        };
        let h = |k: usize, q: usize| x_inf + (v0[q] - x_inf) * res[k];

        let mut fwd = DMatrix::<f64>::zeros(n + 1, p);
        let mut v = DMatrix::<f64>::zeros(n + 1, p);
        let mut db = DMatrix::<f64>::zeros(n, p);
        let mut db_perp = DMatrix::<f64>::zeros(n, p);
        let mut i_diag = DMatrix::<f64>::zeros(n, p);
        let mut xi = DMatrix::<f64>::zeros(r, p);
        let mut z = DMatrix::<f64>::zeros(r, p);
        let mut snaps = Vec::with_capacity(snapshots.len());
        let l0: Vec<f64> = (0..r).map(|q| l[(0, q)]).collect();
        let l1: Vec<f64> = (0..r).map(|q| l[(1, q)]).collect();

        for q in 0..p {
            v[(0, q)] = v0[q];
        }
        let snapshot = |fwd: &DMatrix<f64>, _k: usize| {
            DMatrix::from_fn(n + 1, p, |j, q| h(j, q) + scale * fwd[(j, q)])
        };
        if snapshots.contains(&0) {
            snaps.push(snapshot(&fwd, 0));
        }
        for ell in 1..=n {
            let s_ell = sig[ell];
            for q in 0..p {
                for row in 0..r {
                    xi[(row, q)] = rng.sample(StandardNormal);
                }
                let eta: f64 = rng.sample(StandardNormal);
                let v_prev = h(ell - 1, q) + scale * fwd[(ell - 1, q)];
                let amp = s_ell * v_prev.max(0.0).sqrt();
                let (mut dw, mut own) = (0.0, 0.0);
                for row in 0..r {
                    z[(row, q)] = amp * xi[(row, q)];
                    dw += l0[row] * xi[(row, q)];
                    own += l1[row] * xi[(row, q)];
                }
                let perp = sqdt * eta;
                db[(ell - 1, q)] = rho * dw + rho_c * perp;
                db_perp[(ell - 1, q)] = rho_c * dw - rho * perp;
                i_diag[(ell - 1, q)] = own;
            }
            let rows = n - ell + 1;
            fwd.rows_mut(ell, rows).gemm(1.0, &l.rows(1, rows), &z, 1.0);
            for q in 0..p {
                v[(ell, q)] = (h(ell, q) + scale * fwd[(ell, q)]).max(0.0);
            }
            if snapshots.contains(&ell) {
                snaps.push(snapshot(&fwd, ell));
            }
        }
        (v, db, db_perp, i_diag, snaps)
    }

    /// Applies `f` to every block in parallel and returns the results in
    /// block order.
    pub fn map_blocks<T, F>(&self, n_paths: usize, seed: u64, snapshots: &[usize], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &BlockPaths) -> T + Sync,
    {
        let layout = self.block_layout(n_paths);
        layout
            .par_iter()
            .enumerate()
            .map(|(b, &size)| {
                let paths = self.simulate_block(seed, b, size, snapshots);
                f(b, &paths)
            })
            .collect()
    }

    /// All paths in memory.
    pub fn simulate(&self, n_paths: usize, seed: u64) -> PathBundle {
        let blocks = self.map_blocks(n_paths, seed, &[], |_, b| b.clone());
        let d = self.params.dim();
        let cat = |get: &dyn Fn(&BlockPaths) -> &DMatrix<f64>| {
            let rows = get(&blocks[0]).nrows();
            let mut m = DMatrix::<f64>::zeros(rows, n_paths);
            let mut col = 0;
            for b in &blocks {
                let src = get(b);
                m.columns_mut(col, src.ncols()).copy_from(src);
                col += src.ncols();
            }
            m
        };
        PathBundle {
            seed,
            grid: self.grid,
            n_paths,
            rho: self.params.assets.iter().map(|a| a.rho).collect(),
            v: (0..d).map(|i| cat(&|b: &BlockPaths| &b.v[i])).collect(),
            db: (0..d).map(|i| cat(&|b: &BlockPaths| &b.db[i])).collect(),
            db_perp: (0..d).map(|i| cat(&|b: &BlockPaths| &b.db_perp[i])).collect(),
            i_diag: (0..d).map(|i| cat(&|b: &BlockPaths| &b.i_diag[i])).collect(),
        }
    }
}

/// Convenience wrapper: builds an engine and simulates `n_paths` paths.
pub fn simulate_variance(
    params: &ModelParams,
    stabilizers: &[Stabilizer],
    grid: SimGrid,
    n_paths: usize,
    seed: u64,
    v0_mode: V0Mode,
) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be >= 1"));
    }
    Ok(VarianceEngine::new(params, stabilizers, grid)?
        .with_v0_mode(v0_mode)
        .simulate(n_paths, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exponential_covariance_closed_form() {
        let spec = KernelSpec::new(1.0, 0.8).unwrap();
        let grid = SimGrid::new(50, 1.0).unwrap();
        let dt = grid.step();
        for &(ell, k1, k2) in &[(1, 1, 1), (3, 3, 7), (10, 20, 45)] {
            let got = gaussian_integral_covariance(&spec, &grid, ell, k1, k2).unwrap();
            let lag = (k1 + k2 - 2 * ell) as f64 * dt;
            let want = 0.8 * (-0.8 * lag).exp() * (1.0 - (-1.6 * dt).exp()) / 2.0;
            assert_relative_eq!(got, want, max_relative = 1e-13);
        }
    }

    #[test]
    fn own_step_variance_matches_direct_quadrature() {
        let spec = KernelSpec::new(0.9, 0.2).unwrap();
        let grid = SimGrid::new(600, 1.0).unwrap();
        let dt = grid.step();
        let got = gaussian_integral_covariance(&spec, &grid, 5, 5, 5).unwrap();
        // direct: ∫_0^Δ f(v)² dv with v = w^{1/(2α-1)} on the unit scale
        let p = 1.0 / 0.8;
        let direct = adaptive(
            |w: f64| {
                let v = dt * w.powf(p);
                let f = spec.density(v);
                f * f * dt * p * w.powf(p - 1.0)
            },
            0.0,
            1.0,
            0.0,
            1e-13,
        )
        .value;
        assert_relative_eq!(got, direct, max_relative = 1e-9);
    }

    #[test]
    fn covariance_index_errors() {
        let spec = KernelSpec::new(0.9, 0.2).unwrap();
        let grid = SimGrid::new(10, 1.0).unwrap();
        assert!(gaussian_integral_covariance(&spec, &grid, 0, 1, 1).is_err());
        assert!(gaussian_integral_covariance(&spec, &grid, 3, 2, 4).is_err());
        assert!(gaussian_integral_covariance(&spec, &grid, 3, 4, 11).is_err());
    }

    #[test]
    fn factor_reproduces_covariance() {
        for &(alpha, lambda) in &[(0.9, 0.2), (0.6, 0.6), (1.0, 0.5)] {
            let spec = KernelSpec::new(alpha, lambda).unwrap();
            let grid = SimGrid::new(120, 1.0).unwrap();
            let c = joint_covariance(&spec, &grid);
            let f = CovarianceFactor::build(spec, grid).unwrap();
            let err = (&f.factor * f.factor.transpose() - &c).abs().max();
            let scale = c.abs().max();
            assert!(err <= 1e-11 * scale, "alpha {alpha}: err {err:e}, rank {}", f.rank());
            assert!(f.rank() < 20);
            assert_eq!(f.jitter, 0.0);
            assert_relative_eq!(f.factor[(0, 0)], grid.step().sqrt(), max_relative = 1e-15);
        }
    }

    #[test]
    fn cholesky_reports_block_on_failure() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = extended_cholesky(&m, "test block").unwrap_err();
        assert!(err.to_string().contains("test block"));
    }

    #[test]
    fn deterministic_without_vol_of_vol() {
        let mut params = ModelParams::two_asset_example();
        for a in params.assets.iter_mut() {
            a.nu = 0.0;
        }
        let grid = SimGrid::new(30, 1.0).unwrap();
        let stabs = params.stabilizers(&grid.times()).unwrap();
        let b = simulate_variance(&params, &stabs, grid, 10, 3, V0Mode::Mean).unwrap();
        for i in 0..2 {
            let x = params.assets[i].x_inf();
            assert!(b.v[i].iter().all(|&v| (v - x).abs() < 1e-15));
        }
    }

    #[test]
    fn block_layout_covers_paths() {
        let params = ModelParams::two_asset_example();
        let grid = SimGrid::new(4, 1.0).unwrap();
        let stabs = params.stabilizers(&grid.times()).unwrap();
        let e = VarianceEngine::new(&params, &stabs, grid).unwrap().with_block_size(3);
        assert_eq!(e.block_layout(7), vec![3, 3, 1]);
        assert_eq!(e.block_layout(6), vec![3, 3]);
    }

    #[test]
    fn joint_covariance_is_psd() {
        for &(alpha, lambda) in &[(0.9, 0.2), (0.6, 0.6)] {
            let spec = KernelSpec::new(alpha, lambda).unwrap();
            let grid = SimGrid::new(150, 1.0).unwrap();
            let c = joint_covariance(&spec, &grid);
            let min = c.symmetric_eigenvalues().min();
            assert!(min >= -1e-10, "alpha {alpha}: min eigenvalue {min:e}");
        }
    }

    #[test]
    fn exponential_kernel_matches_cir_recursion() {
        let mut params = ModelParams::two_asset_example();
        params.assets[0].alpha = 1.0;
        params.assets[1].alpha = 1.0;
        let grid = SimGrid::new(100, 1.0).unwrap();
        let stabs = params.stabilizers(&grid.times()).unwrap();
        let b = simulate_variance(&params, &stabs, grid, 64, 11, V0Mode::Gaussian).unwrap();
        let dt = grid.step();
        for (i, a) in params.assets.iter().enumerate() {
            let decay = (-a.lambda * dt).exp();
            let sig = stabs[i].value(0.0);
            let scale = a.nu / a.lambda;
            for q in 0..64 {
                let v0 = b.v[i][(0, q)];
                let (mut y, mut v_prev, mut gap_prev) = (0.0, v0, 0.0);
                for k in 1..=grid.n_steps {
                    y = decay * y + scale * sig * v_prev.max(0.0).sqrt() * b.i_diag[i][(k - 1, q)];
                    let h = a.x_inf() + (v0 - a.x_inf()) * (-a.lambda * k as f64 * dt).exp();
                    let gap = (h + y).max(0.0) - b.v[i][(k, q)];
                    assert!((gap - gap_prev).abs() < 1e-12, "asset {i} path {q} step {k}");
                    assert!(gap.abs() < 1e-10);
                    gap_prev = gap;
                    v_prev = h + y;
                }
            }
        }
    }

    #[test]
    fn same_seed_same_bundle() {
        let params = ModelParams::two_asset_example();
        let grid = SimGrid::new(25, 1.0).unwrap();
        let stabs = params.stabilizers(&grid.times()).unwrap();
        let a = simulate_variance(&params, &stabs, grid, 300, 77, V0Mode::Gaussian).unwrap();
        let b = simulate_variance(&params, &stabs, grid, 300, 77, V0Mode::Gaussian).unwrap();
        assert_eq!(a, b);
        let c = simulate_variance(&params, &stabs, grid, 300, 78, V0Mode::Gaussian).unwrap();
        assert_ne!(a.v, c.v);
        assert!(a.v.iter().all(|m| m.iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn brownian_reconstruction() {
        let params = ModelParams::two_asset_example();
        let grid = SimGrid::new(10, 1.0).unwrap();
        let stabs = params.stabilizers(&grid.times()).unwrap();
        let b = simulate_variance(&params, &stabs, grid, 20, 5, V0Mode::Mean).unwrap();
        let engine = VarianceEngine::new(&params, &stabs, grid).unwrap();
        let l = &engine.factors()[0].factor;
        assert!((l[(0, 0)] - grid.step().sqrt()).abs() < 1e-15);
        let dw = b.dw(0);
        let rho = params.assets[0].rho;
        let back = (&dw - &b.db_perp[0] * (1.0 - rho * rho).sqrt()) / rho;
        assert!((back - &b.db[0]).abs().max() < 1e-14);
    }

    #[test]
    fn gaussian_v0_draws() {
        let mut params = ModelParams::two_asset_example();
        let draws = sample_v0(&params, 20_000, 1);
        let a = params.assets[0];
        let mean = draws[0].iter().sum::<f64>() / 20_000.0;
        let var = draws[0].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 19_999.0;
        assert!((mean - a.x_inf()).abs() < 4.0 * (a.v0_var() / 20_000.0).sqrt());
        assert!((var / a.v0_var() - 1.0).abs() < 0.05);
        params.assets[0].c = 0.0;
        assert!(sample_v0(&params, 10, 1)[0].iter().all(|&x| x == a.x_inf()));
    }
}
