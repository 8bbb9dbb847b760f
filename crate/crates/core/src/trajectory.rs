//! Diffusive quantum trajectories and paired ensembles.
//!
//! A full trajectory obeys
//! `dpsi = D1(psi) dt + D2(psi) dW` with
//! `D1 = -i H_eff psi + (s/2) L psi - (s^2/8) psi`,
//! `D2 = L psi - (s/2) psi` and `s = <L + L'>`.
//! The low-rank partner is confined to the range of a precomputed
//! deterministic low-rank path and driven by the same increments.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ensure_dim, hermitian_part, Operator};
use crate::lowrank::rhs::sigma_inverse;
use crate::lowrank::{integrate_lowrank_path, AdaptiveConfig};
use crate::model::LindbladModel;
use crate::scalar::{c_i, c_real, real, to_f64, CMatrix, CVector, Real};
use crate::state::{density_from_lowrank, purity, DensityMatrix, LowRankState, PureState};

/// Post-step norm below which a step is rejected.
pub const PATHOLOGICAL_NORM: f64 = 1e-10;

/// Trajectories per reduction block. Fixed so the summation order does not
/// depend on the thread count.
const BLOCK: usize = 16;

/// Counter-based Gaussian increments keyed by (seed, trajectory, step).
///
/// Each step consumes exactly four 32-bit words of a ChaCha20 stream, so the
/// increment of step `k` can be regenerated without replaying earlier steps.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn new(master_seed: u64, trajectory_index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(trajectory_index);
        NoiseStream { rng }
    }

    /// Standard normal for step `k`; the stream continues from `k + 1`.
    pub fn normal_at(&mut self, step: u64) -> f64 {
        self.rng.set_word_pos(u128::from(step) * 4);
        self.next_normal()
    }

    /// Standard normal for the next step (Box–Muller, cosine branch).
    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Wiener increment with variance `dt`.
    pub fn next_increment(&mut self, dt: f64) -> f64 {
        dt.sqrt() * self.next_normal()
    }
}

fn homodyne_signal<R: Real>(psi: &CVector<R>, l_psi: &CVector<R>) -> R {
    psi.dotc(l_psi).re * real(2.0)
}

pub fn drift_d1<R: Real>(psi: &PureState<R>, model: &LindbladModel<R>) -> Result<CVector<R>> {
    let l = model.decoherence()?;
    ensure_dim(model.n(), psi.dim())?;
    let v = psi.amplitudes();
    let lv = l * v;
    let s = homodyne_signal(v, &lv);
    Ok(model.effective_hamiltonian() * v * (-c_i::<R>()) + lv * c_real(s * real(0.5)) - v * c_real(s * s / real(8.0)))
}

pub fn diffusion_d2<R: Real>(psi: &PureState<R>, model: &LindbladModel<R>) -> Result<CVector<R>> {
    let l = model.decoherence()?;
    ensure_dim(model.n(), psi.dim())?;
    let v = psi.amplitudes();
    let lv = l * v;
    let s = homodyne_signal(v, &lv);
    Ok(&lv - v * c_real(s * real(0.5)))
}

fn renormalize<R: Real>(v: CVector<R>) -> Result<CVector<R>> {
    let norm = v.norm();
    if !(norm >= real::<R>(PATHOLOGICAL_NORM)) {
        return Err(Error::PathologicalStep { norm: to_f64(norm) });
    }
    Ok(v / c_real(norm))
}

fn em_step<R: Real>(v: &CVector<R>, heff: &Operator<R>, l: &Operator<R>, dt: R, dw: R) -> Result<CVector<R>> {
    let lv = l.mul_vec(v);
    let s = homodyne_signal(v, &lv);
    let hv = heff.mul_vec(v);
    let half_s = s * real(0.5);
    let out = v * c_real(R::one() - s * s / real::<R>(8.0) * dt - half_s * dw) - hv * (c_i::<R>() * c_real(dt))
        + lv * c_real(half_s * dt + dw);
    renormalize(out)
}

/// Euler–Maruyama step followed by renormalisation.
pub fn sde_step<R: Real>(psi: &PureState<R>, dt: R, dw: R, model: &LindbladModel<R>) -> Result<PureState<R>> {
    let l = model.l_op()?;
    ensure_dim(model.n(), psi.dim())?;
    Ok(PureState::from_trusted(em_step(psi.amplitudes(), model.heff_op(), l, dt, dw)?))
}

/// Euler–Maruyama step of the confined trajectory along `lr` (the path at
/// time `t`).
///
/// The drift is `P D1 + (I - P)(-i H_eff + L U sigma A' sigma^-1 U') psi
/// + tr(G)/(2m) U sigma^-1 U' psi` and the diffusion `P D2`, with
/// `A = U' L U` and `G = (I - P) L rho L' (I - P)`. When `lr_next` is given
/// the result is projected onto its range before renormalisation, removing
/// the `O(dt^2)` leakage of the explicit step. At full rank this is exactly
/// [`sde_step`].
pub fn lowrank_sde_step<R: Real>(
    psi: &PureState<R>,
    lr: &LowRankState<R>,
    lr_next: Option<&LowRankState<R>>,
    dt: R,
    dw: R,
    model: &LindbladModel<R>,
) -> Result<PureState<R>> {
    let l = model.decoherence()?;
    ensure_dim(model.n(), psi.dim())?;
    ensure_dim(model.n(), lr.n())?;
    if lr.rank() == lr.n() {
        return sde_step(psi, dt, dw, model);
    }
    let (u, sigma) = (lr.u(), lr.sigma());
    let m = lr.rank();
    let v = psi.amplitudes();
    let proj = |x: &CVector<R>| u * (u.adjoint() * x);

    let d1 = drift_d1(psi, model)?;
    let d2 = diffusion_d2(psi, model)?;
    let sinv = sigma_inverse(sigma, true)?.inv;
    let a = u.adjoint() * l * u;
    let lu = l * u;
    let b = &lu - u * &a;
    let tr_g = crate::linalg::trace_of_product(sigma, &(b.adjoint() * &b)).re;
    let nu = u.adjoint() * v;
    let transport = model.effective_hamiltonian() * v * (-c_i::<R>()) + &lu * (sigma * a.adjoint() * &sinv * &nu);
    let perp = &transport - proj(&transport);
    let trace_term = u * (&sinv * &nu) * c_real(tr_g / real::<R>(2.0 * m as f64));

    let mut out = v + (proj(&d1) + perp + trace_term) * c_real(dt) + proj(&d2) * c_real(dw);
    if let Some(next) = lr_next {
        ensure_dim(lr.n(), next.n())?;
        out = next.u() * (next.u().adjoint() * out);
    }
    Ok(PureState::from_trusted(renormalize(out)?))
}

/// Deterministic low-rank solution sampled on the stochastic step grid:
/// `states[k]` is the state at `k dt`.
#[derive(Debug, Clone)]
pub struct LowRankPath<R: Real = f64> {
    pub dt: R,
    pub states: Vec<LowRankState<R>>,
}

impl<R: Real> LowRankPath<R> {
    /// Grows `psi0` to rank `m` along the optimal directions, then integrates
    /// at fixed rank with one RK4 step per stochastic step.
    pub fn fixed_rank(model: &LindbladModel<R>, psi0: &PureState<R>, m: usize, dt: R, steps: usize, new_eig: f64) -> Result<Self> {
        let start = crate::lowrank::grow_to_rank(&LowRankState::pure(psi0), model, m, new_eig)?;
        let cfg = AdaptiveConfig { new_eig, ..AdaptiveConfig::fixed_rank(to_f64(dt), m) };
        Self::integrate(model, &start, dt, steps, &cfg)
    }

    pub fn integrate(model: &LindbladModel<R>, state0: &LowRankState<R>, dt: R, steps: usize, config: &AdaptiveConfig) -> Result<Self> {
        let states = integrate_lowrank_path(model, state0, dt, steps, config)?;
        Ok(LowRankPath { dt, states })
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// How the low-rank partner draws its increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Same increments as the full trajectory.
    Shared,
    /// An independent stream; the control variate then carries no correlation.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub trajectories: usize,
    pub dt: f64,
    pub master_seed: u64,
    pub pairing: Pairing,
}

/// Ensemble means at each output time. `rho_lr`, `rho_mclr` and
/// `overlap_sq_mean` are empty for unpaired ensembles.
#[derive(Debug, Clone)]
pub struct EnsembleResult<R: Real = f64> {
    pub t_grid: Vec<R>,
    pub rho_mc: Vec<CMatrix<R>>,
    pub rho_mclr: Vec<CMatrix<R>>,
    pub rho_lr: Vec<CMatrix<R>>,
    pub overlap_sq_mean: Vec<R>,
    pub trajectories: usize,
}

/// Per-step operators of the confined trajectory in the coordinates
/// `psi_lr = U nu`.
struct ConfinedStep<R: Real> {
    /// `U' (-i H_eff) U`.
    h: CMatrix<R>,
    /// `U' L U`.
    a: CMatrix<R>,
    /// `tr(G)/(2m) sigma^-1`.
    w: CMatrix<R>,
    /// `U_next' U`.
    overlap: CMatrix<R>,
    /// `U_next' (I - P)(-i H_eff U + L U sigma A' sigma^-1)`.
    transport: CMatrix<R>,
    full_rank: bool,
}

fn confined_steps<R: Real>(model: &LindbladModel<R>, path: &LowRankPath<R>, steps: usize) -> Result<Vec<ConfinedStep<R>>> {
    let l = model.l_op()?;
    let n = model.n();
    (0..steps)
        .map(|k| {
            let (st, next) = (&path.states[k], &path.states[k + 1]);
            ensure_dim(n, st.n())?;
            let (u, sigma) = (st.u(), st.sigma());
            let m = st.rank();
            let full_rank = m == n && next.rank() == n;
            let lu = l.mul(u);
            let hu = model.heff_op().mul(u) * (-c_i::<R>());
            let ud = u.adjoint();
            let a = &ud * &lu;
            let h = &ud * &hu;
            let sinv = sigma_inverse(sigma, true)?.inv;
            let b = &lu - u * &a;
            let tr_g = crate::linalg::trace_of_product(sigma, &(b.adjoint() * &b)).re;
            let w = &sinv * c_real(tr_g / real::<R>(2.0 * m as f64));
            let t = hu + &lu * (sigma * a.adjoint() * &sinv);
            let t_perp = &t - u * (&ud * &t);
            let nd = next.u().adjoint();
            Ok(ConfinedStep { overlap: &nd * u, transport: nd * t_perp, h, a, w, full_rank })
        })
        .collect()
}

fn confined_step<R: Real>(c: &ConfinedStep<R>, nu: &CVector<R>, dt: R, dw: R) -> Result<CVector<R>> {
    let anu = &c.a * nu;
    let s = homodyne_signal(nu, &anu);
    let half_s = s * real(0.5);
    let inner = nu * c_real(R::one() - s * s / real::<R>(8.0) * dt - half_s * dw)
        + (&c.h * nu + &c.w * nu) * c_real(dt)
        + anu * c_real(half_s * dt + dw);
    let out = &c.overlap * inner + &c.transport * nu * c_real(dt);
    renormalize(out)
}

/// Maps output times onto step indices of a grid with spacing `dt`.
pub fn output_steps<R: Real>(t_grid: &[R], dt: R) -> Result<Vec<usize>> {
    crate::reference::check_grid(t_grid)?;
    t_grid
        .iter()
        .map(|&t| {
            let x = to_f64(t / dt);
            let k = x.round();
            if (x - k).abs() > 1e-6 * k.max(1.0) {
                return Err(Error::InvalidArgument(format!("output time {} is not a multiple of dt", to_f64(t))));
            }
            Ok(k as usize)
        })
        .collect()
}

struct Partial<R: Real> {
    mc: Vec<CMatrix<R>>,
    lr_core: Vec<CMatrix<R>>,
    overlap: Vec<R>,
}

impl<R: Real> Partial<R> {
    fn zeros(outputs: usize, n: usize, dims: &[usize]) -> Self {
        Partial {
            mc: vec![CMatrix::zeros(n, n); outputs],
            lr_core: dims.iter().map(|&m| CMatrix::zeros(m, m)).collect(),
            overlap: vec![R::zero(); if dims.is_empty() { 0 } else { outputs }],
        }
    }

    fn add(&mut self, other: &Partial<R>) {
        for (a, b) in self.mc.iter_mut().zip(&other.mc) {
            *a += b;
        }
        for (a, b) in self.lr_core.iter_mut().zip(&other.lr_core) {
            *a += b;
        }
        for (a, b) in self.overlap.iter_mut().zip(&other.overlap) {
            *a += *b;
        }
    }
}

fn accumulate_outer<R: Real>(acc: &mut CMatrix<R>, v: &CVector<R>) {
    acc.gerc(c_real(R::one()), v, v, c_real(R::one()));
}

/// The confined trajectory, as coefficients in the path basis or, on
/// full-rank stretches, as an ambient vector.
enum Partner<R: Real> {
    Coeff(CVector<R>),
    Full(CVector<R>),
}

struct Job<'a, R: Real> {
    model: &'a LindbladModel<R>,
    psi0: &'a PureState<R>,
    path: Option<(&'a LowRankPath<R>, Vec<ConfinedStep<R>>)>,
    outputs: Vec<usize>,
    config: &'a EnsembleConfig,
}

impl<R: Real> Job<'_, R> {
    fn run_trajectory(&self, k: usize, acc: &mut Partial<R>) -> Result<()> {
        let l = self.model.l_op()?;
        let heff = self.model.heff_op();
        let dt_f = self.config.dt;
        let dt = real::<R>(dt_f);
        let lane = if self.config.pairing == Pairing::Shared || self.path.is_none() { 1 } else { 2 };
        let mut noise = NoiseStream::new(self.config.master_seed, (k * lane) as u64);
        let mut noise_lr = (lane == 2).then(|| NoiseStream::new(self.config.master_seed, (k * lane + 1) as u64));

        let mut psi = self.psi0.amplitudes().clone();
        let mut partner = self.path.as_ref().map(|(p, _)| {
            if p.states[0].rank() == self.model.n() {
                Partner::Full(psi.clone())
            } else {
                Partner::Coeff(p.states[0].u().adjoint() * &psi)
            }
        });
        let steps = *self.outputs.last().unwrap_or(&0);
        let mut next_out = 0;
        for step in 0..=steps {
            if self.outputs[next_out] == step {
                accumulate_outer(&mut acc.mc[next_out], &psi);
                if let (Some((p, _)), Some(partner)) = (&self.path, &partner) {
                    let psi_lr = match partner {
                        Partner::Full(v) => {
                            accumulate_outer(&mut acc.lr_core[next_out], v);
                            v.clone()
                        }
                        Partner::Coeff(nu) => {
                            accumulate_outer(&mut acc.lr_core[next_out], nu);
                            p.states[step].u() * nu
                        }
                    };
                    acc.overlap[next_out] += psi.dotc(&psi_lr).norm_sqr();
                }
                next_out += 1;
                if next_out == self.outputs.len() {
                    break;
                }
            }
            let dw = noise.next_increment(dt_f);
            let dw_lr = noise_lr.as_mut().map_or(dw, |s| s.next_increment(dt_f));
            psi = em_step(&psi, heff, l, dt, real(dw))?;
            if let (Some((p, data)), Some(current)) = (&self.path, partner.take()) {
                let c = &data[step];
                let next_full = p.states[step + 1].rank() == self.model.n();
                partner = Some(match current {
                    Partner::Full(v) if c.full_rank => Partner::Full(em_step(&v, heff, l, dt, real(dw_lr))?),
                    current => {
                        let nu = match current {
                            Partner::Full(v) => p.states[step].u().adjoint() * v,
                            Partner::Coeff(nu) => nu,
                        };
                        let nu = confined_step(c, &nu, dt, real(dw_lr))?;
                        if next_full {
                            Partner::Full(p.states[step + 1].u() * nu)
                        } else {
                            Partner::Coeff(nu)
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

/// Sums trajectories `first..first + count`, in blocks reduced in index order.
fn run_range<R: Real>(job: &Job<'_, R>, n: usize, dims: &[usize], first: usize, count: usize) -> Result<Partial<R>> {
    let n_out = job.outputs.len();
    let blocks = count.div_ceil(BLOCK);
    let wave = (rayon::current_num_threads() * 2).max(1);
    let mut total = Partial::zeros(n_out, n, dims);
    let mut start = 0;
    while start < blocks {
        let end = (start + wave).min(blocks);
        let partials: Vec<Result<Partial<R>>> = (start..end)
            .into_par_iter()
            .map(|b| {
                let mut acc = Partial::zeros(n_out, n, dims);
                for k in first + b * BLOCK..first + ((b + 1) * BLOCK).min(count) {
                    job.run_trajectory(k, &mut acc)
                        .map_err(|e| Error::Trajectory { index: k, source: Box::new(e) })?;
                }
                Ok(acc)
            })
            .collect();
        for p in partials {
            total.add(&p?);
        }
        start = end;
    }
    Ok(total)
}

fn validate_ensemble<R: Real>(model: &LindbladModel<R>, psi0: &PureState<R>, config: &EnsembleConfig) -> Result<()> {
    model.decoherence()?;
    ensure_dim(model.n(), psi0.dim())?;
    if config.trajectories == 0 {
        return Err(Error::InvalidArgument("at least one trajectory is required".into()));
    }
    if !(config.dt > 0.0 && config.dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {}", config.dt)));
    }
    Ok(())
}

fn paired_job<'a, R: Real>(
    model: &'a LindbladModel<R>,
    psi0: &'a PureState<R>,
    path: &'a LowRankPath<R>,
    t_grid: &[R],
    config: &'a EnsembleConfig,
) -> Result<(Job<'a, R>, Vec<usize>)> {
    validate_ensemble(model, psi0, config)?;
    if (to_f64(path.dt) - config.dt).abs() > 1e-12 * config.dt {
        return Err(Error::InvalidArgument("low-rank path and ensemble use different steps".into()));
    }
    let outputs = output_steps(t_grid, path.dt)?;
    let last = *outputs.last().unwrap_or(&0);
    if last > path.steps() {
        return Err(Error::InvalidArgument(format!("path covers {} steps, {} needed", path.steps(), last)));
    }
    let u0 = path.states[0].u();
    let leak = (psi0.amplitudes() - u0 * (u0.adjoint() * psi0.amplitudes())).norm();
    if leak > real(1e-8) {
        return Err(Error::InvalidArgument(format!("initial state leaves the low-rank range by {}", to_f64(leak))));
    }
    let steps = confined_steps(model, path, last)?;
    // Full-rank outputs accumulate in the ambient space.
    let dims = outputs.iter().map(|&k| path.states[k].rank()).collect();
    Ok((Job { model, psi0, path: Some((path, steps)), outputs, config }, dims))
}

fn finish_paired<R: Real>(job: &Job<'_, R>, total: &Partial<R>, t_grid: &[R], count: usize) -> EnsembleResult<R> {
    let (path, _) = job.path.as_ref().expect("paired job");
    let n = job.model.n();
    let inv_m = real::<R>(1.0 / count as f64);
    let mut res = EnsembleResult {
        t_grid: t_grid.to_vec(),
        rho_mc: Vec::new(),
        rho_mclr: Vec::new(),
        rho_lr: Vec::new(),
        overlap_sq_mean: Vec::new(),
        trajectories: count,
    };
    for (j, &k) in job.outputs.iter().enumerate() {
        let st = &path.states[k];
        res.rho_mc.push(hermitian_part(&(&total.mc[j] * c_real(inv_m))));
        let core = &total.lr_core[j] * c_real(inv_m);
        res.rho_mclr.push(if st.rank() == n { hermitian_part(&core) } else { hermitian_part(&(st.u() * core * st.u().adjoint())) });
        res.rho_lr.push(density_from_lowrank(st).into_matrix());
        res.overlap_sq_mean.push((total.overlap[j] * inv_m).min(R::one()));
    }
    res
}

fn finish_plain<R: Real>(total: &Partial<R>, t_grid: &[R], count: usize) -> EnsembleResult<R> {
    let inv_m = c_real(real::<R>(1.0 / count as f64));
    EnsembleResult {
        t_grid: t_grid.to_vec(),
        rho_mc: total.mc.iter().map(|s| hermitian_part(&(s * inv_m))).collect(),
        rho_mclr: Vec::new(),
        rho_lr: Vec::new(),
        overlap_sq_mean: Vec::new(),
        trajectories: count,
    }
}

/// Paired full / confined trajectories along `path`, averaged at `t_grid`.
pub fn simulate_paired_ensemble<R: Real>(
    model: &LindbladModel<R>,
    psi0: &PureState<R>,
    path: &LowRankPath<R>,
    t_grid: &[R],
    config: &EnsembleConfig,
) -> Result<EnsembleResult<R>> {
    let (job, dims) = paired_job(model, psi0, path, t_grid, config)?;
    let total = run_range(&job, model.n(), &dims, 0, config.trajectories)?;
    Ok(finish_paired(&job, &total, t_grid, config.trajectories))
}

/// `replications` independent paired ensembles of `config.trajectories`
/// each; replication `r` is made of trajectories `r M .. (r + 1) M` of the
/// master seed.
pub fn simulate_paired_replications<R: Real>(
    model: &LindbladModel<R>,
    psi0: &PureState<R>,
    path: &LowRankPath<R>,
    t_grid: &[R],
    config: &EnsembleConfig,
    replications: usize,
) -> Result<Vec<EnsembleResult<R>>> {
    let (job, dims) = paired_job(model, psi0, path, t_grid, config)?;
    let m = config.trajectories;
    (0..replications)
        .into_par_iter()
        .map(|r| Ok(finish_paired(&job, &run_range(&job, model.n(), &dims, r * m, m)?, t_grid, m)))
        .collect()
}

/// Plain Monte-Carlo ensemble.
pub fn simulate_ensemble<R: Real>(
    model: &LindbladModel<R>,
    psi0: &PureState<R>,
    t_grid: &[R],
    config: &EnsembleConfig,
) -> Result<EnsembleResult<R>> {
    validate_ensemble(model, psi0, config)?;
    let outputs = output_steps(t_grid, real::<R>(config.dt))?;
    let job = Job { model, psi0, path: None, outputs, config };
    let total = run_range(&job, model.n(), &[], 0, config.trajectories)?;
    Ok(finish_plain(&total, t_grid, config.trajectories))
}

/// Replicated plain ensembles, indexed as in [`simulate_paired_replications`].
pub fn simulate_replications<R: Real>(
    model: &LindbladModel<R>,
    psi0: &PureState<R>,
    t_grid: &[R],
    config: &EnsembleConfig,
    replications: usize,
) -> Result<Vec<EnsembleResult<R>>> {
    validate_ensemble(model, psi0, config)?;
    let outputs = output_steps(t_grid, real::<R>(config.dt))?;
    let job = Job { model, psi0, path: None, outputs, config };
    let m = config.trajectories;
    (0..replications)
        .into_par_iter()
        .map(|r| Ok(finish_plain(&run_range(&job, model.n(), &[], r * m, m)?, t_grid, m)))
        .collect()
}

/// Expected squared Frobenius error `(1 - tr rho^2)/M` of an `M`-sample mean.
pub fn mc_error_prediction<R: Real>(rho: &DensityMatrix<R>, trajectories: usize) -> R {
    let m = real::<R>(trajectories.max(1) as f64);
    ((R::one() - purity(rho)) / m).max(R::zero())
}
