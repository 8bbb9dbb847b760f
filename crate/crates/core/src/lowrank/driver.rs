//! Fixed-step adaptive-rank integration.

use crate::error::{Error, Result};
use crate::linalg::{eigh, hermitian_part};
use crate::lowrank::adapt::{best_rank_increase_direction, decrease_rank, increase_rank};
use crate::lowrank::rhs::{factored_norms, rhs_parts, theta_from_norms};
use crate::model::LindbladModel;
use crate::reference::check_grid;
use crate::scalar::{c_real, real, to_f64, CMatrix, CVector, Real};
use crate::state::{reorthonormalize, tol, Factors, Isometry, LowRankState, PositiveFactor};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveConfig {
    pub theta_max: f64,
    pub m_min: usize,
    /// `None` means the ambient dimension.
    pub m_max: Option<usize>,
    pub dt: f64,
    /// Seed eigenvalue of a new direction, relative to `tr(sigma)`.
    pub new_eig: f64,
    /// Consecutive regularised steps tolerated before the rank is forced down.
    pub singular_patience: usize,
    /// Exempts a growing smallest eigenvalue of sigma from the decrease rule.
    pub keep_growing: bool,
}

impl AdaptiveConfig {
    pub fn new(dt: f64) -> Self {
        AdaptiveConfig { theta_max: 1e-3, m_min: 1, m_max: None, dt, new_eig: 1e-10, singular_patience: 5, keep_growing: true }
    }

    /// Rank pinned to `m`.
    pub fn fixed_rank(dt: f64, m: usize) -> Self {
        AdaptiveConfig { m_min: m, m_max: Some(m), ..Self::new(dt) }
    }

    fn validate(&self, n: usize) -> Result<usize> {
        let m_max = self.m_max.unwrap_or(n);
        if !(self.theta_max > 0.0 && self.theta_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("theta_max must be positive, got {}", self.theta_max)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.new_eig > 0.0 && self.new_eig < 1.0) {
            return Err(Error::InvalidSeed { delta: self.new_eig });
        }
        if self.m_min == 0 || self.m_min > m_max || m_max > n {
            return Err(Error::InvalidArgument(format!(
                "rank bounds must satisfy 1 <= m_min <= m_max <= n, got {} {} {n}",
                self.m_min, m_max
            )));
        }
        Ok(m_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankChange {
    Increase,
    Decrease,
    /// Forced by a degenerating sigma.
    SingularDecrease,
    /// An increase was requested at `m_max`.
    Capped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankEvent {
    pub t: f64,
    pub change: RankChange,
    pub from: usize,
    pub to: usize,
    pub theta: f64,
}

/// State emitted at a grid time.
#[derive(Debug, Clone)]
pub struct LowRankRecord<R: Real = f64> {
    pub t: R,
    pub state: LowRankState<R>,
    pub theta: R,
    /// Smallest eigenvalue of sigma.
    pub min_eig: R,
    /// Some step since the previous record needed a regularised inverse.
    pub regularized: bool,
    /// Some increase since the previous record was refused at `m_max`.
    pub capped: bool,
}

impl<R: Real> LowRankRecord<R> {
    pub fn rank(&self) -> usize {
        self.state.rank()
    }
}

#[derive(Debug, Clone)]
pub struct LowRankRun<R: Real = f64> {
    pub records: Vec<LowRankRecord<R>>,
    pub events: Vec<RankEvent>,
}

/// Stepper holding the current state; rank rules are applied by [`adapt`](Self::adapt).
#[derive(Debug, Clone)]
pub struct LowRankIntegrator<'a, R: Real = f64> {
    model: &'a LindbladModel<R>,
    config: AdaptiveConfig,
    m_max: usize,
    state: LowRankState<R>,
    t: R,
    theta: R,
    /// Smallest eigenvalue of sigma at the previous evaluation, same rank.
    prev_min_eig: Option<R>,
    streak: usize,
    regularized: bool,
    capped: bool,
    events: Vec<RankEvent>,
}

impl<'a, R: Real> LowRankIntegrator<'a, R> {
    pub fn new(model: &'a LindbladModel<R>, state0: LowRankState<R>, t0: R, config: AdaptiveConfig) -> Result<Self> {
        crate::linalg::ensure_dim(model.n(), state0.n())?;
        model.decoherence()?;
        let m_max = config.validate(model.n())?;
        let mut it = LowRankIntegrator {
            model,
            config,
            m_max,
            state: state0,
            t: t0,
            theta: R::zero(),
            prev_min_eig: None,
            streak: 0,
            regularized: false,
            capped: false,
            events: Vec::new(),
        };
        it.evaluate()?;
        Ok(it)
    }

    pub fn state(&self) -> &LowRankState<R> {
        &self.state
    }

    pub fn time(&self) -> R {
        self.t
    }

    pub fn theta(&self) -> R {
        self.theta
    }

    pub fn events(&self) -> &[RankEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<RankEvent> {
        self.events
    }

    fn evaluate(&mut self) -> Result<()> {
        let parts = rhs_parts(self.state.u(), self.state.sigma(), self.model, true)?;
        let (perp, par) = factored_norms(self.state.u(), self.state.sigma(), &parts);
        self.theta = theta_from_norms(perp, par);
        Ok(())
    }

    fn push_event(&mut self, change: RankChange, from: usize, to: usize) {
        self.events.push(RankEvent { t: to_f64(self.t), change, from, to, theta: to_f64(self.theta) });
    }

    /// Applies at most one rank change at the current time.
    pub fn adapt(&mut self) -> Result<Option<RankChange>> {
        let m = self.state.rank();
        let theta_max = real::<R>(self.config.theta_max);
        let change = if self.theta > theta_max {
            if m >= self.m_max {
                self.capped = true;
                self.push_event(RankChange::Capped, m, m);
                return Ok(Some(RankChange::Capped));
            }
            match best_rank_increase_direction(&self.state, self.model) {
                Ok(v) => {
                    self.state = increase_rank(&self.state, &v, self.config.new_eig)?;
                    Some(RankChange::Increase)
                }
                Err(Error::NoDirection) => None,
                Err(e) => return Err(e),
            }
        } else if m > self.config.m_min
            && self.theta + self.state.min_sigma_eigenvalue() < theta_max * real(0.5)
            && !self.min_eig_growing()
        {
            self.state = decrease_rank(&self.state)?;
            Some(RankChange::Decrease)
        } else if self.streak >= self.config.singular_patience {
            if m <= self.config.m_min {
                return Err(Error::PersistentSingularity { t: to_f64(self.t), m_min: self.config.m_min });
            }
            self.state = decrease_rank(&self.state)?;
            self.streak = 0;
            Some(RankChange::SingularDecrease)
        } else {
            None
        };
        if let Some(c) = change {
            self.prev_min_eig = None;
            self.evaluate()?;
            self.push_event(c, m, self.state.rank());
        }
        Ok(change)
    }

    fn min_eig_growing(&self) -> bool {
        self.config.keep_growing && self.prev_min_eig.is_some_and(|p| self.state.min_sigma_eigenvalue() > p)
    }

    /// One RK4 step of length `h`, followed by reorthonormalisation and trace
    /// renormalisation.
    pub fn step(&mut self, h: R) -> Result<()> {
        let (u0, s0) = (self.state.u().clone(), self.state.sigma().clone());
        let before = self.state.min_sigma_eigenvalue();
        let rank_before = self.state.rank();
        let hc = c_real(h);
        let half = c_real(h * real(0.5));
        let mut flagged = false;
        let mut eval = |u: &CMatrix<R>, s: &CMatrix<R>| -> Result<(CMatrix<R>, CMatrix<R>)> {
            let p = rhs_parts(u, s, self.model, true)?;
            flagged |= p.regularized;
            Ok((p.du, p.dsigma))
        };
        let (ku1, ks1) = eval(&u0, &s0)?;
        let (ku2, ks2) = eval(&(&u0 + &ku1 * half), &hermitian_part(&(&s0 + &ks1 * half)))?;
        let (ku3, ks3) = eval(&(&u0 + &ku2 * half), &hermitian_part(&(&s0 + &ks2 * half)))?;
        let (ku4, ks4) = eval(&(&u0 + &ku3 * hc), &hermitian_part(&(&s0 + &ks3 * hc)))?;
        let sixth = c_real(h / real(6.0));
        let two = c_real(real::<R>(2.0));
        let u1 = &u0 + (ku1 + &ku2 * two + &ku3 * two + ku4) * sixth;
        let s1 = &s0 + (ks1 + &ks2 * two + &ks3 * two + ks4) * sixth;

        let f = reorthonormalize(&Factors { u: u1, sigma: hermitian_part(&s1) })?;
        let tr = f.sigma.trace().re;
        let sigma = f.sigma * c_real(R::one() / tr);
        self.state = self.accept(f.u, sigma)?;
        self.prev_min_eig = (self.state.rank() == rank_before).then_some(before);
        self.t += h;
        self.streak = if flagged { self.streak + 1 } else { 0 };
        self.regularized |= flagged;
        self.evaluate()
    }

    /// Builds the post-step state; a sigma that lost positivity sheds its
    /// degenerate direction when the rank allows.
    fn accept(&mut self, u: CMatrix<R>, sigma: CMatrix<R>) -> Result<LowRankState<R>> {
        let (vals, vecs) = eigh(&sigma);
        if vals[0] > real::<R>(tol::POS_FLOOR) {
            return LowRankState::new(Isometry::new(u)?, PositiveFactor::new(sigma)?);
        }
        let m = vals.len();
        if m <= self.config.m_min {
            return Err(Error::PersistentSingularity { t: to_f64(self.t), m_min: self.config.m_min });
        }
        let keep = vecs.columns(1, m - 1).into_owned();
        let total = vals[1..].iter().fold(R::zero(), |a, &v| a + v);
        let sigma = CMatrix::from_diagonal(&CVector::from_iterator(m - 1, vals[1..].iter().map(|&v| c_real(v / total))));
        let st = LowRankState::new(Isometry::new(u * keep)?, PositiveFactor::new(sigma)?)?;
        self.push_event(RankChange::SingularDecrease, m, m - 1);
        Ok(st)
    }

    /// Steps to `t_end` with `ceil((t_end - t) / dt)` equal steps, adapting
    /// the rank between them but not at `t_end` itself.
    pub fn advance_to(&mut self, t_end: R) -> Result<()> {
        let span = t_end - self.t;
        if !(span > R::zero()) {
            return Err(Error::InvalidArgument("target time must lie ahead".into()));
        }
        let dt = real::<R>(self.config.dt);
        let count = (span / dt - real(1e-9)).ceil().max(R::one());
        let steps = to_f64(count) as usize;
        let h = span / count;
        for k in 0..steps {
            self.step(h)?;
            if k + 1 < steps {
                self.adapt()?;
            }
        }
        self.t = t_end;
        Ok(())
    }

    fn record(&mut self) -> LowRankRecord<R> {
        let rec = LowRankRecord {
            t: self.t,
            state: self.state.clone(),
            theta: self.theta,
            min_eig: self.state.min_sigma_eigenvalue(),
            regularized: self.regularized,
            capped: self.capped,
        };
        self.regularized = false;
        self.capped = false;
        rec
    }
}

/// Adaptive-rank integration reporting at every grid time. Each record holds
/// the state before the rank rules are applied at that time.
pub fn integrate_lowrank_adaptive<R: Real>(
    model: &LindbladModel<R>,
    state0: &LowRankState<R>,
    t_grid: &[R],
    config: &AdaptiveConfig,
) -> Result<LowRankRun<R>> {
    check_grid(t_grid)?;
    let mut it = LowRankIntegrator::new(model, state0.clone(), t_grid[0], config.clone())?;
    let mut records = Vec::with_capacity(t_grid.len());
    records.push(it.record());
    it.adapt()?;
    for &t in &t_grid[1..] {
        it.advance_to(t)?;
        records.push(it.record());
        it.adapt()?;
    }
    Ok(LowRankRun { records, events: it.into_events() })
}

/// States at `k dt` for `k = 0..=steps`, one integrator step apart.
pub fn integrate_lowrank_path<R: Real>(
    model: &LindbladModel<R>,
    state0: &LowRankState<R>,
    dt: R,
    steps: usize,
    config: &AdaptiveConfig,
) -> Result<Vec<LowRankState<R>>> {
    let mut it = LowRankIntegrator::new(model, state0.clone(), R::zero(), config.clone())?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(it.state().clone());
    for k in 1..=steps {
        it.adapt()?;
        it.step(dt)?;
        it.t = dt * real::<R>(k as f64);
        out.push(it.state().clone());
    }
    Ok(out)
}
