//! Lindblad models and initial states, in particular the resonant
//! Jaynes–Cummings system with a damped cavity.
//!
//! Tensor ordering is oscillator ⊗ qubit: basis index `i = 2 k + q` where `k`
//! is the photon number and `q = 0` for `|g>`, `q = 1` for `|e>`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{ensure_dim, Operator};
use crate::scalar::{c_i, c_real, real, CMatrix, CVector, Real};
use crate::state::{DensityMatrix, GeneralOperator, HermitianOperator, PureState};

/// `d rho/dt = -i[H, rho] + sum_j (L_j rho L_j' - {L_j' L_j, rho}/2)`.
///
/// The low-rank and stochastic solvers require exactly one channel; the
/// full-rank integrator accepts any number.
#[derive(Debug, Clone)]
pub struct LindbladModel<R: Real = f64> {
    hamiltonian: HermitianOperator<R>,
    channels: Vec<GeneralOperator<R>>,
    h_op: Operator<R>,
    ldag_l: Operator<R>,
    heff: Operator<R>,
    /// `(L_j, L_j')` per channel.
    channel_ops: Vec<(Operator<R>, Operator<R>)>,
}

impl<R: Real> LindbladModel<R> {
    pub fn new(hamiltonian: HermitianOperator<R>, decoherence: GeneralOperator<R>) -> Result<Self> {
        Self::with_channels(hamiltonian, vec![decoherence])
    }

    pub fn with_channels(hamiltonian: HermitianOperator<R>, channels: Vec<GeneralOperator<R>>) -> Result<Self> {
        let n = hamiltonian.dim();
        let mut ldag_l = CMatrix::zeros(n, n);
        for l in &channels {
            ensure_dim(n, l.dim())?;
            ldag_l += l.matrix().adjoint() * l.matrix();
        }
        let heff = hamiltonian.matrix() - &ldag_l * (c_i::<R>() * real::<R>(0.5));
        let channel_ops = channels.iter().map(|l| (Operator::new(l.matrix().clone()), Operator::new(l.matrix().adjoint()))).collect();
        Ok(Self {
            h_op: Operator::new(hamiltonian.matrix().clone()),
            heff: Operator::new(heff),
            ldag_l: Operator::new(ldag_l),
            hamiltonian,
            channels,
            channel_ops,
        })
    }

    pub fn n(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn hamiltonian(&self) -> &CMatrix<R> {
        self.hamiltonian.matrix()
    }

    pub fn channels(&self) -> &[GeneralOperator<R>] {
        &self.channels
    }

    /// The single decoherence operator.
    pub fn decoherence(&self) -> Result<&CMatrix<R>> {
        match self.channels.as_slice() {
            [l] => Ok(l.matrix()),
            other => Err(Error::MultipleChannels { count: other.len() }),
        }
    }

    /// `sum_j L_j' L_j`.
    pub fn ldag_l(&self) -> &CMatrix<R> {
        self.ldag_l.dense()
    }

    /// `H - (i/2) sum_j L_j' L_j`.
    pub fn effective_hamiltonian(&self) -> &CMatrix<R> {
        self.heff.dense()
    }

    pub(crate) fn h_op(&self) -> &Operator<R> {
        &self.h_op
    }

    pub(crate) fn ldag_l_op(&self) -> &Operator<R> {
        &self.ldag_l
    }

    pub(crate) fn heff_op(&self) -> &Operator<R> {
        &self.heff
    }

    pub(crate) fn channel_ops(&self) -> &[(Operator<R>, Operator<R>)] {
        &self.channel_ops
    }

    /// Operator form of the single decoherence channel.
    pub(crate) fn l_op(&self) -> Result<&Operator<R>> {
        self.decoherence()?;
        Ok(&self.channel_ops[0].0)
    }

    /// `H -> c H`, `L -> sqrt(c) L`: the same dynamics on a rescaled clock.
    pub fn time_rescaled(&self, c: R) -> Self {
        let h = HermitianOperator::new(self.hamiltonian.matrix() * c_real(c)).expect("scaled hermitian");
        let channels = self
            .channels
            .iter()
            .map(|l| GeneralOperator::new(l.matrix() * c_real(c.sqrt())).expect("square"))
            .collect();
        Self::with_channels(h, channels).expect("dims unchanged")
    }
}

/// Parameters of the damped resonant Jaynes–Cummings model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JaynesCummingsConfig {
    /// Vacuum Rabi pulsation (rad / time).
    pub omega0: f64,
    /// Cavity damping rate (1 / time).
    pub kappa: f64,
    /// Mean photon number of the initial coherent state.
    pub nbar: f64,
    /// Photon-number truncation.
    pub nmax: usize,
}

impl JaynesCummingsConfig {
    /// `nbar = 15` photons truncated at `2 nbar`, `kappa = omega0 / 500`.
    pub fn collapse_revival() -> Self {
        Self { omega0: 1.0, kappa: 1.0 / 500.0, nbar: 15.0, nmax: 30 }
    }

    pub fn dim(&self) -> usize {
        2 * (self.nmax + 1)
    }

    /// `T_r = 4 pi sqrt(nbar) / omega0`.
    pub fn revival_time(&self) -> f64 {
        4.0 * std::f64::consts::PI * self.nbar.sqrt() / self.omega0
    }

    /// Range checks; returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::InvalidArgument(format!("omega0 must be positive, got {}", self.omega0)));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!("kappa must be nonnegative, got {}", self.kappa)));
        }
        if !(self.nbar >= 0.0 && self.nbar.is_finite()) {
            return Err(Error::InvalidArgument(format!("nbar must be nonnegative, got {}", self.nbar)));
        }
        if self.nmax < 1 {
            return Err(Error::InvalidArgument("nmax must be at least 1".into()));
        }
        let mut warnings = Vec::new();
        if (self.nmax as f64) < 2.0 * self.nbar {
            warnings.push(format!("nmax = {} is below 2 nbar = {}; truncation error may be large", self.nmax, 2.0 * self.nbar));
        }
        Ok(warnings)
    }
}

/// Photon annihilation operator on `{0, ..., nmax}`.
pub fn annihilation<R: Real>(nmax: usize) -> GeneralOperator<R> {
    let d = nmax + 1;
    let mut a = CMatrix::zeros(d, d);
    for k in 0..nmax {
        a[(k, k + 1)] = c_real(real::<R>((k + 1) as f64).sqrt());
    }
    GeneralOperator::new(a).expect("square")
}

/// `|g><e|` in basis order `(g, e)`.
pub fn qubit_lowering<R: Real>() -> GeneralOperator<R> {
    let mut s = CMatrix::zeros(2, 2);
    s[(0, 1)] = c_real(R::one());
    GeneralOperator::new(s).expect("square")
}

/// `H = i (omega0/2)(a'⊗s- - a⊗s+)`, `L = sqrt(kappa) a⊗I`.
pub fn build_jc_damped<R: Real>(config: &JaynesCummingsConfig) -> LindbladModel<R> {
    let a = annihilation::<R>(config.nmax);
    let a = a.matrix();
    let sm = qubit_lowering::<R>();
    let sm = sm.matrix();
    let x = a.adjoint().kronecker(sm) - a.kronecker(&sm.adjoint());
    let h = x * (c_i::<R>() * real::<R>(config.omega0 / 2.0));
    let l = a.kronecker(&CMatrix::<R>::identity(2, 2)) * c_real(real::<R>(config.kappa.sqrt()));
    LindbladModel::new(
        HermitianOperator::new(h).expect("hermitian by construction"),
        GeneralOperator::new(l).expect("square"),
    )
    .expect("matching dims")
}

/// Truncated coherent state, renormalised after truncation.
pub fn coherent_state<R: Real>(alpha: Complex<R>, nmax: usize) -> PureState<R> {
    PureState::normalized(coherent_amplitudes(alpha, nmax)).expect("c_0 = 1 is nonzero")
}

/// Un-normalised amplitudes `alpha^k / sqrt(k!)`.
fn coherent_amplitudes<R: Real>(alpha: Complex<R>, nmax: usize) -> CVector<R> {
    let mut c = CVector::zeros(nmax + 1);
    c[0] = c_real(R::one());
    for k in 1..=nmax {
        c[k] = c[k - 1] * alpha / real::<R>(k as f64).sqrt();
    }
    c
}

/// Probability mass `1 - sum_k |c_k|^2` lost by truncating at `nmax`.
pub fn coherent_truncation_loss(alpha: f64, nmax: usize) -> f64 {
    let c = coherent_amplitudes::<f64>(c_real(alpha), nmax);
    1.0 - (-alpha * alpha).exp() * c.norm_squared()
}

/// Coherent oscillator state with `alpha = sqrt(nbar)` times `|e>`.
pub fn initial_state_jc<R: Real>(config: &JaynesCummingsConfig) -> PureState<R> {
    let osc = coherent_state::<R>(c_real(real(config.nbar.sqrt())), config.nmax);
    let mut v = CVector::zeros(config.dim());
    for k in 0..=config.nmax {
        v[2 * k + 1] = osc.amplitudes()[k];
    }
    PureState::normalized(v).expect("unit norm")
}

/// `tr(rho (I ⊗ |e><e|))`.
pub fn excited_population<R: Real>(rho: &DensityMatrix<R>, config: &JaynesCummingsConfig) -> Result<R> {
    excited_population_matrix(rho.matrix(), config)
}

/// As [`excited_population`] for a raw (possibly non-positive) estimate.
pub fn excited_population_matrix<R: Real>(rho: &CMatrix<R>, config: &JaynesCummingsConfig) -> Result<R> {
    ensure_dim(config.dim(), rho.nrows())?;
    Ok((0..=config.nmax).fold(R::zero(), |acc, k| acc + rho[(2 * k + 1, 2 * k + 1)].re))
}

/// `n⊗I + I⊗|e><e|`, conserved by the Jaynes–Cummings Hamiltonian.
pub fn excitation_number<R: Real>(config: &JaynesCummingsConfig) -> CMatrix<R> {
    let d = config.dim();
    let mut m = CMatrix::zeros(d, d);
    for k in 0..=config.nmax {
        m[(2 * k, 2 * k)] = c_real(real(k as f64));
        m[(2 * k + 1, 2 * k + 1)] = c_real(real((k + 1) as f64));
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_residual;
    use crate::scalar::cplx;

    fn small() -> JaynesCummingsConfig {
        JaynesCummingsConfig { omega0: 1.3, kappa: 0.2, nbar: 2.0, nmax: 5 }
    }

    #[test]
    fn annihilation_entries() {
        let a = annihilation::<f64>(1);
        assert_eq!(a.matrix(), &CMatrix::from_row_slice(2, 2, &[cplx(0.0, 0.0), cplx(1.0, 0.0), cplx(0.0, 0.0), cplx(0.0, 0.0)]));
        let a = annihilation::<f64>(2);
        assert_eq!(a.matrix().iter().filter(|z| z.norm() > 0.0).count(), 2);
        assert_eq!(a.matrix()[(0, 1)], cplx(1.0, 0.0));
        assert!((a.matrix()[(1, 2)].re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn number_operator_and_commutator() {
        let nmax = 6;
        let a = annihilation::<f64>(nmax);
        let a = a.matrix();
        let n = a.adjoint() * a;
        for k in 0..=nmax {
            assert!((n[(k, k)].re - k as f64).abs() < 1e-14);
        }
        let comm = a * a.adjoint() - a.adjoint() * a;
        for i in 0..=nmax {
            for j in 0..=nmax {
                let expected = if i != j {
                    0.0
                } else if i == nmax {
                    -(nmax as f64)
                } else {
                    1.0
                };
                assert!((comm[(i, j)] - cplx(expected, 0.0)).norm() < 1e-13);
            }
        }
    }

    #[test]
    fn lowering_operator_action() {
        let sm = qubit_lowering::<f64>();
        let sm = sm.matrix();
        let g = CVector::from_vec(vec![cplx(1.0, 0.0), cplx(0.0, 0.0)]);
        let e = CVector::from_vec(vec![cplx(0.0, 0.0), cplx(1.0, 0.0)]);
        assert_eq!(sm * &e, g);
        assert_eq!((sm * &g).norm(), 0.0);
        assert_eq!(sm.adjoint() * sm, &e * e.adjoint());
    }

    #[test]
    fn jc_model_structure() {
        let m = build_jc_damped::<f64>(&JaynesCummingsConfig { kappa: 0.0, ..small() });
        assert_eq!(m.decoherence().unwrap().norm(), 0.0);
        let m = build_jc_damped::<f64>(&small());
        assert_eq!(hermitian_residual(m.hamiltonian()), 0.0);
        assert_eq!(build_jc_damped::<f64>(&JaynesCummingsConfig::collapse_revival()).n(), 62);
        let h = m.hamiltonian();
        let ne = excitation_number::<f64>(&small());
        assert!((h * &ne - &ne * h).norm() < 1e-13);
    }

    #[test]
    fn coherent_state_cases() {
        let vac = coherent_state::<f64>(cplx(0.0, 0.0), 4);
        assert_eq!(vac, PureState::basis(5, 0));
        let c = coherent_state::<f64>(cplx(15f64.sqrt(), 0.0), 30);
        assert!((c.amplitudes().norm() - 1.0).abs() < 1e-15);
        let mean: f64 = c.amplitudes().iter().enumerate().map(|(k, z)| k as f64 * z.norm_sqr()).sum();
        // Truncated Poisson mean, summed independently.
        let (mut p, mut z, mut first) = (1.0f64, 0.0, 0.0);
        for k in 0..=30 {
            if k > 0 {
                p *= 15.0 / k as f64;
            }
            z += p;
            first += k as f64 * p;
        }
        assert!((mean - first / z).abs() < 1e-12);
        assert!((mean - 15.0).abs() < 5e-3, "mean {mean}");
    }

    #[test]
    fn coherent_truncation_is_small() {
        // Independent sum of the Poisson tail beyond nmax = 30.
        let lambda: f64 = 15.0;
        let mut p = (-lambda).exp();
        let mut kept = 0.0;
        for k in 0..=30 {
            if k > 0 {
                p *= lambda / k as f64;
            }
            kept += p;
        }
        let loss = coherent_truncation_loss(15f64.sqrt(), 30);
        assert!((loss - (1.0 - kept)).abs() < 1e-12);
        assert!(loss < 2e-4, "loss {loss}");
    }

    #[test]
    fn initial_state_cases() {
        let cfg = JaynesCummingsConfig { nbar: 0.0, ..small() };
        let psi = initial_state_jc::<f64>(&cfg);
        assert_eq!(psi, PureState::basis(cfg.dim(), 1));
        let cfg = JaynesCummingsConfig::collapse_revival();
        let psi = initial_state_jc::<f64>(&cfg);
        assert_eq!(psi.dim(), 62);
        let rho = DensityMatrix::from_pure(&psi);
        assert!((excited_population(&rho, &cfg).unwrap() - 1.0).abs() < 1e-14);
        let marginal: Vec<f64> = (0..=30).map(|k| psi.amplitudes()[2 * k].norm_sqr() + psi.amplitudes()[2 * k + 1].norm_sqr()).collect();
        let peak = marginal.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        assert!(peak == 14 || peak == 15, "peak {peak}");
        let total: f64 = marginal.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn excited_population_cases() {
        let cfg = small();
        let ground = DensityMatrix::from_pure(&PureState::<f64>::basis(cfg.dim(), 0));
        assert_eq!(excited_population(&ground, &cfg).unwrap(), 0.0);
        let mixed = DensityMatrix::<f64>::maximally_mixed(cfg.dim());
        assert!((excited_population(&mixed, &cfg).unwrap() - 0.5).abs() < 1e-15);
        let wrong = DensityMatrix::<f64>::maximally_mixed(3);
        assert!(excited_population(&wrong, &cfg).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(JaynesCummingsConfig::collapse_revival().validate().unwrap().is_empty());
        let warn = JaynesCummingsConfig { nmax: 10, ..JaynesCummingsConfig::collapse_revival() };
        assert_eq!(warn.validate().unwrap().len(), 1);
        assert!(JaynesCummingsConfig { omega0: -1.0, ..small() }.validate().is_err());
        let tr = JaynesCummingsConfig::collapse_revival().revival_time();
        assert!((tr - 4.0 * std::f64::consts::PI * 15f64.sqrt()).abs() < 1e-12);
    }
}
