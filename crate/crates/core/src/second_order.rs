//! Dirichlet and Dirichlet-mixture second-order distributions and the
//! uncertainty measures computed from them. All entropies are in nats.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::diffmath::special::{digamma_pos, ln_beta_pos};
use crate::error::{Error, Result};

const MIXTURE_WEIGHT_TOL: f64 = 1e-9;

/// Shannon entropy of a probability vector, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dirichlet {
    alpha: Vec<f64>,
    alpha0: f64,
}

impl Dirichlet {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::invalid("Dirichlet needs at least one class"));
        }
        for (k, &a) in alpha.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite { what: "pseudo-count", index: k });
            }
            if a <= 0.0 {
                return Err(Error::invalid(format!("pseudo-count {k} must be positive, got {a}")));
            }
        }
        let alpha0 = alpha.iter().sum();
        Ok(Self { alpha, alpha0 })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    /// Differential entropy `ln B(α) + (α₀ − K)ψ(α₀) − Σ(α_k − 1)ψ(α_k)`.
    pub fn entropy(&self) -> f64 {
        let k = self.alpha.len() as f64;
        ln_beta_pos(&self.alpha) + (self.alpha0 - k) * digamma_pos(self.alpha0)
            - self
                .alpha
                .iter()
                .map(|&a| (a - 1.0) * digamma_pos(a))
                .sum::<f64>()
    }

    /// `E[−ln θ_y] = ψ(α₀) − ψ(α_y)`.
    pub fn uce(&self, label: usize) -> Result<f64> {
        let a = *self.alpha.get(label).ok_or(Error::LabelOutOfRange {
            label,
            n_classes: self.alpha.len(),
        })?;
        Ok(digamma_pos(self.alpha0) - digamma_pos(a))
    }

    /// Log density at a point of the open simplex.
    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        self.alpha
            .iter()
            .zip(theta)
            .map(|(&a, &t)| if a == 1.0 { 0.0 } else { (a - 1.0) * t.ln() })
            .sum::<f64>()
            - ln_beta_pos(&self.alpha)
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut g: Vec<f64> = self
            .alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let s: f64 = g.iter().sum();
        for x in &mut g {
            *x /= s;
        }
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMixture {
    weights: Vec<f64>,
    components: Vec<Dirichlet>,
}

impl DirichletMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Dirichlet>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(Error::invalid(format!(
                "mixture needs matching non-empty weights and components, got {} and {}",
                weights.len(),
                components.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(format!("mixture weight {w} is not a non-negative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MIXTURE_WEIGHT_TOL {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let k = components[0].alpha.len();
        if components.iter().any(|c| c.alpha.len() != k) {
            return Err(Error::invalid("mixture components disagree on the number of classes"));
        }
        Ok(Self { weights, components })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Dirichlet] {
        &self.components
    }

    /// `(Σ w_j H(Q_j), H(Cat(w)) + Σ w_j H(Q_j))`.
    pub fn eu_so_bounds(&self) -> (f64, f64) {
        let lower: f64 = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.entropy())
            .sum();
        (lower, shannon_entropy(&self.weights) + lower)
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, c)| w.ln() + c.log_pdf(theta))
            .collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return m;
        }
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

/// Every uncertainty measure for one node. The first-order baseline only
/// has a total uncertainty; the rest are absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyReport {
    pub tu: f64,
    pub au: Option<f64>,
    pub eu: Option<f64>,
    pub eu_pc: Option<f64>,
    pub eu_so: Option<f64>,
    pub lconf: f64,
}

impl UncertaintyReport {
    pub fn first_order(p: &[f64]) -> Self {
        Self {
            tu: shannon_entropy(p),
            au: None,
            eu: None,
            eu_pc: None,
            eu_so: None,
            lconf: 1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub trait SecondOrder {
    fn n_classes(&self) -> usize;

    /// Expected class distribution.
    fn mean(&self) -> Vec<f64>;

    fn au(&self) -> f64;

    fn eu_pc(&self) -> f64;

    /// Differential entropy (Dirichlet) or its upper-bound surrogate (mixture).
    fn eu_so(&self) -> f64;

    /// `n` i.i.d. draws; identical for identical seeds.
    fn sample(&self, seed: u64, n: usize) -> Vec<Vec<f64>>;

    fn tu(&self) -> f64 {
        shannon_entropy(&self.mean())
    }

    fn eu(&self) -> f64 {
        self.tu() - self.au()
    }

    fn lconf(&self) -> f64 {
        1.0 - self.mean().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    fn report(&self) -> UncertaintyReport {
        let tu = self.tu();
        let au = self.au();
        UncertaintyReport {
            tu,
            au: Some(au),
            eu: Some(tu - au),
            eu_pc: Some(self.eu_pc()),
            eu_so: Some(self.eu_so()),
            lconf: self.lconf(),
        }
    }
}

impl SecondOrder for Dirichlet {
    fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    fn mean(&self) -> Vec<f64> {
        self.alpha.iter().map(|a| a / self.alpha0).collect()
    }

    fn au(&self) -> f64 {
        let psi0 = digamma_pos(self.alpha0 + 1.0);
        self.alpha
            .iter()
            .map(|&a| a / self.alpha0 * (psi0 - digamma_pos(a + 1.0)))
            .sum()
    }

    fn eu_pc(&self) -> f64 {
        -self.alpha0
    }

    fn eu_so(&self) -> f64 {
        self.entropy()
    }

    fn sample(&self, seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}

impl SecondOrder for DirichletMixture {
    fn n_classes(&self) -> usize {
        self.components[0].alpha.len()
    }

    fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_classes()];
        for (w, c) in self.weights.iter().zip(&self.components) {
            for (mk, a) in m.iter_mut().zip(&c.alpha) {
                *mk += w * a / c.alpha0;
            }
        }
        m
    }

    fn au(&self) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.au()).sum()
    }

    fn eu_pc(&self) -> f64 {
        -self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.alpha0)
            .sum::<f64>()
    }

    fn eu_so(&self) -> f64 {
        self.eu_so_bounds().1
    }

    fn sample(&self, seed: u64, n: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let j = self.pick(&mut rng);
                self.components[j].draw(&mut rng)
            })
            .collect()
    }
}

/// Monte-Carlo estimators used as independent checks on the closed forms.
pub mod monte_carlo {
    use super::*;

    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Estimate {
        pub mean: f64,
        pub se: f64,
    }

    impl Estimate {
        pub fn from_samples(xs: impl IntoIterator<Item = f64>) -> Self {
            let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
            for x in xs {
                n += 1.0;
                let d = x - mean;
                mean += d / n;
                m2 += d * (x - mean);
            }
            let var = if n > 1.0 { m2 / (n - 1.0) } else { 0.0 };
            Self {
                mean,
                se: (var / n).sqrt(),
            }
        }

        /// Whether `value` lies within `k` standard errors of the estimate.
        pub fn agrees_with(&self, value: f64, k: f64) -> bool {
            (self.mean - value).abs() <= k * self.se
        }
    }

    /// `E_Q[H(θ)]`, the aleatoric part.
    pub fn expected_entropy(q: &impl SecondOrder, seed: u64, n: usize) -> Estimate {
        Estimate::from_samples(q.sample(seed, n).iter().map(|t| shannon_entropy(t)))
    }

    /// `E_Q[−ln θ_y]`.
    pub fn expected_neg_log(q: &impl SecondOrder, label: usize, seed: u64, n: usize) -> Estimate {
        Estimate::from_samples(q.sample(seed, n).iter().map(|t| -t[label].ln()))
    }

    /// Differential entropy `−E_Q[ln q(θ)]` of a mixture.
    pub fn mixture_entropy(m: &DirichletMixture, seed: u64, n: usize) -> Estimate {
        Estimate::from_samples(m.sample(seed, n).iter().map(|t| -m.log_pdf(t)))
    }

    /// `E_Q[−ln θ_y] − H(Q)` for a mixture, estimated jointly from one sample set.
    pub fn mixture_loss(m: &DirichletMixture, label: usize, seed: u64, n: usize) -> Estimate {
        Estimate::from_samples(m.sample(seed, n).iter().map(|t| -t[label].ln() + m.log_pdf(t)))
    }

    /// Per-coordinate mean of draws, each with its standard error.
    pub fn sample_mean(q: &impl SecondOrder, seed: u64, n: usize) -> Vec<Estimate> {
        let draws = q.sample(seed, n);
        (0..q.n_classes())
            .map(|k| Estimate::from_samples(draws.iter().map(|t| t[k])))
            .collect()
    }
}
