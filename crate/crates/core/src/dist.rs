//! Distributions for arrivals `X`, harvests `Y`, sensing drain `Z` and
//! fading gains `h`.

use rand_distr::{Distribution, Exp, Gamma};

use crate::error::{config_err, Error, Result};
use crate::rate::RateFunction;
use crate::rng::RandomStream;

/// Mixture used for the hyperexponential inputs: component `i` has mean
/// `m * k_i / W` where `W = sum_i w_i k_i`, so the mixture mean is exactly `m`.
pub const HYPEREXP_MULTIPLIERS: [f64; 5] = [1.0, 2.0, 3.0, 6.0, 10.0];
pub const HYPEREXP_WEIGHTS: [f64; 5] = [0.1, 0.2, 0.2, 0.3, 0.2];

const PROB_TOL: f64 = 1e-12;

/// How a Poisson variate is truncated at its cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// `min(Poisson(rate), cap)`: the tail mass piles up on the cap.
    Clamp,
    /// Poisson conditioned on `<= cap` (renormalized pmf).
    Conditional,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DistributionSpec {
    Deterministic {
        value: f64,
    },
    Exponential {
        mean: f64,
    },
    TruncatedPoisson {
        rate: f64,
        cap: u32,
        truncation: Truncation,
    },
    Erlang {
        shape: u32,
        mean: f64,
    },
    Hyperexponential {
        mean: f64,
        weights: Vec<f64>,
        multipliers: Vec<f64>,
    },
    Discrete {
        atoms: Vec<(f64, f64)>,
    },
}

/// A Monte Carlo or exact estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, std_err: 0.0 }
    }
}

impl DistributionSpec {
    pub fn deterministic(value: f64) -> Self {
        Self::Deterministic { value }
    }

    pub fn exponential(mean: f64) -> Self {
        Self::Exponential { mean }
    }

    pub fn erlang(shape: u32, mean: f64) -> Self {
        Self::Erlang { shape, mean }
    }

    pub fn truncated_poisson(rate: f64, cap: u32) -> Self {
        Self::TruncatedPoisson {
            rate,
            cap,
            truncation: Truncation::Clamp,
        }
    }

    /// Five-component hyperexponential with the standard weights/multipliers.
    pub fn hyperexponential(mean: f64) -> Self {
        Self::Hyperexponential {
            mean,
            weights: HYPEREXP_WEIGHTS.to_vec(),
            multipliers: HYPEREXP_MULTIPLIERS.to_vec(),
        }
    }

    pub fn discrete(atoms: Vec<(f64, f64)>) -> Self {
        Self::Discrete { atoms }
    }

    /// The four-state fading distribution used for the single-node and CSMA
    /// scenarios.
    pub fn four_state_fading() -> Self {
        Self::discrete(vec![(0.1, 0.1), (0.5, 0.3), (1.0, 0.4), (2.2, 0.2)])
    }

    pub fn validate(&self) -> Result<()> {
        fn nonneg(name: &str, v: f64) -> Result<()> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                config_err(format!("{name} must be a finite nonnegative number, got {v}"))
            }
        }
        fn prob_vector(name: &str, ps: impl Iterator<Item = f64>) -> Result<()> {
            let mut sum = 0.0;
            for p in ps {
                if !(0.0..=1.0).contains(&p) {
                    return config_err(format!("{name}: probability {p} outside [0, 1]"));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_TOL {
                return config_err(format!("{name}: probabilities sum to {sum}, not 1"));
            }
            Ok(())
        }
        match self {
            Self::Deterministic { value } => nonneg("value", *value),
            Self::Exponential { mean } => nonneg("mean", *mean),
            Self::TruncatedPoisson { rate, .. } => nonneg("rate", *rate),
            Self::Erlang { shape, mean } => {
                if *shape == 0 {
                    return config_err("erlang shape must be positive");
                }
                nonneg("mean", *mean)
            }
            Self::Hyperexponential {
                mean,
                weights,
                multipliers,
            } => {
                nonneg("mean", *mean)?;
                if weights.is_empty() || weights.len() != multipliers.len() {
                    return config_err("hyperexponential weights and multipliers must be nonempty and the same length");
                }
                if multipliers.iter().any(|k| !(*k > 0.0 && k.is_finite())) {
                    return config_err("hyperexponential multipliers must be positive");
                }
                prob_vector("hyperexponential weights", weights.iter().copied())
            }
            Self::Discrete { atoms } => {
                if atoms.is_empty() {
                    return config_err("discrete distribution needs at least one atom");
                }
                for (v, _) in atoms {
                    nonneg("atom value", *v)?;
                }
                prob_vector("discrete atoms", atoms.iter().map(|a| a.1))
            }
        }
    }

    /// The configured mean. For a truncated Poisson this is the untruncated
    /// rate; see [`DistributionSpec::exact_mean`] for the truncated value.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Deterministic { value } => *value,
            Self::Exponential { mean }
            | Self::Erlang { mean, .. }
            | Self::Hyperexponential { mean, .. } => *mean,
            Self::TruncatedPoisson { rate, .. } => *rate,
            Self::Discrete { atoms } => atoms.iter().map(|(v, p)| v * p).sum(),
        }
    }

    /// The true mean of the variate actually sampled.
    pub fn exact_mean(&self) -> f64 {
        match self.pmf() {
            Some(atoms) => atoms.iter().map(|(v, p)| v * p).sum(),
            None => self.mean(),
        }
    }

    /// Same family and shape, rescaled so that [`DistributionSpec::mean`]
    /// returns `mean`.
    pub fn with_mean(&self, mean: f64) -> Self {
        match self {
            Self::Deterministic { .. } => Self::Deterministic { value: mean },
            Self::Exponential { .. } => Self::Exponential { mean },
            Self::Erlang { shape, .. } => Self::Erlang {
                shape: *shape,
                mean,
            },
            Self::Hyperexponential {
                weights,
                multipliers,
                ..
            } => Self::Hyperexponential {
                mean,
                weights: weights.clone(),
                multipliers: multipliers.clone(),
            },
            Self::TruncatedPoisson {
                cap, truncation, ..
            } => Self::TruncatedPoisson {
                rate: mean,
                cap: *cap,
                truncation: *truncation,
            },
            Self::Discrete { atoms } => {
                let old = self.mean();
                let scale = if old > 0.0 { mean / old } else { 0.0 };
                Self::Discrete {
                    atoms: atoms.iter().map(|(v, p)| (v * scale, *p)).collect(),
                }
            }
        }
    }

    pub fn is_deterministic(&self) -> bool {
        match self.pmf() {
            Some(atoms) => atoms.iter().filter(|(_, p)| *p > 0.0).count() <= 1,
            None => self.mean() == 0.0,
        }
    }

    /// Atoms `(value, probability)` for finite-support distributions.
    pub fn pmf(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::Deterministic { value } => Some(vec![(*value, 1.0)]),
            Self::Discrete { atoms } => Some(atoms.clone()),
            Self::TruncatedPoisson {
                rate,
                cap,
                truncation,
            } => Some(truncated_poisson_pmf(*rate, *cap, *truncation)),
            Self::Exponential { mean }
            | Self::Erlang { mean, .. }
            | Self::Hyperexponential { mean, .. }
                if *mean == 0.0 =>
            {
                Some(vec![(0.0, 1.0)])
            }
            _ => None,
        }
    }

    /// Survival function `P(V > v)` for the continuous families.
    fn survival(&self, v: f64) -> Option<f64> {
        match self {
            Self::Exponential { mean } => Some((-v / mean).exp()),
            Self::Erlang { shape, mean } => {
                let lam = *shape as f64 / mean;
                let x = lam * v;
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..*shape {
                    term *= x / j as f64;
                    sum += term;
                }
                Some((-x).exp() * sum)
            }
            Self::Hyperexponential {
                mean,
                weights,
                multipliers,
            } => {
                let w = hyperexp_norm(weights, multipliers);
                Some(
                    weights
                        .iter()
                        .zip(multipliers)
                        .map(|(p, k)| p * (-v / (mean * k / w)).exp())
                        .sum(),
                )
            }
            _ => None,
        }
    }

    /// Largest component mean; sets the integration range for quadrature.
    fn tail_scale(&self) -> f64 {
        match self {
            Self::Hyperexponential {
                mean,
                weights,
                multipliers,
            } => {
                let w = hyperexp_norm(weights, multipliers);
                multipliers.iter().fold(0.0f64, |a, k| a.max(mean * k / w))
            }
            other => other.mean(),
        }
    }

    /// Draws one variate. Builds a [`Sampler`] each call; reuse a sampler in
    /// loops.
    pub fn sample(&self, rs: &mut RandomStream) -> f64 {
        self.sampler().sample(rs)
    }

    pub fn sampler(&self) -> Sampler {
        let kind = match self {
            Self::Deterministic { value } => SamplerKind::Constant(*value),
            Self::Exponential { mean } if *mean == 0.0 => SamplerKind::Constant(0.0),
            Self::Exponential { mean } => SamplerKind::Exp(Exp::new(1.0 / mean).unwrap()),
            Self::Erlang { mean, .. } if *mean == 0.0 => SamplerKind::Constant(0.0),
            Self::Erlang { shape, mean } => {
                SamplerKind::Gamma(Gamma::new(*shape as f64, mean / *shape as f64).unwrap())
            }
            Self::Hyperexponential { mean, .. } if *mean == 0.0 => SamplerKind::Constant(0.0),
            Self::Hyperexponential {
                mean,
                weights,
                multipliers,
            } => {
                let w = hyperexp_norm(weights, multipliers);
                let comps = weights
                    .iter()
                    .zip(multipliers)
                    .map(|(p, k)| (Exp::new(w / (mean * k)).unwrap(), *p))
                    .collect::<Vec<_>>();
                SamplerKind::Mixture(cumulative(comps))
            }
            Self::TruncatedPoisson { .. } | Self::Discrete { .. } => {
                SamplerKind::Table(cumulative(self.pmf().unwrap()))
            }
        };
        Sampler { kind }
    }
}

fn hyperexp_norm(weights: &[f64], multipliers: &[f64]) -> f64 {
    weights.iter().zip(multipliers).map(|(p, k)| p * k).sum()
}

fn cumulative<T>(items: Vec<(T, f64)>) -> Vec<(f64, T)>
where
    T: Clone,
{
    let mut acc = 0.0;
    items
        .into_iter()
        .map(|(t, p)| {
            acc += p;
            (acc, t)
        })
        .collect()
}

fn truncated_poisson_pmf(rate: f64, cap: u32, truncation: Truncation) -> Vec<(f64, f64)> {
    let mut pmf = Vec::with_capacity(cap as usize + 1);
    let mut p = (-rate).exp();
    let mut below = 0.0;
    for k in 0..cap {
        pmf.push((k as f64, p));
        below += p;
        p *= rate / (k + 1) as f64;
    }
    match truncation {
        Truncation::Clamp => pmf.push((cap as f64, (1.0 - below).max(0.0))),
        Truncation::Conditional => {
            pmf.push((cap as f64, p));
            let total = below + p;
            for atom in &mut pmf {
                atom.1 /= total;
            }
        }
    }
    pmf
}

/// A prepared sampler for one [`DistributionSpec`].
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: SamplerKind,
}

#[derive(Debug, Clone)]
enum SamplerKind {
    Constant(f64),
    Exp(Exp<f64>),
    Gamma(Gamma<f64>),
    Mixture(Vec<(f64, Exp<f64>)>),
    Table(Vec<(f64, f64)>),
}

fn pick<T>(table: &[(f64, T)], u: f64) -> &T {
    table
        .iter()
        .find(|(c, _)| u < *c)
        .map(|(_, t)| t)
        .unwrap_or(&table[table.len() - 1].1)
}

impl Sampler {
    #[inline]
    pub fn sample(&self, rs: &mut RandomStream) -> f64 {
        match &self.kind {
            SamplerKind::Constant(v) => *v,
            SamplerKind::Exp(d) => d.sample(rs),
            SamplerKind::Gamma(d) => d.sample(rs),
            SamplerKind::Mixture(comps) => {
                let u = rs.uniform();
                pick(comps, u).sample(rs)
            }
            SamplerKind::Table(table) => *pick(table, rs.uniform()),
        }
    }
}

/// `E[g(V)]`: exact summation for finite support, Monte Carlo with
/// `n_mc >= 10^4` draws otherwise.
pub fn expected_g(
    d: &DistributionSpec,
    rf: &RateFunction,
    n_mc: usize,
    rs: &mut RandomStream,
) -> Result<Estimate> {
    if let Some(atoms) = d.pmf() {
        return Ok(Estimate::exact(
            atoms.iter().map(|(v, p)| p * rf.bits(*v)).sum(),
        ));
    }
    if n_mc < 10_000 {
        return Err(Error::Config(format!(
            "Monte Carlo estimate needs at least 10^4 draws, got {n_mc}"
        )));
    }
    let sampler = d.sampler();
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..n_mc {
        let v = rf.bits(sampler.sample(rs));
        s += v;
        ss += v * v;
    }
    let n = n_mc as f64;
    let mean = s / n;
    let var = (ss / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(Estimate {
        mean,
        std_err: (var / n).sqrt(),
    })
}

/// `E[g(V)]` by deterministic integration: exact sums for finite support,
/// otherwise `int_0^inf g'(v) P(V > v) dv` by adaptive Simpson.
pub fn expected_g_exact(d: &DistributionSpec, rf: &RateFunction) -> f64 {
    if let Some(atoms) = d.pmf() {
        return atoms.iter().map(|(v, p)| p * rf.bits(*v)).sum();
    }
    let upper = 80.0 * d.tail_scale();
    // g' is analytic: gamma, or prefactor * beta / (ln b (1 + beta v)).
    let slope = |v: f64| match rf.kind {
        crate::rate::RateKind::Linear => rf.gamma,
        crate::rate::RateKind::LogShannon => {
            let pre = if rf.half_factor { 0.5 } else { 1.0 };
            pre * rf.beta / (rf.log_base.ln() * (1.0 + rf.beta * v))
        }
    };
    let f = |v: f64| slope(v) * d.survival(v).unwrap();
    // Split the range so the adaptive rule sees the fast-varying head.
    let mut total = 0.0;
    let mut lo = 0.0;
    let mut hi = d.tail_scale() / 64.0;
    while lo < upper {
        let b = hi.min(upper);
        total += adaptive_simpson(&f, lo, b, 1e-14, 40);
        lo = b;
        hi *= 2.0;
    }
    total
}

/// `E[g(h V)]` for a finite-support gain `h` independent of `V`.
pub fn expected_g_faded(h: &DistributionSpec, v: &DistributionSpec, rf: &RateFunction) -> f64 {
    let atoms = h.pmf().expect("fading gain must have finite support");
    atoms
        .iter()
        .map(|(g, p)| {
            if *g == 0.0 {
                0.0
            } else {
                p * expected_g_exact(v, &rf.scaled(*g))
            }
        })
        .sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}
