//! Naive Bayesian fusion on stochastic buses.
//!
//! Row `j` of the machine chains a prior line through `N` product modules.
//! Each module holds `p[i][j] = C_i * P(K_i | S = S_j)` in memory, draws its own
//! Bernoulli stream with that p-value and ANDs it with the incoming signal. The
//! rightmost signals form the output bus, whose channel `j` carries
//! `prod_i C_i * P(S = S_j | K_1..K_N)` up to the normalization constant.

use crate::error::{Error, Result};
use crate::stochastic::{
    derive_seed, free_run, run_until_overflow, BitChannel, BitSource, CounterBank, RunReport,
    StochasticBus,
};

/// Stream tags keep prior and term seeds in disjoint families.
const PRIOR_STREAM: u64 = 0;
const TERM_STREAM: u64 = 1;

/// Prior bus feeding the left edge of the machine.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Uniform prior wired as constant-1 lines (`C_0 = M`); needs no generators.
    Uniform,
    /// Per-row p-values `C_0 * P(S = S_j)`.
    Encoded(Vec<f64>),
}

/// The fusion problem: prior, term table and bus constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    width: usize,
    prior: Prior,
    /// `terms[i][j]`: p-value of data term `i` on row `j`.
    terms: Vec<Vec<f64>>,
    /// `C_0..C_N`; `None` where a constant is not known.
    constants: Vec<Option<f64>>,
}

fn check_p(p: f64, what: impl FnOnce() -> String) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("{} = {p} is outside [0, 1]", what())))
    }
}

impl FusionSpec {
    pub fn new(
        width: usize,
        prior: Prior,
        terms: Vec<Vec<f64>>,
        constants: Vec<Option<f64>>,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::ZeroWidth);
        }
        if let Prior::Encoded(p) = &prior {
            if p.len() != width {
                return Err(Error::InvalidSpec(format!(
                    "prior has {} entries, expected {width}",
                    p.len()
                )));
            }
            for (j, &v) in p.iter().enumerate() {
                check_p(v, || format!("prior[{j}]"))?;
            }
        }
        for (i, row) in terms.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidSpec(format!(
                    "term {i} has {} entries, expected {width}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                check_p(v, || format!("p[{i}][{j}]"))?;
            }
        }
        if constants.len() != terms.len() + 1 {
            return Err(Error::InvalidSpec(format!(
                "{} bus constants given for {} terms",
                constants.len(),
                terms.len()
            )));
        }
        if let Some(c) = constants.iter().flatten().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidSpec(format!("bus constant {c} is not positive")));
        }
        Ok(Self {
            width,
            prior,
            terms,
            constants,
        })
    }

    /// Uniform prior (`C_0 = M`) with term p-values used as given and their
    /// bus constants left unknown.
    pub fn uniform(width: usize, terms: Vec<Vec<f64>>) -> Result<Self> {
        let mut constants = vec![None; terms.len() + 1];
        constants[0] = Some(width as f64);
        Self::new(width, Prior::Uniform, terms, constants)
    }

    /// Builds a spec from probability tables, max-normalizing each one so its
    /// largest entry is carried by an all-ones line (`C_i = 1 / max_j`).
    /// `prior = None` means uniform.
    pub fn from_distributions(prior: Option<&[f64]>, likelihoods: &[Vec<f64>]) -> Result<Self> {
        fn normalize(values: &[f64]) -> Result<(Vec<f64>, f64)> {
            let max = values.iter().copied().fold(0.0, f64::max);
            if !(max > 0.0 && max.is_finite()) {
                return Err(Error::InvalidSpec("table has no positive entry".into()));
            }
            if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidProbability(bad));
            }
            let c = 1.0 / max;
            let p = values
                .iter()
                .map(|&v| if v == max { 1.0 } else { (v * c).min(1.0) })
                .collect();
            Ok((p, c))
        }
        let width = match (prior, likelihoods.first()) {
            (Some(p), _) => p.len(),
            (None, Some(row)) => row.len(),
            (None, None) => return Err(Error::ZeroWidth),
        };
        let (prior, c0) = match prior {
            Some(p) => {
                let (p, c) = normalize(p)?;
                (Prior::Encoded(p), c)
            }
            None => (Prior::Uniform, width as f64),
        };
        let mut terms = Vec::with_capacity(likelihoods.len());
        let mut constants = vec![Some(c0)];
        for row in likelihoods {
            let (p, c) = normalize(row)?;
            terms.push(p);
            constants.push(Some(c));
        }
        Self::new(width, prior, terms, constants)
    }

    /// Cardinality `M` of the searched variable.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Number `N` of data terms.
    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn prior_p_values(&self) -> Vec<f64> {
        match &self.prior {
            Prior::Uniform => vec![1.0; self.width],
            Prior::Encoded(p) => p.clone(),
        }
    }

    pub fn term(&self, i: usize, j: usize) -> f64 {
        self.terms[i][j]
    }

    pub fn terms(&self) -> &[Vec<f64>] {
        &self.terms
    }

    pub fn constants(&self) -> &[Option<f64>] {
        &self.constants
    }

    /// `C_out = prod_i C_i`, when every constant is known.
    pub fn output_constant(&self) -> Option<f64> {
        self.constants.iter().try_fold(1.0, |acc, c| c.map(|c| acc * c))
    }

    /// Exact p-value of each output channel: prior times the term products.
    pub fn output_p_values(&self) -> Vec<f64> {
        let mut out = self.prior_p_values();
        for row in &self.terms {
            for (o, p) in out.iter_mut().zip(row) {
                *o *= p;
            }
        }
        out
    }

    /// Same spec with the data terms reordered; `order[k]` is the original
    /// index of the term placed in column `k`.
    pub fn permute_terms(&self, order: &[usize]) -> Result<Self> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.terms.len()).collect::<Vec<_>>() {
            return Err(Error::InvalidSpec("term order is not a permutation".into()));
        }
        let terms = order.iter().map(|&i| self.terms[i].clone()).collect();
        let mut constants = vec![self.constants[0]];
        constants.extend(order.iter().map(|&i| self.constants[i + 1]));
        Self::new(self.width, self.prior.clone(), terms, constants)
    }
}

/// One row of product modules.
#[derive(Debug, Clone)]
pub struct ProductRow {
    prior: BitSource,
    terms: Vec<BitSource>,
}

impl BitChannel for ProductRow {
    fn next_word(&mut self, live: u64) -> u64 {
        let mut w = self.prior.next_word(live);
        for module in &mut self.terms {
            if w == 0 {
                break;
            }
            // Lanes already at 0 stay 0 whatever this module emits.
            w = module.next_word(w);
        }
        w
    }

    fn p_value(&self) -> f64 {
        self.terms.iter().fold(self.prior.p(), |acc, s| acc * s.p())
    }
}

/// A runnable `M x N` matrix of product modules with its output counters.
#[derive(Debug, Clone)]
pub struct Machine {
    bus: StochasticBus<ProductRow>,
    bank: CounterBank,
    term_count: usize,
}

/// Outcome of one machine run: winner (or timeout), counts and cycles.
pub type MachineResult = RunReport;

/// Instantiates the machine. Every product module gets its own generator,
/// seeded from `seed`, its column and its row.
pub fn build_machine(spec: &FusionSpec, n_max: u32, seed: u64) -> Result<Machine> {
    let width = spec.width();
    let prior = spec.prior_p_values();
    let mut rows = Vec::with_capacity(width);
    for (j, &prior_p) in prior.iter().enumerate() {
        let prior = match spec.prior() {
            Prior::Uniform => BitSource::constant_one(),
            Prior::Encoded(_) => {
                BitSource::new(prior_p, derive_seed(seed, &[PRIOR_STREAM, j as u64]))?
            }
        };
        let terms = (0..spec.term_count())
            .map(|i| {
                BitSource::new(
                    spec.term(i, j),
                    derive_seed(seed, &[TERM_STREAM, i as u64, j as u64]),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ProductRow { prior, terms });
    }
    Ok(Machine {
        bus: StochasticBus::from_channels(rows, spec.output_constant())?,
        bank: CounterBank::new(width, n_max)?,
        term_count: spec.term_count(),
    })
}

impl Machine {
    pub fn width(&self) -> usize {
        self.bus.width()
    }

    pub fn term_count(&self) -> usize {
        self.term_count
    }

    pub fn n_max(&self) -> u32 {
        self.bank.n_max()
    }

    /// Number of product modules, each with its own generator (`N * M`).
    pub fn term_source_count(&self) -> usize {
        self.width() * self.term_count
    }

    /// Generators on the prior bus; zero for a uniform prior.
    pub fn prior_source_count(&self) -> usize {
        self.bus
            .channels()
            .iter()
            .filter(|row| row.prior.is_random())
            .count()
    }

    pub fn output_constant(&self) -> Option<f64> {
        self.bus.constant()
    }

    /// p-values carried by the output bus.
    pub fn output_p_values(&self) -> Vec<f64> {
        self.bus.p_values()
    }

    /// Counts output 1s over a fixed number of cycles with no counter stop.
    pub fn free_run(&mut self, cycles: u64) -> Vec<u64> {
        free_run(&mut self.bus, cycles)
    }
}

/// Zeroes the counters and runs until the first overflow or `max_cycles`.
pub fn run_machine(machine: &mut Machine, max_cycles: u64) -> Result<MachineResult> {
    machine.bank.reset();
    run_until_overflow(&mut machine.bus, &mut machine.bank, max_cycles)
}

/// Index of the first counter to overflow, i.e. the MAP value.
pub fn map_estimate(result: &MachineResult) -> Result<usize> {
    result.winner().ok_or(Error::TimedOut {
        cycles: result.cycles,
    })
}
