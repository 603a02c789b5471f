//! Two-state chains embedded blockwise into `[0, 1)`.
//!
//! With `K` blocks the unit interval is cut into `2K` cells. Block `k`
//! (0-based) owns the "+" cell `k` in `[0, 1/2)` and the "-" cell `K + k`
//! in `[1/2, 1)`. A transition from a cell stays in its block and lands
//! uniformly inside the destination cell.

use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::walsh_basis::DyadicFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainVariant {
    Base,
    A,
    B,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoStateChain {
    pub variant: ChainVariant,
    pub p: f64,
    pub dp: f64,
}

impl TwoStateChain {
    pub fn base(p: f64) -> Result<Self> {
        Self::new(ChainVariant::Base, p, 0.0)
    }

    pub fn new(variant: ChainVariant, p: f64, dp: f64) -> Result<Self> {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidParameter(format!("p = {p} is not in [0, 1]")));
        }
        if variant == ChainVariant::Base && dp != 0.0 {
            return Err(Error::InvalidParameter("base chain takes no perturbation".into()));
        }
        if !(dp.is_finite() && dp.abs() <= p) {
            return Err(Error::InvalidParameter(format!("|dp| = {} exceeds p = {p}", dp.abs())));
        }
        let chain = Self { variant, p, dp };
        let m = chain.matrix();
        if m.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter(format!(
                "transition entries out of range for p = {p}, dp = {dp}"
            )));
        }
        Ok(chain)
    }

    /// Row-stochastic matrix; index 0 is the "+" state.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (p, d) = (self.p, self.dp);
        match self.variant {
            ChainVariant::Base => [[1.0 - p, p], [p, 1.0 - p]],
            ChainVariant::A => [[1.0 - p - d, p + d], [p + d, 1.0 - p - d]],
            ChainVariant::B => [[1.0 - p + d, p - d], [p + d, 1.0 - p - d]],
        }
    }

    pub fn stationary(&self) -> [f64; 2] {
        let m = self.matrix();
        let (out, back) = (m[0][1], m[1][0]);
        if out + back == 0.0 {
            [0.5, 0.5]
        } else {
            [back / (out + back), out / (out + back)]
        }
    }
}

/// `(I - gamma P)^{-1} (r, -r)`.
pub fn two_state_value(chain: &TwoStateChain, r: f64, gamma: f64) -> (f64, f64) {
    let m = chain.matrix();
    let (a, b) = (1.0 - gamma * m[0][0], -gamma * m[0][1]);
    let (c, d) = (-gamma * m[1][0], 1.0 - gamma * m[1][1]);
    let det = a * d - b * c;
    ((d * r + b * r) / det, (-c * r - a * r) / det)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockMrp {
    chains: Vec<TwoStateChain>,
    reward_scale: f64,
    gamma: f64,
    level: u32,
}

impl BlockMrp {
    pub fn new(chains: Vec<TwoStateChain>, reward_scale: f64, gamma: f64) -> Result<Self> {
        if chains.is_empty() || !chains.len().is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "block count {} must be a power of two",
                chains.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("gamma = {gamma} is not in [0, 1)")));
        }
        if !reward_scale.is_finite() {
            return Err(Error::InvalidParameter("reward scale must be finite".into()));
        }
        let level = chains.len().trailing_zeros() + 1;
        Ok(Self { chains, reward_scale, gamma, level })
    }

    pub fn blocks(&self) -> usize {
        self.chains.len()
    }

    pub fn chains(&self) -> &[TwoStateChain] {
        &self.chains
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    /// Level of the `2K`-cell grid.
    pub fn level(&self) -> u32 {
        self.level
    }

    /// Block and side (0 = "+") of a cell.
    fn locate(&self, c: usize) -> (usize, usize) {
        let k = self.blocks();
        (c % k, c / k)
    }

    fn cell_of(&self, block: usize, side: usize) -> usize {
        side * self.blocks() + block
    }

    /// `r W_1`.
    pub fn reward(&self) -> DyadicFunction {
        let k = self.blocks();
        let r = self.reward_scale;
        DyadicFunction::from_fn(self.level, |c| if c < k { r } else { -r })
    }

    /// `E[f(X') | X in cell]`, with `f` averaged over each destination cell.
    pub fn transition_expectation(&self, f: &DyadicFunction) -> DyadicFunction {
        let fine = f.level().max(self.level);
        let f = f.refine(fine);
        let per = 1usize << (fine - self.level);
        let avg: Vec<f64> = f
            .values()
            .chunks(per)
            .map(|c| c.iter().sum::<f64>() / per as f64)
            .collect();
        DyadicFunction::from_fn(self.level, |c| {
            let (blk, side) = self.locate(c);
            let row = self.chains[blk].matrix()[side];
            row[0] * avg[self.cell_of(blk, 0)] + row[1] * avg[self.cell_of(blk, 1)]
        })
    }

    pub fn sample_pairs(&self, n: usize, seed: u64) -> SampleSet {
        self.sample_pairs_keyed(n, seed, 0)
    }

    /// Draw `n` pairs from the stream `(seed, stream)`; draw `i` uses only
    /// its own words of that stream.
    pub fn sample_pairs_keyed(&self, n: usize, seed: u64, stream: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let k = self.blocks();
        let kbits = k.trailing_zeros();
        let stationary: Vec<[f64; 2]> = self.chains.iter().map(|c| c.stationary()).collect();
        let rows: Vec<[[f64; 2]; 2]> = self.chains.iter().map(|c| c.matrix()).collect();
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let blk = if kbits == 0 { 0 } else { (rng.next_u64() >> (64 - kbits)) as usize };
            let side = usize::from(unit(&mut rng) >= stationary[blk][0]);
            let x = self.point_in(self.cell_of(blk, side), &mut rng);
            let next = usize::from(unit(&mut rng) >= rows[blk][side][0]);
            let y = self.point_in(self.cell_of(blk, next), &mut rng);
            pairs.push((x, y));
        }
        SampleSet { pairs, seed, stream }
    }

    /// Uniform point of cell `c`, built bitwise so it never leaves the cell.
    fn point_in(&self, c: usize, rng: &mut ChaCha8Rng) -> f64 {
        let free = 52 - self.level;
        let bits = ((c as u64) << free) | (rng.next_u64() >> (64 - free));
        bits as f64 * (1.0 / (1u64 << 52) as f64)
    }
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn exact_value_function(m: &BlockMrp) -> DyadicFunction {
    let k = m.blocks();
    let values: Vec<(f64, f64)> =
        m.chains.iter().map(|c| two_state_value(c, m.reward_scale, m.gamma)).collect();
    DyadicFunction::from_fn(m.level, |c| if c < k { values[c].0 } else { values[c - k].1 })
}

pub fn stationary_density(m: &BlockMrp) -> DyadicFunction {
    let pis: Vec<[f64; 2]> = m.chains.iter().map(|c| c.stationary()).collect();
    DyadicFunction::from_fn(m.level, |c| {
        let (blk, side) = m.locate(c);
        2.0 * pis[blk][side]
    })
}

/// `E[(theta*(X) - r(X) - gamma theta*(X'))^2]` under the stationary law.
pub fn bellman_residual_variance(m: &BlockMrp) -> f64 {
    let k = m.blocks() as f64;
    let r = m.reward_scale;
    m.chains
        .iter()
        .map(|c| {
            let (tp, tm) = two_state_value(c, r, m.gamma);
            let theta = [tp, tm];
            let reward = [r, -r];
            let pi = c.stationary();
            let p = c.matrix();
            let mut v = 0.0;
            for s in 0..2 {
                for t in 0..2 {
                    let e = theta[s] - reward[s] - m.gamma * theta[t];
                    v += pi[s] * p[s][t] * e * e;
                }
            }
            v / k
        })
        .sum()
}

/// `max_x |theta*(x) - r(x) - gamma E[theta*(X') | x]|`.
pub fn bellman_residual_max(m: &BlockMrp) -> f64 {
    let theta = exact_value_function(m);
    let next = m.transition_expectation(&theta);
    let r = m.reward();
    (0..1usize << m.level)
        .map(|c| (theta.values()[c] - r.values()[c] - m.gamma * next.values()[c]).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub pairs: Vec<(f64, f64)>,
    pub seed: u64,
    pub stream: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleKind {
    Hard,
    Easy,
}

impl std::str::FromStr for EnsembleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(EnsembleKind::Hard),
            "easy" => Ok(EnsembleKind::Easy),
            _ => Err(Error::Parse(format!("unknown ensemble {s:?}"))),
        }
    }
}

impl EnsembleKind {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::Hard => "hard",
            EnsembleKind::Easy => "easy",
        }
    }

    pub fn p(self, gamma: f64) -> f64 {
        match self {
            EnsembleKind::Hard => (1.0 - gamma) / gamma,
            EnsembleKind::Easy => 0.25,
        }
    }
}

/// Single-block simulation ensemble with unit reward.
pub fn make_ensemble(kind: EnsembleKind, gamma: f64) -> Result<BlockMrp> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} is not in (0, 1)")));
    }
    if kind == EnsembleKind::Hard && gamma <= 0.5 {
        return Err(Error::InvalidParameter(format!(
            "hard ensemble needs gamma > 1/2, got {gamma}"
        )));
    }
    BlockMrp::new(vec![TwoStateChain::base(kind.p(gamma))?], 1.0, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_value_closed_form() {
        for &p in &[0.0, 0.1, 0.25, 0.5] {
            let c = TwoStateChain::base(p).unwrap();
            let (a, b) = two_state_value(&c, 1.0, 0.9);
            assert!((a - 1.0 / (0.1 + 1.8 * p)).abs() < 1e-12);
            assert!((a + b).abs() < 1e-12);
        }
        let c = TwoStateChain::base(0.3).unwrap();
        assert_eq!(two_state_value(&c, 1.0, 0.0), (1.0, -1.0));
    }

    #[test]
    fn variant_a_matches_power_series() {
        let c = TwoStateChain::new(ChainVariant::A, 1.0 / 3.0, 0.05).unwrap();
        let (gamma, p) = (0.8, c.matrix());
        let mut v = [1.0, -1.0];
        let mut sum = v;
        for _ in 0..2000 {
            v = [
                gamma * (p[0][0] * v[0] + p[0][1] * v[1]),
                gamma * (p[1][0] * v[0] + p[1][1] * v[1]),
            ];
            sum[0] += v[0];
            sum[1] += v[1];
        }
        let (a, b) = two_state_value(&c, 1.0, gamma);
        assert!((a - sum[0]).abs() < 1e-12 && (b - sum[1]).abs() < 1e-12);
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn chain_validation() {
        assert!(TwoStateChain::new(ChainVariant::A, 0.1, 0.2).is_err());
        assert!(TwoStateChain::new(ChainVariant::Base, 0.1, 0.01).is_err());
        assert!(TwoStateChain::base(1.2).is_err());
        assert!(TwoStateChain::new(ChainVariant::B, 0.125, -0.125).is_ok());
    }

    #[test]
    fn ensembles() {
        let easy = make_ensemble(EnsembleKind::Easy, 0.9).unwrap();
        let v = exact_value_function(&easy);
        assert_eq!(v.level(), 1);
        assert!((v.values()[0] - 1.0 / 0.55).abs() < 1e-12);
        assert!((v.values()[1] + 1.0 / 0.55).abs() < 1e-12);

        let hard = make_ensemble(EnsembleKind::Hard, 0.9).unwrap();
        let v = exact_value_function(&hard);
        assert!((v.values()[0] - 10.0 / 3.0).abs() < 1e-12);
        let s2 = bellman_residual_variance(&hard);
        assert!((s2 - 4.0 * 0.81 * (1.0 / 9.0) * (8.0 / 9.0) / 0.09).abs() < 1e-12);
        assert!((s2 - 3.5556).abs() < 1e-4);

        let s2 = bellman_residual_variance(&easy);
        assert!((s2 - 4.0 * 0.81 * 0.1875 / 0.3025).abs() < 1e-12);

        assert!(make_ensemble(EnsembleKind::Hard, 0.5).is_err());
        assert!(make_ensemble(EnsembleKind::Hard, 0.6).is_ok());
    }

    #[test]
    fn zero_discount_has_no_residual() {
        let m = BlockMrp::new(vec![TwoStateChain::base(0.3).unwrap()], 1.0, 0.0).unwrap();
        assert_eq!(bellman_residual_variance(&m), 0.0);
    }

    #[test]
    fn variant_b_density() {
        let chains = vec![
            TwoStateChain::new(ChainVariant::B, 0.125, 0.01).unwrap(),
            TwoStateChain::new(ChainVariant::B, 0.125, 0.0).unwrap(),
        ];
        let m = BlockMrp::new(chains, 1.0, 0.9).unwrap();
        let d = stationary_density(&m);
        assert!((d.values()[0] - 1.08).abs() < 1e-12);
        assert!((d.values()[2] - 0.92).abs() < 1e-12);
        assert!((d.values()[1] - 1.0).abs() < 1e-12);
        assert!((d.integral() - 1.0).abs() < 1e-15);
        let c = m.chains()[0];
        let (pi, p) = (c.stationary(), c.matrix());
        for t in 0..2 {
            assert!((pi[0] * p[0][t] + pi[1] * p[1][t] - pi[t]).abs() < 1e-15);
        }
    }

    #[test]
    fn variant_a_density_is_uniform() {
        let chains = vec![TwoStateChain::new(ChainVariant::A, 0.2, -0.03).unwrap(); 4];
        let m = BlockMrp::new(chains, 1.0, 0.9).unwrap();
        assert!(stationary_density(&m).values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let m = make_ensemble(EnsembleKind::Hard, 0.9).unwrap();
        let a = m.sample_pairs(1000, 7);
        let b = m.sample_pairs(1000, 7);
        assert_eq!(a, b);
        assert!(a.pairs.iter().all(|&(x, y)| (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y)));
        assert_ne!(a, m.sample_pairs_keyed(1000, 7, 1));
        assert_eq!(m.sample_pairs(1, 3).len(), 1);
    }
}
