//! Maximization of the expected key rate over `k`, `Q_tol` and the split of
//! the security budget between correctness and secrecy.
//!
//! The security budget is either a fixed total `eps` or a fixed security
//! rate `eps / ell`. In the latter case the budget depends on the key length
//! it produces; each grid cell solves `ell = key_length(eps(ell))` by
//! fixed-point iteration from `ell = n / 2`.

use rayon::prelude::*;

use crate::bounds::{leak_model, ProtocolParams};
use crate::rate::{assemble, asymptotic_rate, KeyLengthMethod, RateResult};
use crate::stats::binomial_tail_gt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecurityTarget {
    /// `eps_cor + eps_sec <= rate * ell`.
    PerKeyBit(f64),
    /// `eps_cor + eps_sec <= eps`.
    Total(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// `(1 - eps_rob) ell / M(n, k)` at fixed block size `n`.
    #[default]
    ExpectedRate,
    /// `ell / N` at fixed sifted size `N = n + k`.
    SiftedRatio,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub k_points: usize,
    pub q_tol_points: usize,
    pub split_points: usize,
    /// Width of the `Q_tol` window in standard errors of the PE estimate.
    pub q_tol_span: f64,
    pub refine: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { k_points: 40, q_tol_points: 60, split_points: 20, q_tol_span: 10.0, refine: true }
    }
}

impl GridSpec {
    pub fn refined(self, factor: usize) -> Self {
        GridSpec {
            k_points: self.k_points * factor,
            q_tol_points: self.q_tol_points * factor,
            split_points: self.split_points * factor,
            ..self
        }
    }
}

/// Free parameters fixed by the caller instead of searched.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pins {
    pub k: Option<u64>,
    pub q_tol: Option<f64>,
    /// Fraction of the security budget given to `eps_cor`.
    pub cor_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizationProblem {
    /// Block size `n` for [`Objective::ExpectedRate`], sifted size `N` for
    /// [`Objective::SiftedRatio`].
    pub size: u64,
    pub qber: f64,
    pub target: SecurityTarget,
    pub xi: f64,
    pub mode: Objective,
    pub q: f64,
    pub detection_prob: f64,
    pub method: KeyLengthMethod,
    pub grid: GridSpec,
    pub pins: Pins,
}

impl OptimizationProblem {
    pub fn new(n: u64, qber: f64, security_rate: f64) -> Self {
        OptimizationProblem {
            size: n,
            qber,
            target: SecurityTarget::PerKeyBit(security_rate),
            xi: 1.1,
            mode: Objective::ExpectedRate,
            q: 1.0,
            detection_prob: 1.0,
            method: KeyLengthMethod::Corollary,
            grid: GridSpec::default(),
            pins: Pins::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1_000..=100_000_000).contains(&self.size) {
            return Err(Error::domain(format!("size {} outside [1e3, 1e8]", self.size)));
        }
        if !(0.0..0.5).contains(&self.qber) {
            return Err(Error::domain(format!("QBER {} outside [0, 1/2)", self.qber)));
        }
        let eps = match self.target {
            SecurityTarget::PerKeyBit(r) | SecurityTarget::Total(r) => r,
        };
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::domain(format!("security target {eps} outside (0, 1)")));
        }
        if !(self.xi >= 1.0) {
            return Err(Error::domain(format!("xi = {} below 1", self.xi)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::domain(format!("q = {} outside [0, 1]", self.q)));
        }
        if !(self.detection_prob > 0.0 && self.detection_prob <= 1.0) {
            return Err(Error::domain("detection probability outside (0, 1]"));
        }
        let g = &self.grid;
        if g.k_points == 0 || g.q_tol_points == 0 || g.split_points == 0 {
            return Err(Error::domain("grid dimensions must be positive"));
        }
        if let Some(t) = self.pins.cor_fraction {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::domain(format!("eps_cor fraction {t} outside (0, 1)")));
            }
        }
        if let Some(qt) = self.pins.q_tol {
            if !(0.0..0.5).contains(&qt) {
                return Err(Error::domain(format!("Q_tol {qt} outside [0, 1/2)")));
            }
        }
        if let Some(k) = self.pins.k {
            if k == 0 || (self.mode == Objective::SiftedRatio && k >= self.size) {
                return Err(Error::domain(format!("pinned k = {k} out of range")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimumRecord {
    pub n: u64,
    pub k: u64,
    pub qber: f64,
    pub q_tol: f64,
    pub eps_cor: f64,
    pub eps_sec: f64,
    /// Security budget available to the record; `eps_cor + eps_sec <= eps_total`.
    pub eps_total: f64,
    pub result: RateResult,
    /// Achieved `(eps_cor + eps_sec) / ell`, zero without key.
    pub security_rate: f64,
    /// `rate / (1 - 2 h(Q))`.
    pub rate_rel: f64,
    pub ell_over_n: f64,
    /// `ell / N` with `N = n + k`.
    pub ell_over_sifted: f64,
}

impl OptimumRecord {
    pub fn rate(&self) -> f64 {
        self.result.rate
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    objective: f64,
    k_idx: usize,
    q_idx: usize,
    t_idx: usize,
    k: u64,
    q_tol: f64,
    split: BudgetSplit,
    ell: u64,
    eps_rob: f64,
}

impl Cell {
    /// Larger objective wins; ties go to smaller k, then Q_tol, then split.
    fn better_than(&self, other: &Cell) -> bool {
        if self.objective != other.objective {
            return self.objective > other.objective;
        }
        (self.k, self.q_idx, self.t_idx) < (other.k, other.q_idx, other.t_idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BudgetSplit {
    eps_cor: f64,
    eps_sec: f64,
    total: f64,
}

impl BudgetSplit {
    fn new(total: f64, cor_fraction: f64) -> Self {
        let eps_cor = total * cor_fraction;
        let mut eps_sec = total - eps_cor;
        while eps_cor + eps_sec > total {
            eps_sec = eps_sec.next_down();
        }
        BudgetSplit { eps_cor, eps_sec, total }
    }

    fn usable(&self) -> bool {
        self.eps_cor > 0.0 && self.eps_sec > 0.0 && self.eps_sec < 1.0 && self.eps_cor < 1.0
    }
}

struct Evaluator<'a> {
    prob: &'a OptimizationProblem,
}

impl Evaluator<'_> {
    fn block(&self, k: u64) -> u64 {
        match self.prob.mode {
            Objective::ExpectedRate => self.prob.size,
            Objective::SiftedRatio => self.prob.size - k,
        }
    }

    fn params(&self, k: u64, q_tol: f64, split: &BudgetSplit) -> ProtocolParams {
        let n = self.block(k);
        ProtocolParams {
            n,
            k,
            q: self.prob.q,
            q_tol,
            eps_cor: split.eps_cor,
            eps_sec: split.eps_sec,
            leak_ec: leak_model(n, q_tol, self.prob.xi).min(n as f64),
        }
    }

    fn key_length(&self, k: u64, q_tol: f64, split: &BudgetSplit) -> u64 {
        if !split.usable() {
            return 0;
        }
        self.prob.method.key_length(&self.params(k, q_tol, split)).unwrap_or(0)
    }

    /// Key length and budget consistent with the security target.
    fn solve(&self, k: u64, q_tol: f64, cor_fraction: f64) -> (u64, BudgetSplit) {
        match self.prob.target {
            SecurityTarget::Total(eps) => {
                let split = BudgetSplit::new(eps, cor_fraction);
                (self.key_length(k, q_tol, &split), split)
            }
            SecurityTarget::PerKeyBit(rate) => {
                let split_for = |ell: u64| BudgetSplit::new(rate * ell as f64, cor_fraction);
                let g = |ell: u64| self.key_length(k, q_tol, &split_for(ell));
                let mut ell = (self.block(k) / 2).max(1);
                for _ in 0..50 {
                    let next = g(ell);
                    if next == ell || next == 0 {
                        ell = next;
                        break;
                    }
                    ell = next;
                }
                // the budget grows with ell, so stepping down terminates at a
                // length its own budget supports
                while ell > 0 && g(ell) < ell {
                    ell = g(ell);
                }
                (ell, split_for(ell))
            }
        }
    }

    fn objective(&self, k: u64, ell: u64, eps_rob: f64) -> f64 {
        if ell == 0 {
            return 0.0;
        }
        match self.prob.mode {
            Objective::ExpectedRate => {
                let n = self.block(k);
                assemble(n, k, ell, eps_rob, self.prob.detection_prob, 0.0).rate
            }
            Objective::SiftedRatio => ell as f64 / self.prob.size as f64,
        }
    }

    fn eps_rob(&self, k: u64, q_tol: f64) -> f64 {
        binomial_tail_gt(k, self.prob.qber, q_tol).unwrap_or(1.0)
    }

    fn search(&self, ks: &[u64], q_tols: &(dyn Fn(u64) -> Vec<f64> + Sync), fracs: &[f64]) -> Option<Cell> {
        ks.par_iter()
            .enumerate()
            .filter_map(|(k_idx, &k)| {
                let mut best: Option<Cell> = None;
                for (q_idx, q_tol) in q_tols(k).into_iter().enumerate() {
                    let eps_rob = self.eps_rob(k, q_tol);
                    for (t_idx, &t) in fracs.iter().enumerate() {
                        let (ell, split) = self.solve(k, q_tol, t);
                        let cell = Cell {
                            objective: self.objective(k, ell, eps_rob),
                            k_idx,
                            q_idx,
                            t_idx,
                            k,
                            q_tol,
                            split,
                            ell,
                            eps_rob,
                        };
                        if best.as_ref().is_none_or(|b| cell.better_than(b)) {
                            best = Some(cell);
                        }
                    }
                }
                best
            })
            .reduce_with(|a, b| if b.better_than(&a) { b } else { a })
    }
}

fn log_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 || hi <= lo {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

fn lin_space(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 || hi <= lo {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

fn integer_grid(lo: u64, hi: u64, points: usize) -> Vec<u64> {
    let mut ks: Vec<u64> = log_space(lo as f64, hi as f64, points)
        .into_iter()
        .map(|x| (x.round() as u64).clamp(lo, hi))
        .collect();
    ks.dedup();
    ks
}

const SPLIT_LO: f64 = 1e-4;
const SPLIT_HI: f64 = 0.5;
const Q_TOL_MAX: f64 = 0.499_999;

/// Searches the grid of `GridSpec` (plus one local refinement) and returns
/// the best record. A record with zero rate is returned when no parameters
/// yield a key.
pub fn optimize(prob: &OptimizationProblem) -> Result<OptimumRecord> {
    prob.validate()?;
    let eval = Evaluator { prob };
    let g = prob.grid;
    let size = prob.size;

    let (k_lo, k_hi) = match prob.mode {
        Objective::ExpectedRate => (((size as f64).sqrt().ceil() as u64).max(1), size),
        Objective::SiftedRatio => (((size as f64).sqrt().ceil() as u64).max(1), size / 2),
    };
    let ks = match prob.pins.k {
        Some(k) => vec![k],
        None => integer_grid(k_lo, k_hi, g.k_points),
    };
    let fracs = match prob.pins.cor_fraction {
        Some(t) => vec![t],
        None => log_space(SPLIT_LO, SPLIT_HI, g.split_points),
    };
    let q_window = |k: u64| {
        let sd = (prob.qber * (1.0 - prob.qber) / k as f64).sqrt();
        (prob.qber, (prob.qber + g.q_tol_span * sd).min(Q_TOL_MAX))
    };
    let q_tols = |k: u64| match prob.pins.q_tol {
        Some(qt) => vec![qt],
        None => {
            let (lo, hi) = q_window(k);
            lin_space(lo, hi, g.q_tol_points)
        }
    };

    let Some(mut best) = eval.search(&ks, &q_tols, &fracs) else {
        return Ok(zero_record(prob, ks[0]));
    };

    if g.refine && best.objective > 0.0 {
        let neighbours = |v: &[f64], i: usize| (v[i.saturating_sub(1)], v[(i + 1).min(v.len() - 1)]);
        let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
        let (ka, kb) = neighbours(&kf, best.k_idx);
        let fine_ks = if ks.len() > 1 { integer_grid(ka as u64, kb as u64, 21) } else { ks.clone() };
        let (ta, tb) = neighbours(&fracs, best.t_idx);
        let fine_fracs = if fracs.len() > 1 { log_space(ta, tb, 11) } else { fracs.clone() };
        let coarse_q = q_tols(best.k);
        let (qa, qb) = neighbours(&coarse_q, best.q_idx);
        let fine_q = |_k: u64| if coarse_q.len() > 1 { lin_space(qa, qb, 21) } else { coarse_q.clone() };
        if let Some(fine) = eval.search(&fine_ks, &fine_q, &fine_fracs) {
            if fine.objective > best.objective {
                best = fine;
            }
        }
    }

    if best.objective <= 0.0 {
        return Ok(zero_record(prob, best.k));
    }
    Ok(record(prob, &eval, &best))
}

fn record(prob: &OptimizationProblem, eval: &Evaluator<'_>, cell: &Cell) -> OptimumRecord {
    let n = eval.block(cell.k);
    let leak = leak_model(n, cell.q_tol, prob.xi).min(n as f64);
    let result = assemble(n, cell.k, cell.ell, cell.eps_rob, prob.detection_prob, leak);
    let asym = asymptotic_rate(prob.qber);
    let spent = cell.split.eps_cor + cell.split.eps_sec;
    OptimumRecord {
        n,
        k: cell.k,
        qber: prob.qber,
        q_tol: cell.q_tol,
        eps_cor: cell.split.eps_cor,
        eps_sec: cell.split.eps_sec,
        eps_total: cell.split.total,
        result,
        security_rate: spent / cell.ell as f64,
        rate_rel: if asym > 0.0 { result.rate / asym } else { 0.0 },
        ell_over_n: cell.ell as f64 / n as f64,
        ell_over_sifted: cell.ell as f64 / (n + cell.k) as f64,
    }
}

fn zero_record(prob: &OptimizationProblem, k: u64) -> OptimumRecord {
    let n = match prob.mode {
        Objective::ExpectedRate => prob.size,
        Objective::SiftedRatio => prob.size - k,
    };
    let eps_rob = binomial_tail_gt(k, prob.qber, prob.qber).unwrap_or(1.0);
    OptimumRecord {
        n,
        k,
        qber: prob.qber,
        q_tol: prob.qber,
        eps_cor: 0.0,
        eps_sec: 0.0,
        eps_total: 0.0,
        result: assemble(n, k, 0, eps_rob, prob.detection_prob, leak_model(n, prob.qber, prob.xi)),
        security_rate: 0.0,
        rate_rel: 0.0,
        ell_over_n: 0.0,
        ell_over_sifted: 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub size: u64,
    pub record: OptimumRecord,
    /// Objective at this point as optimized.
    pub raw: f64,
    /// Running maximum of `raw` along increasing size.
    pub monotone: f64,
}

/// Optimizes every size in `sizes` (sorted ascending) with the remaining
/// fields of `base`.
pub fn rate_curve(base: &OptimizationProblem, sizes: &[u64]) -> Result<Vec<CurvePoint>> {
    if sizes.is_empty() {
        return Err(Error::domain("empty size grid"));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let mut out = Vec::with_capacity(sorted.len());
    let mut envelope = 0.0_f64;
    for size in sorted {
        let record = optimize(&OptimizationProblem { size, ..*base })?;
        let raw = match base.mode {
            Objective::ExpectedRate => record.rate(),
            Objective::SiftedRatio => record.ell_over_sifted,
        };
        envelope = envelope.max(raw);
        out.push(CurvePoint { size, record, raw, monotone: envelope });
    }
    Ok(out)
}
