//! Generalized integers of a discrete prime system by heap enumeration, and
//! the discrete counting functions N, ψ, Π.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::discretize::DiscreteSystem;
use crate::error::{Error, Result};

/// Two products whose logs differ by at most this are the same integer.
pub const LOG_EQ_TOL: f64 = 1e-12;

/// Default cap on the number of multisets popped from the heap.
pub const DEFAULT_BUDGET: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerEntry {
    pub log_value: f64,
    /// Number of generator multisets with this product.
    pub multiplicity: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerStream {
    pub entries: Vec<IntegerEntry>,
    pub log_x_max: f64,
    /// Set when the budget ran out; the stream is exact only up to the last entry.
    pub truncated: bool,
    /// Merges of products that came from different multisets.
    pub collisions: u64,
    /// Largest log gap inside a merged group (audit of the tolerance).
    pub max_collision_spread: f64,
}

#[derive(PartialEq)]
struct Frontier {
    log_value: f64,
    /// Smallest generator index that may still be appended.
    next: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on log_value, ties by index for determinism
        other.log_value.total_cmp(&self.log_value).then_with(|| other.next.cmp(&self.next))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Every multiset of generators with product ≤ e^{log_x_max}, in increasing
/// order. Each multiset is reached once, as a non-decreasing index sequence.
pub fn enumerate_integers(ds: &DiscreteSystem, log_x_max: f64, budget: usize) -> Result<IntegerStream> {
    if !(log_x_max >= 0.0) {
        return Err(Error::InvalidParams("x_max must be at least 1".into()));
    }
    let gens = ds.generator_logs();
    if let Some(&g) = gens.first() {
        if !(g > 0.0) {
            return Err(Error::Domain("generators must exceed 1".into()));
        }
    }
    let mut heap = BinaryHeap::new();
    heap.push(Frontier { log_value: 0.0, next: 0 });
    let mut entries: Vec<IntegerEntry> = Vec::new();
    let mut group_start = f64::NAN;
    let mut collisions = 0u64;
    let mut spread = 0.0f64;
    let mut popped = 0usize;
    let mut truncated = false;
    while let Some(Frontier { log_value, next }) = heap.pop() {
        if popped == budget {
            truncated = true;
            break;
        }
        popped += 1;
        match entries.last_mut() {
            Some(last) if log_value - group_start <= LOG_EQ_TOL => {
                last.multiplicity += 1;
                collisions += 1;
                spread = spread.max(log_value - group_start);
            }
            _ => {
                group_start = log_value;
                entries.push(IntegerEntry { log_value, multiplicity: 1 });
            }
        }
        for (j, &g) in gens.iter().enumerate().skip(next) {
            let v = log_value + g;
            if v > log_x_max + LOG_EQ_TOL {
                break;
            }
            heap.push(Frontier { log_value: v, next: j });
        }
    }
    if truncated {
        // the group at the cut may be incomplete
        let cut = entries.last().map(|e| e.log_value);
        if let Some(c) = cut {
            while entries.last().is_some_and(|e| e.log_value >= c) {
                entries.pop();
            }
        }
    }
    Ok(IntegerStream { entries, log_x_max, truncated, collisions, max_collision_spread: spread })
}

impl IntegerStream {
    /// Upper end of the exact range.
    pub fn exact_to(&self) -> f64 {
        if self.truncated {
            self.entries.last().map_or(0.0, |e| e.log_value)
        } else {
            self.log_x_max
        }
    }

    /// N(e^v), right-continuous.
    pub fn count(&self, log_x: f64) -> Result<u64> {
        if log_x > self.exact_to() + LOG_EQ_TOL {
            return Err(Error::OutOfRange(format!("log x = {log_x} beyond enumerated range {}", self.exact_to())));
        }
        let idx = self.entries.partition_point(|e| e.log_value <= log_x + LOG_EQ_TOL);
        Ok(self.entries[..idx].iter().map(|e| e.multiplicity).sum())
    }

    /// Running totals, for repeated queries.
    pub fn cumulative(&self) -> Vec<(f64, u64)> {
        let mut acc = 0u64;
        self.entries
            .iter()
            .map(|e| {
                acc += e.multiplicity;
                (e.log_value, acc)
            })
            .collect()
    }

    /// CSV with columns logvalue, N.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "logvalue,N")?;
        for (v, n) in self.cumulative() {
            writeln!(w, "{v},{n}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountingValues {
    pub log_x: f64,
    pub n: u64,
    pub psi: f64,
    pub riemann: f64,
}

/// ψ(x) = Σ_{p^ν ≤ x} log p and Π(x) = Σ_{p^ν ≤ x} 1/ν, with multiplicity.
pub fn prime_power_sums(ds: &DiscreteSystem, log_x: f64) -> Result<(f64, f64)> {
    if log_x > ds.log_x_max + LOG_EQ_TOL {
        return Err(Error::OutOfRange(format!("log x = {log_x} beyond the sampled range {}", ds.log_x_max)));
    }
    let mut psi = 0.0;
    let mut pi = 0.0;
    for (p, m) in ds.all_primes() {
        let lp = p.ln();
        if lp > log_x + LOG_EQ_TOL {
            break;
        }
        let nu_max = ((log_x + LOG_EQ_TOL) / lp).floor() as u32;
        psi += m as f64 * lp * nu_max as f64;
        pi += m as f64 * (1..=nu_max).map(|nu| 1.0 / nu as f64).sum::<f64>();
    }
    Ok((psi, pi))
}

pub fn counting_functions(ds: &DiscreteSystem, stream: &IntegerStream, log_x: f64) -> Result<CountingValues> {
    let n = stream.count(log_x)?;
    let (psi, riemann) = prime_power_sums(ds, log_x)?;
    Ok(CountingValues { log_x, n, psi, riemann })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(primes: &[(f64, u32)], x_max: f64) -> DiscreteSystem {
        DiscreteSystem::from_primes(primes.to_vec(), x_max.ln())
    }

    /// Products of multisets drawn from gens[i..], each ≤ limit.
    fn brute(gens: &[f64], i: usize, prod: f64, limit: f64, out: &mut Vec<f64>) {
        out.push(prod);
        for j in i..gens.len() {
            let q = prod * gens[j];
            if q <= limit * (1.0 + 1e-12) {
                brute(gens, j, q, limit, out);
            }
        }
    }

    #[test]
    fn powers_of_two() {
        let ds = system(&[(2.0, 1)], 10.0);
        let s = enumerate_integers(&ds, 10f64.ln(), DEFAULT_BUDGET).unwrap();
        let vals: Vec<f64> = s.entries.iter().map(|e| e.log_value.exp().round()).collect();
        assert_eq!(vals, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(s.count(10f64.ln()).unwrap(), 4);
    }

    #[test]
    fn two_and_three_match_brute_force() {
        let ds = system(&[(2.0, 1), (3.0, 1)], 10.0);
        let s = enumerate_integers(&ds, 10f64.ln(), DEFAULT_BUDGET).unwrap();
        let mut b = Vec::new();
        brute(&[2.0, 3.0], 0, 1.0, 10.0, &mut b);
        assert_eq!(s.count(10f64.ln()).unwrap(), b.len() as u64);
        assert_eq!(b.len(), 7);
    }

    #[test]
    fn duplicate_generator_multiplicities() {
        let ds = system(&[(2.0, 2)], 5.0);
        let s = enumerate_integers(&ds, 5f64.ln(), DEFAULT_BUDGET).unwrap();
        let m: Vec<(i64, u64)> = s.entries.iter().map(|e| (e.log_value.exp().round() as i64, e.multiplicity)).collect();
        assert_eq!(m, vec![(1, 1), (2, 2), (4, 3)]);
        assert_eq!(s.collisions, 3);
    }

    #[test]
    fn classical_riemann_count_at_30() {
        let primes: Vec<(f64, u32)> = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29].iter().map(|&p| (p as f64, 1)).collect();
        let ds = system(&primes, 30.0);
        let s = enumerate_integers(&ds, 30f64.ln(), DEFAULT_BUDGET).unwrap();
        let v = counting_functions(&ds, &s, 30f64.ln()).unwrap();
        assert_eq!(v.n, 30);
        let expect = 10.0 + 3.0 / 2.0 + 2.0 / 3.0 + 1.0 / 4.0;
        assert!((v.riemann - expect).abs() < 1e-14);
        // ψ(30) = log(2^4·3^3·5^2·7·11·13·17·19·23·29)
        let psi: f64 = [16.0f64, 27.0, 25.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0].iter().map(|x| x.ln()).sum();
        assert!((v.psi - psi).abs() < 1e-12);
    }

    #[test]
    fn truncation_is_marked_and_exact_below_cut() {
        let ds = system(&[(2.0, 1), (3.0, 1), (5.0, 1)], 1000.0);
        let full = enumerate_integers(&ds, 1000f64.ln(), DEFAULT_BUDGET).unwrap();
        let cut = enumerate_integers(&ds, 1000f64.ln(), 20).unwrap();
        assert!(cut.truncated && !full.truncated);
        let top = cut.exact_to();
        assert_eq!(cut.count(top).unwrap(), full.count(top).unwrap());
        assert!(cut.count(1000f64.ln()).is_err());
    }

    #[test]
    fn csv_export() {
        let ds = system(&[(2.0, 1)], 4.0);
        let s = enumerate_integers(&ds, 4f64.ln(), DEFAULT_BUDGET).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().ends_with(",3"));
    }
}
