//! Activation sets and delay maps for simulated bounded asynchrony.
//!
//! A [`Schedule`] fixes, for every iteration `n`, which primal blocks `I_n`
//! and dual blocks `K_n` are processed and which (possibly stale) iterate each
//! block reads: `c_i(n)` for primal blocks, `d_k(n)` for dual blocks. Valid
//! schedules satisfy
//!
//! * `I_0 = I` and `K_0 = K`;
//! * every `T + 1` consecutive iterations cover all of `I` and all of `K`;
//! * `max(0, n − D) ≤ c_i(n), d_k(n) ≤ n`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleRecord {
    pub active_primal: Vec<usize>,
    pub active_dual: Vec<usize>,
    /// `c[i]` is the iterate index read by primal block `i`.
    pub c: Vec<usize>,
    /// `d[k]` is the iterate index read by dual block `k`.
    pub d: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(rename = "T")]
    pub coverage_window: usize,
    #[serde(rename = "D")]
    pub delay_bound: usize,
    pub records: Vec<ScheduleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Synchronous,
    RoundRobin,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Primal,
    Dual,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Primal => "primal",
            Side::Dual => "dual",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    /// Record shape disagrees with the block counts, or names an unknown block.
    Malformed { detail: String },
    EmptyActiveSet { side: Side },
    /// Iteration 0 must activate every block.
    InitialActivation { side: Side, block: usize },
    /// The window starting at the violation iteration misses this block.
    Coverage { side: Side, block: usize },
    /// The read index lies outside `[max(0, n − D), n]`.
    Delay { side: Side, block: usize, read: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub iteration: usize,
    #[serde(flatten)]
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.iteration;
        match &self.rule {
            Rule::Malformed { detail } => write!(f, "iteration {n}: malformed record: {detail}"),
            Rule::EmptyActiveSet { side } => write!(f, "iteration {n}: empty {side} activation set"),
            Rule::InitialActivation { side, block } => {
                write!(f, "iteration {n}: {side} block {block} not active at start")
            }
            Rule::Coverage { side, block } => write!(
                f,
                "iteration {n}: {side} block {block} not activated within the coverage window"
            ),
            Rule::Delay { side, block, read } => {
                write!(f, "iteration {n}: {side} block {block} reads iterate {read}, outside delay bound")
            }
        }
    }
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_primal(&self) -> usize {
        self.records.first().map_or(0, |r| r.c.len())
    }

    pub fn n_dual(&self) -> usize {
        self.records.first().map_or(0, |r| r.d.len())
    }

    pub fn record(&self, n: usize) -> &ScheduleRecord {
        &self.records[n]
    }

    pub fn generate(
        policy: Policy,
        seed: u64,
        coverage_window: usize,
        delay_bound: usize,
        n_primal: usize,
        n_dual: usize,
        length: usize,
    ) -> Result<Schedule> {
        if length == 0 {
            return Err(Error::Parameter("schedule length must be >= 1".into()));
        }
        if n_primal == 0 || n_dual == 0 {
            return Err(Error::Parameter("schedules need at least one primal and one dual block".into()));
        }
        let records = match policy {
            Policy::Synchronous => (0..length)
                .map(|n| ScheduleRecord {
                    active_primal: (0..n_primal).collect(),
                    active_dual: (0..n_dual).collect(),
                    c: vec![n; n_primal],
                    d: vec![n; n_dual],
                })
                .collect(),
            Policy::RoundRobin => round_robin(coverage_window, delay_bound, n_primal, n_dual, length),
            Policy::Random => random(seed, coverage_window, delay_bound, n_primal, n_dual, length),
        };
        Ok(Schedule {
            coverage_window,
            delay_bound,
            records,
        })
    }

    /// Checks every rule exhaustively and returns the first violation found,
    /// scanning iterations in increasing order.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let np = self.n_primal();
        let nd = self.n_dual();
        let t = self.coverage_window;
        let dmax = self.delay_bound;
        let mut last_p = vec![0usize; np];
        let mut last_d = vec![0usize; nd];
        let malformed = |n: usize, detail: String| Violation {
            iteration: n,
            rule: Rule::Malformed { detail },
        };
        if self.records.is_empty() {
            return Err(malformed(0, "schedule has no records".into()));
        }
        if np == 0 || nd == 0 {
            return Err(malformed(0, "schedule has no blocks".into()));
        }
        for (n, rec) in self.records.iter().enumerate() {
            if rec.c.len() != np || rec.d.len() != nd {
                return Err(malformed(n, "delay map length changes".into()));
            }
            for (side, active, count) in [
                (Side::Primal, &rec.active_primal, np),
                (Side::Dual, &rec.active_dual, nd),
            ] {
                if let Some(&b) = active.iter().find(|&&b| b >= count) {
                    return Err(malformed(n, format!("{side} block {b} does not exist")));
                }
                let mut seen = vec![false; count];
                for &b in active {
                    if std::mem::replace(&mut seen[b], true) {
                        return Err(malformed(n, format!("{side} block {b} listed twice")));
                    }
                }
                if active.is_empty() {
                    return Err(Violation {
                        iteration: n,
                        rule: Rule::EmptyActiveSet { side },
                    });
                }
                if n == 0 {
                    if let Some(block) = seen.iter().position(|s| !s) {
                        return Err(Violation {
                            iteration: 0,
                            rule: Rule::InitialActivation { side, block },
                        });
                    }
                }
            }
            let lo = n.saturating_sub(dmax);
            for (side, reads) in [(Side::Primal, &rec.c), (Side::Dual, &rec.d)] {
                if let Some((block, &read)) = reads.iter().enumerate().find(|(_, &r)| r < lo || r > n) {
                    return Err(Violation {
                        iteration: n,
                        rule: Rule::Delay { side, block, read },
                    });
                }
            }
            for &i in &rec.active_primal {
                last_p[i] = n;
            }
            for &k in &rec.active_dual {
                last_d[k] = n;
            }
            // window [n − T, n] must contain an activation of every block
            if n >= t {
                let start = n - t;
                for (side, last) in [(Side::Primal, &last_p), (Side::Dual, &last_d)] {
                    if let Some(block) = last.iter().position(|&l| l < start) {
                        return Err(Violation {
                            iteration: start,
                            rule: Rule::Coverage { side, block },
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// `(ℓ̄_i(n), ℓ_i(n))`: the last iteration `j ≤ n` activating primal block
    /// `i`, and the delayed index that activation read.
    pub fn most_recent_activation(&self, i: usize, n: usize) -> (usize, usize) {
        let j = (0..=n)
            .rev()
            .find(|&j| self.records[j].active_primal.contains(&i))
            .expect("iteration 0 activates every block");
        (j, self.records[j].c[i])
    }

    /// `(ϑ̄_k(n), ϑ_k(n))` for dual block `k`.
    pub fn most_recent_dual_activation(&self, k: usize, n: usize) -> (usize, usize) {
        let j = (0..=n)
            .rev()
            .find(|&j| self.records[j].active_dual.contains(&k))
            .expect("iteration 0 activates every block");
        (j, self.records[j].d[k])
    }
}

fn round_robin(t: usize, dmax: usize, np: usize, nd: usize, length: usize) -> Vec<ScheduleRecord> {
    // Enough consecutive cyclic slots per iteration that T + 1 iterations cover everything.
    let slots_p = np.div_ceil(t + 1);
    let slots_d = nd.div_ceil(t + 1);
    let (mut ptr_p, mut ptr_d) = (0usize, 0usize);
    (0..length)
        .map(|n| {
            let (active_primal, active_dual) = if n == 0 {
                ((0..np).collect(), (0..nd).collect())
            } else {
                let ap: Vec<usize> = (0..slots_p).map(|j| (ptr_p + j) % np).collect();
                let ad: Vec<usize> = (0..slots_d).map(|j| (ptr_d + j) % nd).collect();
                ptr_p = (ptr_p + slots_p) % np;
                ptr_d = (ptr_d + slots_d) % nd;
                (dedup_sorted(ap), dedup_sorted(ad))
            };
            let c = (0..np).map(|i| n.saturating_sub((n + i) % (dmax + 1))).collect();
            let d = (0..nd).map(|k| n.saturating_sub((n + k + 1) % (dmax + 1))).collect();
            ScheduleRecord {
                active_primal,
                active_dual,
                c,
                d,
            }
        })
        .collect()
}

fn dedup_sorted(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

fn random(seed: u64, t: usize, dmax: usize, np: usize, nd: usize, length: usize) -> Vec<ScheduleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_p = vec![0usize; np];
    let mut last_d = vec![0usize; nd];
    let draw_set = |rng: &mut ChaCha8Rng, n: usize, last: &mut [usize]| -> Vec<usize> {
        if n == 0 {
            return (0..last.len()).collect();
        }
        let mut set: Vec<usize> = (0..last.len()).filter(|_| rng.random_bool(0.5)).collect();
        if set.is_empty() {
            set.push(rng.random_range(0..last.len()));
        }
        // coverage repair: a block unseen for T iterations is forced on now
        for (b, &l) in last.iter().enumerate() {
            if n - l > t && !set.contains(&b) {
                set.push(b);
            }
        }
        set.sort_unstable();
        for &b in &set {
            last[b] = n;
        }
        set
    };
    (0..length)
        .map(|n| {
            let active_primal = draw_set(&mut rng, n, &mut last_p);
            let active_dual = draw_set(&mut rng, n, &mut last_d);
            let lo = n.saturating_sub(dmax);
            let c = (0..np).map(|_| rng.random_range(lo..=n)).collect();
            let d = (0..nd).map(|_| rng.random_range(lo..=n)).collect();
            ScheduleRecord {
                active_primal,
                active_dual,
                c,
                d,
            }
        })
        .collect()
}

/// Incremental `ℓ̄, ℓ, ϑ̄, ϑ` bookkeeping for a schedule consumed in order.
#[derive(Debug, Clone)]
pub struct ActivationTracker {
    last_primal: Vec<(usize, usize)>,
    last_dual: Vec<(usize, usize)>,
}

impl ActivationTracker {
    pub fn new(n_primal: usize, n_dual: usize) -> Self {
        ActivationTracker {
            last_primal: vec![(0, 0); n_primal],
            last_dual: vec![(0, 0); n_dual],
        }
    }

    /// Feeds the record of iteration `n`; must be called for `n = 0, 1, …`.
    pub fn observe(&mut self, n: usize, rec: &ScheduleRecord) {
        for &i in &rec.active_primal {
            self.last_primal[i] = (n, rec.c[i]);
        }
        for &k in &rec.active_dual {
            self.last_dual[k] = (n, rec.d[k]);
        }
    }

    pub fn primal(&self, i: usize) -> (usize, usize) {
        self.last_primal[i]
    }

    pub fn dual(&self, k: usize) -> (usize, usize) {
        self.last_dual[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synchronous_is_full_and_undelayed() {
        let s = Schedule::generate(Policy::Synchronous, 0, 5, 5, 3, 2, 50).unwrap();
        for (n, r) in s.records.iter().enumerate() {
            assert_eq!(r.active_primal, vec![0, 1, 2]);
            assert_eq!(r.active_dual, vec![0, 1]);
            assert!(r.c.iter().chain(&r.d).all(|&c| c == n));
        }
        assert_eq!(s.validate(), Ok(()));
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let a = Schedule::generate(Policy::Random, 42, 3, 3, 4, 3, 500).unwrap();
        let b = Schedule::generate(Policy::Random, 42, 3, 3, 4, 3, 500).unwrap();
        let c = Schedule::generate(Policy::Random, 43, 3, 3, 4, 3, 500).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn generated_schedules_validate() {
        for policy in [Policy::Synchronous, Policy::RoundRobin, Policy::Random] {
            for (t, d) in [(0, 0), (1, 2), (3, 3), (10, 5)] {
                for (np, nd) in [(1, 1), (3, 2), (7, 5)] {
                    let s = Schedule::generate(policy, 9, t, d, np, nd, 800).unwrap();
                    assert_eq!(s.validate(), Ok(()), "{policy:?} T={t} D={d} np={np} nd={nd}");
                }
            }
        }
    }

    #[test]
    fn initial_full_activation_enforced() {
        let mut s = Schedule::generate(Policy::Synchronous, 0, 0, 0, 2, 1, 5).unwrap();
        s.records[0].active_primal = vec![1];
        let v = s.validate().unwrap_err();
        assert_eq!(v.iteration, 0);
        assert_eq!(v.rule, Rule::InitialActivation { side: Side::Primal, block: 0 });
    }

    #[test]
    fn delay_breach_detected() {
        let mut s = Schedule::generate(Policy::Random, 1, 3, 2, 2, 2, 40).unwrap();
        s.records[20].c[1] = 20 - 2 - 1;
        let v = s.validate().unwrap_err();
        assert_eq!(v.iteration, 20);
        assert!(matches!(v.rule, Rule::Delay { side: Side::Primal, block: 1, read: 17 }));
        let mut s = Schedule::generate(Policy::Synchronous, 0, 0, 0, 1, 1, 3).unwrap();
        s.records[1].d[0] = 2;
        assert!(matches!(s.validate().unwrap_err().rule, Rule::Delay { side: Side::Dual, .. }));
    }

    #[test]
    fn coverage_and_emptiness_detected() {
        let mut s = Schedule::generate(Policy::Synchronous, 0, 0, 0, 2, 1, 10).unwrap();
        s.coverage_window = 2;
        for n in 1..=3 {
            s.records[n].active_primal = vec![0];
        }
        let v = s.validate().unwrap_err();
        assert_eq!(v.iteration, 1);
        assert_eq!(v.rule, Rule::Coverage { side: Side::Primal, block: 1 });
        s.records[2].active_dual.clear();
        assert_eq!(s.validate().unwrap_err().rule, Rule::EmptyActiveSet { side: Side::Dual });
    }

    #[test]
    fn round_robin_pads_to_cover() {
        let s = Schedule::generate(Policy::RoundRobin, 0, 0, 1, 3, 2, 10).unwrap();
        assert!(s.records[1..].iter().all(|r| r.active_primal.len() == 3));
        let s = Schedule::generate(Policy::RoundRobin, 0, 2, 1, 3, 2, 10).unwrap();
        assert!(s.records[1..].iter().all(|r| r.active_primal.len() == 1));
        assert!(Schedule::generate(Policy::RoundRobin, 0, 2, 1, 0, 2, 10).is_err());
        assert!(Schedule::generate(Policy::Random, 0, 2, 1, 1, 1, 0).is_err());
    }

    #[test]
    fn most_recent_activation_matches_brute_force() {
        let s = Schedule::generate(Policy::Random, 5, 4, 2, 3, 2, 300).unwrap();
        let mut tracker = ActivationTracker::new(3, 2);
        for n in 0..s.len() {
            tracker.observe(n, s.record(n));
            for i in 0..3 {
                let brute = (0..=n).filter(|&j| s.records[j].active_primal.contains(&i)).max().unwrap();
                let (lb, l) = s.most_recent_activation(i, n);
                assert_eq!(lb, brute);
                assert_eq!(l, s.records[brute].c[i]);
                assert_eq!(tracker.primal(i), (lb, l));
                if s.records[n].active_primal.contains(&i) {
                    assert_eq!(lb, n);
                }
            }
            for k in 0..2 {
                assert_eq!(tracker.dual(k), s.most_recent_dual_activation(k, n));
            }
        }
    }

    #[test]
    fn untouched_block_defaults_to_zero() {
        let mut s = Schedule::generate(Policy::Synchronous, 0, 0, 0, 2, 1, 6).unwrap();
        s.coverage_window = 5;
        for n in 1..6 {
            s.records[n].active_primal = vec![0];
        }
        assert_eq!(s.validate(), Ok(()));
        assert_eq!(s.most_recent_activation(1, 5), (0, 0));
    }

    #[test]
    fn json_field_names() {
        let s = Schedule::generate(Policy::Synchronous, 0, 0, 0, 1, 1, 1).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"T":0,"D":0,"records":[{"active_primal":[0],"active_dual":[0],"c":[0],"d":[0]}]}"#);
        let back: Schedule = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
