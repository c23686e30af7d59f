//! Expected gain and speedup of speculating over N consecutive uncertain
//! tasks followed by one normal task, all of cost `t`.
//!
//! `probs[i]` is the probability that uncertain task `i + 1` writes its
//! data. The normal task at the end always counts as a write.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticScenario {
    pub probs: Vec<f64>,
    pub task_cost: f64,
}

impl AnalyticScenario {
    pub fn new(probs: Vec<f64>, task_cost: f64) -> Self {
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)), "probabilities must lie in [0, 1]");
        assert!(task_cost > 0.0, "task cost must be positive");
        AnalyticScenario { probs, task_cost }
    }

    pub fn uniform(n: usize, p: f64, task_cost: f64) -> Self {
        Self::new(vec![p; n], task_cost)
    }

    pub fn n(&self) -> usize {
        self.probs.len()
    }

    /// P_i for i in 1..=N+1.
    fn p(&self, i: usize) -> f64 {
        if i == self.probs.len() + 1 {
            1.0
        } else {
            self.probs[i - 1]
        }
    }
}

/// Compensated sum.
#[derive(Copy, Clone, Debug, Default)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.c
    }
}

/// Average duration gain of predictive speculation:
/// sum over i of t * i * P_{i+1} * prod_{j<=i} (1 - P_j).
pub fn predictive_gain(s: &AnalyticScenario) -> f64 {
    let mut acc = Neumaier::default();
    let mut survive = 1.0;
    for i in 1..=s.n() {
        survive *= 1.0 - s.p(i);
        acc.add(i as f64 * s.p(i + 1) * survive);
    }
    s.task_cost * acc.total()
}

pub fn predictive_speedup(s: &AnalyticScenario) -> f64 {
    speedup(s, predictive_gain(s))
}

/// Closed form of [`predictive_gain`] when every probability is 1/2.
pub fn predictive_gain_half(n: usize, task_cost: f64) -> f64 {
    assert!(n >= 1);
    let mut acc = Neumaier::default();
    for i in 1..n {
        acc.add(i as f64 / 2f64.powi(i as i32 + 1));
    }
    acc.add(n as f64 / 2f64.powi(n as i32));
    task_cost * acc.total()
}

/// Average gain when speculation restarts after every failure:
/// t * sum (1 - P_i).
pub fn eager_gain(s: &AnalyticScenario) -> f64 {
    let mut acc = Neumaier::default();
    for &p in &s.probs {
        acc.add(1.0 - p);
    }
    s.task_cost * acc.total()
}

/// F(N) = F(N-1) * P_N + (F(N-1) + t) * (1 - P_N), F(0) = 0.
pub fn eager_gain_recursive(probs: &[f64], task_cost: f64) -> f64 {
    match probs.split_last() {
        None => 0.0,
        Some((&p, rest)) => {
            let prev = eager_gain_recursive(rest, task_cost);
            prev * p + (prev + task_cost) * (1.0 - p)
        }
    }
}

pub fn eager_speedup(s: &AnalyticScenario) -> f64 {
    speedup(s, eager_gain(s))
}

fn speedup(s: &AnalyticScenario, gain: f64) -> f64 {
    let total = (s.n() + 1) as f64 * s.task_cost;
    total / (total - gain)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    Predictive,
    Eager,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Predictive => "predictive",
            Variant::Eager => "eager",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Monte Carlo estimate of the gain by sampling write outcomes.
///
/// Predictive: the first writer among tasks 1..=N+1 at index k saves
/// (k - 1) tasks. Eager: every non-writer saves one task.
pub fn simulate_expected_gain(s: &AnalyticScenario, variant: Variant, trials: u64, seed: u64) -> Estimate {
    assert!(trials >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = Neumaier::default();
    let mut sum_sq = Neumaier::default();
    for _ in 0..trials {
        let gain = match variant {
            Variant::Predictive => {
                let mut k = s.n() + 1;
                for i in 1..=s.n() {
                    if rng.random::<f64>() < s.p(i) {
                        k = i;
                        break;
                    }
                }
                (k - 1) as f64
            }
            Variant::Eager => s.probs.iter().filter(|&&p| rng.random::<f64>() >= p).count() as f64,
        } * s.task_cost;
        sum.add(gain);
        sum_sq.add(gain * gain);
    }
    let n = trials as f64;
    let mean = sum.total() / n;
    let var = if trials > 1 {
        ((sum_sq.total() - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Estimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub n: usize,
    pub p: f64,
    pub gain: f64,
    pub speedup: f64,
    pub variant: Variant,
}

/// Gain and speedup for P in {1/4, 1/2, 3/4} and N in 1..=7, both variants.
pub fn table1() -> Vec<TableRow> {
    let mut rows = Vec::new();
    for variant in [Variant::Predictive, Variant::Eager] {
        for p in [0.25, 0.5, 0.75] {
            for n in 1..=7 {
                let s = AnalyticScenario::uniform(n, p, 1.0);
                let (gain, speedup) = match variant {
                    Variant::Predictive => (predictive_gain(&s), predictive_speedup(&s)),
                    Variant::Eager => (eager_gain(&s), eager_speedup(&s)),
                };
                rows.push(TableRow {
                    n,
                    p,
                    gain,
                    speedup,
                    variant,
                });
            }
        }
    }
    rows
}

pub const TABLE_HEADER: &str = "N,P,D,S,variant";

pub fn table1_csv() -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in table1() {
        out.push_str(&format!("{},{},{:.6},{:.6},{}\n", r.n, r.p, r.gain, r.speedup, r.variant.as_str()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_task_quarter() {
        assert_abs_diff_eq!(predictive_gain(&AnalyticScenario::uniform(1, 0.25, 1.0)), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn two_tasks_half() {
        assert_abs_diff_eq!(predictive_gain(&AnalyticScenario::uniform(2, 0.5, 1.0)), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn certain_write_gains_nothing() {
        let s = AnalyticScenario::uniform(1, 1.0, 1.0);
        assert_eq!(predictive_gain(&s), 0.0);
        assert_eq!(predictive_speedup(&s), 1.0);
        assert_eq!(eager_gain(&s), 0.0);
        assert_eq!(eager_speedup(&s), 1.0);
    }

    #[test]
    fn speedups_from_table() {
        assert_abs_diff_eq!(predictive_speedup(&AnalyticScenario::uniform(2, 0.25, 1.0)), 1.78, epsilon = 0.005);
        assert_abs_diff_eq!(predictive_speedup(&AnalyticScenario::uniform(3, 0.5, 1.0)), 1.28, epsilon = 0.005);
    }

    #[test]
    fn half_closed_form() {
        assert_abs_diff_eq!(predictive_gain_half(3, 1.0), 0.875, epsilon = 1e-12);
        assert_abs_diff_eq!(predictive_gain_half(7, 1.0), 0.992, epsilon = 0.0005);
        assert_abs_diff_eq!(predictive_gain_half(1, 2.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eager_forms_agree() {
        assert_eq!(eager_gain_recursive(&[], 1.0), 0.0);
        let s = AnalyticScenario::uniform(4, 0.5, 1.0);
        assert_abs_diff_eq!(eager_gain(&s), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eager_gain_recursive(&s.probs, 1.0), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eager_speedup(&AnalyticScenario::uniform(2, 0.5, 1.0)), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn eager_half_tends_to_two() {
        // 2(N+1)/(N+2)
        for n in [1usize, 10, 1000] {
            let s = eager_speedup(&AnalyticScenario::uniform(n, 0.5, 1.0));
            assert_abs_diff_eq!(s, 2.0 * (n as f64 + 1.0) / (n as f64 + 2.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let s = AnalyticScenario::uniform(3, 0.5, 1.0);
        let a = simulate_expected_gain(&s, Variant::Predictive, 1, 9);
        let b = simulate_expected_gain(&s, Variant::Predictive, 1, 9);
        assert_eq!(a, b);
        assert_eq!(a.std_error, 0.0);
    }

    #[test]
    fn eager_simulation_single_task() {
        let s = AnalyticScenario::uniform(1, 0.75, 1.0);
        let est = simulate_expected_gain(&s, Variant::Eager, 200_000, 1);
        assert!((est.mean - 0.25).abs() <= 3.0 * est.std_error + 1e-12);
    }

    #[test]
    fn table_has_42_rows() {
        assert_eq!(table1().len(), 42);
        assert!(table1_csv().starts_with("N,P,D,S,variant\n"));
    }
}
