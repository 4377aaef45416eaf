//! KL-LUCB best-arm identification over Bernoulli arms.
//!
//! Arms are anchor candidates and a pull draws conditional samples and counts
//! how many keep the original label. Confidence bounds come from inverting the
//! Bernoulli KL divergence by bisection.

use crate::error::Result;

const BISECTION_TOL: f64 = 1e-6;

/// KL divergence between Bernoulli(p) and Bernoulli(q).
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    let q = q.clamp(1e-12, 1.0 - 1e-12);
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Largest `q >= mean` with `KL(mean, q) <= level`.
pub fn kl_upper_bound(mean: f64, level: f64) -> f64 {
    let (mut lo, mut hi) = (mean, 1.0);
    if kl_bernoulli(mean, hi) <= level {
        return 1.0;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if kl_bernoulli(mean, mid) > level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `q <= mean` with `KL(mean, q) <= level`.
pub fn kl_lower_bound(mean: f64, level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, mean);
    if kl_bernoulli(mean, lo) <= level {
        return 0.0;
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if kl_bernoulli(mean, mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exploration rate of KL-LUCB after `t` rounds over `n_arms` arms.
pub fn exploration_rate(n_arms: usize, t: usize, delta: f64) -> f64 {
    let alpha = 1.1;
    let k = 405.5;
    let temp = (k * n_arms as f64 * (t as f64).powf(alpha) / delta).ln();
    temp + temp.ln()
}

/// Confidence level used when reporting bounds for the `top_n` kept arms.
pub fn report_rate(n_arms: usize, top_n: usize, delta: f64) -> f64 {
    ((1.0 + (top_n.max(1) - 1) as f64 * n_arms as f64) / delta).ln()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArmStats {
    pub pulls: usize,
    pub positives: usize,
    /// Secondary ranking key among arms with equal means (higher first).
    pub priority: f64,
}

impl ArmStats {
    pub fn mean(&self) -> f64 {
        if self.pulls == 0 {
            0.0
        } else {
            self.positives as f64 / self.pulls as f64
        }
    }

    pub fn lcb(&self, rate: f64) -> f64 {
        if self.pulls == 0 {
            return 0.0;
        }
        kl_lower_bound(self.mean(), rate / self.pulls as f64)
    }

    pub fn ucb(&self, rate: f64) -> f64 {
        if self.pulls == 0 {
            return 1.0;
        }
        kl_upper_bound(self.mean(), rate / self.pulls as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LucbConfig {
    /// Stop once the best excluded arm's UCB is within `epsilon` of the
    /// worst kept arm's LCB.
    pub epsilon: f64,
    pub delta: f64,
    pub batch: usize,
    pub top_n: usize,
    /// Precision target; kept arms are sampled until their interval clears it.
    pub target: Option<f64>,
    /// Per-arm pull cap during target refinement.
    pub max_pulls: usize,
    /// Cap on LUCB rounds.
    pub max_rounds: usize,
}

impl Default for LucbConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            delta: 0.1,
            batch: 100,
            top_n: 1,
            target: None,
            max_pulls: 2000,
            max_rounds: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub mean: f64,
    pub lcb: f64,
    pub ucb: f64,
    pub pulls: usize,
}

fn ranking(arms: &[ArmStats]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..arms.len()).collect();
    order.sort_by(|&a, &b| {
        arms[b]
            .mean()
            .total_cmp(&arms[a].mean())
            .then(arms[b].priority.total_cmp(&arms[a].priority))
            .then(a.cmp(&b))
    });
    order
}

/// Identifies the `top_n` arms with the highest means.
///
/// `pull(i, n)` draws `n` Bernoulli outcomes from arm `i` and returns the
/// number of successes. Returned selections are ordered best first.
pub fn kl_lucb_select<F>(arms: &mut [ArmStats], mut pull: F, cfg: &LucbConfig) -> Result<Vec<Selection>>
where
    F: FnMut(usize, usize) -> Result<usize>,
{
    let k = arms.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let top_n = cfg.top_n.clamp(1, k);
    let batch = cfg.batch.max(1);
    let mut draw = |arms: &mut [ArmStats], i: usize, n: usize| -> Result<()> {
        let hits = pull(i, n)?;
        arms[i].pulls += n;
        arms[i].positives += hits;
        Ok(())
    };
    for i in 0..k {
        if arms[i].pulls == 0 {
            draw(arms, i, 1)?;
        }
    }

    if top_n < k {
        let mut t = 1;
        loop {
            let order = ranking(arms);
            let rate = exploration_rate(k, t, cfg.delta);
            let (kept, rest) = order.split_at(top_n);
            let lt = *kept
                .iter()
                .min_by(|&&a, &&b| arms[a].lcb(rate).total_cmp(&arms[b].lcb(rate)))
                .expect("non-empty");
            let ut = *rest
                .iter()
                .max_by(|&&a, &&b| arms[a].ucb(rate).total_cmp(&arms[b].ucb(rate)).then(b.cmp(&a)))
                .expect("non-empty");
            if arms[ut].ucb(rate) - arms[lt].lcb(rate) <= cfg.epsilon {
                break;
            }
            if t >= cfg.max_rounds {
                log::debug!("kl-lucb stopped after {t} rounds without separating arms");
                break;
            }
            draw(arms, ut, batch)?;
            draw(arms, lt, batch)?;
            t += 1;
        }
    }

    let rate = report_rate(k, top_n, cfg.delta);
    let kept: Vec<usize> = ranking(arms).into_iter().take(top_n).collect();
    if let Some(target) = cfg.target {
        for &i in &kept {
            loop {
                let (m, lcb, ucb) = (arms[i].mean(), arms[i].lcb(rate), arms[i].ucb(rate));
                let undecided = (m >= target && lcb < target) || (m < target && ucb >= target);
                if !undecided || arms[i].pulls >= cfg.max_pulls {
                    break;
                }
                draw(arms, i, batch)?;
            }
        }
    }
    let mut out: Vec<Selection> = kept
        .into_iter()
        .map(|i| Selection {
            index: i,
            mean: arms[i].mean(),
            lcb: arms[i].lcb(rate),
            ucb: arms[i].ucb(rate),
            pulls: arms[i].pulls,
        })
        .collect();
    out.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then(arms[b.index].priority.total_cmp(&arms[a.index].priority))
            .then(a.index.cmp(&b.index))
    });
    Ok(out)
}
