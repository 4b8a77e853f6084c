//! Brute-force threshold sweep used as an independent reference for the
//! metric implementations. Every candidate threshold is scored by direct
//! counting; nothing is shared with the sorted single-pass sweep.

#![allow(dead_code)]

use spoofbench_core::corpus::Label;
use spoofbench_core::eval::TrialScore;

fn distinct_sorted(trials: &[TrialScore]) -> Vec<f64> {
    let mut v: Vec<f64> = trials.iter().map(|t| t.score).collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

fn ends(u: &[f64]) -> (f64, f64) {
    let m = u.len();
    if m >= 2 {
        (u[0] - (u[1] - u[0]) / 2.0, u[m - 1] + (u[m - 1] - u[m - 2]) / 2.0)
    } else {
        (u[0] - 0.5, u[0] + 0.5)
    }
}

/// (far, mdr) at threshold `theta` by counting.
pub fn rates(trials: &[TrialScore], theta: f64) -> (f64, f64) {
    let (mut nb, mut ns, mut fa, mut miss) = (0usize, 0usize, 0usize, 0usize);
    for t in trials {
        match t.label {
            Label::Bonafide => {
                nb += 1;
                if t.score >= theta {
                    fa += 1;
                }
            }
            Label::Spoof => {
                ns += 1;
                if t.score < theta {
                    miss += 1;
                }
            }
        }
    }
    (fa as f64 / nb as f64, miss as f64 / ns as f64)
}

/// One threshold per operating point: below everything, every midpoint, above everything.
fn sweep_thresholds(trials: &[TrialScore]) -> Vec<f64> {
    let u = distinct_sorted(trials);
    let (lo, hi) = ends(&u);
    let mut c = vec![lo];
    c.extend(u.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    c.push(hi);
    c
}

pub fn eer(trials: &[TrialScore]) -> f64 {
    let pts: Vec<(f64, f64)> = sweep_thresholds(trials)
        .into_iter()
        .map(|t| rates(trials, t))
        .collect();
    for w in pts.windows(2) {
        let d0 = w[0].0 - w[0].1;
        let d1 = w[1].0 - w[1].1;
        if d0 > 0.0 && d1 <= 0.0 {
            let t = d0 / (d0 - d1);
            return w[0].0 + t * (w[1].0 - w[0].0);
        }
    }
    panic!("no crossing found");
}

/// Minimal candidate threshold (scores, midpoints, ends) with far <= target.
pub fn mdr_at_far(trials: &[TrialScore], far_target: f64) -> (f64, f64) {
    let u = distinct_sorted(trials);
    let mut cands = sweep_thresholds(trials);
    cands.extend(u.iter().copied());
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for theta in cands {
        let (far, mdr) = rates(trials, theta);
        if far <= far_target {
            return (mdr, theta);
        }
    }
    panic!("no achievable threshold");
}
