//! Dynamic time warping and event-centered morphology comparison.

use serde::{Deserialize, Serialize};

use crate::eval::{EvalError, Result};
use crate::objectives::pearson;
use crate::signal::EegSegment;

/// Classic unconstrained DTW with absolute-difference local cost,
/// normalized by the optimal path length (tie-breaks prefer the diagonal).
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Degenerate("dtw needs non-empty series".into()));
    }
    let (n, m) = (a.len(), b.len());
    let inf = f64::INFINITY;
    let mut cost = vec![inf; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    cost[idx(0, 0)] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let local = (a[i - 1] - b[j - 1]).abs();
            let best = cost[idx(i - 1, j - 1)]
                .min(cost[idx(i - 1, j)])
                .min(cost[idx(i, j - 1)]);
            cost[idx(i, j)] = local + best;
        }
    }
    // Backtrack for the path length; prefer diagonal, then i-1, then j-1.
    let mut steps = 1usize;
    let (mut i, mut j) = (n, m);
    while i > 1 || j > 1 {
        let diag = if i > 1 && j > 1 {
            cost[idx(i - 1, j - 1)]
        } else {
            inf
        };
        let up = if i > 1 { cost[idx(i - 1, j)] } else { inf };
        let left = if j > 1 { cost[idx(i, j - 1)] } else { inf };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        steps += 1;
    }
    Ok(cost[idx(n, m)] / steps as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventMorphology {
    pub mean_pearson: f64,
    pub mean_dtw: f64,
    pub matched: usize,
}

/// Channel-mean traces centered on event times (seconds). Events whose
/// window would cross a segment boundary are skipped. With no recorded
/// times, one window per segment is centered on the RMS-envelope peak.
pub fn extract_event_windows(
    segments: &[&EegSegment],
    events: Option<&[Vec<f64>]>,
    window_samples: usize,
) -> Vec<Vec<f64>> {
    let half = window_samples / 2;
    let mut windows = Vec::new();
    for (si, seg) in segments.iter().enumerate() {
        let t = seg.samples();
        if t < window_samples {
            continue;
        }
        let mean_trace: Vec<f64> = (0..t)
            .map(|i| {
                (0..seg.channels())
                    .map(|c| seg.data()[c * t + i])
                    .sum::<f64>()
                    / seg.channels() as f64
            })
            .collect();
        let centers: Vec<usize> = match events {
            Some(ev) => ev
                .get(si)
                .map(|times| {
                    times
                        .iter()
                        .map(|&sec| (sec * seg.sample_rate()).round() as i64)
                        .filter_map(|c| {
                            let c = usize::try_from(c).ok()?;
                            (c >= half && c - half + window_samples <= t).then_some(c)
                        })
                        .collect()
                })
                .unwrap_or_default(),
            None => {
                let env = crate::eval::stats::rms_envelope(seg);
                let lo = half;
                let hi = t - (window_samples - half);
                let peak = (lo..=hi)
                    .max_by(|&x, &y| env[x].partial_cmp(&env[y]).unwrap())
                    .unwrap_or(lo);
                vec![peak]
            }
        };
        for c in centers {
            windows.push(mean_trace[c - half..c - half + window_samples].to_vec());
        }
    }
    windows
}

/// Greedy nearest-real matching by DTW: every generated window pairs with
/// its lowest-DTW real window; reports the mean Pearson correlation and
/// mean DTW over matches. `None` when either side has no events.
pub fn event_morphology(
    real_windows: &[Vec<f64>],
    gen_windows: &[Vec<f64>],
) -> Result<Option<EventMorphology>> {
    if real_windows.is_empty() || gen_windows.is_empty() {
        return Ok(None);
    }
    let mut sum_pearson = 0.0;
    let mut sum_dtw = 0.0;
    let mut matched = 0usize;
    for g in gen_windows {
        let mut best: Option<(f64, usize)> = None;
        for (ri, r) in real_windows.iter().enumerate() {
            let d = dtw(g, r)?;
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, ri));
            }
        }
        let (d, ri) = best.unwrap();
        if let Some(rho) = pearson(g, &real_windows[ri]) {
            sum_pearson += rho;
            sum_dtw += d;
            matched += 1;
        }
    }
    if matched == 0 {
        return Ok(None);
    }
    Ok(Some(EventMorphology {
        mean_pearson: sum_pearson / matched as f64,
        mean_dtw: sum_dtw / matched as f64,
        matched,
    }))
}
