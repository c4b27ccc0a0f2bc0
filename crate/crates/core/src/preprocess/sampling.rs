use crate::types::{secs_between, GpsFix, Timestamp};

/// A shift of the median inter-fix period.
#[derive(Debug, Clone, PartialEq)]
pub struct RateChange {
    pub at: Timestamp,
    /// seconds
    pub old_period: f64,
    pub new_period: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Reports boundaries where the rolling median period over `window`
/// intervals before and after differs by more than `tolerance` (relative).
/// Adjacent flagged boundaries collapse into one change at the middle of the
/// strongest stretch.
pub fn detect_sampling_rate_change(trace: &[GpsFix], tolerance: f64, window: usize) -> Vec<RateChange> {
    let window = window.max(1);
    let periods: Vec<f64> = trace
        .windows(2)
        .map(|w| secs_between(w[0].timestamp, w[1].timestamp))
        .collect();
    if periods.len() < 2 * window {
        return Vec::new();
    }
    // (boundary, before, after, relative change)
    let flagged: Vec<(usize, f64, f64, f64)> = (window..=periods.len() - window)
        .filter_map(|b| {
            let before = median(&periods[b - window..b]);
            let after = median(&periods[b..b + window]);
            let rel = (after - before).abs() / before.max(f64::MIN_POSITIVE);
            (rel > tolerance).then_some((b, before, after, rel))
        })
        .collect();

    let mut out = Vec::new();
    let mut i = 0;
    while i < flagged.len() {
        let mut j = i;
        while j + 1 < flagged.len() && flagged[j + 1].0 == flagged[j].0 + 1 {
            j += 1;
        }
        let group = &flagged[i..=j];
        let best = group.iter().map(|g| g.3).fold(f64::MIN, f64::max);
        let at_best: Vec<&(usize, f64, f64, f64)> = group.iter().filter(|g| g.3 == best).collect();
        let pick = at_best[at_best.len() / 2];
        out.push(RateChange {
            at: trace[pick.0].timestamp,
            old_period: pick.1,
            new_period: pick.2,
        });
        i = j + 1;
    }
    out
}

/// Splits the trace at each change and keeps only the pieces sampled at
/// (within `tolerance` of) the highest rate.
pub fn discard_low_rate(trace: &[GpsFix], changes: &[RateChange], tolerance: f64) -> Vec<GpsFix> {
    if changes.is_empty() || trace.len() < 2 {
        return trace.to_vec();
    }
    let mut pieces: Vec<&[GpsFix]> = Vec::new();
    let mut begin = 0;
    for c in changes {
        let cut = trace.partition_point(|f| f.timestamp < c.at);
        if cut > begin {
            pieces.push(&trace[begin..cut]);
            begin = cut;
        }
    }
    pieces.push(&trace[begin..]);
    let medians: Vec<f64> = pieces
        .iter()
        .map(|p| {
            let periods: Vec<f64> = p
                .windows(2)
                .map(|w| secs_between(w[0].timestamp, w[1].timestamp))
                .collect();
            if periods.is_empty() {
                f64::INFINITY
            } else {
                median(&periods)
            }
        })
        .collect();
    let best = medians.iter().copied().fold(f64::INFINITY, f64::min);
    pieces
        .iter()
        .zip(&medians)
        .filter(|(_, &m)| m <= best * (1.0 + tolerance))
        .flat_map(|(p, _)| p.iter().cloned())
        .collect()
}
