/// 1-based nearest rank for percentile `pct` (in percent) of `m` sorted
/// values: `ceil(pct/100 * m)`, with a tolerance so that exact products such
/// as `5/100 * 100` are not pushed up by rounding. Rank 0 means "below the
/// smallest value".
pub fn nearest_rank(pct: f64, m: usize) -> usize {
    let x = pct / 100.0 * m as f64;
    let r = (x - 1e-9 * x.max(1.0)).ceil();
    (r.max(0.0) as usize).min(m)
}

/// Nearest-rank (inclusive) empirical percentile. `None` on empty input.
pub fn percentile_nearest_rank(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let r = nearest_rank(pct, v.len()).max(1);
    Some(v[r - 1])
}
