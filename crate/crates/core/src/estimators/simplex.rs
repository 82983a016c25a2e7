/// Euclidean projection onto the probability simplex
/// `{w : w_i >= 0, sum w_i = 1}` by sorting and thresholding.
///
/// Finds the largest `k` with `s_k - (sum_{i<=k} s_i - 1)/k > 0` over the
/// values sorted in decreasing order, then shifts every entry by that
/// threshold and clips at zero.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    project_simplex_in_place(&mut out);
    out
}

pub fn project_simplex_in_place(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - 1.0) / (k + 1) as f64;
        if s - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
