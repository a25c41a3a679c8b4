use crate::error::{Error, Result};

/// Rank-based (Mann-Whitney) area under the ROC curve; tied scores count half.
///
/// The statistic is accumulated as an integer count of half-wins, so the
/// result is exactly `half_wins / (2 * n_pos * n_neg)`.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::invalid(format!("score {s} is NaN")));
    }
    let n_pos = scores.iter().filter(|(_, l)| *l).count() as u64;
    let n_neg = scores.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both positive and negative examples"));
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut half_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            if sorted[j].1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        half_wins += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(half_wins as f64 / (2 * n_pos * n_neg) as f64)
}
