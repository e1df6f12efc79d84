//! K-nearest-neighbour selection restricted to a ball.

use crate::math::Point3;
use crate::scalar::Real;

/// Indices of the K nearest `candidates` to `query` with distance <= r,
/// returned in ascending index order. Fewer than K may qualify; ties at
/// equal distance are broken by smaller index. An empty candidate list
/// yields an empty selection.
pub fn knn_ball_select<S: Real>(
    query: Point3<S>,
    candidates: &[Point3<S>],
    k: usize,
    r: S,
) -> Vec<u32> {
    debug_assert!(k >= 1 && r > S::zero());
    let r_sq = r * r;
    let mut qualifying: Vec<(S, u32)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| {
            let d = query.dist_sq(c);
            (d <= r_sq).then_some((d, i as u32))
        })
        .collect();
    if qualifying.len() > k {
        qualifying.select_nth_unstable_by(k - 1, |a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        qualifying.truncate(k);
    }
    let mut idx: Vec<u32> = qualifying.into_iter().map(|(_, i)| i).collect();
    idx.sort_unstable();
    idx
}
