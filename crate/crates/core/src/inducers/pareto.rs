//! Pareto dominance over per-item score vectors.

/// `a` dominates `b` iff `a >= b` on every item and `a > b` on at least one.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

/// Indices (ascending) of the non-dominated vectors.
///
/// A dominator always has a strictly larger item sum, and dominance is
/// transitive, so each vector only needs checking against front members
/// with a larger sum, visited in descending-sum order.
pub fn pareto_front(vectors: &[Vec<f64>]) -> Vec<usize> {
    let sums: Vec<f64> = vectors.iter().map(|v| v.iter().sum()).collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(a.cmp(&b)));

    let mut front: Vec<usize> = Vec::new();
    for idx in order {
        let dominated = front
            .iter()
            .filter(|&&f| sums[f] > sums[idx])
            .any(|&f| dominates(&vectors[f], &vectors[idx]));
        if !dominated {
            front.push(idx);
        }
    }
    front.sort_unstable();
    front
}
