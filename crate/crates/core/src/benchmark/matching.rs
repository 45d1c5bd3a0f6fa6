//! One-to-one pixel correspondence within a distance tolerance.
//!
//! Pairs are seeded greedily in ascending distance (ties by the raster order
//! of the predicted pixel, then of the ground-truth pixel) and then grown
//! with augmenting paths until no further pixel can be matched, so the
//! result has maximum cardinality.

use std::collections::VecDeque;

/// A candidate pair: squared distance plus indices into the pixel lists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Candidate {
    pub dist2: f64,
    pub pred: usize,
    pub gt: usize,
}

/// All pred/gt pairs within `d_max`, sorted by (distance, pred, gt).
///
/// `pred` and `gt` are `(row, col)` lists in raster order; `width`/`height`
/// bound the lookup grid.
pub(crate) fn candidates(
    pred: &[(usize, usize)],
    gt: &[(usize, usize)],
    width: usize,
    height: usize,
    d_max: f64,
) -> Vec<Candidate> {
    let mut grid = vec![usize::MAX; width * height];
    for (j, &(r, c)) in gt.iter().enumerate() {
        grid[r * width + c] = j;
    }
    let reach = d_max.floor() as isize;
    let limit = d_max * d_max + 1e-9;
    let mut out = Vec::new();
    for (i, &(r, c)) in pred.iter().enumerate() {
        for dr in -reach..=reach {
            let rr = r as isize + dr;
            if rr < 0 || rr >= height as isize {
                continue;
            }
            for dc in -reach..=reach {
                let cc = c as isize + dc;
                if cc < 0 || cc >= width as isize {
                    continue;
                }
                let dist2 = (dr * dr + dc * dc) as f64;
                if dist2 > limit {
                    continue;
                }
                let j = grid[rr as usize * width + cc as usize];
                if j != usize::MAX {
                    out.push(Candidate { dist2, pred: i, gt: j });
                }
            }
        }
    }
    out.sort_by(|a, b| {
        a.dist2
            .total_cmp(&b.dist2)
            .then(a.pred.cmp(&b.pred))
            .then(a.gt.cmp(&b.gt))
    });
    out
}

/// Maximum-cardinality matching over the candidate pairs whose predicted
/// pixel is `active`. Returns `match_of_pred[i] = Some(j)`.
pub(crate) fn solve(
    cands: &[Candidate],
    n_pred: usize,
    n_gt: usize,
    active: impl Fn(usize) -> bool,
) -> Vec<Option<usize>> {
    let mut of_pred = vec![None; n_pred];
    let mut of_gt: Vec<Option<usize>> = vec![None; n_gt];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_pred];
    for c in cands {
        if !active(c.pred) {
            continue;
        }
        adj[c.pred].push(c.gt);
        if of_pred[c.pred].is_none() && of_gt[c.gt].is_none() {
            of_pred[c.pred] = Some(c.gt);
            of_gt[c.gt] = Some(c.pred);
        }
    }

    // BFS over alternating paths from each free predicted pixel
    let mut parent_gt = vec![usize::MAX; n_gt];
    let mut seen = vec![usize::MAX; n_gt];
    let mut queue = VecDeque::new();
    for start in 0..n_pred {
        if of_pred[start].is_some() || adj[start].is_empty() {
            continue;
        }
        queue.clear();
        queue.push_back(start);
        let mut end = None;
        'search: while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if seen[v] == start {
                    continue;
                }
                seen[v] = start;
                parent_gt[v] = u;
                match of_gt[v] {
                    None => {
                        end = Some(v);
                        break 'search;
                    }
                    Some(next) => queue.push_back(next),
                }
            }
        }
        let Some(mut v) = end else { continue };
        loop {
            let u = parent_gt[v];
            let prev = of_pred[u];
            of_pred[u] = Some(v);
            of_gt[v] = Some(u);
            match prev {
                Some(p) if u != start => v = p,
                _ => break,
            }
        }
    }
    of_pred
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_seed_is_repaired_by_augmentation() {
        // pred A=(0,0) is nearest to gt X=(0,1) but the only partner of
        // pred B=(0,3) is X as well; A must fall back to Y=(1,0).
        let pred = [(0, 0), (0, 3)];
        let gt = [(0, 1), (1, 0)];
        let c = candidates(&pred, &gt, 4, 2, 2.0);
        let m = solve(&c, 2, 2, |_| true);
        assert_eq!(m, vec![Some(1), Some(0)]);
    }

    #[test]
    fn inactive_predictions_are_ignored() {
        let pred = [(0, 0)];
        let gt = [(0, 0)];
        let c = candidates(&pred, &gt, 1, 1, 1.5);
        assert_eq!(solve(&c, 1, 1, |_| false), vec![None]);
    }
}
