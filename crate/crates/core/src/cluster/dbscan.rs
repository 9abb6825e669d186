//! Plain DBSCAN over an arbitrary pairwise metric.
//!
//! Neighborhoods are inclusive (`d <= eps`) and contain the query point itself, so
//! a point is core when at least `min_pts` points (itself included) lie within
//! `eps`. Points are scanned in index order; a border point reachable from several
//! clusters keeps the first-discovered (lowest) cluster id.

use std::collections::VecDeque;

/// Cluster id per point, `None` for noise. Ids are dense and start at 0.
pub fn dbscan<F>(n: usize, eps: f64, min_pts: usize, dist: F) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> f64,
{
    let neighbors = neighbor_lists(n, eps, &dist);
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut next_id = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start].is_some() || !is_core[start] {
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[start] = Some(id);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    if is_core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    labels
}

fn neighbor_lists<F>(n: usize, eps: f64, dist: &F) -> Vec<Vec<usize>>
where
    F: Fn(usize, usize) -> f64,
{
    let mut nb: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if dist(i, j) <= eps {
                nb[i].push(j);
                nb[j].push(i);
            }
        }
    }
    nb
}

/// Groups point indices by label; `result[k]` lists the members of cluster `k`.
pub fn group_labels(labels: &[Option<usize>]) -> Vec<Vec<usize>> {
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); k];
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = l {
            groups[*c].push(i);
        }
    }
    groups
}

#[cfg(test)]
pub(crate) mod reference {
    //! Independent DBSCAN: union-find over core points, then border assignment.

    pub fn dbscan_reference<F>(n: usize, eps: f64, min_pts: usize, dist: F) -> Vec<Option<usize>>
    where
        F: Fn(usize, usize) -> f64,
    {
        let adj = |i: usize, j: usize| i == j || dist(i, j) <= eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| adj(i, j)).count() >= min_pts).collect();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            let mut c = x;
            while p[c] != r {
                let nx = p[c];
                p[c] = r;
                c = nx;
            }
            r
        }
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && adj(i, j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        // number components by their smallest core index
        let mut comp_id = vec![usize::MAX; n];
        let mut root_to_id = std::collections::HashMap::new();
        for i in 0..n {
            if core[i] {
                let r = find(&mut parent, i);
                let next = root_to_id.len();
                comp_id[i] = *root_to_id.entry(r).or_insert(next);
            }
        }
        (0..n)
            .map(|i| {
                if core[i] {
                    Some(comp_id[i])
                } else {
                    (0..n).filter(|&j| core[j] && adj(i, j)).map(|j| comp_id[j]).min()
                }
            })
            .collect()
    }
}
