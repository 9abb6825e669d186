//! Frame-to-frame association of window clusters into [`ObjectTrack`]s.
//!
//! Each step first proposes identities from targets shared with the previous
//! windows, then resolves them with a minimum-total-centroid-distance assignment.
//! Clusters left over are matched against recently seen tracks without a shared
//! target (same assignment, same gate); anything else starts a new track.

use std::collections::HashMap;

use super::hungarian::solve_assignment;
use super::{ObjectTrack, TargetCluster, TargetRef};
use crate::geometry::{RotationMatrix, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssociationParams {
    /// Maximum centroid distance for continuing a track, m.
    pub gate: f64,
    /// Steps a track may go unobserved and still be continued.
    pub max_missed: usize,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            gate: 3.0,
            max_missed: 3,
        }
    }
}

struct Live {
    last_step: usize,
    last_pos: Vec3,
}

/// Associates per-step cluster sets into tracks. With `leveling`, centroid
/// distances are measured on the leveled ground plane (x, y); otherwise in 3D.
pub fn associate_tracks(steps: &[Vec<TargetCluster>], gate: f64, leveling: Option<&RotationMatrix>) -> Vec<ObjectTrack> {
    associate_tracks_with(
        steps,
        &AssociationParams {
            gate,
            ..Default::default()
        },
        leveling,
    )
}

pub fn associate_tracks_with(
    steps: &[Vec<TargetCluster>],
    params: &AssociationParams,
    leveling: Option<&RotationMatrix>,
) -> Vec<ObjectTrack> {
    let project = |c: &Vec3| match leveling {
        Some(r) => {
            let p = r.apply(c);
            Vec3::new(p.x, p.y, 0.0)
        }
        None => *c,
    };
    let gate = params.gate;
    let forbidden = 1e6 + 1e3 * gate;

    let mut tracks: Vec<ObjectTrack> = Vec::new();
    let mut live: Vec<Live> = Vec::new();
    let mut owner: HashMap<TargetRef, usize> = HashMap::new();

    for (s, clusters) in steps.iter().enumerate() {
        if clusters.is_empty() {
            continue;
        }
        let pos: Vec<Vec3> = clusters.iter().map(|c| project(&c.centroid)).collect();
        let active: Vec<usize> = (0..tracks.len())
            .filter(|&k| live[k].last_step < s && live[k].last_step + params.max_missed >= s)
            .collect();

        // identity proposals from shared window targets
        let proposed = |i: usize, k: usize| clusters[i].members.iter().any(|m| owner.get(m) == Some(&k));

        let mut assigned: Vec<Option<usize>> = vec![None; clusters.len()];
        let mut taken = vec![false; active.len()];

        let run = |rows: &[usize], cols: &[usize], allow: &dyn Fn(usize, usize) -> bool| -> Vec<(usize, usize)> {
            if rows.is_empty() || cols.is_empty() {
                return Vec::new();
            }
            // pad with one gate-cost dummy column per row
            let cost: Vec<Vec<f64>> = rows
                .iter()
                .map(|&i| {
                    cols.iter()
                        .map(|&a| {
                            let k = active[a];
                            if allow(i, k) {
                                (pos[i] - live[k].last_pos).norm()
                            } else {
                                forbidden
                            }
                        })
                        .chain(std::iter::repeat_n(gate, rows.len()))
                        .collect()
                })
                .collect();
            let sol = solve_assignment(&cost);
            sol.row_to_col
                .iter()
                .enumerate()
                .filter_map(|(r, c)| {
                    let c = (*c)?;
                    (c < cols.len() && cost[r][c] <= gate).then(|| (rows[r], cols[c]))
                })
                .collect()
        };

        let all_rows: Vec<usize> = (0..clusters.len()).collect();
        let all_cols: Vec<usize> = (0..active.len()).collect();
        for (i, a) in run(&all_rows, &all_cols, &|i, k| proposed(i, k)) {
            assigned[i] = Some(active[a]);
            taken[a] = true;
        }

        let rows: Vec<usize> = (0..clusters.len()).filter(|&i| assigned[i].is_none()).collect();
        let cols: Vec<usize> = (0..active.len()).filter(|&a| !taken[a]).collect();
        for (i, a) in run(&rows, &cols, &|_, _| true) {
            assigned[i] = Some(active[a]);
        }

        for (i, cluster) in clusters.iter().enumerate() {
            let k = match assigned[i] {
                Some(k) => k,
                None => {
                    tracks.push(ObjectTrack {
                        id: tracks.len(),
                        observations: Vec::new(),
                    });
                    live.push(Live {
                        last_step: s,
                        last_pos: pos[i],
                    });
                    tracks.len() - 1
                }
            };
            tracks[k].observations.push(cluster.clone());
            live[k] = Live {
                last_step: s,
                last_pos: pos[i],
            };
            for m in &cluster.members {
                owner.insert(*m, k);
            }
        }
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Timestamp;

    fn cl(step: usize, members: &[(usize, usize)], c: [f64; 3]) -> TargetCluster {
        TargetCluster {
            t: Timestamp(1 + step as i64),
            frame: step,
            members: members.iter().map(|&(frame, index)| TargetRef { frame, index }).collect(),
            centroid: Vec3::from(c),
            mean_v_rad: 1.0,
        }
    }

    #[test]
    fn steady_motion_is_one_track() {
        let steps: Vec<Vec<TargetCluster>> = (0..20).map(|s| vec![cl(s, &[(s, 0)], [0.5 * s as f64, 0.0, 0.0])]).collect();
        let tracks = associate_tracks(&steps, 3.0, None);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 20);
    }

    #[test]
    fn crossing_clusters_keep_identity() {
        // two objects approaching each other; cost matrix at the last step is [[1,4],[4,1]]
        let steps = vec![
            vec![cl(0, &[(0, 0)], [0.0, 0.0, 0.0]), cl(0, &[(0, 1)], [5.0, 0.0, 0.0])],
            vec![cl(1, &[(1, 0)], [1.0, 0.0, 0.0]), cl(1, &[(1, 1)], [4.0, 0.0, 0.0])],
        ];
        let tracks = associate_tracks(&steps, 3.0, None);
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].observations[1].centroid.x, 1.0);
        assert_eq!(tracks[1].observations[1].centroid.x, 4.0);
    }

    #[test]
    fn shared_targets_win_over_distance() {
        // cluster B shares a target with track 0 although A is slightly closer
        let steps = vec![
            vec![cl(0, &[(0, 0), (0, 1)], [0.0, 0.0, 0.0])],
            vec![cl(1, &[(1, 5)], [0.5, 0.0, 0.0]), cl(1, &[(0, 1), (1, 6)], [0.8, 0.0, 0.0])],
        ];
        let tracks = associate_tracks(&steps, 3.0, None);
        assert_eq!(tracks[0].observations[1].centroid.x, 0.8);
        assert_eq!(tracks.len(), 2);
    }

    #[test]
    fn reappearance_beyond_gate_is_new_track() {
        let mut steps: Vec<Vec<TargetCluster>> = (0..5).map(|s| vec![cl(s, &[(s, 0)], [0.5 * s as f64, 0.0, 0.0])]).collect();
        steps.push(vec![]);
        steps.push(vec![cl(6, &[(6, 0)], [22.0, 0.0, 0.0])]);
        let tracks = associate_tracks(&steps, 3.0, None);
        assert_eq!(tracks.len(), 2);
        assert_ne!(tracks[0].id, tracks[1].id);
    }

    #[test]
    fn short_dropout_is_bridged() {
        let mut steps: Vec<Vec<TargetCluster>> = (0..5).map(|s| vec![cl(s, &[(s, 0)], [0.5 * s as f64, 0.0, 0.0])]).collect();
        steps.push(vec![]);
        steps.push(vec![cl(6, &[(6, 0)], [3.0, 0.0, 0.0])]);
        assert_eq!(associate_tracks(&steps, 3.0, None).len(), 1);
    }

    #[test]
    fn leveled_metric_ignores_height() {
        let steps = vec![
            vec![cl(0, &[(0, 0)], [0.0, 0.0, 0.0])],
            vec![cl(1, &[(1, 0)], [0.5, 0.0, 5.0])],
        ];
        assert_eq!(associate_tracks(&steps, 3.0, None).len(), 2);
        assert_eq!(associate_tracks(&steps, 3.0, Some(&RotationMatrix::identity())).len(), 1);
    }

    #[test]
    fn timestamps_strictly_increase_and_clusters_unique() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let steps: Vec<Vec<TargetCluster>> = (0..60)
            .map(|s| {
                (0..rng.random_range(0..4))
                    .map(|i| cl(s, &[(s, i)], [rng.random_range(0.0..8.0), rng.random_range(0.0..8.0), 0.0]))
                    .collect()
            })
            .collect();
        let tracks = associate_tracks(&steps, 3.0, None);
        let total: usize = tracks.iter().map(ObjectTrack::len).sum();
        assert_eq!(total, steps.iter().map(Vec::len).sum::<usize>());
        for t in &tracks {
            assert!(t.observations.windows(2).all(|w| w[0].t < w[1].t));
            assert!(t.observations.windows(2).all(|w| (w[1].centroid - w[0].centroid).norm() <= 3.0));
        }
    }
}
