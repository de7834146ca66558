//! Random intent matrices.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::IntentMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IntentPolicy {
    /// One class per user, no class shared.
    #[default]
    DistinctSingle,
    /// `per_user` classes per user, no class shared.
    Disjoint { per_user: usize },
    /// `total_classes` classes arranged in a ring; user `k` wants the
    /// `per_user` consecutive classes starting at position `k`.
    Overlapped {
        per_user: usize,
        total_classes: usize,
    },
    /// Fixed matrix, one row per user.
    Explicit { rows: Vec<Vec<u8>> },
}

/// Draws an intent matrix for `users` users over `classes` classes; the
/// chosen class labels depend only on `seed`.
pub fn assign_intents(
    users: usize,
    classes: usize,
    policy: &IntentPolicy,
    seed: u64,
) -> Result<IntentMatrix> {
    let unsatisfiable = |why: String| Err(Error::PolicyUnsatisfiable(why));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lists: Vec<Vec<usize>> = match *policy {
        IntentPolicy::DistinctSingle => {
            if users > classes {
                return unsatisfiable(format!(
                    "{users} users need {users} distinct classes, only {classes} exist"
                ));
            }
            sample(&mut rng, classes, users)
                .into_iter()
                .map(|l| vec![l])
                .collect()
        }
        IntentPolicy::Disjoint { per_user } => {
            let needed = users * per_user;
            if per_user == 0 || needed > classes {
                return unsatisfiable(format!(
                    "{users}×{per_user} disjoint classes out of {classes}"
                ));
            }
            let picked = sample(&mut rng, classes, needed).into_vec();
            picked.chunks(per_user).map(<[usize]>::to_vec).collect()
        }
        IntentPolicy::Overlapped {
            per_user,
            total_classes,
        } => {
            if per_user == 0 || per_user > total_classes || total_classes > classes {
                return unsatisfiable(format!(
                    "{per_user} classes per user from a ring of {total_classes} within {classes}"
                ));
            }
            if users + per_user - 1 < total_classes {
                return unsatisfiable(format!(
                    "{users} users with {per_user} classes each cannot cover {total_classes} classes"
                ));
            }
            let ring = sample(&mut rng, classes, total_classes).into_vec();
            (0..users)
                .map(|k| {
                    (0..per_user)
                        .map(|j| ring[(k + j) % total_classes])
                        .collect()
                })
                .collect()
        }
        IntentPolicy::Explicit { ref rows } => {
            let matrix = IntentMatrix::from_rows(rows)?;
            if matrix.users() != users || matrix.classes() != classes {
                return unsatisfiable(format!(
                    "explicit matrix is {}×{}, expected {users}×{classes}",
                    matrix.users(),
                    matrix.classes()
                ));
            }
            return Ok(matrix);
        }
    };
    IntentMatrix::from_class_lists(users, classes, &lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::intent_graph_stats;

    #[test]
    fn distinct_single() {
        let m = assign_intents(10, 35, &IntentPolicy::DistinctSingle, 7).unwrap();
        let stats = intent_graph_stats(&m);
        assert_eq!(stats.active_class_count, 10);
        assert!(stats.per_user_class_counts.iter().all(|&c| c == 1));
        assert!(m
            .active_classes()
            .iter()
            .all(|&l| m.users_of(l).count() == 1));
    }

    #[test]
    fn overlapped_ring() {
        let policy = IntentPolicy::Overlapped {
            per_user: 2,
            total_classes: 10,
        };
        let m = assign_intents(10, 35, &policy, 3).unwrap();
        let stats = intent_graph_stats(&m);
        assert_eq!(stats.active_class_count, 10);
        assert!(stats.per_user_class_counts.iter().all(|&c| c == 2));
        assert!(m
            .active_classes()
            .iter()
            .all(|&l| m.users_of(l).count() == 2));
    }

    #[test]
    fn disjoint_pairs() {
        let m = assign_intents(10, 35, &IntentPolicy::Disjoint { per_user: 2 }, 3).unwrap();
        assert_eq!(intent_graph_stats(&m).active_class_count, 20);
    }

    #[test]
    fn unsatisfiable_policies() {
        let err = |p: IntentPolicy, k| {
            matches!(
                assign_intents(k, 35, &p, 0),
                Err(Error::PolicyUnsatisfiable(_))
            )
        };
        assert!(err(IntentPolicy::DistinctSingle, 36));
        assert!(err(IntentPolicy::Disjoint { per_user: 4 }, 9));
        assert!(err(
            IntentPolicy::Overlapped {
                per_user: 2,
                total_classes: 10
            },
            5
        ));
        assert!(err(
            IntentPolicy::Explicit {
                rows: vec![vec![1; 35]]
            },
            2
        ));
    }

    #[test]
    fn seed_determines_the_draw() {
        let a = assign_intents(5, 35, &IntentPolicy::DistinctSingle, 11).unwrap();
        let b = assign_intents(5, 35, &IntentPolicy::DistinctSingle, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn policy_toml() {
        #[derive(Deserialize)]
        struct Wrap {
            intents: IntentPolicy,
        }
        let w: Wrap =
            toml::from_str("[intents]\nkind = \"overlapped\"\nper_user = 2\ntotal_classes = 10\n")
                .unwrap();
        assert_eq!(
            w.intents,
            IntentPolicy::Overlapped {
                per_user: 2,
                total_classes: 10
            }
        );
    }
}
