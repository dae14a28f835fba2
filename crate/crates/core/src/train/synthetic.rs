//! Synthetic interaction logs with correlated structure. Each learner
//! walks a concept chain: a correct answer advances the chain (the
//! next concept is a function of the last two), a wrong answer leads
//! to a review of the same concept, and correctness itself grows with
//! prior exposure. The next concept therefore depends on the learner's
//! mastery state, so path prediction and correctness prediction share
//! latent structure; that coupling is what makes the generator useful
//! for measuring multi-task transfer at test scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{mine_windows, split_by_user, DatasetSplit, InteractionRow, Vocabulary};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub users: usize,
    pub logs_per_user: usize,
    pub num_concepts: usize,
    /// Probability a step follows the study dynamics (review on a
    /// wrong answer, advance the chain on a right one); the rest jump
    /// to a uniformly random concept.
    pub follow_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            users: 100,
            logs_per_user: 30,
            num_concepts: 50,
            follow_prob: 0.85,
            seed: 0,
        }
    }
}

/// Where the chain advances after seeing `prev2` then `prev` and
/// answering `prev` correctly.
pub fn chain_next(prev: usize, prev2: usize, k: usize) -> usize {
    (prev + (prev2 % 5) + 1) % k
}

/// The structured step: review the concept after a miss, advance the
/// chain after a hit.
pub fn study_next(prev: usize, prev2: usize, prev_correct: bool, k: usize) -> usize {
    if prev_correct {
        chain_next(prev, prev2, k)
    } else {
        prev
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn generate_rows(config: &SyntheticConfig) -> Vec<InteractionRow> {
    let k = config.num_concepts;
    assert!(k > 0, "need at least one concept");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows = Vec::with_capacity(config.users * config.logs_per_user);
    for user in 0..config.users {
        let mut exposures = vec![0u32; k];
        let mut prev2 = rng.gen_range(0..k);
        let mut prev = rng.gen_range(0..k);
        let mut prev_correct = true;
        for t in 0..config.logs_per_user {
            let concept = if t == 0 {
                prev
            } else if rng.gen_bool(config.follow_prob) {
                study_next(prev, prev2, prev_correct, k)
            } else {
                rng.gen_range(0..k)
            };
            // Mastery grows with exposure; the first attempt at a
            // concept succeeds ~27% of the time, the third ~69%.
            let p = sigmoid(0.9 * exposures[concept] as f64 - 1.0);
            let correct = u8::from(rng.gen_bool(p));
            exposures[concept] += 1;
            rows.push(InteractionRow {
                order_id: t as i64,
                user_id: user as i64,
                problem_id: concept as i64,
                correct,
                attempt_count: 1,
                ms_first_response: 1000,
            });
            prev2 = prev;
            prev = concept;
            prev_correct = correct == 1;
        }
    }
    rows
}

/// Generate rows, build the vocabulary, mine windows, and split by
/// user in one call.
pub fn generate_split(
    config: &SyntheticConfig,
    n: usize,
    m: usize,
    stride: usize,
    train_fraction: f64,
) -> Result<(DatasetSplit, Vocabulary)> {
    let rows = generate_rows(config);
    let vocab = Vocabulary::build(&rows)?;
    let mined = mine_windows(&rows, &vocab, n, m, stride)?;
    let split = split_by_user(&mined.samples, train_fraction, config.seed)?;
    Ok((split, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_per_seed() {
        let cfg = SyntheticConfig { users: 5, logs_per_user: 10, ..SyntheticConfig::default() };
        let a = generate_rows(&cfg);
        let b = generate_rows(&cfg);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((x.user_id, x.problem_id, x.correct), (y.user_id, y.problem_id, y.correct));
        }
        let c = generate_rows(&SyntheticConfig { seed: 1, ..cfg });
        assert!(a.iter().zip(&c).any(|(x, y)| x.problem_id != y.problem_id));
    }

    #[test]
    fn rows_are_already_ordered_per_user() {
        let cfg = SyntheticConfig { users: 3, logs_per_user: 8, ..SyntheticConfig::default() };
        let rows = generate_rows(&cfg);
        assert_eq!(rows.len(), 24);
        for pair in rows.windows(2) {
            if pair[0].user_id == pair[1].user_id {
                assert_eq!(pair[1].order_id, pair[0].order_id + 1);
            }
        }
    }

    #[test]
    fn study_dynamics_dominate_at_high_follow_prob() {
        let cfg = SyntheticConfig {
            users: 20,
            logs_per_user: 30,
            num_concepts: 50,
            follow_prob: 0.9,
            seed: 3,
        };
        let rows = generate_rows(&cfg);
        let mut followed = 0usize;
        let mut total = 0usize;
        for user_rows in rows.chunks(cfg.logs_per_user) {
            for w in user_rows.windows(3) {
                let predicted = study_next(
                    w[1].problem_id as usize,
                    w[0].problem_id as usize,
                    w[1].correct == 1,
                    cfg.num_concepts,
                );
                total += 1;
                followed += usize::from(predicted == w[2].problem_id as usize);
            }
        }
        let rate = followed as f64 / total as f64;
        assert!(rate > 0.8, "study dynamics followed only {rate:.2} of the time");
    }

    #[test]
    fn wrong_answers_trigger_reviews() {
        let cfg = SyntheticConfig {
            users: 50,
            logs_per_user: 20,
            num_concepts: 30,
            follow_prob: 1.0,
            seed: 6,
        };
        let rows = generate_rows(&cfg);
        for user_rows in rows.chunks(cfg.logs_per_user) {
            for w in user_rows.windows(2) {
                if w[0].correct == 0 {
                    assert_eq!(w[1].problem_id, w[0].problem_id, "miss should lead to review");
                } else {
                    assert_ne!(w[1].problem_id, w[0].problem_id, "hit should advance the chain");
                }
            }
        }
    }

    #[test]
    fn correctness_improves_with_exposure() {
        let cfg = SyntheticConfig {
            users: 200,
            logs_per_user: 40,
            num_concepts: 10,
            follow_prob: 0.85,
            seed: 4,
        };
        let rows = generate_rows(&cfg);
        // Mean correctness on first attempts vs third-or-later attempts.
        let mut first = (0u64, 0u64);
        let mut later = (0u64, 0u64);
        let mut seen: std::collections::HashMap<(i64, i64), u32> = std::collections::HashMap::new();
        for r in &rows {
            let count = seen.entry((r.user_id, r.problem_id)).or_insert(0);
            if *count == 0 {
                first.0 += u64::from(r.correct);
                first.1 += 1;
            } else if *count >= 2 {
                later.0 += u64::from(r.correct);
                later.1 += 1;
            }
            *count += 1;
        }
        let p_first = first.0 as f64 / first.1 as f64;
        let p_later = later.0 as f64 / later.1 as f64;
        assert!(
            p_later > p_first + 0.2,
            "exposure should raise correctness: first {p_first:.2}, later {p_later:.2}"
        );
    }

    #[test]
    fn generate_split_produces_disjoint_users() {
        let cfg = SyntheticConfig {
            users: 12,
            logs_per_user: 15,
            num_concepts: 8,
            follow_prob: 0.85,
            seed: 5,
        };
        let (split, vocab) = generate_split(&cfg, 4, 3, 2, 0.75).unwrap();
        assert!(vocab.len() <= 8);
        assert!(!split.train.is_empty() && !split.test.is_empty());
        let train_users: std::collections::HashSet<i64> =
            split.train.iter().map(|s| s.user).collect();
        assert!(split.test.iter().all(|s| !train_users.contains(&s.user)));
    }
}
