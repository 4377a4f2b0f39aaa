//! Environment sampling with ribbon splits, dataset generation, context
//! sampling, and the line-oriented dataset file format.

mod format;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envsim::{multistep, relabel, EnvParams, Family, Transition};
use crate::error::CoreError;
use crate::rng::{derive_seed, Prng};

pub const RIBBONS_PER_FACTOR: usize = 30;
pub const TRAIN_RIBBONS: usize = 24;
pub const VAL_RIBBONS: usize = 3;
pub const TEST_RIBBONS: usize = 3;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

pub const ALL_SPLITS: &[Split] = &[Split::Train, Split::Val, Split::Test];

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split, CoreError> {
        ALL_SPLITS
            .iter()
            .copied()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| CoreError::invalid(format!("unknown split '{s}'")))
    }
}

/// Per-factor partition of 30 equal-width ribbons into train/val/test, so
/// evaluation factor values are never inside a training interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RibbonSplit {
    /// assignment[factor][ribbon] = split that owns the ribbon
    assignment: Vec<Vec<Split>>,
}

impl RibbonSplit {
    /// Random assignment: 24 train, 3 val, 3 test ribbons per factor.
    pub fn generate(family: Family, rng: &mut Prng) -> RibbonSplit {
        let assignment = family
            .factors()
            .iter()
            .map(|_| {
                let order = rng.sample_without_replacement(RIBBONS_PER_FACTOR, RIBBONS_PER_FACTOR);
                let mut ribbons = vec![Split::Train; RIBBONS_PER_FACTOR];
                for (rank, &ribbon) in order.iter().enumerate() {
                    ribbons[ribbon] = if rank < TRAIN_RIBBONS {
                        Split::Train
                    } else if rank < TRAIN_RIBBONS + VAL_RIBBONS {
                        Split::Val
                    } else {
                        Split::Test
                    };
                }
                ribbons
            })
            .collect();
        RibbonSplit { assignment }
    }

    pub fn from_assignment(assignment: Vec<Vec<Split>>) -> Result<Self, CoreError> {
        for (i, ribbons) in assignment.iter().enumerate() {
            if ribbons.len() != RIBBONS_PER_FACTOR {
                return Err(CoreError::invalid(format!(
                    "factor {i}: expected {RIBBONS_PER_FACTOR} ribbons, got {}",
                    ribbons.len()
                )));
            }
            let count = |s: Split| ribbons.iter().filter(|&&r| r == s).count();
            if count(Split::Train) != TRAIN_RIBBONS
                || count(Split::Val) != VAL_RIBBONS
                || count(Split::Test) != TEST_RIBBONS
            {
                return Err(CoreError::invalid(format!(
                    "factor {i}: ribbon assignment is not a 24/3/3 partition"
                )));
            }
        }
        Ok(RibbonSplit { assignment })
    }

    pub fn assignment(&self) -> &[Vec<Split>] {
        &self.assignment
    }

    pub fn ribbons_of(&self, factor: usize, split: Split) -> Vec<usize> {
        self.assignment[factor]
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Which split owns the ribbon containing `value` for this factor.
    pub fn split_of_value(&self, family: Family, factor: usize, value: f64) -> Split {
        let def = &family.factors()[factor];
        let width = (def.high - def.low) / RIBBONS_PER_FACTOR as f64;
        let idx = (((value - def.low) / width) as usize).min(RIBBONS_PER_FACTOR - 1);
        self.assignment[factor][idx]
    }

    /// Uniform draw inside a uniformly chosen ribbon of the given split.
    fn sample_factor(&self, family: Family, factor: usize, split: Split, rng: &mut Prng) -> f64 {
        let ribbons = self.ribbons_of(factor, split);
        let ribbon = ribbons[rng.below(ribbons.len())];
        let def = &family.factors()[factor];
        let width = (def.high - def.low) / RIBBONS_PER_FACTOR as f64;
        let low = def.low + ribbon as f64 * width;
        rng.uniform(low, low + width)
    }

    pub fn sample_params(&self, family: Family, split: Split, rng: &mut Prng) -> EnvParams {
        let values = (0..family.factors().len())
            .map(|f| self.sample_factor(family, f, split, rng))
            .collect();
        EnvParams::new(family, values).expect("ribbon samples stay in range")
    }
}

/// How many environments each split receives.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// All transitions collected in one environment, with its hidden factors.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvDataset {
    pub env_id: u64,
    pub split: Split,
    pub params: EnvParams,
    pub transitions: Vec<Transition>,
}

/// A family of environment datasets produced from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetCollection {
    pub family: Family,
    pub seed: u64,
    pub ribbons: RibbonSplit,
    pub envs: Vec<EnvDataset>,
}

/// Environments with split labels, factors drawn inside the split's ribbons.
pub fn sample_environments(
    family: Family,
    counts: SplitCounts,
    seed: u64,
) -> (RibbonSplit, Vec<(u64, Split, EnvParams)>) {
    let mut ribbon_rng = Prng::seed_from(derive_seed(seed, "ribbons"));
    let ribbons = RibbonSplit::generate(family, &mut ribbon_rng);
    let mut envs = Vec::new();
    let mut env_id = 0u64;
    for &split in ALL_SPLITS {
        for i in 0..counts.get(split) {
            let label = format!("env/{}/{}", split.name(), i);
            let mut rng = Prng::seed_from(derive_seed(seed, &label));
            let params = ribbons.sample_params(family, split, &mut rng);
            envs.push((env_id, split, params));
            env_id += 1;
        }
    }
    (ribbons, envs)
}

/// Transitions for one environment. Single-step families draw iid starts and
/// actions; the trajectory family relabels base rollouts generated under
/// nominal factors, mirroring how multi-step data reuses recorded paths.
pub fn generate_env_dataset(
    env_id: u64,
    split: Split,
    params: &EnvParams,
    n_actions: usize,
    seed: u64,
) -> Result<EnvDataset, CoreError> {
    let family = params.family();
    let transitions = match family {
        f if f.shares_base_pairs() => {
            let horizon = match family {
                Family::MultiStep => multistep::HORIZON,
                _ => n_actions,
            };
            let n_paths = n_actions.div_ceil(horizon);
            let mut pairs = Vec::with_capacity(n_paths * horizon);
            let nominal = family.nominal_params();
            for k in 0..n_paths {
                // paths are shared per split, not per environment
                let label = format!("paths/{}/{}", split.name(), k);
                let mut rng = Prng::seed_from(derive_seed(seed, &label));
                pairs.extend(nominal.rollout_pairs(horizon, &mut rng));
            }
            pairs.truncate(n_actions);
            relabel(&pairs, params, env_id)?
        }
        _ => {
            let mut rng = Prng::seed_from(derive_seed(seed, &format!("data/{env_id}")));
            let mut out = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                let state = family.sample_start_state(&mut rng);
                let action = family.sample_action(&mut rng);
                let next_state = params.step(&state, &action)?;
                out.push(Transition {
                    env_id,
                    state,
                    action,
                    next_state,
                });
            }
            out
        }
    };
    Ok(EnvDataset {
        env_id,
        split,
        params: params.clone(),
        transitions,
    })
}

impl DatasetCollection {
    /// Full pipeline: ribbon split, environment sampling, and per-environment
    /// data generation (parallel across environments, each on a derived seed).
    pub fn generate(
        family: Family,
        counts: SplitCounts,
        actions_per_env: usize,
        seed: u64,
    ) -> Result<DatasetCollection, CoreError> {
        Self::generate_with_eval_actions(family, counts, actions_per_env, actions_per_env, seed)
    }

    /// As [`DatasetCollection::generate`], with a separate transition count
    /// for the val/test environments.
    pub fn generate_with_eval_actions(
        family: Family,
        counts: SplitCounts,
        train_actions: usize,
        eval_actions: usize,
        seed: u64,
    ) -> Result<DatasetCollection, CoreError> {
        if train_actions == 0 || eval_actions == 0 {
            return Err(CoreError::invalid("actions per env must be >= 1"));
        }
        let (ribbons, env_list) = sample_environments(family, counts, seed);
        let envs: Result<Vec<EnvDataset>, CoreError> = env_list
            .par_iter()
            .map(|(env_id, split, params)| {
                let n = if *split == Split::Train {
                    train_actions
                } else {
                    eval_actions
                };
                generate_env_dataset(*env_id, *split, params, n, seed)
            })
            .collect();
        Ok(DatasetCollection {
            family,
            seed,
            ribbons,
            envs: envs?,
        })
    }

    pub fn envs_of(&self, split: Split) -> Vec<&EnvDataset> {
        self.envs.iter().filter(|e| e.split == split).collect()
    }

    pub fn env_by_id(&self, env_id: u64) -> Option<&EnvDataset> {
        self.envs.iter().find(|e| e.env_id == env_id)
    }
}

/// Indices of `n` context transitions from a dataset, excluding the target.
///
/// Without replacement while enough distinct transitions remain; with
/// replacement from the remainder otherwise; empty when nothing remains
/// (the no-context signal).
pub fn sample_context_indices(
    dataset_len: usize,
    n: usize,
    exclude: Option<usize>,
    rng: &mut Prng,
) -> Vec<usize> {
    let remainder: Vec<usize> = (0..dataset_len).filter(|&i| Some(i) != exclude).collect();
    if remainder.is_empty() || n == 0 {
        return Vec::new();
    }
    if n <= remainder.len() {
        rng.sample_without_replacement(remainder.len(), n)
            .into_iter()
            .map(|i| remainder[i])
            .collect()
    } else {
        (0..n).map(|_| remainder[rng.below(remainder.len())]).collect()
    }
}

pub use format::{load_collection, save_collection};
