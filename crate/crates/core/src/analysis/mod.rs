//! Analysis battery: context-size sweeps, latent self-consistency, and
//! latent export with a PCA projection for external plotting.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::datastore::{sample_context_indices, DatasetCollection, Split};
use crate::envsim::Transition;
use crate::error::CoreError;
use crate::model::{evaluate_mse, Model};
use crate::rng::{derive_seed, Prng};

/// Mean/std of evaluation MSE at one context size.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub context_n: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
}

/// Evaluate a trained model at several context sizes; each size is averaged
/// over `eval_seeds` independent context draws.
pub fn context_sweep(
    model: &Model,
    collection: &DatasetCollection,
    split: Split,
    sizes: &[usize],
    eval_seeds: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, CoreError> {
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut mses = Vec::with_capacity(eval_seeds);
        for k in 0..eval_seeds {
            let s = derive_seed(seed, &format!("sweep/{n}/{k}"));
            mses.push(evaluate_mse(model, collection, split, n, s)?);
        }
        let mean = mses.iter().sum::<f64>() / mses.len() as f64;
        let var = mses.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / mses.len() as f64;
        rows.push(SweepRow {
            context_n: n,
            mse_mean: mean,
            mse_std: var.sqrt(),
        });
    }
    Ok(rows)
}

/// Latents from repeatedly subsampled context sets, labeled by environment.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBank {
    pub context_n: usize,
    pub env_ids: Vec<u64>,
    /// (env_id, subsample index, latent vector)
    pub entries: Vec<(u64, usize, Vec<f64>)>,
}

/// 20 (or `subsamples`) independently subsampled latents per environment.
pub fn build_latent_bank(
    model: &Model,
    collection: &DatasetCollection,
    split: Split,
    env_limit: usize,
    subsamples: usize,
    context_n: usize,
    seed: u64,
) -> Result<LatentBank, CoreError> {
    let envs = collection.envs_of(split);
    if envs.is_empty() {
        return Err(CoreError::invalid(format!(
            "split '{}' has no environments",
            split.name()
        )));
    }
    let envs = &envs[..env_limit.min(envs.len())];
    let mut entries = Vec::with_capacity(envs.len() * subsamples);
    for env in envs {
        for k in 0..subsamples {
            let mut rng =
                Prng::seed_from(derive_seed(seed, &format!("bank/{}/{}", env.env_id, k)));
            let picks = sample_context_indices(env.transitions.len(), context_n, None, &mut rng);
            let context: Vec<&Transition> = picks.iter().map(|&i| &env.transitions[i]).collect();
            let z = model.encode(&context)?;
            entries.push((env.env_id, k, z));
        }
    }
    Ok(LatentBank {
        context_n,
        env_ids: envs.iter().map(|e| e.env_id).collect(),
        entries,
    })
}

/// Leave-one-out nearest-neighbor accuracy of environment identity.
/// Ties break toward the lowest index so the score is deterministic.
pub fn self_consistency(bank: &LatentBank) -> Result<f64, CoreError> {
    let distinct_envs = {
        let mut ids: Vec<u64> = bank.entries.iter().map(|e| e.0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    };
    if distinct_envs < 2 {
        return Err(CoreError::invalid(
            "self-consistency needs latents from at least 2 environments",
        ));
    }
    if bank.entries.len() < 2 {
        return Err(CoreError::invalid("self-consistency needs at least 2 latents"));
    }
    let mut hits = 0usize;
    for (i, (env_i, _, z_i)) in bank.entries.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_env = 0u64;
        for (j, (env_j, _, z_j)) in bank.entries.iter().enumerate() {
            if i == j {
                continue;
            }
            let d: f64 = z_i
                .iter()
                .zip(z_j)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            // strict '<' keeps the lowest index on ties
            if d < best {
                best = d;
                best_env = *env_j;
            }
        }
        if best_env == *env_i {
            hits += 1;
        }
    }
    Ok(hits as f64 / bank.entries.len() as f64)
}

/// Expected score of labeling by a uniformly random latent's environment.
pub fn random_baseline(bank: &LatentBank) -> f64 {
    let mut ids: Vec<u64> = bank.entries.iter().map(|e| e.0).collect();
    ids.sort_unstable();
    ids.dedup();
    1.0 / ids.len() as f64
}

/// CSV columns: env_id, subsample, z1..zD.
pub fn write_latent_csv<W: Write>(mut w: W, bank: &LatentBank) -> Result<(), CoreError> {
    let dim = bank.entries.first().map_or(0, |e| e.2.len());
    let mut header = String::from("env_id,subsample");
    for d in 1..=dim {
        header.push_str(&format!(",z{d}"));
    }
    writeln!(w, "{header}")?;
    for (env_id, k, z) in &bank.entries {
        let zs: Vec<String> = z.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{env_id},{k},{}", zs.join(","))?;
    }
    Ok(())
}

pub fn save_latent_csv(bank: &LatentBank, path: &Path) -> Result<(), CoreError> {
    let mut buf = Vec::new();
    write_latent_csv(&mut buf, bank)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Re-import an exported latent CSV (context_n is not stored in the file).
pub fn read_latent_csv<R: BufRead>(r: R, context_n: usize) -> Result<LatentBank, CoreError> {
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(CoreError::MalformedRecord {
                index: i,
                msg: "latent row needs env_id, subsample, z...".into(),
            });
        }
        let env_id: u64 = fields[0].parse().map_err(|_| CoreError::MalformedRecord {
            index: i,
            msg: "bad env_id".into(),
        })?;
        let k: usize = fields[1].parse().map_err(|_| CoreError::MalformedRecord {
            index: i,
            msg: "bad subsample index".into(),
        })?;
        let z: Result<Vec<f64>, _> = fields[2..].iter().map(|f| f.parse::<f64>()).collect();
        let z = z.map_err(|_| CoreError::MalformedRecord {
            index: i,
            msg: "bad latent value".into(),
        })?;
        entries.push((env_id, k, z));
    }
    let mut env_ids: Vec<u64> = entries.iter().map(|e| e.0).collect();
    env_ids.sort_unstable();
    env_ids.dedup();
    Ok(LatentBank {
        context_n,
        env_ids,
        entries,
    })
}

/// 2D PCA of a latent bank: projection onto the top-2 principal components
/// of the centered latents, plus the fraction of variance they explain.
pub struct Projection {
    pub coords: Vec<[f64; 2]>,
    pub variance_explained: f64,
}

pub fn project_2d(latents: &[Vec<f64>]) -> Result<Projection, CoreError> {
    let n = latents.len();
    if n < 2 {
        return Err(CoreError::invalid("pca needs at least 2 latents"));
    }
    let dim = latents[0].len();
    if dim < 2 || latents.iter().any(|z| z.len() != dim) {
        return Err(CoreError::invalid("pca needs consistent latent dim >= 2"));
    }
    let mut mean = vec![0.0; dim];
    for z in latents {
        for (m, &v) in mean.iter_mut().zip(z) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    // covariance (dim x dim)
    let mut cov = vec![0.0; dim * dim];
    for z in latents {
        for i in 0..dim {
            let zi = z[i] - mean[i];
            for j in 0..dim {
                cov[i * dim + j] += zi * (z[j] - mean[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    let (eigvals, eigvecs) = jacobi_eigen(&cov, dim);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]));
    let (top0, top1) = (order[0], order[1]);
    // sign convention: largest-magnitude component positive
    let fix_sign = |col: usize| -> f64 {
        let mut best = 0.0f64;
        for i in 0..dim {
            let v = eigvecs[i * dim + col];
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            -1.0
        } else {
            1.0
        }
    };
    let (s0, s1) = (fix_sign(top0), fix_sign(top1));
    let coords = latents
        .iter()
        .map(|z| {
            let mut c = [0.0f64; 2];
            for i in 0..dim {
                let centered = z[i] - mean[i];
                c[0] += centered * eigvecs[i * dim + top0] * s0;
                c[1] += centered * eigvecs[i * dim + top1] * s1;
            }
            c
        })
        .collect();
    let total: f64 = eigvals.iter().map(|&v| v.max(0.0)).sum();
    let explained = if total > 0.0 {
        (eigvals[top0].max(0.0) + eigvals[top1].max(0.0)) / total
    } else {
        1.0
    };
    Ok(Projection {
        coords,
        variance_explained: explained,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as columns).
fn jacobi_eigen(matrix: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..dim {
            for j in (i + 1)..dim {
                off += a[i * dim + j] * a[i * dim + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[p * dim + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals = (0..dim).map(|i| a[i * dim + i]).collect();
    (eigvals, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank_of(entries: Vec<(u64, usize, Vec<f64>)>) -> LatentBank {
        let mut env_ids: Vec<u64> = entries.iter().map(|e| e.0).collect();
        env_ids.sort_unstable();
        env_ids.dedup();
        LatentBank {
            context_n: 4,
            env_ids,
            entries,
        }
    }

    #[test]
    fn separated_clusters_score_one() {
        let mut entries = Vec::new();
        for env in 0..5u64 {
            for k in 0..20 {
                entries.push((env, k, vec![env as f64 * 10.0, 0.0]));
            }
        }
        let bank = bank_of(entries);
        assert_eq!(self_consistency(&bank).unwrap(), 1.0);
    }

    #[test]
    fn identical_latents_degenerate_to_random_baseline() {
        // all latents identical: the nearest neighbor of everything is the
        // lowest-index latent (index 0, or 1 for the query at 0), so only
        // env 0's latents count as hits
        let mut entries = Vec::new();
        for env in 0..10u64 {
            for k in 0..20 {
                entries.push((env, k, vec![1.0, 2.0, 3.0]));
            }
        }
        let bank = bank_of(entries);
        let score = self_consistency(&bank).unwrap();
        let baseline = random_baseline(&bank);
        assert!((score - baseline).abs() < 1e-12, "{score} vs {baseline}");
    }

    #[test]
    fn one_env_is_an_error() {
        let bank = bank_of(vec![(0, 0, vec![0.0]), (0, 1, vec![1.0])]);
        assert!(self_consistency(&bank).is_err());
    }

    #[test]
    fn csv_roundtrip_preserves_score() {
        let mut entries = Vec::new();
        let mut rng = crate::rng::Prng::seed_from(31);
        for env in 0..4u64 {
            for k in 0..6 {
                let z: Vec<f64> = (0..8)
                    .map(|d| env as f64 + 0.01 * rng.uniform(-1.0, 1.0) + d as f64 * 0.0)
                    .collect();
                entries.push((env, k, z));
            }
        }
        let bank = bank_of(entries);
        let score = self_consistency(&bank).unwrap();

        let mut buf = Vec::new();
        write_latent_csv(&mut buf, &bank).unwrap();
        let reread = read_latent_csv(&buf[..], bank.context_n).unwrap();
        assert_eq!(bank, reread);
        assert_eq!(self_consistency(&reread).unwrap(), score);
    }

    #[test]
    fn pca_rank2_preserves_pairwise_distances() {
        // latents lying exactly in a 2D subspace of R^5
        let basis_a = [1.0, 0.0, 2.0, -1.0, 0.5];
        let basis_b = [0.0, 3.0, -1.0, 0.0, 1.0];
        let mut rng = crate::rng::Prng::seed_from(9);
        let latents: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let (u, w) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
                (0..5).map(|i| u * basis_a[i] + w * basis_b[i]).collect()
            })
            .collect();
        let proj = project_2d(&latents).unwrap();
        assert!((proj.variance_explained - 1.0).abs() < 1e-9);
        for i in 0..latents.len() {
            for j in (i + 1)..latents.len() {
                let d_full: f64 = latents[i]
                    .iter()
                    .zip(&latents[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dx = proj.coords[i][0] - proj.coords[j][0];
                let dy = proj.coords[i][1] - proj.coords[j][1];
                let d_proj = (dx * dx + dy * dy).sqrt();
                assert!(
                    (d_full - d_proj).abs() < 1e-9,
                    "distance {d_full} became {d_proj}"
                );
            }
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // diag(5, 2, 1) rotated is symmetric with eigenvalues {5, 2, 1}
        let m = vec![4.0, -1.0, 1.0, -1.0, 3.0, -2.0, 1.0, -2.0, 3.0];
        let (vals, vecs) = jacobi_eigen(&m, 3);
        // eigenvalue equation check: A v = lambda v for each column
        for col in 0..3 {
            for row in 0..3 {
                let av: f64 = (0..3).map(|k| m[row * 3 + k] * vecs[k * 3 + col]).sum();
                assert!((av - vals[col] * vecs[row * 3 + col]).abs() < 1e-9);
            }
        }
        let sum: f64 = vals.iter().sum();
        assert!((sum - 10.0).abs() < 1e-9, "trace preserved, got {sum}");
    }
}
