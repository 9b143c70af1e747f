use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{draw_spec, queries, splits, RunConfig, Subject};
use crate::error::{Error, Result};
use crate::intervention::{cosine, phase_profile, PhaseTriplet, TaskVector};
use crate::model::Checkpoint;
use crate::tasks::{render_prompt, sample_specification, seeded_rng, Format, Modality, Query, TaskSuite, Template, COLON};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub task_id: usize,
    pub modality: Modality,
    /// Per layer, mean of `[p_input, p_task, p_answer]`.
    pub mean: Vec<[f64; 3]>,
    pub variance: Vec<[f64; 3]>,
    /// Layers where the argmax of the mean switches and then holds for at
    /// least two consecutive layers.
    pub boundaries: Vec<usize>,
    pub n_draws: usize,
    pub n_correct: usize,
    /// Correct runs whose final-layer profile peaks at the answer.
    pub n_correct_ending_in_answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEvolutionReport {
    pub curves: Vec<PhaseCurve>,
}

fn argmax3(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// Switch layers of an argmax sequence that persist for two layers.
pub(crate) fn phase_boundaries(curve: &[[f64; 3]]) -> Vec<usize> {
    let arg: Vec<usize> = curve.iter().map(argmax3).collect();
    (1..arg.len().saturating_sub(1))
        .filter(|&l| arg[l] != arg[l - 1] && arg[l + 1] == arg[l])
        .collect()
}

/// Logit-lens phase profiles at the delimiter of full few-shot prompts,
/// tracking the delimiter (input), the task's attribute token (task) and
/// the ground-truth label (answer).
pub fn rep_evolution_report(ckpt: &Checkpoint, suite: &TaskSuite, cfg: &RunConfig) -> Result<RepEvolutionReport> {
    cfg.validate()?;
    let seed = cfg.eval_seeds[0];
    let splits = splits(suite, cfg)?;
    let mut curves = Vec::new();
    for (t, (_, test)) in splits.iter().enumerate() {
        for (mi, &m) in cfg.spec_modalities.iter().enumerate() {
            let mut profiles = Vec::new();
            let (mut correct, mut ending) = (0, 0);
            for d in 0..cfg.rep_draws {
                let mut rng = seeded_rng(seed, &[6, t as u64, mi as u64, d as u64]);
                let c = test.concepts[sample(&mut rng, test.concepts.len(), 1).index(0)];
                let spec = sample_specification(suite, t, m, Format::Examples, cfg.n_examples, &test.concepts, c, &mut rng)?;
                let prompt = render_prompt(suite, Some(&spec), Some(Query::new(c, m)), Template::Generic)?;
                let label = suite.label(t, c);
                let triplet = PhaseTriplet::new(COLON, suite.vocab.attribute_token(t), label)?;
                let profile = phase_profile(ckpt, &prompt, &triplet)?;
                if Subject::generate(ckpt, &prompt.tokens, None, 1)?.first() == Some(&label) {
                    correct += 1;
                    if argmax3(profile.last().unwrap()) == 2 {
                        ending += 1;
                    }
                }
                profiles.push(profile);
            }
            let n_layers = profiles.first().map_or(0, Vec::len);
            let mut mean = vec![[0.0; 3]; n_layers];
            let mut var = vec![[0.0; 3]; n_layers];
            let n = profiles.len().max(1) as f64;
            for l in 0..n_layers {
                for k in 0..3 {
                    let xs: Vec<f64> = profiles.iter().map(|p| p[l][k]).collect();
                    mean[l][k] = super::mean(&xs);
                    var[l][k] = xs.iter().map(|x| (x - mean[l][k]).powi(2)).sum::<f64>() / n;
                }
            }
            curves.push(PhaseCurve {
                task_id: t,
                modality: m,
                boundaries: phase_boundaries(&mean),
                mean,
                variance: var,
                n_draws: profiles.len(),
                n_correct: correct,
                n_correct_ending_in_answer: ending,
            });
        }
    }
    Ok(RepEvolutionReport { curves })
}

/// Mean silhouette coefficient under cosine distance. Points in singleton
/// clusters score 0.
pub fn silhouette(vectors: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
    if vectors.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            got: labels.len(),
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(Error::DegenerateGroups("silhouette needs at least two clusters".into()));
    }
    let n = vectors.len();
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine(&vectors[i], &vectors[j])?;
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = &groups[&labels[i]];
        if own.len() < 2 {
            continue;
        }
        let mean_to = |members: &[usize]| {
            let s: f64 = members.iter().filter(|&&j| j != i).map(|&j| dist[i][j]).sum();
            s / members.iter().filter(|&&j| j != i).count() as f64
        };
        let a = mean_to(own);
        let b = groups
            .iter()
            .filter(|(l, _)| **l != labels[i])
            .map(|(_, m)| mean_to(m))
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Coordinates on the top two principal directions, found by power
/// iteration with deflation on the covariance matrix.
pub fn principal_projection(vectors: &[Vec<f32>]) -> Result<Vec<[f64; 2]>> {
    let n = vectors.len();
    let d = vectors.first().map(Vec::len).ok_or(Error::Empty("no vectors to project"))?;
    let mut centred: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect();
    for k in 0..d {
        let m = centred.iter().map(|v| v[k]).sum::<f64>() / n as f64;
        centred.iter_mut().for_each(|v| v[k] -= m);
    }
    let mut cov = vec![vec![0.0; d]; d];
    for v in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += v[i] * v[j];
            }
        }
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for _ in 0..2 {
        let mut u: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
        for _ in 0..500 {
            let mut w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i][j] * u[j]).sum()).collect();
            for p in &dirs {
                let dot: f64 = w.iter().zip(p).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            u = w.into_iter().map(|x| x / norm).collect();
        }
        // Fix the sign so the largest component is positive.
        let big = u.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if big < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
        }
        dirs.push(u);
    }
    Ok(centred
        .iter()
        .map(|v| {
            let p = |k: usize| v.iter().zip(&dirs[k]).map(|(a, b)| a * b).sum::<f64>();
            [p(0), p(1)]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub layer: usize,
    pub task_silhouette: f64,
    pub modality_silhouette: f64,
    pub task_ids: Vec<usize>,
    pub modalities: Vec<Modality>,
    pub projection: Vec<[f64; 2]>,
}

/// Silhouettes of task vectors under task labels and under modality labels,
/// plus a 2-D projection for plotting.
pub fn cluster_separation(vectors: &[TaskVector]) -> Result<ClusterReport> {
    let tasks: Vec<usize> = vectors
        .iter()
        .map(|v| v.task_id.ok_or_else(|| Error::DegenerateGroups("vector without a task id".into())))
        .collect::<Result<_>>()?;
    let modalities: Vec<Modality> = vectors.iter().map(|v| v.source_modality).collect();
    let modality_ids: Vec<usize> = modalities.iter().map(|&m| m as usize).collect();
    for (what, labels) in [("task", &tasks), ("modality", &modality_ids)] {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in labels.iter() {
            *counts.entry(l).or_default() += 1;
        }
        if counts.len() < 2 || counts.values().any(|&c| c < 3) {
            return Err(Error::DegenerateGroups(format!(
                "need at least two {what} groups of three vectors"
            )));
        }
    }
    if let Some(v) = vectors.iter().find(|v| v.layer != vectors[0].layer) {
        return Err(Error::MixedLayers(vectors[0].layer, v.layer));
    }
    let values: Vec<Vec<f32>> = vectors.iter().map(|v| v.values.clone()).collect();
    Ok(ClusterReport {
        layer: vectors[0].layer,
        task_silhouette: silhouette(&values, &tasks)?,
        modality_silhouette: silhouette(&values, &modality_ids)?,
        task_ids: tasks,
        modalities,
        projection: principal_projection(&values)?,
    })
}

/// Example-derived task vectors for every task and specification modality.
pub fn cluster_vectors(subject: &impl Subject, suite: &TaskSuite, cfg: &RunConfig, layer: usize) -> Result<Vec<TaskVector>> {
    let seed = cfg.eval_seeds[0];
    let mut out = Vec::new();
    for (_, test) in splits(suite, cfg)? {
        for &m in &cfg.spec_modalities {
            for &c in queries(&test, cfg).iter().take(cfg.cluster_per_group) {
                let spec = draw_spec(suite, seed, &test, c, cfg.n_examples, m)?;
                let p = render_prompt(suite, Some(&spec), None, Template::Generic)?;
                out.push(subject.extract_all(&p)?.swap_remove(layer));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Straight from the definition, one point at a time.
    fn brute_silhouette(v: &[Vec<f32>], labels: &[usize]) -> f64 {
        let d = |i: usize, j: usize| {
            let dot: f64 = v[i].iter().zip(&v[j]).map(|(&a, &b)| a as f64 * b as f64).sum();
            let n = |k: usize| v[k].iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
            1.0 - dot / (n(i) * n(j))
        };
        let mut s = 0.0;
        for i in 0..v.len() {
            let same: Vec<usize> = (0..v.len()).filter(|&j| j != i && labels[j] == labels[i]).collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| d(i, j)).sum::<f64>() / same.len() as f64;
            let mut b = f64::INFINITY;
            let mut others: Vec<usize> = labels.iter().copied().filter(|&l| l != labels[i]).collect();
            others.sort();
            others.dedup();
            for l in others {
                let m: Vec<usize> = (0..v.len()).filter(|&j| labels[j] == l).collect();
                b = b.min(m.iter().map(|&j| d(i, j)).sum::<f64>() / m.len() as f64);
            }
            s += (b - a) / a.max(b);
        }
        s / v.len() as f64
    }

    #[test]
    fn silhouette_matches_brute_force() {
        let mut rng = seeded_rng(5, &[]);
        for trial in 0..5 {
            let n = 12 + trial * 4;
            let v: Vec<Vec<f32>> = (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            assert!((silhouette(&v, &labels).unwrap() - brute_silhouette(&v, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_within_cluster_scores_one() {
        let v = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(silhouette(&v, &[0, 0, 1, 1]).unwrap(), 1.0);
        assert!(silhouette(&v, &[0, 0, 0, 0]).is_err());
    }

    #[test]
    fn boundaries_need_two_layers() {
        let i = [0.8, 0.1, 0.1];
        let t = [0.1, 0.8, 0.1];
        let a = [0.1, 0.1, 0.8];
        assert_eq!(phase_boundaries(&[i, i, t, t, a, a]), vec![2, 4]);
        assert_eq!(phase_boundaries(&[i, t, i, i, a]), vec![2]);
        assert_eq!(phase_boundaries(&[i, t, i, a]), Vec::<usize>::new());
    }

    #[test]
    fn projection_finds_dominant_axis() {
        let v: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, 0.1 * (i % 2) as f32, 0.0]).collect();
        let p = principal_projection(&v).unwrap();
        for w in p.windows(2) {
            assert!(w[1][0] > w[0][0]);
        }
    }
}
