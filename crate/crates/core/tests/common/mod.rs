#![allow(dead_code)]

use manilift::mcl::HypothesisSet;
use manilift::nets::{LiftingModel, ModelKind};
use manilift::skeleton::{Pose, PoseSequence};
use manilift::synthdata::{generate, Scenario, SplitSizes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_REL_TOL: f64 = 1e-5;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Relative error of an analytic gradient against central differences, or
/// `None` if some perturbation changes a winning hypothesis.
pub fn gradient_check(scenario: Scenario, kind: ModelKind, seed: u64, batch: usize) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LiftingModel::new(scenario, kind, 1.0, &mut rng).unwrap();
    // Spread the parameters beyond the init range so the tanh units are not all linear.
    for p in model.mlp.params_mut() {
        *p *= rng.random_range(0.5..3.0);
    }
    let sizes = SplitSizes { train: batch, val: 1, test: 1 };
    let ds = generate(scenario, sizes, seed).unwrap();
    let x = ds.train.input_matrix();
    let y = ds.train.target_sequence().unwrap();

    let (raw, cache) = model.mlp.forward(&x).unwrap();
    let base = model.batch_loss(&raw, &y).unwrap();
    let analytic = model.mlp.backward(&cache, &base.d_out).unwrap();

    let mut numeric = vec![0.0; analytic.len()];
    for i in 0..analytic.len() {
        let orig = model.mlp.params()[i];
        let mut eval = |v: f64| {
            model.mlp.params_mut()[i] = v;
            let (raw, _) = model.mlp.forward(&x).unwrap();
            model.batch_loss(&raw, &y).unwrap()
        };
        let plus = eval(orig + FD_STEP);
        let minus = eval(orig - FD_STEP);
        model.mlp.params_mut()[i] = orig;
        if plus.winners != base.winners || minus.winners != base.winners {
            return None;
        }
        numeric[i] = (plus.loss - minus.loss) / (2.0 * FD_STEP);
    }
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    let scale = norm(&analytic).max(norm(&numeric)).max(1e-300);
    Some(norm(&diff) / scale)
}

/// Runs [`gradient_check`] over seeds until `points` stable points are found.
/// Returns the worst relative error and the number of skipped tie points.
pub fn gradient_suite(scenario: Scenario, kind: ModelKind, points: usize, batch: usize) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let (mut found, mut skipped, mut seed) = (0, 0, 0u64);
    while found < points {
        match gradient_check(scenario, kind, 10_000 + seed, batch) {
            Some(e) => {
                worst = worst.max(e);
                found += 1;
            }
            None => skipped += 1,
        }
        seed += 1;
        assert!(skipped <= points, "too many unstable winner points");
    }
    (worst, skipped)
}

pub fn random_pose<R: Rng>(rng: &mut R, joints: usize, dim: usize) -> Pose {
    let mut coords: Vec<f64> = (0..joints * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    coords[..dim].iter_mut().for_each(|c| *c = 0.0);
    Pose::new(dim, coords).unwrap()
}

pub fn random_sequence<R: Rng>(rng: &mut R, frames: usize, joints: usize, dim: usize) -> PoseSequence {
    PoseSequence::new((0..frames).map(|_| random_pose(rng, joints, dim)).collect()).unwrap()
}

pub fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Random hypothesis set and target with matching shapes.
pub fn random_instance<R: Rng>(rng: &mut R) -> (HypothesisSet, PoseSequence) {
    let k = rng.random_range(1..=5);
    let frames = rng.random_range(1..=8);
    let joints = rng.random_range(2..=6);
    let dim = rng.random_range(2..=3);
    let hyps = (0..k).map(|_| random_sequence(rng, frames, joints, dim)).collect();
    let scores = (0..frames).map(|_| random_simplex(rng, k)).collect();
    let target = random_sequence(rng, frames, joints, dim);
    (HypothesisSet::new(hyps, scores).unwrap(), target)
}

/// Mean joint distance, computed without the library.
pub fn frame_error(a: &Pose, b: &Pose) -> f64 {
    a.joints().zip(b.joints()).map(|(p, q)| dist(p, q)).sum::<f64>() / a.joint_count() as f64
}

/// `(mean_t min_k error, per-frame argmin with lowest-index ties)`.
pub fn brute_force_wta(hyp: &HypothesisSet, target: &PoseSequence) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut winners = Vec::new();
    for t in 0..target.len() {
        let errs: Vec<f64> = (0..hyp.k()).map(|k| frame_error(hyp.hypothesis(k).frame(t), target.frame(t))).collect();
        let mut w = 0;
        for k in 1..errs.len() {
            if errs[k] < errs[w] {
                w = k;
            }
        }
        total += errs[w];
        winners.push(w);
    }
    (total / target.len() as f64, winners)
}

pub fn brute_force_scoring(hyp: &HypothesisSet, target: &PoseSequence) -> f64 {
    let (_, winners) = brute_force_wta(hyp, target);
    winners
        .iter()
        .enumerate()
        .map(|(t, &k)| -hyp.scores()[t][k].max(1e-12).ln())
        .sum::<f64>()
        / target.len() as f64
}
