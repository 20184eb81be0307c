mod common;

use common::*;
use manilift::io;
use manilift::kinematics::{decode_pose_sequence, forward_kinematics, scale_reference, ReferencePose, SegmentLengths};
use manilift::mcl::{self, HypothesisSet, LossConfig};
use manilift::metrics;
use manilift::nets::{Adam, Head, Mlp, MlpSpec, ModelKind};
use manilift::rotations::{matrix_to_rot6d, rot6d_to_matrix, Rot6D, RotMatrix};
use manilift::skeleton::{segment_lengths, Pose, PoseSequence, Skeleton};
use manilift::synthdata::{self, sample_von_mises, Scenario, SplitName};
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn rot6d() -> impl Strategy<Value = Rot6D> {
    prop::array::uniform6(-1.0f64..1.0)
        .prop_filter("non-degenerate", |a| {
            let x = Vector3::new(a[0], a[1], a[2]);
            let y = Vector3::new(a[3], a[4], a[5]);
            x.norm() > 1e-3 && x.normalize().cross(&y).norm() > 1e-3
        })
        .prop_map(Rot6D)
}

/// Random parent array where every parent precedes its child.
fn tree() -> impl Strategy<Value = Skeleton> {
    (2usize..12).prop_flat_map(|j| {
        let parents: Vec<_> = (1..j).map(|c| 0..c).collect();
        parents.prop_map(|p| Skeleton::from_parents(&p).unwrap())
    })
}

fn lengths(n: usize) -> impl Strategy<Value = SegmentLengths> {
    prop::collection::vec(0.05f64..3.0, n).prop_map(|v| SegmentLengths::new(v).unwrap())
}

fn assert_rotation(m: &Matrix3<f64>, tol: f64) {
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    assert!(ortho <= tol, "R^T R - I = {ortho:e}");
    assert!((m.determinant() - 1.0).abs() <= tol, "det = {}", m.determinant());
}

/// Global transforms accumulated down the tree from scratch.
fn fk_oracle(u: &Pose, rots: &[RotMatrix], skel: &Skeleton) -> Vec<Vector3<f64>> {
    let j = skel.joint_count();
    let mut out = vec![Vector3::zeros(); j];
    for joint in 1..j {
        let mut chain = vec![joint];
        while let Some(p) = skel.parent(*chain.last().unwrap()) {
            chain.push(p);
        }
        // chain: joint, parent, ..., root. Global rotation = R_joint R_parent ... R_root.
        let mut g = Matrix3::identity();
        for &c in chain.iter() {
            g *= rots[c].matrix();
        }
        let parent = skel.parent_of(joint);
        let off = Vector3::from_column_slice(u.joint(joint)) - Vector3::from_column_slice(u.joint(parent));
        out[joint] = out[parent] + g * off;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gram_schmidt_gives_proper_rotations(r in rot6d()) {
        let m = rot6d_to_matrix(&r).unwrap();
        assert_rotation(m.matrix(), 1e-9);
        // The first column is the normalized first vector.
        let x = r.first().normalize();
        prop_assert!((m.matrix().column(0) - x).norm() < 1e-12);
    }

    #[test]
    fn rot6d_round_trip(r in rot6d()) {
        let m = rot6d_to_matrix(&r).unwrap();
        let back = rot6d_to_matrix(&matrix_to_rot6d(m.matrix()).unwrap()).unwrap();
        prop_assert!((back.matrix() - m.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn scaled_reference_has_target_lengths(skel in tree(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..skel.segment_count()).map(|_| rand::Rng::random_range(&mut rng, 0.05..3.0)).collect();
        let scaled = scale_reference(&ReferencePose::along_x(&skel), &SegmentLengths::new(s.clone()).unwrap(), &skel).unwrap();
        for (a, b) in s.iter().zip(segment_lengths(&scaled, &skel).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn forward_kinematics_matches_accumulated_transforms(
        skel in tree(),
        reps in prop::collection::vec(rot6d(), 12),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<f64> = (0..skel.segment_count()).map(|_| rand::Rng::random_range(&mut rng, 0.05..3.0)).collect();
        let scaled = scale_reference(&ReferencePose::along_x(&skel), &SegmentLengths::new(s.clone()).unwrap(), &skel).unwrap();
        let rots: Vec<RotMatrix> = reps[..skel.joint_count()].iter().map(|r| rot6d_to_matrix(r).unwrap()).collect();
        let pose = forward_kinematics(&scaled, &rots, &skel).unwrap();
        let oracle = fk_oracle(&scaled, &rots, &skel);
        for j in 0..skel.joint_count() {
            prop_assert!((Vector3::from_column_slice(pose.joint(j)) - oracle[j]).norm() <= 1e-9);
        }
        for (a, b) in s.iter().zip(segment_lengths(&pose, &skel).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn decoded_sequences_are_consistent(
        s in lengths(16),
        reps in prop::collection::vec(prop::collection::vec(rot6d(), 17), 1..6),
    ) {
        let skel = Skeleton::h36m17();
        let seq = decode_pose_sequence(&s, &reps, &ReferencePose::h36m17_tpose(), &skel).unwrap();
        prop_assert!(metrics::mpsce(&seq, &skel).unwrap() <= 1e-9);
        prop_assert!(metrics::manifold_distance(&seq, &s, &skel).unwrap() <= 1e-9);
    }

    #[test]
    fn wta_and_scoring_match_brute_force(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hyp, target) = random_instance(&mut rng);
        let cfg = LossConfig::default();
        let (wta, winners) = brute_force_wta(&hyp, &target);
        prop_assert!((mcl::wta_loss(&hyp, &target, &cfg).unwrap() - wta).abs() <= 1e-12);
        prop_assert_eq!(mcl::frame_winners(&hyp, &target, &cfg).unwrap(), winners);
        prop_assert!((mcl::scoring_loss(&hyp, &target).unwrap() - brute_force_scoring(&hyp, &target)).abs() <= 1e-12);
    }

    #[test]
    fn wta_is_zero_when_a_hypothesis_matches(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hyp, target) = random_instance(&mut rng);
        let mut hyps = hyp.hypotheses().to_vec();
        let k = hyps.len();
        hyps[k - 1] = target.clone();
        let hyp = HypothesisSet::new(hyps, hyp.scores().to_vec()).unwrap();
        prop_assert_eq!(mcl::wta_loss(&hyp, &target, &LossConfig::default()).unwrap(), 0.0);
        prop_assert_eq!(mcl::oracle_select(&hyp, &target).unwrap(), target);
    }

    #[test]
    fn oracle_beats_every_head(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hyp, target) = random_instance(&mut rng);
        let oracle = metrics::mpjpe(&mcl::oracle_select(&hyp, &target).unwrap(), &target).unwrap();
        for h in hyp.hypotheses() {
            prop_assert!(oracle <= metrics::mpjpe(h, &target).unwrap() + 1e-12);
        }
    }

    #[test]
    fn aggregate_is_convex_combination(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hyp, _) = random_instance(&mut rng);
        let agg = mcl::aggregate(&hyp);
        for t in 0..agg.len() {
            for (i, c) in agg.frame(t).coords().iter().enumerate() {
                let vals: Vec<f64> = hyp.hypotheses().iter().map(|h| h.frame(t).coords()[i]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*c >= lo - 1e-12 && *c <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let g = mcl::softmax(&logits);
        prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn mpjpe_is_a_root_relative_metric(seed in any::<u64>(), shift in prop::array::uniform3(-5.0f64..5.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sequence(&mut rng, 4, 5, 3);
        let b = random_sequence(&mut rng, 4, 5, 3);
        let ab = metrics::mpjpe(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(metrics::mpjpe(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - metrics::mpjpe(&b, &a).unwrap()).abs() < 1e-12);
        let moved = PoseSequence::new(a.frames().iter().map(|f| {
            let c = f.coords().iter().enumerate().map(|(i, v)| v + shift[i % 3]).collect();
            Pose::new(3, c).unwrap()
        }).collect()).unwrap();
        prop_assert!((metrics::mpjpe(&moved, &b).unwrap() - ab).abs() < 1e-12);
    }

    #[test]
    fn p_mpjpe_removes_similarity_transforms(
        seed in any::<u64>(),
        r in rot6d(),
        scale in 0.1f64..10.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = random_sequence(&mut rng, 3, 6, 3);
        let q = rot6d_to_matrix(&r).unwrap();
        let pred = PoseSequence::new(gt.frames().iter().map(|f| {
            let mut c = Vec::new();
            for p in f.joints() {
                let v = q.apply(&Vector3::from_column_slice(p)) * scale;
                c.extend((0..3).map(|d| v[d] + shift[d]));
            }
            Pose::new(3, c).unwrap()
        }).collect()).unwrap();
        let out = metrics::p_mpjpe(&pred, &gt).unwrap();
        prop_assert!(out.value <= 1e-9, "p_mpjpe = {}", out.value);
        prop_assert_eq!(out.degenerate_frames, 0);
        prop_assert!(out.value <= metrics::mpjpe(&pred, &gt).unwrap() + 1e-9 || scale != 1.0);
    }

    #[test]
    fn pck_and_auc_are_percentages(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sequence(&mut rng, 3, 4, 3);
        let b = random_sequence(&mut rng, 3, 4, 3);
        let (pck, auc) = metrics::pck_auc(&a, &b, 1.0, &[0.5, 1.0, 2.0]).unwrap();
        prop_assert!((0.0..=100.0).contains(&pck) && (0.0..=100.0).contains(&auc));
        let (pck_self, auc_self) = metrics::pck_auc(&a, &a, 1.0, &[0.5, 1.0]).unwrap();
        prop_assert_eq!((pck_self, auc_self), (100.0, 100.0));
    }

    #[test]
    fn pose_csv_and_binary_round_trip(seed in any::<u64>(), frames in 1usize..5, joints in 1usize..6, dim in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = random_sequence(&mut rng, frames, joints.max(1), dim);
        prop_assert_eq!(io::sequence_from_csv(&io::sequence_to_csv(&seq).unwrap()).unwrap(), seq.clone());
        prop_assert_eq!(io::sequence_from_bytes(&io::sequence_to_bytes(&seq)).unwrap(), seq);
    }

    #[test]
    fn skeleton_json_round_trip(skel in tree()) {
        prop_assert_eq!(Skeleton::from_json_str(&skel.to_json_string()).unwrap(), skel);
    }

    #[test]
    fn linear_model_matches_closed_form_gradient(
        rows in prop::collection::vec(prop::array::uniform4(-2.0f64..2.0), 2..20),
        w in prop::array::uniform4(-1.0f64..1.0),
    ) {
        // Features are the first three columns, the target is the last one.
        let spec = MlpSpec::new(3, vec![], vec![Head { name: "y".into(), dim: 1 }]).unwrap();
        let mlp = Mlp::from_params(spec, w.to_vec()).unwrap();
        let n = rows.len() as f64;
        let x: Vec<f64> = rows.iter().flat_map(|r| r[..3].to_vec()).collect();
        let (out, cache) = mlp.forward(&x).unwrap();
        let resid: Vec<f64> = rows
            .iter()
            .map(|r| w[0] * r[0] + w[1] * r[1] + w[2] * r[2] + w[3] - r[3])
            .collect();
        let d_out: Vec<f64> = out.iter().zip(&rows).map(|(o, r)| 2.0 * (o - r[3]) / n).collect();
        let grad = mlp.backward(&cache, &d_out).unwrap();
        // 2 X^T (X w - y) / N with X augmented by a column of ones.
        for c in 0..4 {
            let expected: f64 = rows
                .iter()
                .zip(&resid)
                .map(|(r, e)| 2.0 * if c < 3 { r[c] } else { 1.0 } * e)
                .sum::<f64>()
                / n;
            prop_assert!((grad[c] - expected).abs() <= 1e-10);
        }
    }

    #[test]
    fn adam_matches_scalar_trace(
        p0 in -3.0f64..3.0,
        grads in prop::collection::vec(-5.0f64..5.0, 5),
        lr in 1e-4f64..1e-1,
        wd in prop_oneof![Just(0.0), 0.0f64..0.1],
    ) {
        let mut adam = Adam::new(1);
        let mut p = [p0];
        let (mut q, mut m, mut v) = (p0, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            adam.step(&mut p, &[*g], lr, wd);
            let g = g + wd * q;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = (t + 1) as i32;
            q -= lr * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            prop_assert!((p[0] - q).abs() <= 1e-10);
        }
    }

    #[test]
    fn adam_first_step_is_sign_of_gradient(g in prop::collection::vec(prop_oneof![-10.0f64..-1e-3, 1e-3f64..10.0], 1..10)) {
        let mut adam = Adam::new(g.len());
        let mut p = vec![0.0; g.len()];
        adam.step(&mut p, &g, 1e-2, 0.0);
        for (pi, gi) in p.iter().zip(&g) {
            prop_assert!((pi + 1e-2 * gi.signum()).abs() < 1e-7);
        }
    }

    #[test]
    fn constrained_models_stay_on_the_manifold(seed in any::<u64>(), k in 1usize..5, torus in any::<bool>()) {
        let scenario = if torus { Scenario::Torus } else { Scenario::C };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in [ModelKind::Constrained, ModelKind::ManiPose { k }] {
            let model = manilift::nets::LiftingModel::new(scenario, kind, 1.0, &mut rng).unwrap();
            let x: Vec<f64> = (0..16 * scenario.input_dim()).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
            let pred = model.predict(&x).unwrap();
            let s = SegmentLengths::new(scenario.segment_lengths()).unwrap();
            for h in pred.hypotheses.hypotheses() {
                prop_assert!(metrics::manifold_distance(h, &s, &scenario.skeleton()).unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn dataset_csv_round_trip(seed in any::<u64>(), torus in any::<bool>()) {
        let scenario = if torus { Scenario::Torus } else { Scenario::C };
        let sizes = synthdata::SplitSizes { train: 5, val: 2, test: 2 };
        let ds = synthdata::generate(scenario, sizes, seed).unwrap();
        let text = synthdata::split_to_csv(scenario, &ds.train).unwrap();
        let back = synthdata::split_from_csv(scenario, &text).unwrap();
        prop_assert_eq!(back.inputs, ds.train.inputs.clone());
        prop_assert_eq!(back.targets, ds.train.targets.clone());
    }
}

/// Brute-force similarity alignment of a 2D frame over a dense rotation grid,
/// with closed-form scale and translation for each rotation.
fn grid_p_mpjpe(pred: &Pose, gt: &Pose) -> f64 {
    let n = pred.joint_count();
    let mean = |p: &Pose| -> [f64; 2] {
        let mut m = [0.0; 2];
        for j in p.joints() {
            m[0] += j[0] / n as f64;
            m[1] += j[1] / n as f64;
        }
        m
    };
    let (ma, mb) = (mean(pred), mean(gt));
    let a: Vec<[f64; 2]> = pred.joints().map(|j| [j[0] - ma[0], j[1] - ma[1]]).collect();
    let b: Vec<[f64; 2]> = gt.joints().map(|j| [j[0] - mb[0], j[1] - mb[1]]).collect();
    let norm_a: f64 = a.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    let steps = 200_000;
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..steps {
        let th = 2.0 * PI * i as f64 / steps as f64;
        let (s, c) = th.sin_cos();
        let ra: Vec<[f64; 2]> = a.iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect();
        let dot: f64 = ra.iter().zip(&b).map(|(p, q)| p[0] * q[0] + p[1] * q[1]).sum();
        let scale = (dot / norm_a).max(0.0);
        let sse: f64 = ra.iter().zip(&b).map(|(p, q)| (scale * p[0] - q[0]).powi(2) + (scale * p[1] - q[1]).powi(2)).sum();
        if sse < best.0 {
            let md = ra.iter().zip(&b).map(|(p, q)| dist(&[scale * p[0], scale * p[1]], q)).sum::<f64>() / n as f64;
            best = (sse, md);
        }
    }
    best.1
}

#[test]
fn p_mpjpe_agrees_with_rotation_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let pred = random_sequence(&mut rng, 1, 3, 2);
        let gt = random_sequence(&mut rng, 1, 3, 2);
        let value = metrics::p_mpjpe(&pred, &gt).unwrap().value;
        let oracle = grid_p_mpjpe(pred.frame(0), gt.frame(0));
        assert!((value - oracle).abs() <= 1e-3, "umeyama {value} vs grid {oracle}");
    }
}

#[test]
fn gradients_match_finite_differences_for_all_model_kinds() {
    for scenario in [Scenario::C, Scenario::Torus] {
        for kind in [ModelKind::Unconstrained, ModelKind::Constrained, ModelKind::ManiPose { k: 2 }] {
            let (worst, _) = gradient_suite(scenario, kind, 10, 8);
            assert!(worst <= GRAD_REL_TOL, "{scenario:?} {kind:?}: rel err {worst:e}");
        }
    }
}

fn bessel_i1(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum, mut k) = (0.5 * x, 0.5 * x, 0.0);
    loop {
        k += 1.0;
        term *= q / (k * (k + 1.0));
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
    }
}

/// Inverts `A(k) = I1(k) / I0(k)` by bisection.
fn kappa_from_resultant(r: f64) -> f64 {
    let (mut lo, mut hi) = (1e-6, 500.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_i1(mid) / synthdata::bessel_i0(mid) < r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn von_mises_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mode = 1.0;
    let n = 100_000;
    let (mut c, mut s) = (0.0, 0.0);
    for _ in 0..n {
        let th = sample_von_mises(mode, 20.0, &mut rng);
        assert!(th > -PI && th <= PI);
        c += th.cos();
        s += th.sin();
    }
    let mean_dir = s.atan2(c);
    assert!((mean_dir - mode).abs() < 0.02, "circular mean {mean_dir}");
    let r_bar = (c * c + s * s).sqrt() / n as f64;
    let kappa_hat = kappa_from_resultant(r_bar);
    assert!((kappa_hat - 20.0).abs() <= 2.0, "kappa estimate {kappa_hat}");
}

#[test]
fn von_mises_concentration_limit() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let near = (0..10_000).filter(|_| (sample_von_mises(-2.0, 1e6, &mut rng) + 2.0).abs() < 0.01).count();
    assert!(near as f64 / 10_000.0 >= 0.997);
}

#[test]
fn scenario_c_has_two_to_one_lobes() {
    let angles = synthdata::sample_angles(Scenario::C, 100_000, 3, SplitName::Train);
    let upper = angles.iter().filter(|a| a[0] > 0.0).count() as f64 / angles.len() as f64;
    assert!((upper - 2.0 / 3.0).abs() < 0.01, "upper lobe mass {upper}");
    let centre = |sign: f64| {
        let lobe: Vec<f64> = angles.iter().map(|a| a[0]).filter(|a| a * sign > 0.0).collect();
        lobe.iter().sum::<f64>() / lobe.len() as f64
    };
    assert!((centre(1.0) - PI / 3.0).abs() < 0.01);
    assert!((centre(-1.0) + PI / 3.0).abs() < 0.01);
}

#[test]
fn generated_targets_lie_on_their_manifolds() {
    for scenario in [Scenario::A, Scenario::B, Scenario::C, Scenario::Torus] {
        let ds = synthdata::generate(scenario, synthdata::SplitSizes { train: 500, val: 10, test: 10 }, 1).unwrap();
        let d = synthdata::DROPPED_AXIS;
        for (x, p) in ds.train.inputs.iter().zip(&ds.train.targets) {
            for (l, s) in segment_lengths(p, &scenario.skeleton()).unwrap().iter().zip(scenario.segment_lengths()) {
                assert!((l - s).abs() <= 1e-12);
            }
            let kept: Vec<f64> = p.joints().flat_map(|j| j.iter().enumerate().filter(|(i, _)| *i != d).map(|(_, v)| *v).collect::<Vec<_>>()).collect();
            assert_eq!(x.keypoints.coords(), &kept[..]);
        }
    }
}
