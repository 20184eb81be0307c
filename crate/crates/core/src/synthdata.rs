//! Synthetic lifting datasets and the conditional-expectation oracle.
//!
//! Two tasks are provided:
//! - circle: a single segment of unit length rotating in the plane; the input
//!   is the `x` coordinate of the end joint, the target its `(x, y)` position.
//! - torus: two segments of lengths `s0 = 2` and `s1 = 1`, with the end joint
//!   on a torus (see [`torus_to_points`]); the input is the `(x, z)`
//!   projection of both joints.
//!
//! Angles are drawn from von Mises mixtures with the Best-Fisher rejection
//! sampler. Every sample uses its own ChaCha8 stream derived from
//! `(seed, split, index)`, so generation is bit-reproducible and can run in
//! parallel.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rotations::{angle_to_point, torus_jacobian, torus_to_points, wrap_angle};
use crate::skeleton::{project, Input2D, Pose, PoseSequence, Skeleton};

/// Axis removed by the orthographic projection in both tasks (`y`).
pub const DROPPED_AXIS: usize = 1;

pub const TORUS_S0: f64 = 2.0;
pub const TORUS_S1: f64 = 1.0;

const WEIGHT_TOL: f64 = 1e-12;
const GRAZING_SIN: f64 = 1e-9;

/// Von Mises mixture over one or two angles.
///
/// For two-angle mixtures each component's concentration applies to both
/// angles, which are independent within a component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub modes: Vec<Vec<f64>>,
    pub concentrations: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(modes: Vec<Vec<f64>>, concentrations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let spec = MixtureSpec { modes, concentrations, weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.modes.len();
        if n == 0 || self.concentrations.len() != n || self.weights.len() != n {
            return Err(Error::InvalidArgument(
                "mixture modes, concentrations and weights must have the same non-zero length".into(),
            ));
        }
        let arity = self.modes[0].len();
        if arity == 0 || self.modes.iter().any(|m| m.len() != arity) {
            return Err(Error::InvalidArgument("mixture modes must share one arity".into()));
        }
        if self.concentrations.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(Error::InvalidArgument("concentrations must be positive".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {total}")));
        }
        Ok(())
    }

    pub fn arity(&self) -> usize {
        self.modes[0].len()
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn checksum(&self) -> String {
        let json = serde_json::to_string(self).expect("mixture serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Joint density of the angles with respect to the Lebesgue measure on the torus.
    pub fn density(&self, angles: &[f64]) -> f64 {
        self.modes
            .iter()
            .zip(&self.concentrations)
            .zip(&self.weights)
            .map(|((m, &k), &w)| {
                w * m
                    .iter()
                    .zip(angles)
                    .map(|(mu, a)| von_mises_density(*a, *mu, k))
                    .product::<f64>()
            })
            .sum()
    }

    /// Draws one angle tuple.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.weights.len() - 1;
        for (c, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = c;
                break;
            }
        }
        let k = self.concentrations[comp];
        self.modes[comp]
            .iter()
            .map(|&mu| sample_von_mises(mu, k, rng))
            .collect()
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut sum, mut k) = (1.0, 1.0, 0.0);
    loop {
        k += 1.0;
        term *= q / (k * k);
        sum += term;
        if term < 1e-17 * sum {
            return sum;
        }
    }
}

pub fn von_mises_density(theta: f64, mode: f64, kappa: f64) -> f64 {
    // exp(k cos d) / (2 pi I0(k)), written to avoid overflow for large k.
    let scaled_i0 = bessel_i0(kappa) * (-kappa).exp();
    (kappa * ((theta - mode).cos() - 1.0)).exp() / (2.0 * PI * scaled_i0)
}

/// Best-Fisher sampler for the von Mises distribution, wrapped into `(-pi, pi]`.
pub fn sample_von_mises<R: Rng + ?Sized>(mode: f64, kappa: f64, rng: &mut R) -> f64 {
    assert!(kappa > 0.0, "von Mises concentration must be positive");
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let dev = f.clamp(-1.0, 1.0).acos();
            let theta = if u3 > 0.5 { mode + dev } else { mode - dev };
            return wrap_angle(theta);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    Torus,
}

/// Checksums of the frozen scenario mixtures.
const PINNED_CHECKSUMS: [(Scenario, &str); 4] = [
    (Scenario::A, "c5e5eed57a9605d90be0b280646f29ae2bfcd186d2505fac54578114d080284c"),
    (Scenario::B, "be8614d4eca28ff6b33dde3f2d421db97173bf45865a1ace36a707de15fe32bd"),
    (Scenario::C, "0d3c5c89dafd46a11bff5700aca30344aa0d76ef42db56b0f8ff54a4bc17089b"),
    (Scenario::Torus, "540ee5408f79242349e46c5ab808a300479d50d3765c79210653177ad387c040"),
];

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::A, Scenario::B, Scenario::C, Scenario::Torus];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::C => "C",
            Scenario::Torus => "torus",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Scenario::A),
            "b" => Ok(Scenario::B),
            "c" => Ok(Scenario::C),
            "torus" => Ok(Scenario::Torus),
            _ => Err(Error::InvalidArgument(format!("unknown scenario {s:?}"))),
        }
    }

    pub fn is_torus(&self) -> bool {
        matches!(self, Scenario::Torus)
    }

    pub fn mixture(&self) -> MixtureSpec {
        let (modes, kappa, weights) = match self {
            Scenario::A => (vec![vec![2.0 * PI / 5.0]], vec![20.0], vec![1.0]),
            Scenario::B => (vec![vec![0.0]], vec![20.0], vec![1.0]),
            Scenario::C => (
                vec![vec![PI / 3.0], vec![-PI / 3.0]],
                vec![20.0, 20.0],
                vec![2.0 / 3.0, 1.0 / 3.0],
            ),
            Scenario::Torus => (
                vec![
                    vec![-PI, 0.0],
                    vec![0.0, PI / 4.0],
                    vec![0.5, -PI / 4.0],
                    vec![2.0 * PI / 3.0, PI / 2.0],
                ],
                vec![2.0, 4.0, 3.0, 10.0],
                vec![0.3, 0.4, 0.2, 0.1],
            ),
        };
        MixtureSpec { modes, concentrations: kappa, weights }
    }

    pub fn pinned_checksum(&self) -> &'static str {
        PINNED_CHECKSUMS
            .iter()
            .find(|(s, _)| s == self)
            .map(|(_, c)| *c)
            .expect("every scenario is pinned")
    }

    /// Errors if the mixture no longer matches its pinned checksum.
    pub fn verify(&self) -> Result<()> {
        let actual = self.mixture().checksum();
        if actual != self.pinned_checksum() {
            return Err(Error::InvalidArgument(format!(
                "scenario {} mixture checksum {actual} does not match the pinned value",
                self.name()
            )));
        }
        Ok(())
    }

    pub fn skeleton(&self) -> Skeleton {
        let n = if self.is_torus() { 3 } else { 2 };
        Skeleton::chain(n).expect("chain skeleton")
    }

    /// Segment lengths of the task manifold.
    pub fn segment_lengths(&self) -> Vec<f64> {
        if self.is_torus() {
            vec![TORUS_S0, TORUS_S1]
        } else {
            vec![1.0]
        }
    }

    /// Target pose for the given angles (root included).
    pub fn pose_from_angles(&self, angles: &[f64]) -> Pose {
        if self.is_torus() {
            let [j1, j2] = torus_to_points(angles[0], angles[1], TORUS_S0, TORUS_S1);
            Pose::from_points(&[[0.0; 3], j1, j2]).expect("finite torus pose")
        } else {
            Pose::from_points(&[[0.0; 2], angle_to_point(angles[0], 1.0)]).expect("finite circle pose")
        }
    }

    /// Number of network inputs (non-root projected coordinates).
    pub fn input_dim(&self) -> usize {
        if self.is_torus() {
            4
        } else {
            1
        }
    }

    /// Default split sizes `(train, val, test)`.
    pub fn default_sizes(&self) -> SplitSizes {
        if self.is_torus() {
            SplitSizes { train: 20_000, val: 2_000, test: 2_000 }
        } else {
            SplitSizes { train: 1_000, val: 1_000, test: 1_000 }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }

    fn stream(&self) -> u64 {
        match self {
            SplitName::Train => 0,
            SplitName::Val => 1,
            SplitName::Test => 2,
        }
    }
}

/// Paired projected inputs and target poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Vec<Input2D>,
    pub targets: Vec<Pose>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Row-major network inputs, root excluded.
    pub fn input_matrix(&self) -> Vec<f64> {
        self.inputs
            .iter()
            .flat_map(|i| {
                let d = i.keypoints.dim();
                i.keypoints.coords()[d..].to_vec()
            })
            .collect()
    }

    pub fn target_sequence(&self) -> Result<PoseSequence> {
        PoseSequence::new(self.targets.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftingDataset {
    pub scenario: Scenario,
    pub seed: u64,
    pub train: Split,
    pub val: Split,
    pub test: Split,
}

impl LiftingDataset {
    pub fn split(&self, name: SplitName) -> &Split {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes { train: self.train.len(), val: self.val.len(), test: self.test.len() }
    }
}

fn sample_rng(seed: u64, split: SplitName, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split.stream() << 48) | index as u64);
    rng
}

/// Draws the angle tuples of one split.
pub fn sample_angles(scenario: Scenario, n: usize, seed: u64, split: SplitName) -> Vec<Vec<f64>> {
    let mix = scenario.mixture();
    (0..n)
        .into_par_iter()
        .map(|i| mix.sample(&mut sample_rng(seed, split, i)))
        .collect()
}

fn make_split(scenario: Scenario, n: usize, seed: u64, split: SplitName) -> Split {
    let targets: Vec<Pose> = sample_angles(scenario, n, seed, split)
        .iter()
        .map(|a| scenario.pose_from_angles(a))
        .collect();
    let inputs = targets
        .iter()
        .map(|p| project(p, DROPPED_AXIS).expect("projection of a valid pose"))
        .collect();
    Split { inputs, targets }
}

pub fn generate(scenario: Scenario, sizes: SplitSizes, seed: u64) -> Result<LiftingDataset> {
    scenario.verify()?;
    if sizes.train == 0 || sizes.val == 0 || sizes.test == 0 {
        return Err(Error::InvalidArgument("split sizes must be positive".into()));
    }
    Ok(LiftingDataset {
        scenario,
        seed,
        train: make_split(scenario, sizes.train, seed, SplitName::Train),
        val: make_split(scenario, sizes.val, seed, SplitName::Val),
        test: make_split(scenario, sizes.test, seed, SplitName::Test),
    })
}

/// CSV header for one split of `scenario` (root excluded).
pub fn csv_header(scenario: Scenario) -> Vec<String> {
    if scenario.is_torus() {
        ["k1_x", "k1_z", "k2_x", "k2_z", "j1_x", "j1_y", "j1_z", "j2_x", "j2_y", "j2_z"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        vec!["k1_x".into(), "j1_x".into(), "j1_y".into()]
    }
}

pub fn split_to_csv(scenario: Scenario, split: &Split) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(csv_header(scenario))?;
    for (i, t) in split.inputs.iter().zip(&split.targets) {
        let row: Vec<String> = i.keypoints.coords()[i.keypoints.dim()..]
            .iter()
            .chain(&t.coords()[t.dim()..])
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses a split written by [`split_to_csv`].
pub fn split_from_csv(scenario: Scenario, text: &str) -> Result<Split> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(|s| s.to_string()).collect();
    if header != csv_header(scenario) {
        return Err(Error::Parse(format!(
            "unexpected dataset header {header:?} for scenario {}",
            scenario.name()
        )));
    }
    let (in_d, out_d) = if scenario.is_torus() { (2, 3) } else { (1, 2) };
    let n_in = scenario.input_dim();
    let mut split = Split { inputs: Vec::new(), targets: Vec::new() };
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("row {row}: bad number {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut input = vec![0.0; in_d];
        input.extend_from_slice(&vals[..n_in]);
        let mut target = vec![0.0; out_d];
        target.extend_from_slice(&vals[n_in..]);
        split.inputs.push(Input2D { keypoints: Pose::new(in_d, input)? });
        split.targets.push(Pose::new(out_d, target)?);
    }
    if split.is_empty() {
        return Err(Error::Parse("dataset split has no rows".into()));
    }
    Ok(split)
}

/// Metadata written next to the CSV splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub scenario: Scenario,
    pub seed: u64,
    pub sizes: SplitSizes,
    pub mixture: MixtureSpec,
    pub mixture_checksum: String,
    pub sampler: String,
    pub rng: String,
}

impl DatasetSidecar {
    pub fn for_dataset(ds: &LiftingDataset) -> Self {
        let mixture = ds.scenario.mixture();
        DatasetSidecar {
            scenario: ds.scenario,
            seed: ds.seed,
            sizes: ds.sizes(),
            mixture_checksum: mixture.checksum(),
            mixture,
            sampler: "best-fisher".into(),
            rng: "chacha8/seed_from_u64(seed)/stream=(split<<48)|index".into(),
        }
    }
}

/// Writes `dataset.json`, `train.csv`, `val.csv` and `test.csv` into `dir`.
pub fn write_dataset(ds: &LiftingDataset, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let sidecar = serde_json::to_string_pretty(&DatasetSidecar::for_dataset(ds))?;
    std::fs::write(dir.join("dataset.json"), sidecar + "\n")?;
    for name in SplitName::ALL {
        let csv = split_to_csv(ds.scenario, ds.split(name))?;
        std::fs::write(dir.join(format!("{}.csv", name.as_str())), csv)?;
    }
    Ok(())
}

pub fn read_dataset(dir: &std::path::Path) -> Result<LiftingDataset> {
    let sidecar: DatasetSidecar =
        serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json"))?)?;
    let read = |name: SplitName| -> Result<Split> {
        let text = std::fs::read_to_string(dir.join(format!("{}.csv", name.as_str())))?;
        split_from_csv(sidecar.scenario, &text)
    };
    Ok(LiftingDataset {
        scenario: sidecar.scenario,
        seed: sidecar.seed,
        train: read(SplitName::Train)?,
        val: read(SplitName::Val)?,
        test: read(SplitName::Test)?,
    })
}

/// One preimage of an input on the task manifold, with its posterior weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preimage {
    pub angles: Vec<f64>,
    pub pose: Vec<f64>,
    pub weight: f64,
}

/// Conditional expectation of the (non-root) target given an input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub expectation: Vec<f64>,
    pub preimages: Vec<Preimage>,
    /// Set when a preimage sits where the projection is nearly singular and
    /// the density was integrated over a small angular window instead.
    pub grazing: bool,
}

fn normalize(preimages: &mut [Preimage]) -> Result<Vec<f64>> {
    let total: f64 = preimages.iter().map(|p| p.weight).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidArgument("input has zero posterior mass".into()));
    }
    let dim = preimages[0].pose.len();
    let mut e = vec![0.0; dim];
    for p in preimages.iter_mut() {
        p.weight /= total;
        for (acc, v) in e.iter_mut().zip(&p.pose) {
            *acc += p.weight * v;
        }
    }
    Ok(e)
}

/// `E[p | x]` for the task of `scenario`, computed from the manifold preimages
/// of `x` weighted by mixture density over the projection's area factor.
///
/// `x` holds the non-root projected coordinates (`[x]` or `[x1, z1, x2, z2]`).
/// `window` is the half-width of the angular window used for grazing inputs,
/// with `resolution` quadrature nodes.
pub fn conditional_expectation_oracle(
    scenario: Scenario,
    x: &[f64],
    window: f64,
    resolution: usize,
) -> Result<OracleResult> {
    crate::error::ensure_dim("oracle input", scenario.input_dim(), x.len())?;
    if scenario.is_torus() {
        torus_oracle(&scenario.mixture(), x)
    } else {
        circle_oracle(&scenario.mixture(), x[0], window, resolution)
    }
}

fn circle_oracle(mix: &MixtureSpec, x: f64, window: f64, resolution: usize) -> Result<OracleResult> {
    if !(x.is_finite() && (-1.0..=1.0).contains(&x)) {
        return Err(Error::InvalidArgument(format!("circle input {x} outside [-1, 1]")));
    }
    let theta = x.acos();
    if theta.sin() < GRAZING_SIN {
        // Both preimages merge at theta = 0 or pi: integrate over a window.
        let n = resolution.max(2);
        let mut pre: Vec<Preimage> = (0..n)
            .map(|i| {
                let a = theta - window + (2.0 * window) * (i as f64 + 0.5) / n as f64;
                let p = angle_to_point(a, 1.0);
                Preimage { angles: vec![wrap_angle(a)], pose: p.to_vec(), weight: mix.density(&[a]) }
            })
            .collect();
        let expectation = normalize(&mut pre)?;
        return Ok(OracleResult { expectation, preimages: pre, grazing: true });
    }
    let mut pre: Vec<Preimage> = [theta, -theta]
        .iter()
        .map(|&a| Preimage {
            angles: vec![a],
            pose: vec![x, a.sin()],
            weight: mix.density(&[a]) / a.sin().abs(),
        })
        .collect();
    let expectation = normalize(&mut pre)?;
    Ok(OracleResult { expectation, preimages: pre, grazing: false })
}

fn torus_oracle(mix: &MixtureSpec, k: &[f64]) -> Result<OracleResult> {
    let (s0, s1) = (TORUS_S0, TORUS_S1);
    let (x1, x2, z2) = (k[0], k[2], k[3]);
    if !(k.iter().all(|v| v.is_finite()) && x1.abs() <= s0 && z2.abs() <= s1) {
        return Err(Error::InvalidArgument("torus input outside the projected manifold".into()));
    }
    let cos_phi = x1 / s0;
    let phi = cos_phi.clamp(-1.0, 1.0).acos();
    if phi.sin() < GRAZING_SIN || cos_phi.abs() < GRAZING_SIN {
        return Err(Error::InvalidArgument(
            "torus input is on a fold of the projection; no finite posterior".into(),
        ));
    }
    // x2 = (s0 + s1 cos theta) cos phi and z2 = s1 sin theta fix theta.
    let cos_theta = (x2 / cos_phi - s0) / s1;
    let theta = (z2 / s1).atan2(cos_theta);
    let mut pre: Vec<Preimage> = [phi, -phi]
        .iter()
        .map(|&p| {
            let [j1, j2] = torus_to_points(theta, p, s0, s1);
            let jac = torus_jacobian(theta, p, s0, s1);
            // Area factor of (theta, phi) -> (x1, z1, x2, z2).
            let proj = |col: &[f64; 6]| [col[0], col[2], col[3], col[5]];
            let (a, b) = (proj(&jac[0]), proj(&jac[1]));
            let dot = |u: &[f64; 4], v: &[f64; 4]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
            let area = (dot(&a, &a) * dot(&b, &b) - dot(&a, &b).powi(2)).max(0.0).sqrt();
            Preimage {
                angles: vec![theta, p],
                pose: j1.iter().chain(&j2).copied().collect(),
                weight: mix.density(&[theta, p]) / area,
            }
        })
        .collect();
    let expectation = normalize(&mut pre)?;
    Ok(OracleResult { expectation, preimages: pre, grazing: false })
}

/// Monte-Carlo estimate of `E[p | x]` for a circle scenario: mean target
/// over samples whose input falls within `half_width` of each centre.
/// Returns `(estimate, count)` per centre.
pub fn monte_carlo_conditional(
    scenario: Scenario,
    centres: &[f64],
    half_width: f64,
    samples: usize,
    seed: u64,
) -> Vec<([f64; 2], usize)> {
    assert!(!scenario.is_torus(), "Monte-Carlo check is implemented for circle scenarios");
    let mix = scenario.mixture();
    const CHUNK: usize = 1 << 20;
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Vec<(f64, f64, usize)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut acc = vec![(0.0, 0.0, 0usize); centres.len()];
            for _ in 0..n {
                let a = mix.sample(&mut rng)[0];
                let (y, x) = a.sin_cos();
                for (slot, &c0) in acc.iter_mut().zip(centres) {
                    if (x - c0).abs() < half_width {
                        slot.0 += x;
                        slot.1 += y;
                        slot.2 += 1;
                    }
                }
            }
            acc
        })
        .collect();
    (0..centres.len())
        .map(|i| {
            let (sx, sy, n) = partial.iter().fold((0.0, 0.0, 0), |acc, p| {
                (acc.0 + p[i].0, acc.1 + p[i].1, acc.2 + p[i].2)
            });
            let n_f = n.max(1) as f64;
            ([sx / n_f, sy / n_f], n)
        })
        .collect()
}

/// Comparison of the conditional-expectation predictor with the best
/// single-valued on-manifold predictor on a fixed sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifoldGapReport {
    pub oracle_mse: f64,
    pub best_on_manifold_mse: f64,
    pub input_bins: usize,
    pub angle_grid: usize,
}

/// Fits, per input bin, the constant angle minimizing the squared error of the
/// samples in that bin (dense search over `angle_grid` angles), and compares
/// its MSE with the MSE of `E[p|x]` evaluated at each sample's own input.
/// The on-manifold predictor is fitted on the evaluation sample itself.
pub fn best_on_manifold_gap(
    scenario: Scenario,
    split: &Split,
    input_bins: usize,
    angle_grid: usize,
) -> Result<ManifoldGapReport> {
    if scenario.is_torus() {
        return Err(Error::InvalidArgument("manifold gap search is implemented for circle scenarios".into()));
    }
    let n = split.len() as f64;
    let mut oracle_se = 0.0;
    let mut bins: Vec<Vec<[f64; 2]>> = vec![Vec::new(); input_bins];
    for (i, t) in split.inputs.iter().zip(&split.targets) {
        let x = i.keypoints.joint(1)[0];
        let target = [t.joint(1)[0], t.joint(1)[1]];
        let e = conditional_expectation_oracle(scenario, &[x], 1e-3, 64)?.expectation;
        oracle_se += (e[0] - target[0]).powi(2) + (e[1] - target[1]).powi(2);
        let b = (((x + 1.0) / 2.0 * input_bins as f64) as usize).min(input_bins - 1);
        bins[b].push(target);
    }
    let grid: Vec<[f64; 2]> = (0..angle_grid)
        .map(|g| angle_to_point(-PI + 2.0 * PI * g as f64 / angle_grid as f64, 1.0))
        .collect();
    let manifold_se: f64 = bins
        .par_iter()
        .filter(|b| !b.is_empty())
        .map(|b| {
            grid.iter()
                .map(|q| {
                    b.iter()
                        .map(|t| (q[0] - t[0]).powi(2) + (q[1] - t[1]).powi(2))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(ManifoldGapReport {
        oracle_mse: oracle_se / n,
        best_on_manifold_mse: manifold_se / n,
        input_bins,
        angle_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinned_checksums_hold() {
        for s in Scenario::ALL {
            s.verify().unwrap();
        }
    }

    #[test]
    fn concentrated_samples_stay_at_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let a = sample_von_mises(0.7, 1e6, &mut rng);
            assert!((a - 0.7).abs() < 0.01);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let n = 20_000;
        let h = 2.0 * PI / n as f64;
        let total: f64 = (0..n)
            .map(|i| von_mises_density(-PI + (i as f64 + 0.5) * h, 0.3, 20.0) * h)
            .sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn circle_targets_on_manifold() {
        let ds = generate(Scenario::C, SplitSizes { train: 200, val: 10, test: 10 }, 3).unwrap();
        for (i, t) in ds.train.inputs.iter().zip(&ds.train.targets) {
            let p = t.joint(1);
            assert!((p[0] * p[0] + p[1] * p[1] - 1.0).abs() < 1e-12);
            assert_eq!(i.keypoints.joint(1), &[p[0]]);
        }
    }

    #[test]
    fn torus_targets_on_manifold() {
        let ds = generate(Scenario::Torus, SplitSizes { train: 200, val: 10, test: 10 }, 3).unwrap();
        for t in &ds.train.targets {
            let (j1, j2) = (t.joint(1), t.joint(2));
            let n1 = j1.iter().map(|v| v * v).sum::<f64>().sqrt();
            let n12 = j1.iter().zip(j2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((n1 - 2.0).abs() < 1e-12 && (n12 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let s = SplitSizes { train: 50, val: 5, test: 5 };
        assert_eq!(generate(Scenario::A, s, 9).unwrap(), generate(Scenario::A, s, 9).unwrap());
        assert_ne!(generate(Scenario::A, s, 9).unwrap(), generate(Scenario::A, s, 10).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        for sc in [Scenario::B, Scenario::Torus] {
            let ds = generate(sc, SplitSizes { train: 20, val: 2, test: 2 }, 5).unwrap();
            let text = split_to_csv(sc, &ds.train).unwrap();
            assert_eq!(split_from_csv(sc, &text).unwrap(), ds.train);
        }
        assert!(split_from_csv(Scenario::C, "a,b\n1,2\n").is_err());
    }

    #[test]
    fn unimodal_oracle_is_on_manifold() {
        // Scenario A has essentially no mass near -2pi/5.
        let x = (2.0 * PI / 5.0).cos();
        let r = conditional_expectation_oracle(Scenario::A, &[x], 1e-3, 64).unwrap();
        let norm = r.expectation.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grazing_input_is_flagged() {
        let r = conditional_expectation_oracle(Scenario::B, &[1.0], 1e-3, 64).unwrap();
        assert!(r.grazing);
        assert!((r.expectation[0] - 1.0).abs() < 1e-6 && r.expectation[1].abs() < 1e-9);
    }

    #[test]
    fn torus_oracle_recovers_both_preimages() {
        let pose = Scenario::Torus.pose_from_angles(&[0.4, 0.9]);
        let k = project(&pose, DROPPED_AXIS).unwrap();
        let x = &k.keypoints.coords()[2..];
        let r = conditional_expectation_oracle(Scenario::Torus, x, 0.0, 0).unwrap();
        assert_eq!(r.preimages.len(), 2);
        assert!((r.preimages[0].angles[0] - 0.4).abs() < 1e-12);
        assert!((r.preimages[0].angles[1] - 0.9).abs() < 1e-12);
        assert!((r.preimages[1].angles[1] + 0.9).abs() < 1e-12);
    }
}
