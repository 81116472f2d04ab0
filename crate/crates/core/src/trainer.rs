//! Toy datasets, plain-SGD (adversarial) training and clean/robust risk.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{fgsm_attack, pgd_attack, AttackConfig, BallSpec};
use crate::data::{Dataset, Sample};
use crate::error::{invalid, Error, Result};
use crate::linalg::{norm2, Matrix};
use crate::network::{backprop, loss_value, LossSpec, Network};
use crate::par;
use crate::rng::StreamKey;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Class `c` centered at a unit vector (centers evenly spaced in angle on
    /// a random circle), isotropic noise `spread`. Labels are assigned
    /// round-robin.
    GaussianBlobs { classes: usize, spread: f64 },
    /// Two interleaved half circles in the first two coordinates, Gaussian
    /// noise on every coordinate.
    TwoMoons { noise: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub d: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// After generation every point is rescaled by one common factor so that
    /// the largest norm over train and test is `b`.
    pub b: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(invalid("dataset needs d, n_train, n_test >= 1"));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(invalid("norm bound B must be positive"));
        }
        match self.kind {
            DatasetKind::GaussianBlobs { classes, spread } => {
                if classes < 2 || !(spread >= 0.0 && spread.is_finite()) {
                    return Err(invalid("blobs need >= 2 classes and spread >= 0"));
                }
            }
            DatasetKind::TwoMoons { noise } => {
                if self.d < 2 || !(noise >= 0.0 && noise.is_finite()) {
                    return Err(invalid("two moons need d >= 2 and noise >= 0"));
                }
            }
        }
        Ok(())
    }
}

/// Unit-norm centers evenly spaced in angle on a random great circle, so
/// classes differ in direction; bias-free networks only see directions. For
/// `d = 1` the centers alternate between +1 and −1.
fn blob_centers(classes: usize, d: usize, key: StreamKey) -> Vec<Vec<f64>> {
    if d == 1 {
        return (0..classes).map(|j| vec![if j % 2 == 0 { 1.0 } else { -1.0 }]).collect();
    }
    let mut s = key.stream();
    let (u, v) = loop {
        let u = s.gaussian_vec(d);
        let nu = norm2(&u);
        let mut v = s.gaussian_vec(d);
        let along = crate::linalg::dot(&u, &v) / (nu * nu);
        v.iter_mut().zip(&u).for_each(|(a, b)| *a -= along * b);
        let nv = norm2(&v);
        if nu > 1e-6 && nv > 1e-6 {
            break (u.iter().map(|x| x / nu).collect::<Vec<_>>(), v.iter().map(|x| x / nv).collect::<Vec<_>>());
        }
    };
    (0..classes)
        .map(|j| {
            let t = 2.0 * std::f64::consts::PI * j as f64 / classes as f64;
            u.iter().zip(&v).map(|(a, b)| t.cos() * a + t.sin() * b).collect()
        })
        .collect()
}

/// Deterministic `(train, test)` split.
pub fn make_dataset(spec: &DatasetSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let key = StreamKey::new(spec.seed);
    let total = spec.n_train + spec.n_test;
    let mut points: Vec<Sample> = match spec.kind {
        DatasetKind::GaussianBlobs { classes, spread } => {
            let centers = blob_centers(classes, spec.d, key.derive("centers", 0));
            let mut s = key.derive("points", 0).stream();
            (0..total)
                .map(|i| {
                    let y = i % classes;
                    let x = centers[y].iter().map(|c| c + spread * s.next_gaussian()).collect();
                    Sample { x, y }
                })
                .collect()
        }
        DatasetKind::TwoMoons { noise } => {
            let mut s = key.derive("points", 0).stream();
            (0..total)
                .map(|i| {
                    let y = i % 2;
                    let t = std::f64::consts::PI * s.next_uniform();
                    let (cx, cy) = if y == 0 { (t.cos(), t.sin()) } else { (1.0 - t.cos(), 0.5 - t.sin()) };
                    let mut x = vec![0.0; spec.d];
                    x[0] = cx;
                    x[1] = cy;
                    x.iter_mut().for_each(|v| *v += noise * s.next_gaussian());
                    Sample { x, y }
                })
                .collect()
        }
    };
    // shuffle before splitting so both halves see every class
    points.shuffle(&mut key.derive("split", 0).stream());
    let max = points.iter().map(|p| norm2(&p.x)).fold(0.0, f64::max);
    if max > 0.0 {
        let scale = spec.b / max;
        for p in points.iter_mut() {
            p.x.iter_mut().for_each(|v| *v *= scale);
            while norm2(&p.x) > spec.b {
                p.x.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
            }
        }
    }
    let test = points.split_off(spec.n_train);
    Ok((Dataset::new(points)?, Dataset::new(test)?))
}

/// Differentiable training objective on the logits. The ramp loss itself is
/// flat almost everywhere, so training descends a surrogate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainObjective {
    CrossEntropy,
    /// `max(0, margin − M(z, y))`.
    Hinge { margin: f64 },
}

impl TrainObjective {
    pub fn value_and_grad(self, z: &[f64], y: usize) -> (f64, Vec<f64>) {
        match self {
            TrainObjective::CrossEntropy => {
                let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
                let sum: f64 = exps.iter().sum();
                let value = sum.ln() + zmax - z[y];
                let grad = exps
                    .iter()
                    .enumerate()
                    .map(|(j, e)| e / sum - if j == y { 1.0 } else { 0.0 })
                    .collect();
                (value, grad)
            }
            TrainObjective::Hinge { margin } => {
                let m = crate::network::margin(z, y);
                if m >= margin {
                    (0.0, vec![0.0; z.len()])
                } else {
                    let g = crate::network::margin_grad(z, y);
                    (margin - m, g.iter().map(|v| -v).collect())
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub objective: TrainObjective,
    /// PGD adversarial training when present, clean SGD otherwise.
    pub attack: Option<(BallSpec, AttackConfig)>,
    /// Loss the PGD inner loop ascends.
    pub attack_gamma: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid("epochs and batch size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be finite and >= 0"));
        }
        if !(self.attack_gamma > 0.0) {
            return Err(invalid("attack gamma must be positive"));
        }
        if let TrainObjective::Hinge { margin } = self.objective {
            if !(margin > 0.0) {
                return Err(invalid("hinge margin must be positive"));
            }
        }
        if let Some((ball, cfg)) = &self.attack {
            ball.p.require_two_or_inf()?;
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: Network,
    /// Mean objective over each epoch (at the attacked points under PGD-AT).
    pub epoch_objective: Vec<f64>,
}

/// Per-sample PGD seed: the configured seed, the epoch and the sample index.
fn attack_seed(cfg: &AttackConfig, epoch: usize, i: usize) -> u64 {
    StreamKey::new(cfg.seed)
        .derive("epoch", epoch as u64)
        .derive("point", i as u64)
        .seed()
}

/// Plain constant-step SGD on the surrogate objective; under PGD-AT the
/// objective is taken at PGD points, which are treated as constants for the
/// weight gradient. Batches are drawn from a per-epoch shuffle.
pub fn adversarial_train(net: &Network, train: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "training data dimension",
            expected: net.input_dim(),
            actual: train.dim(),
        });
    }
    if train.num_classes() > net.output_dim() {
        return Err(invalid("labels exceed network outputs"));
    }
    let key = StreamKey::new(cfg.seed);
    let attack_loss = LossSpec::ramp(cfg.attack_gamma)?;
    let samples = train.samples();
    let mut net = net.clone();
    let mut epoch_objective = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut key.derive("epoch", epoch as u64).stream());
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let current = &net;
            let parts = par::try_map_indexed(batch.len(), |b| -> Result<(f64, Vec<Matrix>)> {
                let i = batch[b];
                let s = &samples[i];
                let x = match &cfg.attack {
                    Some((ball, acfg)) if ball.eps > 0.0 => {
                        let acfg = AttackConfig {
                            seed: attack_seed(acfg, epoch, i),
                            ..*acfg
                        };
                        pgd_attack(current, &s.x, s.y, &ball.around(&s.x), &attack_loss, &acfg)?.x_adv
                    }
                    _ => s.x.clone(),
                };
                let bp = backprop(current, &x, |z| cfg.objective.value_and_grad(z, s.y), true)?;
                Ok((bp.value, bp.weight_grads.expect("requested")))
            })?;
            let scale = cfg.learning_rate / batch.len() as f64;
            let mut ws = net.weights();
            for (value, grads) in &parts {
                total += value;
                for (w, g) in ws.iter_mut().zip(grads) {
                    for (a, b) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *a -= scale * b;
                    }
                }
            }
            if !total.is_finite() || ws.iter().any(|w| w.as_slice().iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { epoch });
            }
            net = net.with_weights(ws).map_err(|_| Error::Diverged { epoch })?;
        }
        epoch_objective.push(total / samples.len() as f64);
    }
    Ok(TrainOutcome { net, epoch_objective })
}

/// Inner maximizer used for robust risk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EvalAttack {
    Pgd(AttackConfig),
    Fgsm,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiskReport {
    pub clean_risk: f64,
    pub robust_risk: f64,
    pub n: usize,
}

/// Empirical means of `loss(f(x), y)` and of the attacked loss.
pub fn robust_risk_eval(net: &Network, data: &Dataset, ball: BallSpec, attack: EvalAttack, loss: &LossSpec) -> Result<RiskReport> {
    let samples = data.samples();
    let rows = par::try_map_indexed(samples.len(), |i| -> Result<(f64, f64)> {
        let s = &samples[i];
        let clean = loss_value(net, &s.x, s.y, loss)?;
        let pset = ball.around(&s.x);
        let robust = match attack {
            EvalAttack::Pgd(cfg) => {
                let cfg = AttackConfig {
                    seed: StreamKey::new(cfg.seed).derive("point", i as u64).seed(),
                    ..cfg
                };
                pgd_attack(net, &s.x, s.y, &pset, loss, &cfg)?.loss
            }
            EvalAttack::Fgsm => fgsm_attack(net, &s.x, s.y, &pset, loss)?.loss,
        };
        Ok((clean, robust))
    })?;
    let n = rows.len() as f64;
    Ok(RiskReport {
        clean_risk: rows.iter().map(|r| r.0).sum::<f64>() / n,
        robust_risk: rows.iter().map(|r| r.1).sum::<f64>() / n,
        n: rows.len(),
    })
}

/// Fraction of points whose argmax logit is not the label (ties count as
/// errors).
pub fn error_rate(net: &Network, data: &Dataset) -> Result<f64> {
    let mut wrong = 0usize;
    for s in data.samples() {
        let z = net.forward(&s.x)?;
        if crate::network::margin(&z, s.y) <= 0.0 {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Exponent;
    use crate::network::ActivationKind;

    fn blobs(spread: f64, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::GaussianBlobs { classes: 3, spread },
            d: 2,
            n_train: 61,
            n_test: 30,
            b: 2.0,
            seed,
        }
    }

    fn small_net(seed: u64, classes: usize) -> Network {
        Network::random(&[2, 8, classes], &[ActivationKind::Relu, ActivationKind::Identity], 1.0, StreamKey::new(seed)).unwrap()
    }

    #[test]
    fn zero_spread_blobs_have_no_within_class_variance() {
        let (train, test) = make_dataset(&blobs(0.0, 3)).unwrap();
        for c in 0..3 {
            let pts: Vec<&Sample> = train.samples().iter().chain(test.samples()).filter(|s| s.y == c).collect();
            assert!(pts.windows(2).all(|w| w[0].x == w[1].x));
        }
    }

    #[test]
    fn rescale_hits_b_and_classes_are_balanced() {
        for spec in [
            blobs(0.4, 1),
            DatasetSpec {
                kind: DatasetKind::TwoMoons { noise: 0.1 },
                d: 3,
                ..blobs(0.0, 2)
            },
        ] {
            let (train, test) = make_dataset(&spec).unwrap();
            let max = train.max_norm().max(test.max_norm());
            assert!(max <= spec.b && max >= spec.b * (1.0 - 1e-12));
            let classes = train.num_classes().max(test.num_classes());
            let total = spec.n_train + spec.n_test;
            for c in 0..classes {
                let count = train.samples().iter().chain(test.samples()).filter(|s| s.y == c).count();
                assert!((count as f64 - total as f64 / classes as f64).abs() <= 1.0);
            }
        }
        assert_eq!(make_dataset(&blobs(0.4, 1)).unwrap(), make_dataset(&blobs(0.4, 1)).unwrap());
    }

    fn clean_cfg(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 16,
            learning_rate: lr,
            objective: TrainObjective::CrossEntropy,
            attack: None,
            attack_gamma: 1.0,
            seed: 5,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let (train, _) = make_dataset(&blobs(0.3, 4)).unwrap();
        let net = small_net(1, 3);
        let out = adversarial_train(&net, &train, &clean_cfg(0.0, 3)).unwrap();
        assert_eq!(out.net, net);
    }

    /// Whether `argmax_c ⟨u_c, x⟩`, `u_c` the unit class-mean directions,
    /// labels every point correctly. The networks have no biases, so this
    /// homogeneous linear rule is the relevant notion of separability.
    fn homogeneously_separable(data: &Dataset) -> bool {
        let k = data.num_classes();
        let dirs: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let mut m = vec![0.0; data.dim()];
                for s in data.samples().iter().filter(|s| s.y == c) {
                    m.iter_mut().zip(&s.x).for_each(|(a, b)| *a += b);
                }
                let n = norm2(&m);
                m.iter().map(|v| v / n).collect()
            })
            .collect();
        data.samples().iter().all(|s| {
            let scores: Vec<f64> = dirs.iter().map(|u| crate::linalg::dot(u, &s.x)).collect();
            (0..k).all(|c| c == s.y || scores[c] < scores[s.y])
        })
    }

    #[test]
    fn separable_blobs_reach_zero_training_error() {
        let mut checked = 0;
        for seed in 0..20 {
            let (train, _) = make_dataset(&blobs(0.1, seed)).unwrap();
            if !homogeneously_separable(&train) {
                continue;
            }
            checked += 1;
            let net = Network::random_symmetric(&[2, 8, 3], &[ActivationKind::Relu, ActivationKind::Identity], 1.0, StreamKey::new(seed)).unwrap();
            let out = adversarial_train(&net, &train, &clean_cfg(0.5, 200)).unwrap();
            assert_eq!(error_rate(&out.net, &train).unwrap(), 0.0, "seed {seed}");
        }
        assert!(checked >= 5);
        let (train, _) = make_dataset(&blobs(0.1, 1)).unwrap();
        let a = adversarial_train(&small_net(2, 3), &train, &clean_cfg(0.5, 20)).unwrap();
        let b = adversarial_train(&small_net(2, 3), &train, &clean_cfg(0.5, 20)).unwrap();
        assert_eq!(a.net, b.net);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (train, _) = make_dataset(&blobs(0.3, 4)).unwrap();
        let cfg = TrainConfig {
            objective: TrainObjective::Hinge { margin: 1.0 },
            ..clean_cfg(1e308, 5)
        };
        match adversarial_train(&small_net(3, 3), &train, &cfg) {
            Err(Error::Diverged { epoch }) => assert!(epoch < 5),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let z = [0.3, -1.2, 2.0];
        let (_, g) = TrainObjective::CrossEntropy.value_and_grad(&z, 1);
        for j in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            let fd = (TrainObjective::CrossEntropy.value_and_grad(&zp, 1).0 - TrainObjective::CrossEntropy.value_and_grad(&zm, 1).0) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn risk_eval_examples() {
        let (train, _) = make_dataset(&blobs(0.2, 8)).unwrap();
        let net = adversarial_train(&small_net(4, 3), &train, &clean_cfg(0.5, 50)).unwrap().net;
        let loss = LossSpec::ramp(0.5).unwrap();
        let zero = BallSpec::new(Exponent::INF, 0.0).unwrap();
        let r = robust_risk_eval(&net, &train, zero, EvalAttack::Pgd(AttackConfig::default_for(0.0, 1)), &loss).unwrap();
        assert_eq!(r.clean_risk, r.robust_risk);
        let ball = BallSpec::new(Exponent::INF, 0.15).unwrap();
        let pgd = robust_risk_eval(&net, &train, ball, EvalAttack::Pgd(AttackConfig::default_for(0.15, 1)), &loss).unwrap();
        let fgsm = robust_risk_eval(&net, &train, ball, EvalAttack::Fgsm, &loss).unwrap();
        assert!(pgd.robust_risk >= pgd.clean_risk);
        assert!(pgd.robust_risk >= fgsm.robust_risk - 1e-9, "{pgd:?} {fgsm:?}");
        for v in [pgd.clean_risk, pgd.robust_risk, fgsm.robust_risk] {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn large_margin_net_has_zero_risk() {
        // two classes split by the sign of x_0, scores ±100 x_0, points away from 0
        let w = Matrix::from_rows(&[vec![-100.0, 0.0], vec![100.0, 0.0]]).unwrap();
        let net = Network::new(vec![crate::network::Layer {
            weights: w,
            activation: crate::network::Activation::new(ActivationKind::Identity),
        }])
        .unwrap();
        let data = Dataset::new(vec![
            Sample { x: vec![1.0, 0.3], y: 1 },
            Sample { x: vec![-1.0, -0.5], y: 0 },
        ])
        .unwrap();
        let ball = BallSpec::new(Exponent::TWO, 0.1).unwrap();
        let r = robust_risk_eval(&net, &data, ball, EvalAttack::Pgd(AttackConfig::default_for(0.1, 2)), &LossSpec::ramp(1.0).unwrap()).unwrap();
        assert_eq!((r.clean_risk, r.robust_risk), (0.0, 0.0));
    }

    #[test]
    fn pgd_training_lowers_robust_train_loss() {
        let spec = DatasetSpec {
            n_train: 80,
            ..blobs(0.35, 11)
        };
        let (train, _) = make_dataset(&spec).unwrap();
        let ball = BallSpec::new(Exponent::INF, 0.3).unwrap();
        let loss = LossSpec::ramp(1.0).unwrap();
        let eval = EvalAttack::Pgd(AttackConfig::default_for(0.3, 99));
        let mut wins = 0;
        let seeds = 10;
        for seed in 0..seeds {
            let base = Network::random_symmetric(&[2, 8, 3], &[ActivationKind::Relu, ActivationKind::Identity], 1.0, StreamKey::new(20 + seed)).unwrap();
            let clean = adversarial_train(&base, &train, &clean_cfg(0.3, 150)).unwrap().net;
            let at_cfg = TrainConfig {
                attack: Some((ball, AttackConfig { steps: 10, step_size: 0.075, restarts: 1, seed })),
                ..clean_cfg(0.3, 150)
            };
            let robust = adversarial_train(&base, &train, &at_cfg).unwrap().net;
            let rc = robust_risk_eval(&clean, &train, ball, eval, &loss).unwrap().robust_risk;
            let ra = robust_risk_eval(&robust, &train, ball, eval, &loss).unwrap().robust_risk;
            if ra < rc {
                wins += 1;
            }
        }
        assert!(wins as f64 >= 0.9 * seeds as f64, "{wins}/{seeds}");
    }
}
