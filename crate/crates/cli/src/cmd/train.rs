use std::path::PathBuf;

use advcover::bounds::{bound_report, BoundInputs, BoundReport};
use advcover::data::Dataset;
use advcover::linalg::Exponent;
use advcover::network::{ActivationKind, LossSpec, Network};
use advcover::rng::StreamKey;
use advcover::trainer::{
    adversarial_train, error_rate, make_dataset, robust_risk_eval, DatasetKind, DatasetSpec, EvalAttack, RiskReport,
    TrainConfig, TrainObjective,
};
use anyhow::{bail, Result};
use clap::{ArgMatches, Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::{ball, parse_exponent, scaled_attack};
use crate::formats::{dataset_csv, load_dataset, load_network, network_json, write_atomic};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetChoice {
    Blobs,
    Moons,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveChoice {
    CrossEntropy,
    Hinge,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    /// Hidden rows in ± pairs, so no input starts with a dead hidden layer.
    Symmetric,
    /// Independent Gaussian entries.
    Gaussian,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    /// JSON config file instead of flags.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Training CSV; with --test-data replaces the generated dataset.
    #[arg(long, value_name = "FILE", requires = "test_data")]
    pub train_data: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "train_data")]
    pub test_data: Option<PathBuf>,
    /// Generated dataset family.
    #[arg(long, value_enum, default_value_t = DatasetChoice::Blobs)]
    pub dataset: DatasetChoice,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    /// Blob standard deviation.
    #[arg(long, default_value_t = 0.3)]
    pub spread: f64,
    /// Moons noise.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 200)]
    pub n_test: usize,
    /// Largest input norm after rescaling.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Hidden layer widths, comma-separated (ReLU; the output layer is linear).
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = InitChoice::Symmetric)]
    pub init: InitChoice,
    /// Entry standard deviation times √fan_in.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub init_seed: u64,
    /// Start from this network instead of a random one.
    #[arg(long, value_name = "FILE")]
    pub init_network: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, value_enum, default_value_t = ObjectiveChoice::CrossEntropy)]
    pub objective: ObjectiveChoice,
    #[arg(long, default_value_t = 1.0)]
    pub hinge_margin: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train on PGD examples from the evaluation ball.
    #[arg(long)]
    pub adversarial: bool,
    #[arg(long, default_value_t = 10)]
    pub train_attack_steps: usize,
    #[arg(long, default_value_t = 1)]
    pub train_attack_restarts: usize,
    #[arg(long, default_value = "inf", value_parser = parse_exponent)]
    pub p: Exponent,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ramp-loss margin used for evaluation, the bound and the training attack.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 40)]
    pub eval_attack_steps: usize,
    #[arg(long, default_value_t = 5)]
    pub eval_attack_restarts: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Report path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Where to write the trained network.
    #[arg(long, value_name = "FILE")]
    pub out_network: Option<PathBuf>,
    /// Where to write the training and test sets as CSV.
    #[arg(long, value_name = "FILE")]
    pub out_train_data: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out_test_data: Option<PathBuf>,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        crate::flag_defaults()
    }
}

#[derive(Serialize)]
struct TrainResult {
    n_train: usize,
    n_test: usize,
    /// Input norm bound used by the bound.
    b: f64,
    epoch_objective: Vec<f64>,
    train: RiskReport,
    test: RiskReport,
    train_error: f64,
    test_error: f64,
    /// Test robust risk minus train robust risk.
    robust_gap: f64,
    bound: BoundReport,
    bound_value: f64,
    /// `bound_value / robust_gap` (null when the gap is not positive).
    bound_over_gap: Option<f64>,
    within_bound: bool,
}

fn datasets(cfg: &TrainCmdConfig) -> Result<(Dataset, Dataset, f64)> {
    if let (Some(tr), Some(te)) = (&cfg.train_data, &cfg.test_data) {
        let (train, test) = (load_dataset(tr)?, load_dataset(te)?);
        if train.dim() != test.dim() {
            bail!("train and test dimensions differ");
        }
        let b = train.max_norm().max(test.max_norm());
        return Ok((train, test, b));
    }
    let kind = match cfg.dataset {
        DatasetChoice::Blobs => DatasetKind::GaussianBlobs {
            classes: cfg.classes,
            spread: cfg.spread,
        },
        DatasetChoice::Moons => DatasetKind::TwoMoons { noise: cfg.noise },
    };
    let spec = DatasetSpec {
        kind,
        d: cfg.d,
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        b: cfg.b,
        seed: cfg.data_seed,
    };
    let (train, test) = make_dataset(&spec)?;
    Ok((train, test, cfg.b))
}

pub fn run(flags: TrainCmdConfig, m: &ArgMatches) -> Result<()> {
    let cfg = crate::resolve(flags.clone(), flags.config.as_ref(), m)?;
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        bail!("delta must lie in (0, 1), got {}", cfg.delta);
    }
    let ball = ball(cfg.p, cfg.eps)?;
    let loss = LossSpec::ramp(cfg.gamma)?;
    let (train, test, b) = datasets(&cfg)?;
    let classes = train.num_classes().max(test.num_classes()).max(2);
    let init = match &cfg.init_network {
        Some(p) => load_network(p)?,
        None => {
            if cfg.hidden.contains(&0) {
                bail!("hidden widths must be >= 1");
            }
            let widths: Vec<usize> = std::iter::once(train.dim()).chain(cfg.hidden.iter().copied()).chain([classes]).collect();
            let mut acts = vec![ActivationKind::Relu; cfg.hidden.len()];
            acts.push(ActivationKind::Identity);
            let key = StreamKey::new(cfg.init_seed);
            match cfg.init {
                InitChoice::Symmetric => Network::random_symmetric(&widths, &acts, cfg.init_scale, key)?,
                InitChoice::Gaussian => Network::random(&widths, &acts, cfg.init_scale, key)?,
            }
        }
    };
    if init.input_dim() != train.dim() || init.output_dim() < classes {
        bail!("network shape does not fit the data");
    }
    let objective = match cfg.objective {
        ObjectiveChoice::CrossEntropy => TrainObjective::CrossEntropy,
        ObjectiveChoice::Hinge => TrainObjective::Hinge { margin: cfg.hinge_margin },
    };
    let train_attack = scaled_attack(cfg.eps, cfg.train_attack_steps, cfg.train_attack_restarts, StreamKey::new(cfg.seed).derive("train_attack", 0).seed());
    let outcome = adversarial_train(
        &init,
        &train,
        &TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            objective,
            attack: cfg.adversarial.then_some((ball, train_attack)),
            attack_gamma: cfg.gamma,
            seed: cfg.seed,
        },
    )?;
    let net = outcome.net;
    let eval = EvalAttack::Pgd(scaled_attack(cfg.eps, cfg.eval_attack_steps, cfg.eval_attack_restarts, StreamKey::new(cfg.seed).derive("eval_attack", 0).seed()));
    let train_risk = robust_risk_eval(&net, &train, ball, eval, &loss)?;
    let test_risk = robust_risk_eval(&net, &test, ball, eval, &loss)?;
    let bound = bound_report(
        &net,
        &loss,
        BoundInputs {
            b,
            n: train.len(),
            ball,
            delta: cfg.delta,
            c1: 1.0,
            c2: 1.0,
        },
    )?;
    let robust_gap = test_risk.robust_risk - train_risk.robust_risk;
    let bound_value = bound.main.value;
    let result = TrainResult {
        n_train: train.len(),
        n_test: test.len(),
        b,
        epoch_objective: outcome.epoch_objective,
        train_error: error_rate(&net, &train)?,
        test_error: error_rate(&net, &test)?,
        train: train_risk,
        test: test_risk,
        robust_gap,
        bound,
        bound_value,
        bound_over_gap: (robust_gap > 0.0).then(|| bound_value / robust_gap),
        within_bound: robust_gap <= bound_value,
    };
    if let Some(p) = &cfg.out_network {
        write_atomic(p, &network_json(&net)?)?;
    }
    if let Some(p) = &cfg.out_train_data {
        write_atomic(p, &dataset_csv(&train))?;
    }
    if let Some(p) = &cfg.out_test_data {
        write_atomic(p, &dataset_csv(&test))?;
    }
    crate::finish("train", &cfg, cfg.out.as_deref(), result.within_bound, &result, || {
        format!("robust gap {robust_gap} exceeds the bound {bound_value}")
    })
}
