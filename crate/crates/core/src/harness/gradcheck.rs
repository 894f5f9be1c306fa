//! Central finite-difference checks of the analytic gradients.
//!
//! Relative error is `|analytic - numeric| / max(|analytic|, |numeric|,
//! GRAD_CHECK_FLOOR)`; the floor keeps derivatives that are zero up to
//! rounding from dominating.

use rand::Rng;

use crate::distcore::{qr_loss_and_grad, HuberConfig, QuantileLevels};
use crate::nnkit::{Activation, DenseNet, Layer};
use crate::rng::seeded;
use crate::{Result, SeededRng};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;
/// Finite-difference step for network parameters and inputs.
pub const NET_FD_STEP: f64 = 1e-5;
/// Finite-difference step for the QR loss.
pub const LOSS_FD_STEP: f64 = 1e-6;
/// Residuals and relu pre-activations closer than this to a kink are
/// resampled.
pub const KINK_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub cases: usize,
    /// Individual derivatives compared.
    pub derivatives: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.derivatives += 1;
        self.max_rel_error = self.max_rel_error.max(err);
        if !(err < GRAD_CHECK_TOLERANCE) {
            self.failures += 1;
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

fn uniform(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..=2.0)).collect()
}

/// A random three-layer net (dims 1..=8) with every layer using `act`, an
/// input and an output gradient, all drawn from `[-2, 2]`. For relu, draws
/// with a pre-activation within [`KINK_MARGIN`] of zero are rejected.
fn random_case(act: Activation, rng: &mut SeededRng) -> Result<(DenseNet, Vec<f64>, Vec<f64>)> {
    loop {
        let dims: Vec<usize> = (0..4).map(|_| rng.random_range(1..=8)).collect();
        let layers = dims
            .windows(2)
            .map(|d| Layer::new(uniform(rng, d[0] * d[1]), uniform(rng, d[1]), d[0], act))
            .collect::<Result<Vec<_>>>()?;
        let net = DenseNet::from_layers(layers)?;
        let input = uniform(rng, dims[0]);
        let out_grad = uniform(rng, dims[3]);
        if act == Activation::Relu && !relu_clear(&net, &input)? {
            continue;
        }
        return Ok((net, input, out_grad));
    }
}

fn relu_clear(net: &DenseNet, input: &[f64]) -> Result<bool> {
    let mut x = input.to_vec();
    for layer in net.layers() {
        let single = DenseNet::from_layers(vec![Layer::new(layer.weights.clone(), layer.bias.clone(), layer.in_dim, Activation::Identity)?])?;
        let z = single.predict(&x)?;
        if z.iter().any(|v| v.abs() < KINK_MARGIN) {
            return Ok(false);
        }
        x = z.iter().map(|v| v.max(0.0)).collect();
    }
    Ok(true)
}

fn objective(net: &DenseNet, input: &[f64], out_grad: &[f64]) -> Result<f64> {
    Ok(net.predict(input)?.iter().zip(out_grad).map(|(y, g)| y * g).sum())
}

/// Compares `backward` against central differences for every parameter and
/// every input coordinate over `cases` random networks.
pub fn densenet_grad_check(act: Activation, cases: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded(seed);
    let mut report = GradCheckReport {
        name: format!("densenet-{act:?}").to_lowercase(),
        cases,
        derivatives: 0,
        max_rel_error: 0.0,
        failures: 0,
    };
    let h = NET_FD_STEP;
    for _ in 0..cases {
        let (net, input, out_grad) = random_case(act, &mut rng)?;
        let trace = net.trace(&input)?;
        let (grads, input_grad) = net.backward(&trace, &out_grad)?;
        let analytic: Vec<f64> = grads.iter().copied().collect();
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = net.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = net.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            let numeric = (objective(&plus, &input, &out_grad)? - objective(&minus, &input, &out_grad)?) / (2.0 * h);
            report.record(a, numeric);
        }
        for (k, &a) in input_grad.iter().enumerate() {
            let mut plus = input.clone();
            plus[k] += h;
            let mut minus = input.clone();
            minus[k] -= h;
            let numeric = (objective(&net, &plus, &out_grad)? - objective(&net, &minus, &out_grad)?) / (2.0 * h);
            report.record(a, numeric);
        }
    }
    Ok(report)
}

/// Compares the QR-loss gradient against central differences over random
/// `(pred, targets, N, kappa)` draws away from kinks.
pub fn qr_loss_grad_check(cases: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded(seed);
    let mut report = GradCheckReport {
        name: "qr-loss".into(),
        cases,
        derivatives: 0,
        max_rel_error: 0.0,
        failures: 0,
    };
    let h = LOSS_FD_STEP;
    let mut done = 0;
    while done < cases {
        let n = rng.random_range(1..=8);
        let kappa = rng.random_range(0.1..=2.0);
        let pred = uniform(&mut rng, n);
        let targets = uniform(&mut rng, n);
        let near_kink = pred.iter().any(|p| {
            targets.iter().any(|t| {
                let u = (t - p).abs();
                u < KINK_MARGIN || (u - kappa).abs() < KINK_MARGIN
            })
        });
        if near_kink {
            continue;
        }
        let levels = QuantileLevels::new(n)?;
        let cfg = HuberConfig::new(kappa)?;
        let (_, grad) = qr_loss_and_grad(&pred, &targets, &levels, cfg)?;
        for (i, &a) in grad.iter().enumerate() {
            let mut plus = pred.clone();
            plus[i] += h;
            let mut minus = pred.clone();
            minus[i] -= h;
            let lp = qr_loss_and_grad(&plus, &targets, &levels, cfg)?.0;
            let lm = qr_loss_and_grad(&minus, &targets, &levels, cfg)?.0;
            report.record(a, (lp - lm) / (2.0 * h));
        }
        done += 1;
    }
    Ok(report)
}

/// All checks used by the `grad-check` command.
pub fn full_grad_check(cases: usize, seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut out = vec![qr_loss_grad_check(cases, seed)?];
    for act in [Activation::Identity, Activation::Tanh, Activation::Relu] {
        out.push(densenet_grad_check(act, cases, seed)?);
    }
    Ok(out)
}
