//! Compare tape gradients of the L1 training loss against central finite
//! differences, tensor by tensor.

use std::fmt;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Fault, Tape};
use crate::error::Result;
use crate::gradcheck::{finite_diff_gradient, relative_error};
use crate::model::{model_forward, DrGazeModel, ModelConfig, FEATURE_LEN};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub config: ModelConfig,
    pub seed: u64,
    pub batch: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Corrupt a backward rule before checking.
    pub fault: Option<Fault>,
    /// Only check bias tensors.
    pub biases_only: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            config: ModelConfig::tiny(),
            seed: 1,
            batch: 1,
            step: 1e-5,
            tolerance: 1e-4,
            fault: None,
            biases_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_rel_error: f64,
    /// Flat element index of the largest error.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().map_or(0.0, |t| t.max_rel_error)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tolerance)
    }

    /// Tensors whose error exceeds the tolerance.
    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(move |t| !(t.max_rel_error <= self.tolerance))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let checked: usize = self.tensors.iter().map(|t| t.elements).sum();
        writeln!(
            f,
            "checked {checked} elements in {} tensors; max relative error {:.3e} (tolerance {:.1e})",
            self.tensors.len(),
            self.max_rel_error(),
            self.tolerance
        )?;
        if self.passed() {
            write!(f, "PASS")
        } else {
            for t in self.failures() {
                writeln!(
                    f,
                    "  {}: element {} relative error {:.3e}",
                    t.name, t.worst_index, t.max_rel_error
                )?;
            }
            let worst = self.worst().expect("a failing report has tensors");
            write!(f, "FAIL: worst tensor {} element {}", worst.name, worst.worst_index)
        }
    }
}

struct Probe {
    eye: Tensor<f64>,
    features: Tensor<f64>,
    targets: Tensor<f64>,
}

fn probe(config: &ModelConfig, batch: usize, rng: &mut ChaCha8Rng) -> Probe {
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    let mut draw = |shape: &[usize]| {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = (0..n).map(|_| unit.sample(rng)).collect();
        Tensor::from_f64(shape, &values).expect("positive extents")
    };
    Probe {
        eye: draw(&config.eye.input_shape(batch)),
        features: draw(&[batch, FEATURE_LEN]),
        targets: draw(&[batch, 2]),
    }
}

fn loss(model: &DrGazeModel<f64>, p: &Probe) -> Result<f64> {
    let pred = model.forward_raw(&p.eye, &p.features)?;
    crate::ops::l1_loss(&pred, &p.targets)
}

/// Check every (or every bias) parameter of a freshly initialized 64-bit
/// model.
pub fn gradient_check(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut model = DrGazeModel::<f64>::init(opts.config, opts.seed)?;
    // Xavier leaves biases at zero; give them values so the check is not
    // evaluated at a special point.
    let names: Vec<String> = model.params.named().into_iter().map(|(n, _)| n).collect();
    let small = Uniform::new_inclusive(-0.1, 0.1);
    for (name, t) in names.iter().zip(model.params.values_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v = small.sample(&mut rng);
            }
        }
    }
    let probe = probe(&opts.config, opts.batch.max(1), &mut rng);

    // analytic
    let mut tape = Tape::with_fault(opts.fault);
    let vars = model.bind(&mut tape);
    let eye = tape.leaf(probe.eye.clone());
    let features = tape.leaf(probe.features.clone());
    let truth = tape.leaf(probe.targets.clone());
    let pred = model_forward(&mut tape, &model.config, &vars, eye, features)?;
    let loss_var = tape.l1_loss(pred, truth)?;
    let grads = tape.backward(loss_var)?;

    let selected: Vec<usize> = (0..names.len())
        .filter(|&k| !opts.biases_only || names[k].ends_with(".bias"))
        .collect();

    // numeric: every selected element laid out flat
    let mut flat: Vec<f64> = Vec::new();
    let mut spans = Vec::with_capacity(selected.len());
    {
        let values = model.params.values();
        for &k in &selected {
            spans.push((k, flat.len(), values[k].numel()));
            flat.extend_from_slice(values[k].data());
        }
    }
    let mut scratch = model.clone();
    let mut failure = None;
    let numeric = finite_diff_gradient(
        |x| {
            let mut values = scratch.params.values_mut();
            for &(k, start, len) in &spans {
                values[k].data_mut().copy_from_slice(&x[start..start + len]);
            }
            match loss(&scratch, &probe) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &mut flat,
        opts.step,
    );
    if let Some(e) = failure {
        return Err(e);
    }

    let var_list = vars.values();
    let mut tensors = Vec::with_capacity(spans.len());
    for &(k, start, len) in &spans {
        let v = *var_list[k];
        let analytic = grads.wrt(v, tape.shape(v));
        let (mut worst, mut worst_index) = (0.0f64, 0usize);
        for (i, (&a, &n)) in analytic.data().iter().zip(&numeric[start..start + len]).enumerate() {
            let err = relative_error(a, n);
            if err > worst || err.is_nan() {
                worst = err;
                worst_index = i;
            }
        }
        tensors.push(TensorCheck {
            name: names[k].clone(),
            elements: len,
            max_rel_error: worst,
            worst_index,
        });
    }
    Ok(GradCheckReport {
        tensors,
        tolerance: opts.tolerance,
    })
}
