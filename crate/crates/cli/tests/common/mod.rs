#![allow(dead_code)]

use std::path::{Path, PathBuf};

use carmen_cli::args::{Metric, Mode, ModelArgs, Precision, ProfileArgs, RunArgs, SweepArgs};
use carmen_core::model::{load_manifest, write_inputs, InputSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random MLP on disk with inputs and reference labels.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub samples: usize,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn model_args(&self, precision: Precision) -> ModelArgs {
        ModelArgs {
            model: self.path("mlp.json"),
            weights: self.path("mlp.bin"),
            calib: Some(self.path("calib.bin")),
            precision,
            iters_accurate: None,
            iters_approx: None,
            report: Some(self.path("report.json")),
            threads: None,
            limit: None,
            quiet: true,
        }
    }

    pub fn run_args(&self, precision: Precision, mode: Mode) -> RunArgs {
        RunArgs {
            model: self.model_args(precision),
            input: self.path("inputs.bin"),
            labels: Some(self.path("labels.txt")),
            mode,
            tau: None,
            metric: Metric::RelativeL1,
        }
    }

    pub fn sweep_args(&self, depths: &[u32], precisions: &[Precision]) -> SweepArgs {
        SweepArgs {
            model: self.model_args(Precision::Fxp16),
            input: self.path("inputs.bin"),
            labels: Some(self.path("labels.txt")),
            depths: depths.to_vec(),
            precisions: precisions.to_vec(),
        }
    }

    pub fn profile_args(&self, tau: Option<f64>) -> ProfileArgs {
        ProfileArgs {
            model: self.model_args(Precision::Fxp16),
            tau,
            metric: Metric::RelativeL1,
        }
    }
}

const MANIFEST: &str = r#"{
  "name": "tiny",
  "input_shape": [8],
  "layers": [
    {"kind": "dense", "dims": {"in": 8, "out": 12}, "activation": "relu",
     "weight_offset": 0, "bias_offset": 96},
    {"kind": "dense", "dims": {"in": 12, "out": 6}, "activation": "tanh",
     "weight_offset": 108, "bias_offset": 180},
    {"kind": "dense", "dims": {"in": 6, "out": 4}, "activation": "softmax",
     "weight_offset": 186, "bias_offset": 210}
  ]
}
"#;
const PARAMS: usize = 214;

fn blob(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

/// Labels are the reference network's own top-1, so its accuracy is 1.
pub fn fixture(samples: usize, seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = tempfile::tempdir().unwrap();
    let params: Vec<f32> = (0..PARAMS).map(|_| rng.gen_range(-0.8f32..0.8)).collect();
    let mut draw = |n: usize| {
        InputSet::new(8, (0..n * 8).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
    };
    let inputs = draw(samples);
    let calib = draw(32);
    let model = load_manifest(MANIFEST, &blob(&params)).unwrap();
    let labels: String = inputs
        .iter()
        .map(|x| {
            format!(
                "{}\n",
                carmen_core::engine::argmax(&model.oracle_infer(x).unwrap())
            )
        })
        .collect();
    let w = |name: &str, bytes: &[u8]| std::fs::write(dir.path().join(name), bytes).unwrap();
    w("mlp.json", MANIFEST.as_bytes());
    w("mlp.bin", &blob(&params));
    w("inputs.bin", &write_inputs(&inputs));
    w("calib.bin", &write_inputs(&calib));
    w("labels.txt", labels.as_bytes());
    Fixture { dir, samples }
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}
