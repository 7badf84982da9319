//! Small ST / FTD / FTF comparison on MOR, for timing and effect-size checks.
//!
//! `cargo run --release -p mtlb-core --example regimes -- 4000 1 15 32`

use std::time::Instant;

use mtlb::data::{generate_cohort, CohortDataset, GeneratorParams, SubsampleMode, SubsampleSpec};
use mtlb::model::EncoderConfig;
use mtlb::tasks::{tasks_for, Category, TaskId};
use mtlb::train::{run_regime, Pretrained, Regime, RunOutput, RunSpec, TrainConfig};

struct Setup {
    ds: CohortDataset,
    suite: Vec<TaskId>,
    enc: EncoderConfig,
    train: TrainConfig,
}

impl Setup {
    fn run(&self, regime: Regime, seed: u64, fraction: f64, pre: Option<&Pretrained>) -> RunOutput {
        run_regime(&RunSpec {
            dataset: &self.ds,
            suite: &self.suite,
            encoder: &self.enc,
            train: &self.train,
            regime,
            seed,
            subsample: if fraction < 1.0 {
                SubsampleSpec {
                    mode: SubsampleMode::FewShot { fraction },
                    seed,
                }
            } else {
                SubsampleSpec::default()
            },
            pretrained: pre,
        })
        .unwrap()
    }
}

fn curve(c: &[Option<f64>]) -> String {
    c.iter().map(|s| s.map_or("-".into(), |v| format!("{v:.3}"))).collect::<Vec<_>>().join(" ")
}

fn main() {
    mtlb::runtime::tune_allocator();
    let mut args = std::env::args().skip(1);
    let mut next = |d: f64| args.next().and_then(|a| a.parse().ok()).unwrap_or(d);
    let n = next(4000.0) as usize;
    let seeds = next(1.0) as u64;
    let epochs = next(15.0) as usize;
    let batch = next(32.0) as usize;
    let dropout = next(0.0);
    let few = next(0.01);
    let full = next(1.0) > 0.0;
    let mut gp = GeneratorParams::default();
    gp.death_ramp = next(gp.death_ramp);
    gp.ramp_hours = next(gp.ramp_hours);
    gp.value_severity_loading = next(gp.value_severity_loading);
    let fractions: Vec<f64> = if full { vec![few, 1.0] } else { vec![few] };
    let setup = Setup {
        ds: generate_cohort(11, n, &gp).unwrap(),
        suite: tasks_for(&[Category::Mor, Category::Cmo, Category::Los]),
        enc: EncoderConfig {
            dropout,
            ..EncoderConfig::gru(32, 64, 1, 48)
        },
        train: TrainConfig {
            epochs,
            batch_size: batch,
            learning_rate: 2e-3,
            ..TrainConfig::default()
        },
    };
    for seed in 0..seeds {
        let t0 = Instant::now();
        let omit = setup.run(Regime::PretrainOmit(Category::Mor), seed, 1.0, None);
        let pre = Pretrained::from_model(Regime::PretrainOmit(Category::Mor), &omit.model);
        println!("seed {seed} pretrain {:.1}s tune {}", t0.elapsed().as_secs_f64(), curve(&omit.result.tune_curve));
        for &frac in &fractions {
            for (regime, p) in [
                (Regime::St(Category::Mor), None),
                (Regime::Ftd(Category::Mor), Some(&pre)),
                (Regime::Ftf(Category::Mor), Some(&pre)),
            ] {
                let out = setup.run(regime, seed, frac, p);
                println!(
                    "  {frac} {regime}: test {:.4} ep {} tune {} [{:.0}s]",
                    out.result.test.category_score(Category::Mor).unwrap(),
                    out.result.selected_epoch,
                    curve(&out.result.tune_curve),
                    t0.elapsed().as_secs_f64()
                );
            }
        }
    }
}
