//! Socrates vs cross-entropy on the standard synthetic benchmark.
//!
//! `cargo run --release --example desk_benchmark -- [epochs] [seeds]`

use socrates_calib::datasets::{gen_gaussian_blobs, split, BlobsConfig, SplitFractions};
use socrates_calib::losses::{BaselineKind, LossSpec, SocratesConfig};
use socrates_calib::model::Activation;
use socrates_calib::optim::SgdConfig;
use socrates_calib::par::Backend;
use socrates_calib::trainer::{train_run, RunSpec, Split};

fn main() -> socrates_calib::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().copied().unwrap_or(300);
    let seeds = args.get(1).copied().unwrap_or(5) as u64;
    let ds = gen_gaussian_blobs(&BlobsConfig::standard())?;
    let (train, val, _) = split(&ds, SplitFractions::new(0.6, 0.2, 0.2), 0)?;
    let losses = [
        LossSpec::Baseline { kind: BaselineKind::Ce, unknown_class: false },
        LossSpec::Socrates(SocratesConfig::new(2.0, 0.99)),
    ];
    println!("seed loss acc ece beta_early beta_late idk_correct idk_wrong");
    for seed in 1..=seeds {
        for loss in &losses {
            let spec = RunSpec {
                hidden: vec![64, 64],
                activation: Activation::Relu,
                loss: loss.clone(),
                optimizer: SgdConfig::default(),
                epochs,
                batch_size: 128,
                bins: 15,
                seed,
            };
            let out = train_run(&spec, &train, Some(&val), Backend::Sequential, |_| Ok(()))?;
            let tr: Vec<_> = out.records.iter().filter(|r| r.split == Split::Train).collect();
            let v = out.records.iter().rev().find(|r| r.split == Split::Val).expect("val record");
            let k = tr.len().min(5);
            let early = tr[..k].iter().map(|r| r.mean_beta).sum::<f64>() / k as f64;
            let late = tr[tr.len() - k..].iter().map(|r| r.mean_beta).sum::<f64>() / k as f64;
            println!(
                "{seed} {} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
                loss.label(),
                v.accuracy,
                v.ece,
                early,
                late,
                v.mean_conf_idk_correct,
                v.mean_conf_idk_wrong
            );
        }
    }
    Ok(())
}
