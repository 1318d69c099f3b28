//! Shell-game runs over several variants and seeds.

use anyhow::Result;
use rayon::prelude::*;
use synchrony_core::shellgame::{generate_shellgame, train_shellgame, ShellReport, ShellTrainConfig, ShellVariant, CLASSES};

/// Trains every `(variant, seed)` pair; each seed draws its own `n`
/// stimuli. Reports come back ordered by variant, then seed.
pub fn run(
    variants: &[ShellVariant],
    seeds: &[u64],
    n: usize,
    base: &ShellTrainConfig,
    on_epoch: impl Fn(ShellVariant, u64, usize, f64) + Sync,
) -> Result<Vec<ShellReport>> {
    let jobs: Vec<(ShellVariant, u64)> = variants.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter()
        .map(|&(v, seed)| {
            let data = generate_shellgame(seed, n)?;
            let cfg = ShellTrainConfig { seed, ..base.clone() };
            let (report, _) = train_shellgame(v, &data, &cfg, |e, l| on_epoch(v, seed, e, l))?;
            Ok(report)
        })
        .collect()
}

/// Per-class accuracy averaged over the seeds of one variant.
pub fn mean_per_class(reports: &[ShellReport], variant: ShellVariant) -> Option<[f64; CLASSES]> {
    let rs: Vec<&ShellReport> = reports.iter().filter(|r| r.variant == variant).collect();
    if rs.is_empty() {
        return None;
    }
    let mut m = [0.0; CLASSES];
    for r in &rs {
        for (k, a) in m.iter_mut().zip(&r.per_class) {
            *k += a / rs.len() as f64;
        }
    }
    Some(m)
}

/// One row per run: `variant,seed,params,class0,class1,class2,overall`.
pub fn to_csv(reports: &[ShellReport]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["variant".to_string(), "seed".into(), "params".into()];
    head.extend((0..CLASSES).map(|k| format!("class{k}")));
    head.push("overall".into());
    w.write_record(&head)?;
    for r in reports {
        let mut row = vec![r.variant.name().to_string(), r.seed.to_string(), r.params.to_string()];
        row.extend(r.per_class.iter().map(|a| format!("{a:?}")));
        row.push(format!("{:?}", r.overall));
        w.write_record(&row)?;
    }
    Ok(w.into_inner()?)
}
