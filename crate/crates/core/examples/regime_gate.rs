//! Trains the compact model on the default world and shows how the gate
//! weights move between promotion and normal traffic.
//!
//! ```sh
//! cargo run --release --example regime_gate -- 12
//! ```

use moef::harness::{evaluate, fit_signal_stats, ks_statistic, mean_std, score_records, TrainConfig, TrainedModel};
use moef::mixture::{ModelConfig, ModelVariant};
use moef::synthgen::{generate_interactions, generate_signals, WorldConfig};

fn main() -> moef::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let world = WorldConfig::default();
    let schedule = world.schedule()?;
    let series = generate_signals(&world, &schedule)?;
    let (_, stream) = generate_interactions(&world, &schedule, &series)?;
    let split = world.split_timestamp();
    let (train, validation): (Vec<_>, Vec<_>) = stream.records.into_iter().partition(|r| r.timestamp < split);
    println!("{} train and {} validation impressions", train.len(), validation.len());

    let stats = fit_signal_stats(&series, &train)?;
    let cfg = TrainConfig {
        epochs,
        full_loss_passes: false,
        ..TrainConfig::default()
    };
    let mut model = TrainedModel::init(&ModelConfig::small(ModelVariant::Full), &cfg, stats)?;
    model.fit(&series, &train, |epoch, m| {
        let report = evaluate(m, &series, &validation, &schedule, None)?;
        println!("epoch {:>2}  validation AUC {:.4}", epoch + 1, report.overall.auc.unwrap_or(f64::NAN));
        Ok(report.overall.auc)
    })?;

    let scores = score_records(&model.model, &model.store, &series, &validation, 256)?;
    let (mut promo, mut normal) = (Vec::new(), Vec::new());
    for (r, alpha) in validation.iter().zip(&scores.alpha) {
        match schedule.kind_at(r.timestamp) {
            Some(k) if k.is_promotion() => promo.push(alpha[0]),
            _ => normal.push(alpha[0]),
        }
    }
    let (pm, ps) = mean_std(&promo);
    let (nm, ns) = mean_std(&normal);
    println!("alpha_1 promotion {pm:.3} ± {ps:.3}, normal {nm:.3} ± {ns:.3}");
    println!("KS statistic {:.3}", ks_statistic(&promo, &normal)?);
    Ok(())
}
