use dgflow::dataio::{synth_reactions, SyntheticSpec};
use dgflow::flow::{predict_ts, initial_guess, train, TrainConfig};
use dgflow::geom::{dmae, pairwise_distances};
use dgflow::numerics::Rng;
use dgflow::tsdvnet::NetConfig;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(60);
    let batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let lr: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let sigma: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let rbf: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(16);
    let warp_seed: u64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1234);
    let disp: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.35);

    let spec = SyntheticSpec { n_atoms_min: 5, n_atoms_max: 5, displacement: disp, warp_seed, size: 200 };
    let mut rng = Rng::new(2024);
    let records = synth_reactions(&spec, &mut rng).unwrap();
    let (train_recs, val_recs) = records.split_at(180);
    let test_recs = val_recs;
    let net = NetConfig { blocks: 2, atom_dim: 32, pair_dim: 32, rbf_count: rbf, cutoff: 20.0 };
    let tc = TrainConfig { sigma, batch_size: batch, learning_rate: lr, decay_factor: 0.8, decay_patience: 40, epochs, seed: std::env::args().nth(8).map(|s| s.parse().unwrap()).unwrap_or(99) };
    let t0 = Instant::now();
    let out = train(net, train_recs, val_recs, &tc).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    if std::env::var("TRAJ").is_ok() {
        for (i, l) in out.log.iter().enumerate() {
            if i % 20 == 0 || i + 1 == out.log.len() {
                eprintln!("  epoch {:3} train {:.5} val {:.5} lr {:.2e}", l.epoch, l.train_loss, l.val_loss, l.learning_rate);
            }
        }
    }
    let mut base = 0.0;
    for r in val_recs {
        let dr = pairwise_distances(&r.reactant);
        let dp = pairwise_distances(&r.product);
        let dts = pairwise_distances(&r.ts);
        let d0 = initial_guess(&dr, &dp).unwrap();
        let m = dts.n() * (dts.n() - 1) / 2;
        let s: f64 = (0..dts.values().len()).map(|q| (dts.values()[q] - d0.values()[q]).powi(2)).sum::<f64>() / 2.0;
        base += s / m as f64;
    }
    base /= val_recs.len() as f64;
    let mut model_dmae = 0.0;
    let mut guess_dmae = 0.0;
    for r in test_recs {
        let dr = pairwise_distances(&r.reactant);
        let dp = pairwise_distances(&r.product);
        let dts = pairwise_distances(&r.ts);
        let pred = predict_ts(&out.model, r.reactant.atomic_numbers(), &dr, &dp, 0.1).unwrap();
        model_dmae += dmae(&pred.d_ts, &dts).unwrap();
        guess_dmae += dmae(&initial_guess(&dr, &dp).unwrap(), &dts).unwrap();
    }
    let last = out.log.last().unwrap();
    println!("e{epochs} b{batch} lr{lr} s{sigma} K{rbf} w{warp_seed} d{disp}: {dt:.0}s | train {:.4} val(best) {:.4} ratio {:.3} | DMAE ratio {:.3}",
        last.train_loss, out.best_val_loss, out.best_val_loss / base, model_dmae / guess_dmae);
}
