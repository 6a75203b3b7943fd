use dgflow::dataio::{synth_reactions, SyntheticSpec};
use dgflow::flow::{train, TrainConfig};
use dgflow::numerics::Rng;
use dgflow::tsdvnet::NetConfig;

fn main() {
    let n_rec: usize = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(10);
    let epochs: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(500);
    let spec = SyntheticSpec { n_atoms_min: 5, n_atoms_max: 5, displacement: 0.35, warp_seed: 1234, size: n_rec };
    let mut rng = Rng::new(2024);
    let records = synth_reactions(&spec, &mut rng).unwrap();
    let net = NetConfig { blocks: 2, atom_dim: 32, pair_dim: 32, rbf_count: 16, cutoff: 20.0 };
    let tc = TrainConfig { sigma: 0.0, batch_size: 2, learning_rate: 3e-3, decay_factor: 0.8, decay_patience: 60, epochs, seed: 99 };
    let out = train(net, &records, &records, &tc).unwrap();
    for (i, l) in out.log.iter().enumerate() {
        if i % (epochs / 10).max(1) == 0 || i + 1 == out.log.len() {
            println!("epoch {:4}: train {:.5} val {:.5} lr {:.2e}", l.epoch, l.train_loss, l.val_loss, l.learning_rate);
        }
    }
}
