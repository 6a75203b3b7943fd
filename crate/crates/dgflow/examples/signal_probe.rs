use dgflow::dataio::{synth_reactions, SyntheticSpec, Warp};
use dgflow::flow::initial_guess;
use dgflow::geom::pairwise_distances;
use dgflow::numerics::Rng;

fn main() {
    let warp_seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1234);
    let disp: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(0.45);
    let spec = SyntheticSpec { n_atoms_min: 5, n_atoms_max: 5, displacement: disp, warp_seed, size: 60 };
    let mut rng = Rng::new(2024);
    let records = synth_reactions(&spec, &mut rng).unwrap();
    let warp = Warp::from_seed(warp_seed);
    println!("warp c1={:.3} c2={:.3}", warp.c1, warp.c2);
    let (mut u2, mut g2, mut proj2) = (0.0, 0.0, 0.0);
    let mut m_total = 0.0;
    for r in &records {
        let dr = pairwise_distances(&r.reactant);
        let dp = pairwise_distances(&r.product);
        let dts = pairwise_distances(&r.ts); // = proj(W)
        let d0 = initial_guess(&dr, &dp).unwrap();
        let w = warp.target_matrix(&dr, &dp).unwrap();
        let n = dr.n();
        for i in 0..n {
            for j in (i+1)..n {
                let u = dts.get(i, j) - d0.get(i, j);       // actual target
                let g = w.get(i, j) - d0.get(i, j);         // elementwise warp part
                let p = dts.get(i, j) - w.get(i, j);        // projection residue
                u2 += u * u; g2 += g * g; proj2 += p * p;
                m_total += 1.0;
            }
        }
    }
    println!("rms u {:.4}  rms g {:.4}  rms proj-residue {:.4}  (residue/signal {:.2})",
        (u2/m_total).sqrt(), (g2/m_total).sqrt(), (proj2/m_total).sqrt(), (proj2/g2).sqrt());
}
