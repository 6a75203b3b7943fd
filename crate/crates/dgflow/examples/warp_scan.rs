use dgflow::dataio::Warp;
fn main() {
    let mut best: Vec<(u64, f64, f64)> = Vec::new();
    for seed in 1..3000u64 {
        let w = Warp::from_seed(seed);
        if w.c1 > 0.49 && w.c2 > 4.2 {
            best.push((seed, w.c1, w.c2));
        }
    }
    for (s, c1, c2) in best.iter().take(6) {
        println!("seed {s}: c1 {c1:.4} c2 {c2:.4}");
    }
}
