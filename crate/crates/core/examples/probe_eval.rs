use beamalign::channel::{
    effective_noise_std, generate_los_channel, generate_nlos_channel, ChannelEnsembleConfig,
};
use beamalign::neural::*;
use beamalign::rng::{domain, RngStream};
use beamalign::search::{
    binary_search, evaluate, exhaustive_search, oracle_alignment, qssr_search,
};

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = args.get(1).expect("usage: probe_eval <checkpoint> [trials]");
    let trials: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(600);
    let (state, n_tx, n_rx) = load_checkpoint(std::path::Path::new(ckpt)).unwrap();
    let nets = &state.nets;
    println!("loaded {n_tx}x{n_rx} checkpoint at epoch {}", state.epoch);

    for nlos in [false, true] {
        let label = if nlos { "NLoS" } else { "LoS" };
        let cfg = if nlos {
            ChannelEnsembleConfig::nlos_default(n_tx, n_rx, 999)
        } else {
            ChannelEnsembleConfig::los_default(n_tx, n_rx, 999)
        };
        for snr_db in [5.0, 10.0, 15.0, 20.0, 25.0, 30.0] {
            let sigma = effective_noise_std(snr_db, DEFAULT_PILOTS);
            let mut sums = [0.0f64; 5];
            let mut paired_win = 0usize;
            let mut boundary = (0usize, 0.0f64, 0.0f64); // count, net, qssr
            for trial in 0..trials {
                let mut ch_rng = RngStream::derived(999, &[domain::CHANNEL, trial]);
                let ch = if nlos {
                    generate_nlos_channel(&cfg, &mut ch_rng)
                } else {
                    generate_los_channel(&cfg, &mut ch_rng)
                };
                let h = &ch.matrix;
                let mk = |s: u64| RngStream::derived(999, &[domain::NOISE, s, trial]);
                let q = qssr_search(h, sigma, &mut mk(1)).unwrap();
                let b = binary_search(h, sigma, &mut mk(2)).unwrap();
                let e = exhaustive_search(h, sigma, &mut mk(3)).unwrap();
                let o = oracle_alignment(&ch).unwrap();
                let n = qssr_net_search(h, sigma, &mut mk(4), None, nets).unwrap();
                let pq = evaluate(&q, h);
                let pn = evaluate(&n, h);
                sums[0] += pq;
                sums[1] += evaluate(&b, h);
                sums[2] += evaluate(&e, h);
                sums[3] += evaluate(&o, h);
                sums[4] += pn;
                if pn >= pq {
                    paired_win += 1;
                }
                if n.tx_boundary_aux || q.tx_boundary_aux {
                    boundary.0 += 1;
                    boundary.1 += pn;
                    boundary.2 += pq;
                }
            }
            let t = trials as f64;
            println!(
                "{label} snr {snr_db:>4}: qssr {:.2} binary {:.2} exh {:.2} oracle {:.2} net {:.2} dB | net>=qssr {:.2} | boundary({}) net {:.2} qssr {:.2}",
                db(sums[0] / t),
                db(sums[1] / t),
                db(sums[2] / t),
                db(sums[3] / t),
                db(sums[4] / t),
                paired_win as f64 / t,
                boundary.0,
                db(boundary.1 / boundary.0.max(1) as f64),
                db(boundary.2 / boundary.0.max(1) as f64),
            );
        }
    }
}
