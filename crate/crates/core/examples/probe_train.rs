use beamalign::channel::{generate_los_channel, generate_nlos_channel, ChannelEnsembleConfig};
use beamalign::neural::*;
use beamalign::rng::{domain, RngStream};
use beamalign::search::{binary_search, evaluate, exhaustive_search, oracle_alignment, qssr_search};
use std::time::Instant;

fn eval_strategies(nets: &NetPair, n_tx: usize, n_rx: usize, snr_db: f64, trials: u64, nlos: bool) -> (f64, f64, f64, f64, f64) {
    let sigma = beamalign::channel::effective_noise_std(snr_db, beamalign::neural::DEFAULT_PILOTS);
    let (mut q, mut b, mut e, mut o, mut net) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let cfg = if nlos { ChannelEnsembleConfig::nlos_default(n_tx, n_rx, 999) } else { ChannelEnsembleConfig::los_default(n_tx, n_rx, 999) };
    for trial in 0..trials {
        let mut ch_rng = RngStream::derived(999, &[domain::CHANNEL, trial]);
        let ch = if nlos { generate_nlos_channel(&cfg, &mut ch_rng) } else { generate_los_channel(&cfg, &mut ch_rng) };
        let mut r1 = RngStream::derived(999, &[domain::NOISE, 1, trial]);
        let mut r2 = RngStream::derived(999, &[domain::NOISE, 2, trial]);
        let mut r3 = RngStream::derived(999, &[domain::NOISE, 3, trial]);
        let mut r4 = RngStream::derived(999, &[domain::NOISE, 4, trial]);
        q += evaluate(&qssr_search(&ch.matrix, sigma, &mut r1).unwrap(), &ch.matrix);
        b += evaluate(&binary_search(&ch.matrix, sigma, &mut r2).unwrap(), &ch.matrix);
        e += evaluate(&exhaustive_search(&ch.matrix, sigma, &mut r3).unwrap(), &ch.matrix);
        o += evaluate(&oracle_alignment(&ch).unwrap(), &ch.matrix);
        net += evaluate(&qssr_net_search(&ch.matrix, sigma, &mut r4, None, nets).unwrap(), &ch.matrix);
    }
    let n = trials as f64;
    (q / n, b / n, e / n, o / n, net / n)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dataset: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let seed: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(4242);

    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let stage: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(3);
    let cfg = TrainConfig {
        dataset_size: dataset,
        epochs,
        lr_initial: lr,
        aperture_stage_epochs: stage,
        ..TrainConfig::desk_default(64, 16, seed)
    };
    for e in 0..epochs {
        if e == 0 || cfg.phase_at(e) != cfg.phase_at(e - 1) {
            println!("epoch {e}: phase {:?}", cfg.phase_at(e));
        }
    }
    let sampler = los_sampler(&cfg);
    let t0 = Instant::now();
    let (state, report) = train(&cfg, &sampler, None).unwrap();
    // Optional second phase: pure end-to-end joint training at a reduced
    // learning rate, resuming from the teacher-trained state.
    let (state, report) = if let Some(e2e) = args.get(6) {
        let parts: Vec<&str> = e2e.split(':').collect();
        let extra: usize = parts[0].parse().unwrap();
        let e2e_lr: f64 = parts[1].parse().unwrap();
        let cfg2 = TrainConfig {
            epochs: cfg.epochs + extra,
            lr_initial: e2e_lr,
            lr_decay: 1.0,
            aperture_stage_epochs: 0,
            ..cfg.clone()
        };
        let (s2, r2) = train(&cfg2, &sampler, Some(state)).unwrap();
        let mut all = report.epoch_losses.clone();
        all.extend(r2.epoch_losses.iter());
        (s2, beamalign::neural::TrainReport { epoch_losses: all })
    } else {
        (state, report)
    };
    let dt = t0.elapsed().as_secs_f64();
    if let Some(path) = args.get(7) {
        save_checkpoint(std::path::Path::new(path), &state, &cfg).unwrap();
        println!("checkpoint saved to {path}");
    }
    println!("trained {dataset}x{epochs} in {dt:.1}s ({:.1} examples/s)", (dataset * epochs) as f64 / dt);
    for (i, l) in report.epoch_losses.iter().enumerate() {
        if i % 4 == 0 || i + 1 == report.epoch_losses.len() {
            println!("  epoch {i:>3}: loss {l:.4}");
        }
    }
    for snr in [5.0, 15.0, 25.0, 30.0] {
        let (q, b, e, o, n) = eval_strategies(&state.nets, 64, 16, snr, 400, false);
        println!("LoS snr {snr:>4}: qssr {:.2} binary {:.2} exh {:.2} oracle {:.2} net {:.2}  (dB)",
            10.0 * q.log10(), 10.0 * b.log10(), 10.0 * e.log10(), 10.0 * o.log10(), 10.0 * n.log10());
    }
    for snr in [15.0, 25.0] {
        let (q, b, e, o, n) = eval_strategies(&state.nets, 64, 16, snr, 400, true);
        println!("NLoS snr {snr:>4}: qssr {:.2} binary {:.2} exh {:.2} oracle {:.2} net {:.2}  (dB)",
            10.0 * q.log10(), 10.0 * b.log10(), 10.0 * e.log10(), 10.0 * o.log10(), 10.0 * n.log10());
    }
}
