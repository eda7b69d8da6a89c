use beamalign::channel::{generate_los_channel, ChannelEnsembleConfig};
use beamalign::neural::*;
use beamalign::rng::{domain, RngStream};
use beamalign::search::{evaluate, qssr_search};

fn main() {
    let cfg = TrainConfig {
        dataset_size: 8000,
        epochs: 36,
        aperture_stage_epochs: 3,
        ..TrainConfig::desk_default(64, 16, 4242)
    };
    let sampler = los_sampler(&cfg);
    let (state, _) = train(&cfg, &sampler, None).unwrap();
    let nets = &state.nets;

    let snr_db = 25.0;
    let sigma = 10f64.powf(-snr_db / 20.0);
    for (label, seed) in [("train-channels", 4242u64), ("fresh-channels", 999u64)] {
        let ens = ChannelEnsembleConfig::los_default(64, 16, seed);
        let mut net_sum = 0.0;
        let mut qssr_sum = 0.0;
        let trials = 300u64;
        for trial in 0..trials {
            let mut ch_rng = RngStream::derived(seed, &[domain::CHANNEL, trial]);
            let ch = generate_los_channel(&ens, &mut ch_rng);
            let mut r1 = RngStream::derived(31337, &[domain::NOISE, 1, trial]);
            let mut r2 = RngStream::derived(31337, &[domain::NOISE, 2, trial]);
            net_sum += evaluate(&qssr_net_search(&ch.matrix, sigma, &mut r1, None, nets).unwrap(), &ch.matrix);
            qssr_sum += evaluate(&qssr_search(&ch.matrix, sigma, &mut r2).unwrap(), &ch.matrix);
        }
        println!(
            "{label}: net {:.2} dB, qssr {:.2} dB",
            10.0 * (net_sum / trials as f64).log10(),
            10.0 * (qssr_sum / trials as f64).log10()
        );
    }
}
