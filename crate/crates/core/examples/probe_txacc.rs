use beamalign::channel::{generate_los_channel, ChannelEnsembleConfig};
use beamalign::neural::*;
use beamalign::rng::{domain, RngStream};
use beamalign::search::{quasi_omni, quaternary_descent, Link, Side};
use beamalign::arraymath::NormalizedAngle;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let dataset: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(8000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(36);
    let cfg = TrainConfig {
        dataset_size: dataset,
        epochs,
        aperture_stage_epochs: 3,
        ..TrainConfig::desk_default(64, 16, 4242)
    };
    let sampler = los_sampler(&cfg);
    let (state, report) = train(&cfg, &sampler, None).unwrap();
    println!("last training loss {:.4}", report.epoch_losses.last().unwrap());
    let nets = &state.nets;

    // Per-SNR transmit-angle error quantiles on fresh channels.
    let ens = ChannelEnsembleConfig::los_default(64, 16, 555);
    for snr_db in [10.0, 20.0, 25.0, 30.0] {
        let sigma = 10f64.powf(-snr_db / 20.0);
        let mut errs = Vec::new();
        for trial in 0..400u64 {
            let mut ch_rng = RngStream::derived(555, &[domain::CHANNEL, trial]);
            let ch = generate_los_channel(&ens, &mut ch_rng);
            let mut nrng = RngStream::derived(556, &[domain::NOISE, trial]);
            let mut link = Link::new(&ch.matrix, sigma, &mut nrng, None);
            let scan = quaternary_descent(&mut link, Side::Tx, 64, &quasi_omni(16), 0.0, false).unwrap();
            let feats = build_features(&scan.layers).unwrap();
            let trace = nets.tx.forward_trace(&feats).unwrap();
            let phi_hat = NormalizedAngle::new(trace.raw_output).value();
            let truth = ch.paths[0].aod.value();
            let err = (phi_hat - truth + 1.0).rem_euclid(2.0) - 1.0;
            errs.push(err.abs());
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "snr {snr_db:>4}: tx |err| quartiles {:.4} {:.4} {:.4}, p90 {:.4}",
            errs[100], errs[200], errs[300], errs[360]
        );
    }
}
