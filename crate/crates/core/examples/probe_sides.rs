use beamalign::arraymath::NormalizedAngle;
use beamalign::channel::{generate_los_channel, ChannelEnsembleConfig};
use beamalign::neural::*;
use beamalign::rng::{domain, RngStream};
use beamalign::search::{quasi_omni, quaternary_descent, Link, Side};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(12);
    let cfg = TrainConfig {
        dataset_size: 8000,
        epochs,
        aperture_stage_epochs: 3,
        ..TrainConfig::desk_default(64, 16, 4242)
    };
    let sampler = los_sampler(&cfg);
    let (state, report) = train(&cfg, &sampler, None).unwrap();
    println!("trained to epoch {epochs}; last loss {:.4}", report.epoch_losses.last().unwrap());
    let nets = &state.nets;

    // Per-side teacher losses at full aperture and per-SNR tx/rx accuracy.
    let ens = ChannelEnsembleConfig::los_default(64, 16, 555);
    let mut l_tx_sum = 0.0;
    let mut l_rx_sum = 0.0;
    let trials = 600u64;
    for trial in 0..trials {
        let mut ch_rng = RngStream::derived(555, &[domain::CHANNEL, trial]);
        let ch = generate_los_channel(&ens, &mut ch_rng);
        let mut snr_rng = RngStream::derived(555, &[domain::TRAIN_SNR, trial]);
        let sigma = 10f64.powf(-snr_rng.uniform(5.0, 30.0) / 20.0);
        let mut nrng = RngStream::derived(556, &[domain::NOISE, trial]);
        let mut link = Link::new(&ch.matrix, sigma, &mut nrng, None);
        let tx_scan = quaternary_descent(&mut link, Side::Tx, 64, &quasi_omni(16), 0.0, false).unwrap();
        let tx_feats = build_features(&tx_scan.layers).unwrap();
        let phi_hat = NormalizedAngle::new(nets.tx.forward_trace(&tx_feats).unwrap().raw_output);
        let truth = ch.paths[0];
        let f = beamalign::arraymath::steering(64, truth.aod);
        let rx_scan = quaternary_descent(&mut link, Side::Rx, 16, f.elements(), truth.aod.value(), false).unwrap();
        let rx_feats = build_features(&rx_scan.layers).unwrap();
        let theta_hat = NormalizedAngle::new(nets.rx.forward_trace(&rx_feats).unwrap().raw_output);
        let (ltx, _, _) = subarray_loss_grad(&ch.matrix, phi_hat.value(), truth.aoa.value(), 64, 16);
        let (lrx, _, _) = subarray_loss_grad(&ch.matrix, truth.aod.value(), theta_hat.value(), 64, 16);
        l_tx_sum += ltx;
        l_rx_sum += lrx;
    }
    println!("teacher-metric at full aperture: l_tx {:.4}, l_rx {:.4}", l_tx_sum / trials as f64, l_rx_sum / trials as f64);

    for snr_db in [10.0, 25.0, 30.0] {
        let sigma = 10f64.powf(-snr_db / 20.0);
        let mut tx_errs = Vec::new();
        let mut rx_errs = Vec::new();
        for trial in 0..300u64 {
            let mut ch_rng = RngStream::derived(555, &[domain::CHANNEL, trial]);
            let ch = generate_los_channel(&ens, &mut ch_rng);
            let truth = ch.paths[0];
            let mut nrng = RngStream::derived(557, &[domain::NOISE, trial]);
            let mut link = Link::new(&ch.matrix, sigma, &mut nrng, None);
            let tx_scan = quaternary_descent(&mut link, Side::Tx, 64, &quasi_omni(16), 0.0, false).unwrap();
            let phi_hat = NormalizedAngle::new(nets.tx.forward_trace(&build_features(&tx_scan.layers).unwrap()).unwrap().raw_output);
            let f = beamalign::arraymath::steering(64, truth.aod);
            let rx_scan = quaternary_descent(&mut link, Side::Rx, 16, f.elements(), truth.aod.value(), false).unwrap();
            let theta_hat = NormalizedAngle::new(nets.rx.forward_trace(&build_features(&rx_scan.layers).unwrap()).unwrap().raw_output);
            tx_errs.push(beamalign::arraymath::wrap_delta(phi_hat.value(), truth.aod.value()).abs());
            rx_errs.push(beamalign::arraymath::wrap_delta(theta_hat.value(), truth.aoa.value()).abs());
        }
        tx_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rx_errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "snr {snr_db:>4}: tx err p25/p50/p75 {:.4}/{:.4}/{:.4}  rx err {:.4}/{:.4}/{:.4}",
            tx_errs[75], tx_errs[150], tx_errs[225], rx_errs[75], rx_errs[150], rx_errs[225]
        );
    }
}
