use beamalign::arraymath::{steering, NormalizedAngle};
use beamalign::channel::{generate_los_channel, ChannelEnsembleConfig};
use beamalign::neural::*;
use beamalign::optim::Adam;
use beamalign::rng::{domain, RngStream};
use beamalign::search::{quasi_omni, quaternary_descent, Link, Side};

fn main() {
    let n_tx = 64;
    let n_rx = 16;
    let cfgc = ChannelEnsembleConfig::los_default(n_tx, n_rx, 77);
    let mut nets = NetPair::init(77);
    let lens = QssrNet::group_lens();
    let mut adam = Adam::new(&lens, 1e-3);

    // Phase 1 diagnostic: MSE from the tx net's raw output to the true AoD,
    // noiseless features. If this cannot learn, the pipeline is broken.
    let mode = std::env::args().nth(1).unwrap_or_else(|| "mse".into());
    let batches = 600usize;
    let batch = 100usize;
    let mut running = 0.0;
    for b in 0..batches {
        let mut grads = QssrNet::zeros();
        let mut loss_sum = 0.0;
        for k in 0..batch {
            let idx = (b * batch + k) as u64 % 20_000;
            let mut ch_rng = RngStream::derived(77, &[domain::CHANNEL, idx]);
            let ch = generate_los_channel(&cfgc, &mut ch_rng);
            let mut noise = RngStream::derived(77, &[domain::TRAIN_NOISE, b as u64, idx]);
            let mut link = Link::new(&ch.matrix, 0.0, &mut noise, None);
            let scan = quaternary_descent(&mut link, Side::Tx, n_tx, &quasi_omni(n_rx), 0.0, false).unwrap();
            let feats = build_features(&scan.layers).unwrap();
            let trace = nets.tx.forward_trace(&feats).unwrap();
            let raw = trace.raw_output;
            let target = ch.paths[0].aod.value();
            let (loss, dout) = match mode.as_str() {
                "mse" => ((raw - target) * (raw - target), 2.0 * (raw - target)),
                "pow4" => {
                    let (l, dtx, _) = subarray_loss_grad(&ch.matrix, NormalizedAngle::new(raw).value(), ch.paths[0].aoa.value(), 4, 4);
                    (l, dtx)
                }
                _ => {
                    let (l, dtx, _) = subarray_loss_grad(&ch.matrix, NormalizedAngle::new(raw).value(), ch.paths[0].aoa.value(), n_tx, n_rx);
                    (l, dtx)
                }
            };
            nets.tx.backward(&trace, dout, &mut grads);
            loss_sum += loss;
        }
        grads.scale(1.0 / batch as f64);
        adam.step(&mut nets.tx.param_groups_mut(), &grads.param_groups());
        running = loss_sum / batch as f64;
        if b % 50 == 0 {
            println!("batch {b:>4}: mean loss {running:.6}");
        }
    }
    println!("final: {running:.6}");
}
