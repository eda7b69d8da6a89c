use beamalign::arraymath::{codebook_pointing, dft_codebook, steering, NormalizedAngle};
use beamalign::channel::{generate_los_channel, ChannelEnsembleConfig};
use beamalign::matrix::CMatrix;
use beamalign::rng::{domain, RngStream};
use beamalign::search::*;

// How much of the 25 dB loss comes from noisy hierarchical descent vs the
// final-layer ratio estimation: compare the real scan against a genie that
// always descends into the sector containing the truth.
fn main() {
    let n_tx = 64usize;
    let n_rx = 16usize;
    let ens = ChannelEnsembleConfig::los_default(n_tx, n_rx, 777);
    for snr_db in [20.0, 25.0, 30.0] {
        let sigma = 10f64.powf(-snr_db / 20.0);
        let trials = 500u64;
        let mut real_sum = 0.0;
        let mut genie_sum = 0.0;
        let mut sector_ok = 0usize;
        for trial in 0..trials {
            let mut ch_rng = RngStream::derived(777, &[domain::CHANNEL, trial]);
            let ch = generate_los_channel(&ens, &mut ch_rng);
            let truth = ch.paths[0];
            let mut rng = RngStream::derived(778, &[domain::NOISE, trial]);
            let res = qssr_search(&ch.matrix, sigma, &mut rng).unwrap();
            real_sum += evaluate(&res, &ch.matrix);
            // Real scan picked the quartet containing the truth?
            let last = res.tx_log.last().unwrap();
            let first_pointing = codebook_pointing(last.layer_size, last.first_index);
            let sector_lo = first_pointing - 1.0 / last.layer_size as f64;
            let sector_hi = sector_lo + 8.0 / last.layer_size as f64;
            if truth.aod.value() > sector_lo && truth.aod.value() < sector_hi {
                sector_ok += 1;
            }

            // Genie: probe only the true final quartet with fresh noise, use
            // the analytic ratio estimator, receive side likewise.
            let mut rng2 = RngStream::derived(779, &[domain::NOISE, trial]);
            let mut genie_angle = |n: usize, angle: f64, other: &[num_complex::Complex64], other_pointing: f64, side: Side, h: &CMatrix, rng: &mut RngStream| -> f64 {
                let cb = dft_codebook(n).unwrap();
                let nearest = (1..=n).min_by(|&a, &b| (codebook_pointing(n, a) - angle).abs().partial_cmp(&(codebook_pointing(n, b) - angle).abs()).unwrap()).unwrap();
                let first = ((nearest - 1) / 4) * 4 + 1;
                let mut link = Link::new(h, sigma, rng, None);
                let mut powers = Vec::new();
                let mut pointings = Vec::new();
                for i in 0..4 {
                    let cw = cb.codeword(first + i);
                    let v = cw.padded(n);
                    let p = match side {
                        Side::Tx => link.probe(&v, cw.pointing().value(), other, other_pointing),
                        Side::Rx => link.probe(other, other_pointing, &v, cw.pointing().value()),
                    };
                    powers.push(p);
                    pointings.push(cw.pointing().value());
                }
                let mut best = 0;
                for i in 1..4 { if powers[i] > powers[best] { best = i; } }
                let aux = if best == 0 { 1 } else if best == 3 { 2 } else if powers[best + 1] > powers[best - 1] { best + 1 } else { best - 1 };
                let (p_idx, left, right) = if best < aux { (first + best, powers[best], powers[aux]) } else { (first + aux, powers[aux], powers[best]) };
                let gamma = if right <= 0.0 { f64::INFINITY } else { (left / right).max(0.0) };
                beamalign::arraymath::invert_ratio(n, p_idx, p_idx + 1, gamma).unwrap().value()
            };
            let w_quasi = quasi_omni(n_rx);
            let phi = genie_angle(n_tx, truth.aod.value(), &w_quasi, 0.0, Side::Tx, &ch.matrix, &mut rng2);
            let f = steering(n_tx, NormalizedAngle::new(phi));
            let theta = genie_angle(n_rx, truth.aoa.value(), f.elements(), phi, Side::Rx, &ch.matrix, &mut rng2);
            let w = steering(n_rx, NormalizedAngle::new(theta));
            genie_sum += ch.matrix.bilinear(w.elements(), f.elements()).norm_sqr();
        }
        println!(
            "snr {snr_db}: real qssr {:.2} dB (true-sector rate {:.2}), genie-descent qssr {:.2} dB",
            10.0 * (real_sum / trials as f64).log10(),
            sector_ok as f64 / trials as f64,
            10.0 * (genie_sum / trials as f64).log10()
        );
    }
}
