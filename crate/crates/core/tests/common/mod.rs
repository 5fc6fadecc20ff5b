#![allow(dead_code)]

pub mod oracle;
pub mod reference;

use geolatent::autoencoder::AutoencoderModel;
use geolatent::store::Patch;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random patch of `n` members inside radius `r`; the first member sits at the
/// center when `with_center` is set.
pub fn random_patch(rng: &mut ChaCha8Rng, n: usize, d: usize, r: f64, with_center: bool) -> Patch {
    let offsets: Vec<[f64; 3]> = (0..n)
        .map(|j| {
            if with_center && j == 0 {
                return [0.0; 3];
            }
            loop {
                let o: [f64; 3] = std::array::from_fn(|_| rng.random_range(-r..r));
                if (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt() < r {
                    return o;
                }
            }
        })
        .collect();
    let attrs = (0..n * d).map(|_| rng.random()).collect();
    Patch::from_members([0.5; 3], r, (0..n).collect(), offsets, attrs, d)
}

/// A model with non-trivial biases, batch-norm affine parameters and running
/// statistics, so every code path carries signal.
pub fn perturbed_model(d: usize, v: usize, r: f64, seed: u64) -> AutoencoderModel {
    let mut m = AutoencoderModel::new(d, v, r, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let lay = m.layout().clone();
    let p = m.params_mut();
    for (name, range) in lay.param_blocks() {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            for x in &mut p[range] {
                *x = rng.random_range(-0.2..0.2);
            }
        } else if name.ends_with(".gamma") {
            for x in &mut p[range] {
                *x = rng.random_range(0.6..1.4);
            }
        }
    }
    m
}

use geolatent::autoencoder::net::{self, LossMode, Mode};

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    /// Entries whose ±h probes straddle a ReLU kink and disagree; excused.
    pub kinks: usize,
    /// `(block, index, analytic, numeric)` outside tolerance on a smooth piece.
    pub failures: Vec<(String, usize, f64, f64)>,
    /// Largest error/allowed ratio among smooth entries.
    pub worst: f64,
}

/// Central-difference check (step `h`) of the analytic gradient on `entries`
/// of every block selected by `pick`; tolerance `max(1e-4, 1e-3·|g|)`.
pub fn fd_check(
    m: &mut AutoencoderModel,
    patches: &[&Patch],
    mode: LossMode,
    h: f64,
    mut pick: impl FnMut(&str, std::ops::Range<usize>) -> Vec<usize>,
) -> FdReport {
    let (_, grad, _) = net::loss_and_grad(m, patches, mode);
    let mut report = FdReport::default();
    let eval = |m: &AutoencoderModel| {
        let fw = net::forward(m, patches, Mode::Train);
        let loss = net::batch_loss(&fw.dec.outputs, patches, &fw.enc.starts, mode).0;
        (loss, fw.relu_pattern())
    };
    for (name, range) in m.layout().param_blocks() {
        for i in pick(&name, range) {
            let orig = m.params()[i];
            m.params_mut()[i] = orig + h;
            let (up, up_pattern) = eval(m);
            m.params_mut()[i] = orig - h;
            let (down, down_pattern) = eval(m);
            m.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (grad[i] - numeric).abs();
            let allowed = f64::max(1e-4, 1e-3 * numeric.abs().max(grad[i].abs()));
            report.checked += 1;
            if err <= allowed {
                report.worst = report.worst.max(err / allowed);
            } else if up_pattern != down_pattern {
                report.kinks += 1;
            } else {
                report.failures.push((name.clone(), i, grad[i], numeric));
            }
        }
    }
    report
}
