//! The Gaussian backend is linear, so each chain's output is its initial
//! noise times a product of per-step gains. These tests check the sampler
//! against that closed form computed independently here.

use gridsynth_core::backend::{ClipAddress, Condition, GaussianAnalyticDenoiser, GridCoord};
use gridsynth_core::frame::{Dims, Frame, WarpedView};
use gridsynth_core::noise::{label, standard_normal, SeedSource};
use gridsynth_core::sampler::{
    sample_warp_guided_clip, AnnealingParams, GuidedSamplerConfig, NoiseSchedule, ResidualMode,
};

const STEPS: usize = 25;
const SIGMA_MIN: f64 = 0.002;
const SIGMA_MAX: f64 = 80.0;
const RHO: f64 = 7.0;
const CHAINS: u64 = 1000;

fn sigmas() -> Vec<f64> {
    let lo = SIGMA_MIN.powf(1.0 / RHO);
    let hi = SIGMA_MAX.powf(1.0 / RHO);
    let mut s: Vec<f64> = (0..STEPS)
        .map(|k| (hi + k as f64 / (STEPS - 1) as f64 * (lo - hi)).powf(RHO))
        .collect();
    s[0] = SIGMA_MAX;
    s[STEPS - 1] = SIGMA_MIN;
    s.push(0.0);
    s
}

/// Variance of the final sample for a zero-mean, unit-variance prior.
fn oracle_variance(annealing: AnnealingParams) -> f64 {
    let s = sigmas();
    let mut v = SIGMA_MAX * SIGMA_MAX;
    for k in 0..STEPS {
        let (sig, next) = (s[k], s[k + 1]);
        let shrink = 1.0 / (1.0 + sig * sig);
        if k < annealing.t_guide {
            for _ in 1..annealing.r_total {
                v = shrink * shrink * v + sig * sig;
            }
        }
        let gain = shrink + next / sig * (1.0 - shrink);
        v *= gain * gain;
    }
    v
}

fn run_chain(annealing: AnnealingParams, i: u64) -> f64 {
    let den = GaussianAnalyticDenoiser::new(0.0, 1.0).unwrap();
    let dims = Dims::new(1, 1, 1);
    let cond = Condition::new(GridCoord::new(0, 0), Frame::zeros(dims));
    let schedule = NoiseSchedule::karras(STEPS, SIGMA_MIN, SIGMA_MAX, RHO).unwrap();
    let cfg = GuidedSamplerConfig {
        annealing,
        residual_mode: ResidualMode::Conditional,
    };
    let out = sample_warp_guided_clip(
        &den,
        &[WarpedView::holes(dims)],
        &cond,
        &schedule,
        &cfg,
        ClipAddress::column(0),
        SeedSource::new(0).child(i),
    )
    .unwrap();
    out[0].data()[0] as f64
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn plain_euler_chain_is_noise_times_gain_product() {
    let s = sigmas();
    let gain: f64 = (0..STEPS)
        .map(|k| {
            let shrink = 1.0 / (1.0 + s[k] * s[k]);
            shrink + s[k + 1] / s[k] * (1.0 - shrink)
        })
        .product();
    for i in 0..20 {
        let mut rng = SeedSource::new(0).child(i).child(label::INIT).rng();
        let eps = standard_normal(&mut rng);
        let x0 = (SIGMA_MAX * eps) as f32 as f64;
        let expected = x0 * gain;
        let got = run_chain(AnnealingParams::none(), i);
        assert!(
            (got - expected).abs() <= 1e-4 * expected.abs().max(1e-3),
            "chain {i}: {got} vs {expected}"
        );
    }
}

#[test]
fn plain_euler_moments_match_oracle() {
    let xs: Vec<f64> = (0..CHAINS).map(|i| run_chain(AnnealingParams::none(), i)).collect();
    let (mean, var) = moments(&xs);
    let v = oracle_variance(AnnealingParams::none());
    let n = CHAINS as f64;
    assert!(mean.abs() < 5.0 * (v / n).sqrt(), "mean {mean}");
    assert!(
        (var - v).abs() < 5.0 * v * (2.0 / (n - 1.0)).sqrt(),
        "variance {var} vs {v}"
    );
}

#[test]
fn annealed_moments_match_oracle() {
    let a = AnnealingParams::default_for(STEPS);
    let xs: Vec<f64> = (0..CHAINS).map(|i| run_chain(a, i)).collect();
    let (mean, var) = moments(&xs);
    let v = oracle_variance(a);
    let n = CHAINS as f64;
    assert!(mean.abs() < 5.0 * (v / n).sqrt(), "mean {mean}");
    assert!(
        (var - v).abs() < 5.0 * v * (2.0 / (n - 1.0)).sqrt(),
        "variance {var} vs {v}"
    );
}
