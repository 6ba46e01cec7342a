mod common;

use common::*;
use dfrc_waveform::radar::{
    capon_image, cfar_detect, cfar_threshold_factor, detection_probability, synthesize_echo, target_sinr, CfarConfig,
};
use dfrc_waveform::scenario::{ArrayGeometry, RadarObject, RadarScene, WaveformBlock};
use dfrc_waveform::Complex64 as C64;
use rand::Rng;

fn obj(angle: f64, bin: usize, amp: f64) -> RadarObject {
    RadarObject {
        angle_deg: angle,
        range_bin: bin,
        amplitude: C64::new(amp, 0.0),
    }
}

fn scene(objects: Vec<RadarObject>, noise: f64) -> RadarScene {
    RadarScene {
        objects,
        max_lag: 4,
        noise_var: noise,
    }
}

#[test]
fn cfar_false_alarm_rate_on_exponential_noise() {
    let cfg = CfarConfig::default();
    let mut r = rng(17);
    let (profiles, len) = (2000usize, 64usize);
    let mut alarms = 0usize;
    for _ in 0..profiles {
        let p: Vec<f64> = (0..len).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
        alarms += cfar_detect(&p, &cfg).unwrap().iter().filter(|d| **d).count();
    }
    let n = (profiles * len) as f64;
    let rate = alarms as f64 / n;
    let sigma = (cfg.p_fa * (1.0 - cfg.p_fa) / n).sqrt();
    assert!((rate - cfg.p_fa).abs() <= 3.0 * sigma, "rate {rate}");
}

#[test]
fn threshold_factor_matches_exponential_tail() {
    // P(E > T * mean of n exps) = (1 + T/n)^-n
    for n in [4usize, 8, 16, 32] {
        for pfa in [1e-1, 1e-2, 1e-4] {
            let t = cfar_threshold_factor(n, pfa);
            let p = (1.0 + t / n as f64).powf(-(n as f64));
            assert!(rel(p, pfa) < 1e-10);
        }
    }
}

#[test]
fn cfar_finds_an_isolated_spike() {
    let mut p = vec![1.0; 48];
    p[20] = 200.0;
    let d = cfar_detect(&p, &CfarConfig::default()).unwrap();
    assert!(d[20]);
    assert_eq!(d.iter().filter(|v| **v).count(), 1);
}

#[test]
fn echo_is_linear_in_the_object_amplitudes() {
    let g = ArrayGeometry::half_wavelength(4, 6).unwrap();
    let x = WaveformBlock::random_unit_modulus(4, 12, 3);
    let a = obj(-20.0, 5, 1.3);
    let b = obj(35.0, 8, 0.7);
    let both = synthesize_echo(&x, &scene(vec![a, b], 0.0), &g, 0).unwrap();
    let only_a = synthesize_echo(&x, &scene(vec![a, obj(35.0, 8, 0.0)], 0.0), &g, 0).unwrap();
    let only_b = synthesize_echo(&x, &scene(vec![obj(-20.0, 5, 0.0), b], 0.0), &g, 0).unwrap();
    let sum: Vec<C64> = only_a.data.iter().zip(&only_b.data).map(|(p, q)| p + q).collect();
    assert!(vec_rel(&both.data, &sum) < 1e-12);
    let doubled = synthesize_echo(&x, &scene(vec![obj(-20.0, 5, 2.6), obj(35.0, 8, 1.4)], 0.0), &g, 0).unwrap();
    let twice: Vec<C64> = both.data.iter().map(|z| z * 2.0).collect();
    assert!(vec_rel(&doubled.data, &twice) < 1e-12);
}

#[test]
fn echo_noise_has_the_configured_variance() {
    let g = ArrayGeometry::half_wavelength(4, 8).unwrap();
    let x = WaveformBlock::random_unit_modulus(4, 512, 1);
    let e = synthesize_echo(&x, &scene(vec![obj(0.0, 0, 0.0)], 2.0), &g, 42).unwrap();
    let var = norm_sq(&e.data) / e.data.len() as f64;
    assert!((var - 2.0).abs() < 0.1, "{var}");
    let again = synthesize_echo(&x, &scene(vec![obj(0.0, 0, 0.0)], 2.0), &g, 42).unwrap();
    assert_eq!(e, again);
}

#[test]
fn capon_peaks_at_a_single_object() {
    let g = ArrayGeometry::half_wavelength(8, 8).unwrap();
    let x = WaveformBlock::random_unit_modulus(8, 32, 5);
    let sc = scene(vec![obj(20.0, 6, 1.0)], 0.01);
    let echoes: Vec<_> = (0..8).map(|s| synthesize_echo(&x, &sc, &g, s).unwrap()).collect();
    let angles: Vec<f64> = (-90..=90).map(|a| a as f64).collect();
    let bins: Vec<usize> = (0..32).collect();
    let img = capon_image(&echoes, &x, &g, &angles, &bins, 6).unwrap();
    let (ai, ri) = img.argmax();
    assert_eq!(img.angles_deg[ai], 20.0);
    assert_eq!(img.range_bins[ri], 6);
    assert_eq!(img.at(ai, ri), 0.0);
    assert!(img.amplitude_db.iter().all(|v| *v <= 0.0));
}

#[test]
fn detection_probability_saturates() {
    let g = ArrayGeometry::half_wavelength(8, 8).unwrap();
    let x = WaveformBlock::random_unit_modulus(8, 32, 2);
    let sc = scene(vec![obj(40.0, 10, 1.0)], 1.0);
    let pts = detection_probability(&x, &sc, &g, &[-60.0, 20.0], &CfarConfig::default(), 400, 0).unwrap();
    assert!(pts[0].pd <= 0.05, "weak {}", pts[0].pd);
    assert_eq!(pts[1].pd, 1.0);
    for p in &pts {
        assert!(p.ci_low <= p.pd && p.pd <= p.ci_high);
        assert_eq!(p.trials, 400);
    }
}

#[test]
fn clutter_lowers_sinr() {
    let g = ArrayGeometry::half_wavelength(8, 8).unwrap();
    let x = WaveformBlock::random_unit_modulus(8, 32, 8);
    let clean = target_sinr(&x, &scene(vec![obj(40.0, 7, 0.1)], 1.0), &g).unwrap();
    let mut last = clean;
    for amp in [0.1, 1.0, 10.0] {
        let s = target_sinr(&x, &scene(vec![obj(40.0, 7, 0.1), obj(40.0, 5, amp)], 1.0), &g).unwrap();
        assert!(s < last);
        last = s;
    }
}
