mod common;

use std::sync::OnceLock;

use common::{network, scene, store, white};
use trunet_core::engine::{sources_from_heads, stream_features, stream_spectrogram};
use trunet_core::losses::si_sdr;
use trunet_core::nn::TensorData;
use trunet_core::{quantize_model, AudioBuffer, Network, SignSampler, WeightStore};

const MIB: f64 = (1 << 20) as f64;

fn qstore() -> &'static WeightStore {
    static Q: OnceLock<WeightStore> = OnceLock::new();
    Q.get_or_init(|| {
        let calib: Vec<AudioBuffer> = (0..3).map(|i| scene(16000, 100 + i).x).collect();
        quantize_model(store(), &calib).unwrap()
    })
}

fn qnet() -> &'static Network {
    static N: OnceLock<Network> = OnceLock::new();
    N.get_or_init(|| Network::from_store(qstore()).unwrap())
}

#[test]
fn file_sizes_in_budget() {
    let f32_size = store().to_bytes().len() as f64 / MIB;
    let i8_size = qstore().to_bytes().len() as f64 / MIB;
    assert!((1.2..=1.8).contains(&f32_size), "{f32_size}");
    assert!((0.30..=0.45).contains(&i8_size), "{i8_size}");
}

#[test]
fn quantized_store_round_trips_through_bytes() {
    let back = WeightStore::from_bytes(&qstore().to_bytes()).unwrap();
    assert_eq!(&back, qstore());
    assert!(back.is_quantized());
    assert!(quantize_model(&back, &[white(2000, 0.1, 1)]).is_err());
    assert!(quantize_model(store(), &[]).is_err());
}

fn act_scale(site: &str) -> f32 {
    match &qstore().get(&format!("qscale.{site}")).unwrap().data {
        TensorData::F32(v) => v[0],
        other => panic!("qscale.{site} is {other:?}"),
    }
}

#[test]
fn activation_sites_rarely_saturate() {
    let q = qnet();
    for (i, x) in [scene(16000, 7).x, scene(16000, 8).x, scene(24000, 9).x].iter().enumerate() {
        let feats = stream_features(x, q).unwrap();
        let mut state = q.new_tgru_state();
        let mut counts: std::collections::BTreeMap<String, (usize, usize)> = Default::default();
        for t in 0..feats.frames {
            q.forward_frame_observed(feats.frame(t), &mut state, &mut |site, a| {
                let scale = act_scale(site);
                let e = counts.entry(site.to_string()).or_default();
                e.0 += a.data().iter().filter(|v| (*v / scale).abs() > 127.5).count();
                e.1 += a.data().len();
            })
            .unwrap();
        }
        assert!(!counts.is_empty());
        for (site, (sat, total)) in counts {
            let frac = sat as f64 / total as f64;
            assert!(frac <= 0.01, "clip {i}, site {site}: {:.2}% saturated", 100.0 * frac);
        }
    }
}

const SIGN_CHANNELS: [usize; 4] = [3, 4, 8, 9];

#[test]
fn int8_output_tracks_f32_output() {
    let (f, q) = (network(), qnet());
    for seed in 0..2 {
        let x = scene(16000, 200 + seed).x;
        let spec = stream_spectrogram(&x, f).unwrap();
        let feats = stream_features(&x, f).unwrap();
        let hf = f.forward_offline(&feats).unwrap();
        let mut hq = q.forward_offline(&feats).unwrap();
        for (a, b) in hf.chunks_exact(10).zip(hq.chunks_exact_mut(10)) {
            for c in SIGN_CHANNELS {
                b[c] = a[c];
            }
        }
        let sf = sources_from_heads(f, &spec, &hf, x.len(), &mut SignSampler::hard()).unwrap();
        let sq = sources_from_heads(q, &spec, &hq, x.len(), &mut SignSampler::hard()).unwrap();
        for (a, b) in sf.as_array().into_iter().zip(sq.as_array()) {
            let v = si_sdr(&a.samples, &b.samples).unwrap();
            assert!(v >= 30.0, "scene {seed}: {v:.2} dB");
        }
    }
}

#[test]
fn int8_task_metric_close_to_f32() {
    let (f, q) = (network(), qnet());
    for seed in 0..2 {
        let s = scene(16000, 300 + seed);
        let a = trunet_core::enhance_offline(f, &s.x, SignSampler::hard()).unwrap();
        let b = trunet_core::enhance_offline(q, &s.x, SignSampler::hard()).unwrap();
        let ga = si_sdr(&s.y_d.samples, &a.direct.samples).unwrap();
        let gb = si_sdr(&s.y_d.samples, &b.direct.samples).unwrap();
        assert!((ga - gb).abs() <= 1.0, "scene {seed}: f32 {ga:.2} dB, int8 {gb:.2} dB");
    }
}
