use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::data::{generate_dataset, GenConfig};

fn small_config() -> ModelConfig {
    ModelConfig::new(
        FrameDims {
            n_frames: 4,
            height: 8,
            width: 8,
            n_classes: 4,
        },
        ArchConfig {
            latent_dim: 3,
            enc_hidden: 10,
            dec_hidden: 9,
            clf_hidden: 6,
        },
    )
    .unwrap()
}

fn subject() -> SegSequence {
    let cfg = GenConfig {
        n_subjects: 4,
        n_frames: 4,
        height: 8,
        width: 8,
        ..GenConfig::default()
    };
    generate_dataset(&cfg).unwrap().subjects.remove(0)
}

fn frame_tensor(s: &SegSequence, t: usize, c: &ModelConfig) -> Tensor {
    let mut data = Vec::new();
    let single = SegSequence::new(
        "f",
        false,
        s.meta,
        1,
        s.height(),
        s.width(),
        s.frame(t).to_vec(),
    )
    .unwrap();
    single.write_one_hot(c.n_classes, &mut data);
    Tensor::new(vec![c.frame_height, c.frame_width, c.n_classes], data).unwrap()
}

fn normal(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn zero_params_encode_to_zero() {
    let c = small_config();
    let p = ModelParams::zeros(c).unwrap();
    let (mu, logvar) = encode(&frame_tensor(&subject(), 0, &c), &p).unwrap();
    assert!(mu.data().iter().all(|&v| v == 0.0));
    assert!(logvar.data().iter().all(|&v| v == 0.0));
    assert_eq!(mu.shape(), &[3]);
}

#[test]
fn encode_is_deterministic_and_sensitive() {
    let c = small_config();
    let p = ModelParams::init(c, 5).unwrap();
    let s = subject();
    let f = frame_tensor(&s, 0, &c);
    assert_eq!(encode(&f, &p).unwrap(), encode(&f, &p).unwrap());

    let mut data = f.data().to_vec();
    // move pixel 0 from its class to the next one
    let cls = data[..4].iter().position(|&v| v == 1.0).unwrap();
    data[cls] = 0.0;
    data[(cls + 1) % 4] = 1.0;
    let g = Tensor::new(f.shape().to_vec(), data).unwrap();
    assert_ne!(encode(&f, &p).unwrap().0, encode(&g, &p).unwrap().0);
}

#[test]
fn encode_rejects_non_one_hot() {
    let c = small_config();
    let p = ModelParams::init(c, 5).unwrap();
    let mut f = frame_tensor(&subject(), 0, &c);
    f.data_mut()[1] = 1.0; // pixel 0 now has two hot classes or none
    f.data_mut()[0] = 1.0;
    assert!(matches!(encode(&f, &p), Err(ModelError::InvalidInput(_))));
    let wrong = Tensor::zeros(&[8, 8, 3]);
    assert!(encode(&wrong, &p).is_err());
}

#[test]
fn reparameterize_examples() {
    let mu = Tensor::new(vec![2], vec![0.3, -1.0]).unwrap();
    let lv = Tensor::new(vec![2], vec![0.7, 0.0]).unwrap();
    assert_eq!(reparameterize(&mu, &lv, &Tensor::zeros(&[2])).unwrap(), mu);

    let n = Tensor::new(vec![2], vec![0.5, -2.0]).unwrap();
    let zero_lv = Tensor::zeros(&[2]);
    let z = reparameterize(&mu, &zero_lv, &n).unwrap();
    assert_eq!(z.data(), &[0.8, -3.0]);

    let z = reparameterize(
        &Tensor::scalar(1.0),
        &Tensor::scalar(4f64.ln()),
        &Tensor::scalar(0.5),
    )
    .unwrap();
    assert!((z.item() - 2.0).abs() < 1e-15);
}

#[test]
fn zero_params_decode_to_uniform_and_classify_to_half() {
    let c = small_config();
    let p = ModelParams::zeros(c).unwrap();
    let logits = decode(&normal(&[3], 1), &p).unwrap();
    assert_eq!(logits.shape(), &[8, 8, 4]);
    assert!(logits.data().iter().all(|&v| v == 0.0));
    assert_eq!(classify(&normal(&[4, 3], 2), &p).unwrap(), (0.5, 0.5));
}

#[test]
fn decode_is_deterministic() {
    let p = ModelParams::init(small_config(), 9).unwrap();
    let z = normal(&[3], 3);
    assert_eq!(decode(&z, &p).unwrap(), decode(&z, &p).unwrap());
}

#[test]
fn class_probabilities_sum_to_one() {
    let p = ModelParams::init(small_config(), 11).unwrap();
    for seed in 0..50 {
        let mut z = normal(&[4, 3], seed);
        z.data_mut().iter_mut().for_each(|v| *v *= 10.0);
        let (pos, neg) = classify(&z, &p).unwrap();
        assert!((pos + neg - 1.0).abs() < 1e-12);
    }
}

#[test]
fn forward_subject_modes() {
    let c = small_config();
    let p = ModelParams::init(c, 13).unwrap();
    let s = subject();
    let mean = forward_subject(&s, &p, SubjectMode::Mean).unwrap();
    assert_eq!(mean, forward_subject(&s, &p, SubjectMode::Mean).unwrap());
    assert_eq!(mean.recon_logits.shape(), &[4, 8, 8, 4]);

    let zero = Tensor::zeros(&[4, 3]);
    assert_eq!(
        forward_subject(&s, &p, SubjectMode::Sampled(&zero)).unwrap(),
        mean
    );

    let a = forward_subject(&s, &p, SubjectMode::Sampled(&normal(&[4, 3], 1))).unwrap();
    let b = forward_subject(&s, &p, SubjectMode::Sampled(&normal(&[4, 3], 2))).unwrap();
    assert_ne!(a.p_pos, b.p_pos);
    assert!((a.p_pos + a.p_neg - 1.0).abs() < 1e-12);
}

#[test]
fn forward_subject_rejects_frame_count_mismatch() {
    let c = small_config();
    let p = ModelParams::init(c, 1).unwrap();
    let s = subject();
    let short = SegSequence::new("x", true, s.meta, 3, 8, 8, s.pixels()[..192].to_vec()).unwrap();
    assert!(matches!(
        forward_subject(&short, &p, SubjectMode::Mean),
        Err(ModelError::InvalidInput(_))
    ));
}

#[test]
fn predict_batch_matches_forward_subject() {
    let c = small_config();
    let p = ModelParams::init(c, 17).unwrap();
    let ds = generate_dataset(&GenConfig {
        n_subjects: 5,
        n_frames: 4,
        height: 8,
        width: 8,
        ..GenConfig::default()
    })
    .unwrap();
    let refs: Vec<_> = ds.subjects.iter().collect();
    let batch = predict_batch(&p, &refs).unwrap();
    for (s, pb) in ds.subjects.iter().zip(batch) {
        let single = forward_subject(s, &p, SubjectMode::Mean).unwrap().p_pos;
        assert!((single - pb).abs() < 1e-14);
    }
}

#[test]
fn vae_warm_start_keeps_classifier() {
    let c = small_config();
    let a = ModelParams::init(c, 1).unwrap();
    let b = ModelParams::init(c, 2).unwrap();
    let w = a.with_vae_from(&b).unwrap();
    assert_eq!(w.get(ParamId::EncW), b.get(ParamId::EncW));
    assert_eq!(w.get(ParamId::ClfW1), a.get(ParamId::ClfW1));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let ckpt = Checkpoint {
        params: ModelParams::init(small_config(), 21).unwrap(),
        seed: 21,
        epoch: 300,
    };
    let mut buf = Vec::new();
    write_checkpoint_to(&ckpt, &mut buf).unwrap();
    let back = read_checkpoint_from(buf.as_slice()).unwrap();
    assert_eq!(back.seed, 21);
    assert_eq!(back.epoch, 300);
    for (a, b) in ckpt.params.tensors().iter().zip(back.params.tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    let mut again = Vec::new();
    write_checkpoint_to(&back, &mut again).unwrap();
    assert_eq!(buf, again);

    assert!(read_checkpoint_from(&buf[..buf.len() - 3]).is_err());
    let mut extra = buf.clone();
    extra.push(0);
    assert!(read_checkpoint_from(extra.as_slice()).is_err());
}
