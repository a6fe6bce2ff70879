use super::*;
use crate::attention::SegmentKind;
use crate::rope::ConditionKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_cfg() -> ModelConfig {
    ModelConfig {
        token_dim: 6,
        d_model: 12,
        n_heads: 2,
        n_layers: 2,
        mlp_ratio: 2,
        time_freq_dim: 8,
        ..Default::default()
    }
}

fn rand_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, d: usize) -> TokenGrid<f64> {
    TokenGrid::from_data(h, w, d, (0..h * w * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conditioning(rng: &mut ChaCha8Rng, d: usize, n_groups: usize, style: bool) -> Conditioning<f64> {
    let mut groups = Vec::new();
    groups.push(ConditionGroup::new(1, ConditionKind::Spatial, rand_grid(rng, 2, 2, d), (4, 4), 0.0).unwrap());
    for g in 0..n_groups {
        groups.push(ConditionGroup::new(2 + g as u32, ConditionKind::Garment, rand_grid(rng, 2, 3, d), (4, 4), 4.0).unwrap());
    }
    Conditioning {
        style_tokens: if style { vec![1, 5, 0, 17, 2] } else { Vec::new() },
        groups,
    }
}

fn model(seed: u64) -> PromoDiT<f64> {
    let mut m = PromoDiT::<f64>::new(tiny_cfg(), seed).unwrap();
    m.params.randomize(seed + 100, 0.3);
    m
}

#[test]
fn fresh_model_predicts_zero() {
    let m = PromoDiT::<f64>::new(tiny_cfg(), 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = rand_grid(&mut rng, 4, 4, 6);
    let c = conditioning(&mut rng, 6, 1, true);
    let v = m.forward(&z, 0.4, &c, &ForwardOptions::default()).unwrap();
    assert!(v.data.iter().all(|&x| x == 0.0));
}

#[test]
fn gradients_match_finite_differences() {
    let m = model(1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0 = rand_grid(&mut rng, 4, 4, 6);
    let eps = rand_grid(&mut rng, 4, 4, 6);
    let pair = make_flow_pair(&z0, &eps, 0.37).unwrap();
    let cond = conditioning(&mut rng, 6, 2, true);
    let w: Vec<f64> = (0..16).map(|i| 0.5 + 0.1 * i as f64).collect();
    let opts = ForwardOptions::frozen(0.9);
    let prep = m.prepare((4, 4) , &cond).unwrap();
    let mut g = m.params.zeros_like();
    m.loss_and_grad(&prep, &pair, &cond, Some(&w), &opts, 1.0, &mut g).unwrap();
    let loss = |mm: &PromoDiT<f64>| {
        let out = mm.forward_prepared(&prep, &pair.z_t, pair.t, &cond, &opts).unwrap();
        weighted_fm_loss(&out, &pair.target, Some(&w)).unwrap().0
    };
    let h = 1e-5;
    let (mut ok, mut total) = (0usize, 0usize);
    for pi in 0..m.params.params().len() {
        for j in (0..m.params.params()[pi].data.len()).step_by(7) {
            let mut mp = m.clone();
            mp.params.params_mut()[pi].data[j] += h;
            let mut mm = m.clone();
            mm.params.params_mut()[pi].data[j] -= h;
            let num = (loss(&mp) - loss(&mm)) / (2.0 * h);
            let ana = g.params()[pi].data[j];
            let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-10);
            total += 1;
            if rel <= 1e-3 || (ana - num).abs() < 1e-9 {
                ok += 1;
            }
        }
    }
    assert!(ok as f64 >= 0.99 * total as f64, "{ok}/{total}");
}

#[test]
fn cached_forward_matches_frozen_full_forward() {
    let m = model(2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (n_groups, style) in [(1, true), (2, false), (3, true)] {
        let cond = conditioning(&mut rng, 6, n_groups, style);
        let opts = ForwardOptions::frozen(1.0);
        let prep = m.prepare((4, 4), &cond).unwrap();
        let z1 = rand_grid(&mut rng, 4, 4, 6);
        let (_, cache) = m.forward_capture(&prep, &z1, 1.0, &cond, &opts).unwrap();
        for t in [1.0, 0.55, 0.05] {
            let z = rand_grid(&mut rng, 4, 4, 6);
            let full = m.forward_prepared(&prep, &z, t, &cond, &opts).unwrap();
            let cached = m.forward_cached(&prep, &z, t, &cond.style_tokens, &cache).unwrap();
            assert_eq!(full, cached);
        }
    }
}

#[test]
fn condition_rows_ignore_latent() {
    let m = model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cond = conditioning(&mut rng, 6, 2, true);
    let opts = ForwardOptions::default();
    let z = rand_grid(&mut rng, 4, 4, 6);
    let z2 = rand_grid(&mut rng, 4, 4, 6);
    let (_, ta) = m.forward_traced(&z, 0.3, &cond, &opts).unwrap();
    let (_, tb) = m.forward_traced(&z2, 0.3, &cond, &opts).unwrap();
    let prep = m.prepare((4, 4), &cond).unwrap();
    let start = prep.n_live;
    assert_eq!(prep.layout.len_of(SegmentKind::Condition), prep.total() - start);
    for (a, b) in ta.iter().zip(&tb) {
        assert_eq!(a.data[start * 12..], b.data[start * 12..]);
        assert_ne!(a.data[..start * 12], b.data[..start * 12]);
    }
}

#[test]
fn rope_toggle_changes_output() {
    let m = model(5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cond = conditioning(&mut rng, 6, 2, false);
    let z = rand_grid(&mut rng, 4, 4, 6);
    let on = m.forward(&z, 0.5, &cond, &ForwardOptions::default()).unwrap();
    let mut off = m.clone();
    off.params.cfg.rope_on_conditions = false;
    assert_ne!(on, off.forward(&z, 0.5, &cond, &ForwardOptions::default()).unwrap());
}

#[test]
fn rejects_bad_inputs() {
    let m = model(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = ForwardOptions::default();
    let z = rand_grid(&mut rng, 4, 4, 6);
    let mut cond = conditioning(&mut rng, 6, 2, false);
    cond.groups[2].id = 2;
    assert!(matches!(m.forward(&z, 0.5, &cond, &opts), Err(crate::Error::DuplicateGroupId(2))));
    let mut cond = conditioning(&mut rng, 6, 1, false);
    cond.style_tokens = vec![999];
    assert!(m.forward(&z, 0.5, &cond, &opts).is_err());
    let cond = conditioning(&mut rng, 6, 1, false);
    assert!(m.forward(&rand_grid(&mut rng, 4, 4, 5), 0.5, &cond, &opts).is_err());
    let prep = m.prepare((4, 4), &cond).unwrap();
    assert!(m.forward_prepared(&prep, &rand_grid(&mut rng, 2, 4, 6), 0.5, &cond, &opts).is_err());
}
