use super::checkpoint::{decode_model, encode_model};
use super::*;
use crate::testutil::{fd_max_rel_error, rng, uniform2};
use rand::seq::SliceRandom;

fn small_cfg() -> CodecConfig {
    CodecConfig {
        channels: 8,
        k_neighbors: 6,
        latent_channels: 4,
        attn_dim: 4,
        ..Default::default()
    }
}

fn tiny_cfg() -> CodecConfig {
    CodecConfig {
        num_scales: 2,
        sample_ratio: 2,
        eca_layers_per_block: 1,
        channels: 3,
        k_neighbors: 3,
        latent_channels: 2,
        attn_dim: 2,
        alphabet: 127,
    }
}

fn sphere(n: usize, seed: u64) -> Array2<f64> {
    let mut p = uniform2(n, 3, -1.0, 1.0, seed);
    for mut r in p.rows_mut() {
        let norm = r.dot(&r).sqrt();
        r.mapv_inplace(|v| v / norm);
    }
    p
}

#[test]
fn pyramid_levels_are_nested_and_deterministic() {
    let p0 = sphere(2048, 1);
    let cfg = small_cfg();
    let pyr = build_pyramid(p0.view(), &cfg).unwrap();
    let sizes: Vec<usize> = pyr.levels.iter().map(|l| l.nrows()).collect();
    assert_eq!(sizes, vec![2048, 512, 128]);
    for s in 0..2 {
        let fine = &pyr.levels[s];
        for row in pyr.levels[s + 1].rows() {
            assert!(fine.rows().into_iter().any(|r| r == row));
        }
        assert_eq!(pyr.levels[s + 1], fine.select(Axis(0), &pyr.selections[s]));
    }
    assert_eq!(build_pyramid(p0.view(), &cfg).unwrap(), pyr);
}

#[test]
fn pyramid_rejects_bad_sizes() {
    let cfg = small_cfg();
    assert!(matches!(build_pyramid(sphere(100, 2).view(), &cfg), Err(Error::Config(_))));
}

#[test]
fn zero_padding_matches_geometric_search() {
    let cfg = small_cfg();
    let pyr = build_pyramid(sphere(2048, 3).view(), &cfg).unwrap();
    for s in 0..2 {
        let coarse = uniform2(pyr.levels[s + 1].nrows(), 5, 0.5, 1.5, 4 + s as u64);
        let padded = zero_pad(coarse.view(), &pyr.selections[s], pyr.levels[s].nrows()).unwrap();
        let oracle =
            zero_pad_by_search(pyr.levels[s + 1].view(), coarse.view(), pyr.levels[s].view()).unwrap();
        assert_eq!(padded, oracle);
        let zero_rows = padded.rows().into_iter().filter(|r| r.iter().all(|&v| v == 0.0)).count();
        assert_eq!(zero_rows, pyr.levels[s].nrows() - pyr.levels[s + 1].nrows());
    }
}

#[test]
fn zero_padding_identity_and_errors() {
    let f = uniform2(5, 2, -1.0, 1.0, 5);
    let all: Vec<usize> = (0..5).collect();
    assert_eq!(zero_pad(f.view(), &all, 5).unwrap(), f);
    assert!(zero_pad(f.view(), &[0, 1, 2, 3, 9], 5).is_err());
    assert!(zero_pad(f.view(), &[0, 1], 5).is_err());
}

#[test]
fn init_is_seeded_and_sized() {
    let cfg = small_cfg();
    assert_eq!(model_init(&cfg, 3).unwrap(), model_init(&cfg, 3).unwrap());
    assert_ne!(model_init(&cfg, 3).unwrap(), model_init(&cfg, 4).unwrap());
    // Counted independently from the layer shapes.
    assert_eq!(model_init(&CodecConfig::default(), 0).unwrap().param_count(), 3_744_211);
    let desk = CodecConfig {
        channels: 16,
        k_neighbors: 8,
        latent_channels: 8,
        attn_dim: 8,
        ..Default::default()
    };
    assert_eq!(model_init(&desk, 0).unwrap().param_count(), 12_267);
}

#[test]
fn encode_decode_shapes_and_determinism() {
    let cfg = small_cfg();
    let model = model_init(&cfg, 7).unwrap();
    let patch = Patch::from_raw(&sphere(2048, 8), uniform2(2048, 3, 0.0, 1.0, 9)).unwrap();
    let latent = model.encode(&patch).unwrap();
    assert_eq!(latent.dim(), (128, 4));
    assert_eq!(model.encode(&patch).unwrap(), latent);
    let pyr = build_pyramid(patch.positions.view(), &cfg).unwrap();
    let rounded = latent.mapv(f64::round);
    let out = model.decode(rounded.view(), &pyr).unwrap();
    assert_eq!(out.dim(), (2048, 3));
    let rebuilt = build_pyramid(patch.positions.view(), &cfg).unwrap();
    assert_eq!(model.decode(rounded.view(), &rebuilt).unwrap(), out);
    assert!(model.decode(rounded.slice(ndarray::s![..100, ..]), &pyr).is_err());
}

#[test]
fn decoder_padding_contract() {
    let cfg = small_cfg();
    let model = model_init(&cfg, 10).unwrap();
    let pyr = build_pyramid(sphere(2048, 11).view(), &cfg).unwrap();
    let latent = uniform2(128, 4, -3.0, 3.0, 12).mapv(f64::round);
    let (_, traces) = model.decode_traced(latent.view(), &pyr).unwrap();
    assert_eq!(traces.len(), 2);
    for (t, s) in traces.iter().zip([1usize, 0]) {
        let sel = &pyr.selections[s];
        assert_eq!(t.padded.select(Axis(0), sel), t.coarse);
        let mut kept = vec![false; t.padded.nrows()];
        sel.iter().for_each(|&i| kept[i] = true);
        for (i, row) in t.padded.rows().into_iter().enumerate() {
            if !kept[i] {
                assert!(row.iter().all(|&v| v == 0.0));
            }
        }
    }
}

#[test]
fn encode_is_permutation_invariant() {
    let cfg = small_cfg();
    let model = model_init(&cfg, 13).unwrap();
    let pos = sphere(2048, 14);
    let colors = uniform2(2048, 3, 0.0, 1.0, 15);
    let mut perm: Vec<usize> = (0..2048).collect();
    perm.shuffle(&mut rng(16));
    let pyr = build_pyramid(pos.view(), &cfg).unwrap();
    let pos_p = pos.select(Axis(0), &perm);
    let pyr_p = build_pyramid(pos_p.view(), &cfg).unwrap();
    let a = model.encode_pyramid(&pyr, colors.view()).unwrap();
    let b = model
        .encode_pyramid(&pyr_p, colors.select(Axis(0), &perm).view())
        .unwrap();
    let coarse = pyr.coarsest();
    let coarse_p = pyr_p.coarsest();
    for (i, row) in coarse.rows().into_iter().enumerate() {
        let j = coarse_p.rows().into_iter().position(|r| r == row).expect("same coordinates");
        let diff = (&a.row(i) - &b.row(j)).mapv(f64::abs);
        assert!(diff.iter().all(|&d| d < 1e-9));
    }
}

#[test]
fn training_gradients_match_finite_differences() {
    let cfg = tiny_cfg();
    for seed in 0..3 {
        let mut model = model_init(&cfg, 20 + seed).unwrap();
        // Fine latents keep the rate term in a smooth region.
        model.to_latent.weight.mapv_inplace(|v| v * 4.0);
        let pos = sphere(16, 30 + seed);
        let colors = uniform2(16, 3, 0.0, 1.0, 40 + seed);
        let pyr = build_pyramid(pos.view(), &cfg).unwrap();
        let lambda = 0.05;
        let loss = |m: &Model| {
            let (o, _) = m.forward_train(&pyr, colors.view(), &mut rng(99)).unwrap();
            o.distortion + lambda * o.bits
        };
        let (out, cache) = model.forward_train(&pyr, colors.view(), &mut rng(99)).unwrap();
        let mut grad = model.zeros_like();
        model
            .backward_train(&pyr, colors.view(), &out, &cache, lambda, &mut grad)
            .unwrap();
        let err = fd_max_rel_error(&model, &grad, 1e-4, loss);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn every_parameter_gets_gradient() {
    let cfg = CodecConfig {
        channels: 6,
        attn_dim: 4,
        latent_channels: 3,
        k_neighbors: 4,
        sample_ratio: 2,
        ..tiny_cfg()
    };
    let model = model_init(&cfg, 50).unwrap();
    let mut grad = model.zeros_like();
    for seed in 0..4 {
        let pos = sphere(64, 60 + seed);
        let colors = uniform2(64, 3, 0.0, 1.0, 70 + seed);
        let pyr = build_pyramid(pos.view(), &cfg).unwrap();
        let (out, cache) = model.forward_train(&pyr, colors.view(), &mut rng(seed)).unwrap();
        model
            .backward_train(&pyr, colors.view(), &out, &cache, 0.01, &mut grad)
            .unwrap();
    }
    grad.visit("", &mut |name, _, v| {
        assert!(v.iter().any(|&g| g != 0.0), "{name} has no gradient");
    });
}

#[test]
fn checkpoint_round_trip() {
    let mut model = model_init(&small_cfg(), 17).unwrap();
    model.round_to_f32();
    let bytes = encode_model(&model);
    let back = decode_model(&bytes).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.config_hash(), model.config_hash());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.a2cm");
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn checkpoint_rejects_damage() {
    let model = model_init(&small_cfg(), 18).unwrap();
    let bytes = encode_model(&model);
    for cut in [0, 3, 5, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_model(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'Z';
    assert!(decode_model(&bad_magic).is_err());
    let mut long = bytes;
    long.push(1);
    assert!(decode_model(&long).is_err());
}

#[test]
fn config_hash_tracks_parameters() {
    let model = model_init(&small_cfg(), 19).unwrap();
    let mut other = model.clone();
    other.head.weight[[0, 0]] += 0.25;
    assert_ne!(model.config_hash(), other.config_hash());
    let mut cfg = model.clone();
    cfg.cfg.alphabet = 100;
    assert_ne!(model.config_hash(), cfg.config_hash());
}
