//! Architecture specs, shape planning, network construction, and the
//! temporal-unroll contracts.

use photongest_core::models::{
    builtin_spec, plan, ArchitectureSpec, LayerSpec, Network, Stage,
};
use photongest_core::tensor::{Mode, Tape};
use photongest_core::{Error, Tensor32};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny_spiking_spec() -> ArchitectureSpec {
    ArchitectureSpec {
        name: "tiny-s".into(),
        input_shape: (1, 6, 6),
        num_classes: 3,
        timesteps: Some(4),
        v_th: 1.0,
        surrogate_alpha: 4.0,
        layers: vec![
            LayerSpec::Conv { out_channels: 2, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Batchnorm,
            LayerSpec::Spike,
            LayerSpec::Pool { window: 2 },
            LayerSpec::Flatten,
            LayerSpec::Fc { out_features: 3 },
        ],
    }
}

fn tiny_analog_spec() -> ArchitectureSpec {
    let mut spec = tiny_spiking_spec();
    spec.name = "tiny-a".into();
    spec.timesteps = None;
    for l in &mut spec.layers {
        if matches!(l, LayerSpec::Spike) {
            *l = LayerSpec::Relu;
        }
    }
    spec
}

#[test]
fn builtin_specs_validate_and_plan() {
    for name in ["cnn", "scnn", "smlp"] {
        let spec = builtin_spec(name).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.input_shape, (1, 25, 25));
        assert_eq!(spec.num_classes, 11);
    }
    assert!(builtin_spec("vit").is_none());

    let scnn = builtin_spec("scnn").unwrap();
    assert_eq!(scnn.timesteps, Some(8));
    assert_eq!(scnn.v_th, 1.0);
    assert_eq!(scnn.surrogate_alpha, 4.0);
    assert!(scnn.is_spiking());
    assert!(!builtin_spec("cnn").unwrap().is_spiking());
}

#[test]
fn scnn_plan_chains_the_published_shapes() {
    let spec = builtin_spec("scnn").unwrap();
    let plans = plan(&spec).unwrap();

    // conv1 keeps 25x25, pool crops to 24 then halves, conv2 keeps 12x12,
    // pool halves to 6, flatten to 1152, fc 64, fc 11
    assert_eq!(plans[0].output, Stage::Spatial { c: 16, h: 25, w: 25 });
    let pool1 = plans.iter().find(|p| matches!(p.spec, LayerSpec::Pool { .. })).unwrap();
    assert_eq!(pool1.pre_crop, Some((24, 24)));
    assert_eq!(pool1.output, Stage::Spatial { c: 16, h: 12, w: 12 });

    let flat = plans.iter().find(|p| matches!(p.spec, LayerSpec::Flatten)).unwrap();
    assert_eq!(flat.input, Stage::Spatial { c: 32, h: 6, w: 6 });
    assert_eq!(flat.output, Stage::Flat { features: 1152 });

    let last = plans.last().unwrap();
    assert_eq!(last.output, Stage::Flat { features: 11 });
}

#[test]
fn param_count_agrees_between_spec_and_network() {
    for name in ["cnn", "scnn", "smlp"] {
        let spec = builtin_spec(name).unwrap();
        let net: Network<f32> = Network::build(&spec, &mut rng(1)).unwrap();
        let (scalars, bytes) = net.count_params();
        assert_eq!(scalars, spec.param_count().unwrap(), "{name}");
        assert_eq!(bytes, scalars * 4);
    }
    // smlp by hand: (625*320 + 320) + (320*256 + 256) + (256*11 + 11)
    let smlp = builtin_spec("smlp").unwrap();
    assert_eq!(
        smlp.param_count().unwrap(),
        625 * 320 + 320 + 320 * 256 + 256 + 256 * 11 + 11
    );
}

#[test]
fn spec_validation_rejects_inconsistent_topologies() {
    // spike layer without timesteps
    let mut s = tiny_spiking_spec();
    s.timesteps = None;
    assert!(matches!(s.validate(), Err(Error::Validation(_))));

    // timesteps without any spike layer
    let mut s = tiny_analog_spec();
    s.timesteps = Some(8);
    assert!(matches!(s.validate(), Err(Error::Validation(_))));

    // dense layer before flatten
    let mut s = tiny_analog_spec();
    s.layers.insert(0, LayerSpec::Fc { out_features: 4 });
    assert!(s.validate().is_err());

    // spatial layer after flatten
    let mut s = tiny_analog_spec();
    s.layers.push(LayerSpec::Pool { window: 2 });
    assert!(s.validate().is_err());

    // final width must equal num_classes
    let mut s = tiny_analog_spec();
    s.num_classes = 5;
    assert!(s.validate().is_err());

    // bad dropout probability
    let mut s = tiny_analog_spec();
    s.layers.push(LayerSpec::Dropout { p: 1.0 });
    assert!(s.validate().is_err());

    // non-positive threshold and slope
    let mut s = tiny_spiking_spec();
    s.v_th = 0.0;
    assert!(s.validate().is_err());
    let mut s = tiny_spiking_spec();
    s.surrogate_alpha = f64::NAN;
    assert!(s.validate().is_err());
}

#[test]
fn toml_round_trip_preserves_specs() {
    for name in ["cnn", "scnn", "smlp"] {
        let spec = builtin_spec(name).unwrap();
        let text = spec.to_toml_string();
        let back = ArchitectureSpec::from_toml_str(&text).unwrap();
        assert_eq!(spec, back, "{name}");
    }
    assert!(ArchitectureSpec::from_toml_str("not toml [").is_err());
    // unknown fields are rejected, catching typos in config files
    let mut text = builtin_spec("cnn").unwrap().to_toml_string();
    text.push_str("\nturbo = true\n");
    assert!(ArchitectureSpec::from_toml_str(&text).is_err());
}

#[test]
fn shipped_config_files_match_the_builtins() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs");
    for name in ["cnn", "scnn", "smlp"] {
        let text = std::fs::read_to_string(root.join(format!("{name}.cfg"))).unwrap();
        let spec = ArchitectureSpec::from_toml_str(&text).unwrap();
        assert_eq!(spec, builtin_spec(name).unwrap(), "{name}.cfg drifted");
    }
}

#[test]
fn analog_twin_swaps_spikes_for_relu_at_equal_topology() {
    let spec = builtin_spec("scnn").unwrap();
    let twin = spec.analog_twin();
    twin.validate().unwrap();
    assert!(!twin.is_spiking());
    assert_eq!(twin.timesteps, None);
    assert_eq!(twin.layers.len(), spec.layers.len());
    assert_eq!(twin.param_count().unwrap(), spec.param_count().unwrap());
    assert!(twin
        .layers
        .iter()
        .all(|l| !matches!(l, LayerSpec::Spike)));
}

#[test]
fn build_is_deterministic_in_the_seed() {
    let spec = tiny_spiking_spec();
    let a: Network<f32> = Network::build(&spec, &mut rng(3)).unwrap();
    let b: Network<f32> = Network::build(&spec, &mut rng(3)).unwrap();
    let c: Network<f32> = Network::build(&spec, &mut rng(4)).unwrap();
    for (pa, pb) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(pa.name, pb.name);
        assert_eq!(pa.data, pb.data);
    }
    let identical = a
        .params
        .iter()
        .zip(c.params.iter())
        .all(|(pa, pc)| pa.data == pc.data);
    assert!(!identical);
}

#[test]
fn parameter_names_follow_the_layer_numbering() {
    let net: Network<f32> = Network::build(&builtin_spec("scnn").unwrap(), &mut rng(1)).unwrap();
    let names: Vec<&str> = net.params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(
        names,
        vec![
            "conv1.weight", "conv1.bias", "bn1.gamma", "bn1.beta",
            "conv2.weight", "conv2.bias", "bn2.gamma", "bn2.beta",
            "fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias",
        ]
    );
}

#[test]
fn temporal_run_requires_spiking_reset_state_and_frames() {
    let spec = tiny_spiking_spec();
    let mut net: Network<f32> = Network::build(&spec, &mut rng(5)).unwrap();

    let mut tape: Tape<f32> = Tape::new();
    let params = net.stage_params(&mut tape, false);
    let err = net
        .run_temporal(&mut tape, &params, &[], Mode::Eval, None, None)
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));

    let frame = tape.leaf(Tensor32::zeros(vec![1, 1, 6, 6]));
    net.run_temporal(&mut tape, &params, &[frame, frame], Mode::Eval, None, None)
        .unwrap();

    // potentials now carry state; a second run must be refused until reset
    let mut tape2: Tape<f32> = Tape::new();
    let params2 = net.stage_params(&mut tape2, false);
    let frame2 = tape2.leaf(Tensor32::zeros(vec![1, 1, 6, 6]));
    let err = net
        .run_temporal(&mut tape2, &params2, &[frame2], Mode::Eval, None, None)
        .unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "unreset state accepted");
    net.reset_states();
    net.run_temporal(&mut tape2, &params2, &[frame2], Mode::Eval, None, None)
        .unwrap();
    net.reset_states();

    // an analog network must refuse the temporal entry point
    let mut analog: Network<f32> = Network::build(&tiny_analog_spec(), &mut rng(5)).unwrap();
    let mut tape3: Tape<f32> = Tape::new();
    let params3 = analog.stage_params(&mut tape3, false);
    let frame3 = tape3.leaf(Tensor32::zeros(vec![1, 1, 6, 6]));
    assert!(matches!(
        analog.run_temporal(&mut tape3, &params3, &[frame3], Mode::Eval, None, None),
        Err(Error::Contract(_))
    ));
    // and the spiking network the analog one
    let mut tape4: Tape<f32> = Tape::new();
    let params4 = net.stage_params(&mut tape4, false);
    let frame4 = tape4.leaf(Tensor32::zeros(vec![1, 1, 6, 6]));
    assert!(matches!(
        net.forward_analog(&mut tape4, &params4, frame4, Mode::Eval, None, None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn rate_readout_is_the_mean_of_step_outputs() {
    let spec = tiny_spiking_spec();
    let mut net: Network<f32> = Network::build(&spec, &mut rng(6)).unwrap();
    let mut tape: Tape<f32> = Tape::new();
    let params = net.stage_params(&mut tape, false);

    let mut frames = Vec::new();
    for t in 0..4 {
        let v = if t % 2 == 0 { 1.0 } else { 0.0 };
        frames.push(tape.leaf(Tensor32::filled(vec![2, 1, 6, 6], v)));
    }
    let run = net
        .run_temporal(&mut tape, &params, &frames, Mode::Eval, None, None)
        .unwrap();
    net.reset_states();

    assert_eq!(run.step_outputs.len(), 4);
    assert_eq!(tape.shape(run.rate), [2, 3]);
    let mut want = [0.0f32; 6];
    for &out in &run.step_outputs {
        for (w, &v) in want.iter_mut().zip(tape.data(out)) {
            *w += v / 4.0;
        }
    }
    for (a, b) in tape.data(run.rate).iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn temporal_outputs_are_deterministic_and_potentials_persist() {
    let spec = tiny_spiking_spec();
    let mut net: Network<f32> = Network::build(&spec, &mut rng(7)).unwrap();

    let run_once = |net: &mut Network<f32>| -> Vec<f32> {
        let mut tape: Tape<f32> = Tape::new();
        let params = net.stage_params(&mut tape, false);
        let frame = tape.leaf(Tensor32::filled(vec![1, 1, 6, 6], 0.8));
        let run = net
            .run_temporal(&mut tape, &params, &[frame; 4], Mode::Eval, None, None)
            .unwrap();
        let out = tape.data(run.rate).to_vec();
        assert!(net.potentials().iter().all(|p| p.is_some()));
        net.reset_states();
        out
    };
    let a = run_once(&mut net);
    let b = run_once(&mut net);
    assert_eq!(a, b);
}

#[test]
fn from_parts_rejects_mismatched_payloads() {
    let spec = tiny_spiking_spec();
    let net: Network<f32> = Network::build(&spec, &mut rng(8)).unwrap();

    let mut params = net.params.clone();
    params[0].data.pop();
    assert!(Network::from_parts(spec.clone(), params, net.bn_states.clone()).is_err());

    let mut params = net.params.clone();
    params.swap(0, 1);
    assert!(Network::from_parts(spec.clone(), params, net.bn_states.clone()).is_err());

    assert!(Network::from_parts(spec.clone(), net.params.clone(), vec![]).is_err());

    let rebuilt = Network::from_parts(spec, net.params.clone(), net.bn_states.clone()).unwrap();
    for (a, b) in rebuilt.params.iter().zip(net.params.iter()) {
        assert_eq!(a.data, b.data);
    }
}

#[test]
fn dropout_masks_scale_survivors_by_the_keep_rate() {
    let spec = ArchitectureSpec {
        name: "drop".into(),
        input_shape: (1, 4, 4),
        num_classes: 2,
        timesteps: None,
        v_th: 1.0,
        surrogate_alpha: 4.0,
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Fc { out_features: 50 },
            LayerSpec::Relu,
            LayerSpec::Dropout { p: 0.5 },
            LayerSpec::Fc { out_features: 2 },
        ],
    };
    let net: Network<f32> = Network::build(&spec, &mut rng(9)).unwrap();
    let masks = net.sample_dropout_masks(4, &mut rng(10));
    assert_eq!(masks.len(), 1);
    assert_eq!(masks[0].len(), 4 * 50);
    let mut kept = 0usize;
    for &m in &masks[0] {
        assert!(m == 0.0 || m == 2.0, "mask entry {m}");
        if m > 0.0 {
            kept += 1;
        }
    }
    // keep rate 0.5 over 200 draws: 5 sigma ~ 0.177
    let rate = kept as f64 / masks[0].len() as f64;
    assert!((rate - 0.5).abs() < 0.18, "keep rate {rate}");
}
