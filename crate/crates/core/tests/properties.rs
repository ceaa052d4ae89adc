use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use oslsp_core::train::extract_features;
use oslsp_core::{
    init_params, Architecture, Dataset64, Error, ExperimentConfig, Model32, Model64, ProportionVector, Tape,
    Var,
};

/// Builds a random expression over the leaves from an op script, keeping
/// every intermediate finite and away from singular points.
fn scripted(t: &mut Tape<f64>, p: &[Var], script: &[(u8, usize, usize)]) -> oslsp_core::Result<Var> {
    let mut nodes: Vec<Var> = p.to_vec();
    for &(op, i, j) in script {
        let a = nodes[i % nodes.len()];
        let b = nodes[j % nodes.len()];
        let v = match op % 9 {
            0 => t.add(a, b),
            1 => t.sub(a, b),
            2 => t.mul(a, b),
            3 => t.tanh(a),
            4 => {
                let sq = t.square(b);
                let d = t.add_const(sq, 1.0);
                t.div(a, d)
            }
            5 => {
                let sq = t.square(a);
                let s = t.add_const(sq, 0.5);
                t.ln(s)
            }
            6 => {
                let th = t.tanh(a);
                t.exp(th)
            }
            7 => {
                let sq = t.square(a);
                let s = t.add_const(sq, 0.25);
                t.sqrt(s)
            }
            _ => t.norm_cdf(a),
        };
        nodes.push(v);
    }
    let tail = &nodes[p.len()..];
    Ok(if tail.is_empty() { t.sum(p) } else { t.sum(tail) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_rule_matches_finite_differences(
        params in prop::collection::vec(-1.5f64..1.5, 1..5),
        script in prop::collection::vec((0u8..9, 0usize..16, 0usize..16), 1..12),
    ) {
        // mixed tolerance: scripts can cancel to exact zeros, where a purely
        // relative measure only sees finite-difference roundoff
        let eval = |p: &[f64]| {
            let mut t = Tape::new();
            let vs = t.leaves(p);
            let r = scripted(&mut t, &vs, &script).unwrap();
            t.value(r)
        };
        let mut t = Tape::new();
        let vs = t.leaves(&params);
        let root = scripted(&mut t, &vs, &script).unwrap();
        let analytic = t.backward(root).unwrap().wrt_all(&vs);
        let h = 1e-5;
        for i in 0..params.len() {
            let mut up = params.clone();
            up[i] += h;
            let mut down = params.clone();
            down[i] -= h;
            let numeric = (eval(&up) - eval(&down)) / (2.0 * h);
            prop_assert!(
                (analytic[i] - numeric).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "param {i}: analytic {} vs numeric {numeric}", analytic[i]
            );
        }
    }

    #[test]
    fn gradients_are_linear_in_the_root(
        params in prop::collection::vec(-1.0f64..1.0, 2..5),
        c in -3.0f64..3.0,
    ) {
        let script = [(2u8, 0usize, 1usize), (3, 2, 0), (5, 3, 1)];
        let mut t = Tape::new();
        let vs = t.leaves(&params);
        let root = scripted(&mut t, &vs, &script).unwrap();
        let scaled = t.scale(root, c);
        let g1 = t.backward(root).unwrap().wrt_all(&vs);
        let gc = t.backward(scaled).unwrap().wrt_all(&vs);
        for (a, b) in g1.iter().zip(&gc) {
            prop_assert!((a * c - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn proportion_vectors_reject_bad_input(v in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let s: f64 = v.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            let rejected = matches!(ProportionVector::new(v), Err(Error::NotNormalized { .. }));
            prop_assert!(rejected);
        }
    }
}

fn small_arch() -> Architecture {
    Architecture {
        input_dim: 7,
        backbone_hidden: vec![9, 5],
        feature_dim: 4,
        head_hidden: vec![6],
        classes: 3,
    }
}

#[test]
fn feature_extraction_ignores_thread_count() {
    let model: Model64 = init_params(3, &small_arch()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let inputs: Vec<Vec<f64>> = (0..101)
        .map(|_| (0..7).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let serial = extract_features(&model.backbone, &inputs, 1).unwrap();
    for threads in [2, 3, 8] {
        assert_eq!(extract_features(&model.backbone, &inputs, threads).unwrap(), serial);
    }
}

#[test]
fn f32_models_track_f64_models() {
    let a64: Model64 = init_params(11, &small_arch()).unwrap();
    let a32: Model32 = init_params(11, &small_arch()).unwrap();
    let x = [0.3, -0.2, 1.1, 0.0, -0.7, 0.4, 0.9];
    let x32: Vec<f32> = x.iter().map(|&v| v as f32).collect();
    let f64s = a64.backbone.forward(&x).unwrap();
    let f32s = a32.backbone.forward(&x32).unwrap();
    for (a, b) in f64s.iter().zip(&f32s) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
    assert_eq!(a64.predict(&x).unwrap(), a32.predict(&x32).unwrap());
}

#[test]
fn checkpoint_file_roundtrip_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model: Model64 = init_params(5, &small_arch()).unwrap();
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf).unwrap();
    std::fs::write(&path, &buf).unwrap();
    let back = Model64::read_checkpoint(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(back, model);
    let mut again = Vec::new();
    back.write_checkpoint(&mut again).unwrap();
    assert_eq!(again, buf);
    // truncated weights are rejected
    let cut = &buf[..buf.len() - 3];
    assert!(matches!(Model64::read_checkpoint(cut), Err(Error::Checkpoint(_))));
}

#[test]
fn dataset_parse_errors_name_the_line() {
    let text = "3,2,2\nday0,1,0.1,0.2,0.3\nday0,7,0.1,0.2,0.3\n";
    match Dataset64::parse(text, "d.csv") {
        Err(e @ Error::Parse { line: 3, .. }) => assert!(e.to_string().starts_with("d.csv:3:")),
        other => panic!("{other:?}"),
    }
    let missing = Dataset64::load(std::path::Path::new("/definitely/not/here.csv"));
    assert!(matches!(missing, Err(Error::Io { .. })));
}

#[test]
fn config_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 99;
    cfg.train.sigma = 0.05;
    cfg.arch.head_hidden = vec![16];
    std::fs::write(&path, cfg.to_config_string()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}
