//! Central finite differences against the tape's reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenir::embeddings::synth_table;
use scenir::graph::{build_matrices, preprocess, GraphMatrices};
use scenir::model::{standard_normal, EncodeMode, ForwardPass, GnnKind, ModelConfig, Scenir};
use scenir::synthetic::{synth_corpus, SynthCorpusConfig};
use scenir::tensor::{Tape, Tensor, TensorError, Var};

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
// Entries whose true gradient is ~0 are compared absolutely.
const ABS_FLOOR: f64 = 1e-7;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Values in `[-hi, -gap] ∪ [gap, hi]`, keeping kinks at zero out of reach of
/// the finite-difference step.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gap: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let v = rng.gen_range(gap..hi);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Reduces a possibly non-scalar output to a scalar with fixed random weights
/// so every output entry contributes to the checked gradient.
fn scalarise(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var, TensorError> {
    let (r, c) = tape.value(out).shape();
    if (r, c) == (1, 1) {
        return Ok(out);
    }
    let w = tape.constant(Tensor::from_vec(r, c, weights.data()[..r * c].to_vec()).unwrap())?;
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn evaluate(inputs: &[Tensor], weights: &Tensor, build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let s = scalarise(&mut tape, out, weights).unwrap();
    tape.value(s).item()
}

fn check(name: &str, seed: u64, inputs: Vec<Tensor>, build: &Build) -> Result<usize, String> {
    let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let weights = random(&mut wrng, 16, 16, -1.0, 1.0);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone()).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    let loss = scalarise(&mut tape, out, &weights).unwrap();
    tape.backward(loss).unwrap();

    let mut checked = 0;
    for (i, v) in vars.iter().enumerate() {
        let grad = tape
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for e in 0..inputs[i].len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[e] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[e] -= H;
            let numeric =
                (evaluate(&plus, &weights, build) - evaluate(&minus, &weights, build)) / (2.0 * H);
            let analytic = grad.data()[e];
            if !close(analytic, numeric) {
                return Err(format!(
                    "{name} seed {seed}: input {i} entry {e}: analytic {analytic} vs numeric {numeric}"
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn for_seeds(
    seeds: u64,
    name: &str,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    build: &Build,
) -> Result<usize, String> {
    let mut checked = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = make(&mut rng);
        checked += check(name, seed, inputs, build)?;
    }
    Ok(checked)
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5))
}

fn matmul(seeds: u64) -> Result<usize, String> {
    let mut n = 0;
    n += for_seeds(
        seeds,
        "matmul",
        |r| {
            let (a, b, c) = dims(r);
            vec![random(r, a, b, -2.0, 2.0), random(r, b, c, -2.0, 2.0)]
        },
        &|t, v| t.matmul(v[0], v[1]),
    )?;
    n += for_seeds(
        seeds,
        "matmul_exact",
        |r| {
            let (a, b, c) = dims(r);
            vec![random(r, a, b, -2.0, 2.0), random(r, b, c, -2.0, 2.0)]
        },
        &|t, v| t.matmul_exact(v[0], v[1]),
    )?;
    Ok(n)
}

fn elementwise_binary(seeds: u64) -> Result<usize, String> {
    let mut n = 0;
    let pair = |r: &mut ChaCha8Rng| {
        let (a, b, _) = dims(r);
        vec![random(r, a, b, -2.0, 2.0), random(r, a, b, -2.0, 2.0)]
    };
    n += for_seeds(seeds, "add", pair, &|t, v| t.add(v[0], v[1]))?;
    n += for_seeds(seeds, "sub", pair, &|t, v| t.sub(v[0], v[1]))?;
    n += for_seeds(seeds, "mul", pair, &|t, v| t.mul(v[0], v[1]))?;
    n += for_seeds(
        seeds,
        "add_row",
        |r| {
            let (a, b, _) = dims(r);
            vec![random(r, a, b, -2.0, 2.0), random(r, 1, b, -2.0, 2.0)]
        },
        &|t, v| t.add_row(v[0], v[1]),
    )?;
    Ok(n)
}

fn elementwise_unary(seeds: u64) -> Result<usize, String> {
    let mut n = 0;
    let one = |r: &mut ChaCha8Rng| {
        let (a, b, _) = dims(r);
        vec![random(r, a, b, -3.0, 3.0)]
    };
    n += for_seeds(seeds, "scale", one, &|t, v| t.scale(v[0], -1.7))?;
    n += for_seeds(seeds, "sigmoid", one, &|t, v| t.sigmoid(v[0]))?;
    n += for_seeds(seeds, "exp", one, &|t, v| t.exp(v[0]))?;
    n += for_seeds(
        seeds,
        "relu",
        |r| {
            let (a, b, _) = dims(r);
            vec![away_from_zero(r, a, b, 0.01, 3.0)]
        },
        &|t, v| t.relu(v[0]),
    )?;
    n += for_seeds(
        seeds,
        "clamp",
        |r| {
            let (a, b, _) = dims(r);
            // Shifted so no entry sits within the step of either bound at +-1.
            let mut x = away_from_zero(r, a, b, 0.01, 0.98);
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                if i % 3 == 0 {
                    *v *= 2.5;
                }
                if (v.abs() - 1.0).abs() < 0.01 {
                    *v *= 1.05;
                }
            }
            vec![x]
        },
        &|t, v| t.clamp(v[0], -1.0, 1.0),
    )?;
    Ok(n)
}

fn reductions_and_layout(seeds: u64) -> Result<usize, String> {
    let mut n = 0;
    let one = |r: &mut ChaCha8Rng| {
        let (a, b, _) = dims(r);
        vec![random(r, a, b, -2.0, 2.0)]
    };
    n += for_seeds(seeds, "transpose", one, &|t, v| t.transpose(v[0]))?;
    n += for_seeds(seeds, "sum_rows", one, &|t, v| t.sum_rows(v[0]))?;
    n += for_seeds(seeds, "sum", one, &|t, v| t.sum(v[0]))?;
    n += for_seeds(seeds, "mean", one, &|t, v| t.mean(v[0]))?;
    Ok(n)
}

fn losses(seeds: u64) -> Result<usize, String> {
    let mut n = 0;
    n += for_seeds(
        seeds,
        "mse_loss",
        |r| {
            let (a, b, _) = dims(r);
            vec![random(r, a, b, -2.0, 2.0), random(r, a, b, -2.0, 2.0)]
        },
        &|t, v| t.mse_loss(v[0], v[1]),
    )?;
    for seed in 0..seeds {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, _) = dims(&mut r);
        let target = Tensor::from_vec(a, b, (0..a * b).map(|_| r.gen_range(0..2) as f64).collect()).unwrap();
        let mask = Tensor::from_vec(a, b, (0..a * b).map(|i| if i % 4 == 1 { 0.0 } else { 1.0 }).collect()).unwrap();
        let logits = random(&mut r, a, b, -3.0, 3.0);
        let pw = r.gen_range(0.5..4.0);
        let tt = target.clone();
        n += check("weighted_bce_loss", seed, vec![logits.clone()], &move |t, v| {
            let p = t.sigmoid(v[0])?;
            t.weighted_bce_loss(p, &tt, pw, 1.3)
        })?;
        n += check("weighted_bce_loss_masked", seed, vec![logits.clone()], &move |t, v| {
            let p = t.sigmoid(v[0])?;
            t.weighted_bce_loss_masked(p, &target, &mask, pw, 0.7)
        })?;
        n += check("bce_with_logits(1)", seed, vec![logits.clone()], &|t, v| t.bce_with_logits(v[0], 1.0))?;
        n += check("bce_with_logits(0)", seed, vec![logits], &|t, v| t.bce_with_logits(v[0], 0.0))?;
    }
    n += for_seeds(
        seeds,
        "kl_gaussian",
        |r| {
            let (a, b, _) = dims(r);
            vec![random(r, a, b, -2.0, 2.0), random(r, a, b, -1.5, 1.5)]
        },
        &|t, v| t.kl_gaussian(v[0], v[1]),
    )?;
    Ok(n)
}

fn tiny_graphs(seed: u64, dim: usize) -> Vec<GraphMatrices> {
    let table = synth_table(seed, 6, 3, dim).unwrap();
    let corpus = synth_corpus(
        &table,
        &SynthCorpusConfig {
            graphs: 2,
            min_objects: 2,
            max_objects: 3,
            seed,
            ..Default::default()
        },
    )
    .unwrap();
    corpus
        .records
        .iter()
        .map(|r| build_matrices(&preprocess(r, &table).unwrap(), &table).unwrap())
        .collect()
}

fn full_loss(model: &Scenir, g: &GraphMatrices, noise: &Tensor) -> f64 {
    let mut pass = ForwardPass::new(model, false).unwrap();
    let latent = pass.encode(g, EncodeMode::Train, Some(noise)).unwrap();
    let (total, _) = pass.compute_loss(g, &latent).unwrap();
    pass.tape.value(total).item()
}

fn check_full_loss(seed: u64, cfg: ModelConfig) -> Result<usize, String> {
    let dim = cfg.input_dim;
    let mut model = Scenir::init(cfg).unwrap();
    let g = &tiny_graphs(seed, dim)[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Zero biases put ReLU inputs exactly on the kink at initialisation;
    // check at a generic point instead.
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for n in &names {
        for v in model.params.get_mut(n).unwrap().data_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let noise = standard_normal(&mut rng, g.node_count(), model.config.latent_dim);

    let mut pass = ForwardPass::new(&model, true).unwrap();
    let latent = pass.encode(g, EncodeMode::Train, Some(&noise)).unwrap();
    let (total, _) = pass.compute_loss(g, &latent).unwrap();
    pass.tape.backward(total).unwrap();
    let grads = pass.params.grads(&pass.tape);

    let mut checked = 0;
    for (p, grad) in grads.iter().enumerate() {
        let name = model.params.name(p).to_string();
        for e in 0..grad.len() {
            let mut plus = model.clone();
            plus.params.get_mut(&name).unwrap().data_mut()[e] += H;
            let mut minus = model.clone();
            minus.params.get_mut(&name).unwrap().data_mut()[e] -= H;
            let numeric = (full_loss(&plus, g, &noise) - full_loss(&minus, g, &noise)) / (2.0 * H);
            let analytic = grad.data()[e];
            if !close(analytic, numeric) {
                return Err(format!(
                    "full loss seed {seed}: {name}[{e}]: analytic {analytic} vs numeric {numeric}"
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        hidden_dim: 3,
        latent_dim: 2,
        edge_decoder_out: 2,
        encoder_layers: 2,
        seed,
        ..ModelConfig::with_input_dim(3)
    }
}

/// Every parameter entry of the total training loss, cycling through GIN,
/// GCN, unified-encoder and inner-product-decoder models.
pub fn full_loss_suite(seeds: u64) -> Result<usize, String> {
    let mut n = 0;
    for seed in 0..seeds {
        let base = tiny_config(seed);
        let cfg = match seed % 4 {
            0 => base,
            1 => ModelConfig { gnn_kind: GnnKind::Gcn, ..base },
            2 => ModelConfig { split_encoder: false, ..base },
            _ => ModelConfig { use_mlp_decoders: false, encoder_layers: 1, ..base },
        };
        n += check_full_loss(seed, cfg)?;
    }
    Ok(n)
}

/// Every differentiable tape primitive and loss; returns the number of
/// gradient entries compared.
pub fn primitive_suite(seeds: u64) -> Result<usize, String> {
    Ok(matmul(seeds)?
        + elementwise_binary(seeds)?
        + elementwise_unary(seeds)?
        + reductions_and_layout(seeds)?
        + losses(seeds)?)
}
