use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use obnn::bnn::{self, QuantLayer, QuantizedBnParams, QuantizedBnnModel, SignMatrix, DEFAULT_Q};
use obnn::circuit;
use obnn::dealer::budget_for_inference;
use obnn::local::LocalCluster;
use obnn::secure_bnn::{reconstruct_output, secure_infer, share_model, share_query, SharedOutput};
use obnn::sharing::{reconstruct_vector, share_vector, SessionId, ShareVector};
use obnn::RingModulus;

use crate::files::{CmdResult, Failure};

const SESSION: SessionId = SessionId(1);

struct Outcome {
    name: &'static str,
    checked: usize,
    wrong: usize,
}

fn compare(name: &'static str, got: &[u64], want: impl Iterator<Item = u64>) -> Outcome {
    let want: Vec<u64> = want.collect();
    let wrong = got.iter().zip(&want).filter(|(g, w)| g != w).count() + got.len().abs_diff(want.len());
    Outcome {
        name,
        checked: want.len(),
        wrong,
    }
}

/// Every operation on every input pair of Z_{2^8}, two parties.
fn protocol_suite(seed: u64, inject_fault: bool) -> Result<Vec<Outcome>, Failure> {
    let m = RingModulus::M8;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let all: Vec<u64> = (0..256).collect();
    let xs: Vec<u64> = all.iter().flat_map(|&x| std::iter::repeat_n(x, 256)).collect();
    let ys: Vec<u64> = (0..256).flat_map(|_| all.iter().copied()).collect();
    let sx = share_vector(m, &xs, 2, SESSION, &mut rng)?;
    let sy = share_vector(m, &ys, 2, SESSION, &mut rng)?;
    let sa = share_vector(m, &all, 2, SESSION, &mut rng)?;
    let pairs = xs.len();
    let cmp_ands = circuit::cmp_circuit(8, 2).and_count();
    let half_ands = circuit::half_circuit(8, 2).and_count();
    let run = LocalCluster::new(2, m)
        .seed(seed)
        .triples(2 * pairs + all.len(), cmp_ands * pairs + half_ands * all.len())
        .corrupt_triples(inject_fault)
        .run(|ctx| {
            let p = ctx.party().index();
            let mut out: Vec<ShareVector> = vec![
                ctx.add_vec(&sx[p], &sy[p])?,
                ctx.add_const_vec(&sx[p], &ys)?,
                ctx.mul_vec(&sx[p], &sy[p])?,
                ctx.cmp_vec(&sx[p], &sy[p])?,
                ctx.half_vec(&sa[p])?,
            ];
            for c in 0..256u64 {
                out.push(ctx.mul_const_vec(&sa[p], c)?);
            }
            Ok(out)
        })?;
    let open = |k: usize| -> Result<Vec<u64>, Failure> {
        let parts: Vec<ShareVector> = run.outputs.iter().map(|o| o[k].clone()).collect();
        Ok(reconstruct_vector(&parts)?)
    };
    let pair_iter = || xs.iter().zip(&ys).map(|(&x, &y)| (x, y));
    let mut results = vec![
        compare("ADD: x + y mod 2^8", &open(0)?, pair_iter().map(|(x, y)| (x + y) % 256)),
        compare("ADDConst: x + c mod 2^8", &open(1)?, pair_iter().map(|(x, y)| (x + y) % 256)),
        compare("MUL: x * y mod 2^8", &open(2)?, pair_iter().map(|(x, y)| (x * y) % 256)),
        compare("CMP: [x < y]", &open(3)?, pair_iter().map(|(x, y)| u64::from(x < y))),
        compare("Half: [x <= 2^7]", &open(4)?, all.iter().map(|&x| u64::from(x <= 128))),
    ];
    let mut mul_const = compare("MULConst: c * x mod 2^8", &[], std::iter::empty());
    for c in 0..256u64 {
        let o = compare("", &open(5 + c as usize)?, all.iter().map(|&x| (x * c) % 256));
        mul_const.checked += o.checked;
        mul_const.wrong += o.wrong;
    }
    results.push(mul_const);
    Ok(results)
}

fn oracle_batch(seed: u64) -> Result<Outcome, Failure> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let m = RingModulus::M16;
    let mut outcome = Outcome {
        name: "secure inference equals plaintext inference",
        checked: 0,
        wrong: 0,
    };
    for model_index in 0..20 {
        let parties = 2 + model_index % 2;
        let sizes: Vec<usize> = (0..4).map(|_| rng.random_range(2..=12)).collect();
        let layers = sizes
            .windows(2)
            .map(|w| QuantLayer {
                weights: SignMatrix::from_fn(w[1], w[0], |_, _| rng.random()),
                bn: QuantizedBnParams {
                    scale: (0..w[1]).map(|_| rng.random_range(-50..=50)).collect(),
                    shift: (0..w[1]).map(|_| rng.random_range(-1000..=1000)).collect(),
                },
            })
            .collect();
        let model = QuantizedBnnModel::new(layers, DEFAULT_Q, m)?;
        let shares = share_model(&model, 15, parties, SessionId(0), &mut rng)?;
        for q in 0..3u64 {
            let input: Vec<i64> = (0..sizes[0]).map(|_| rng.random_range(-15..=15)).collect();
            let query = share_query(&model.meta(), &input, parties, SESSION, &mut rng)?;
            let run = LocalCluster::new(parties, m)
                .seed(seed + q)
                .budget(&budget_for_inference(&model.meta(), parties))
                .run(|ctx| {
                    let p = ctx.party().index();
                    secure_infer(ctx, &shares[p], &query[p])
                })?;
            let parts: Vec<SharedOutput> = run.outputs;
            let secure = reconstruct_output(&parts)?;
            outcome.checked += 1;
            outcome.wrong += usize::from(secure != bnn::infer(&model, &input)?);
        }
    }
    Ok(outcome)
}

pub fn run(seed: u64, inject_fault: bool) -> CmdResult {
    let start = Instant::now();
    let mut outcomes = protocol_suite(seed, inject_fault)?;
    outcomes.push(oracle_batch(seed)?);
    let mut failed = Vec::new();
    for o in &outcomes {
        if o.wrong == 0 {
            println!("[PASS] {} ({} cases)", o.name, o.checked);
        } else {
            println!("[FAIL] {} ({} of {} cases wrong)", o.name, o.wrong, o.checked);
            failed.push(o.name);
        }
    }
    println!("selftest finished in {:.1} s", start.elapsed().as_secs_f64());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::failed(format!("selftest failed: {}", failed.join(", "))))
    }
}
