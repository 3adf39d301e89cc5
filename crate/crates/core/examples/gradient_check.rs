//! Compares tape gradients of the full training loss with central finite
//! differences on a tiny model.

use uspgnn::corpus::{expand_instances, Session};
use uspgnn::diffkernel::{init_params, ParameterStore, Tape, Tensor};
use uspgnn::graphs::build_global_graph;
use uspgnn::model::{Model, PreparedBatch};
use uspgnn::objective::NegativeSample;
use uspgnn::trainer::TrainConfig;

fn loss(model: &Model, store: &ParameterStore, batch: &PreparedBatch, neg: &NegativeSample) -> uspgnn::Result<f64> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let fwd = model.forward(&mut tape, &p, batch)?;
    let l = model.losses(&mut tape, &p, batch, &fwd, Some(neg))?;
    Ok(tape.value(l.total).item())
}

fn main() -> uspgnn::Result<()> {
    let sessions = vec![
        Session { user_index: 0, items: vec![0, 1, 2, 3, 1], start_time: 0 },
        Session { user_index: 0, items: vec![4, 5, 6, 4], start_time: 1 },
        Session { user_index: 1, items: vec![7, 8, 9, 10, 11, 2], start_time: 2 },
    ];
    let config = TrainConfig { d: 8, ..TrainConfig::default() };
    let graph = build_global_graph(&sessions, 12, 2)?;
    let model = Model::new(config.model_dims(12, 2), config.model_options(), &graph)?;
    let instances = expand_instances(&sessions);
    let batch = PreparedBatch::new(&instances)?;
    let neg = NegativeSample { anchors: vec![0, 1], negatives: vec![1, 0], per_anchor: 1 };
    let store = init_params(&model.dims, 0)?;

    let mut tape = Tape::new();
    let p = store.bind(&mut tape, true);
    let fwd = model.forward(&mut tape, &p, &batch)?;
    let l = model.losses(&mut tape, &p, &batch, &fwd, Some(&neg))?;
    let grads = tape.backward(l.total)?;
    println!("loss {:.6} over {} instances", tape.value(l.total).item(), batch.len());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for name in store.names() {
        let value = store.value(name)?;
        let zero = Tensor::zeros(value.rows(), value.cols());
        let analytic = grads.get(p.get(name)?).unwrap_or(&zero);
        let mut name_worst: f64 = 0.0;
        for idx in 0..value.len() {
            let mut probe = store.clone();
            let mut t = value.clone();
            t.data_mut()[idx] += h;
            probe.insert(name, t.clone());
            let plus = loss(&model, &probe, &batch, &neg)?;
            t.data_mut()[idx] -= 2.0 * h;
            probe.insert(name, t);
            let minus = loss(&model, &probe, &batch, &neg)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[idx];
            // below 1e-6 the difference quotient is mostly rounding noise
            let scale = a.abs().max(numeric.abs()).max(1e-6);
            name_worst = name_worst.max((a - numeric).abs() / scale);
        }
        println!("{name:<24} {:>6} scalars  worst relative error {name_worst:.2e}", value.len());
        worst = worst.max(name_worst);
    }
    println!("overall worst relative error {worst:.2e}");
    Ok(())
}
