//! Hierarchical distance between a labeled source batch and an unlabeled
//! target batch, followed by one frozen-plan loss evaluation with gradients.

use hierot::data::{gen_synthetic_pair, ShiftSpec};
use hierot::model::{ModelDims, ModelParams};
use hierot::{deephot_loss, hierarchical_distance, DeepHotConfig, DomainSolver, GroundCostParams, ProjectionSet, SinkhornConfig};

fn main() -> hierot::Result<()> {
    let shift = ShiftSpec::background_swap(9, 4, 5, 2, 0.0, 1.5, 0.2)?;
    let (source, target) = gen_synthetic_pair(&shift, 5, 10, 10, 1)?;
    let dims = ModelDims::default();
    let model = ModelParams::init(dims, 2)?;
    let params = GroundCostParams::new(1.0, 0.1, 1.0, ProjectionSet::random(16, dims.channels, 3)?)?;

    let src: Vec<_> = source
        .samples()
        .iter()
        .zip(source.labels())
        .map(|(g, &y)| Ok((model.embed(g)?, y)))
        .collect::<hierot::Result<_>>()?;
    let tgt: Vec<_> = target.samples().iter().map(|g| model.embed(g)).collect::<hierot::Result<_>>()?;

    for solver in [DomainSolver::Exact, DomainSolver::Balanced, DomainSolver::Unbalanced] {
        let hot = hierarchical_distance(&src, &tgt, &params, &model, solver, &SinkhornConfig::default())?;
        println!("{solver:?}: HOT value {:.4}, plan mass {:.4}", hot.hot_value, hot.plan.total_mass());
    }

    let out = deephot_loss(source.samples(), source.labels(), target.samples(), &params, &model, &DeepHotConfig::default())?;
    let mean = out.cost.mean_terms();
    println!(
        "loss {:.4} = source CE {:.4} + transport {:.4}",
        out.loss, out.source_ce, out.transport_term
    );
    println!("mean raw terms: sliced {:.3}, pooled {:.3}, semantic {:.3}", mean[0], mean[1], mean[2]);
    println!(
        "gradient norm over {} parameters: {:.4}",
        out.model_grads.parameter_count(),
        out.model_grads.tensors().iter().flat_map(|(_, _, v)| v.iter()).map(|g| g * g).sum::<f64>().sqrt()
    );
    Ok(())
}
