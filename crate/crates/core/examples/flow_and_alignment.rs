//! Backbone pieces: an invertible acoustic flow with its log-determinant,
//! and monotonic alignment search over a token-by-frame likelihood grid.

use stylefusion::backbone::{best_path, AcousticFlow};
use stylefusion::model::{normal_mat, StyleFusionModel};
use stylefusion::nn::{seeded_rng, Builder, Ctx};
use stylefusion::{FusionVariant, RunConfig};
use stylefusion_autodiff::{Mat, ParamStore, Tape};

fn main() {
    let cfg = RunConfig::desk();
    let mut store = ParamStore::<f64>::new();
    let mut rng = seeded_rng(5);
    let flow = AcousticFlow::new(&mut Builder::new(&mut store, &mut rng), 8, 4, FusionVariant::Hctscm, StyleFusionModel::fusion_dims(&cfg))
        .unwrap();
    // Output layers start at zero (identity flow); perturb them to see a
    // non-trivial transform.
    for l in &flow.layers {
        for id in [l.post.w, l.post.b.unwrap()] {
            let (r, c) = store.get(id).shape();
            *store.get_mut(id) = normal_mat(&mut rng, r, c, 0.2);
        }
    }
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let z = normal_mat::<f64>(&mut rng, 6, 8, 1.0);
    let style = ctx.constant(normal_mat(&mut rng, 1, cfg.d_style, 1.0));
    let spk = ctx.constant(normal_mat(&mut rng, 1, cfg.d_spk, 1.0));
    let (fz, logdet) = flow.forward(ctx, ctx.constant(z.clone()), style, spk).unwrap();
    let back = flow.inverse(ctx, fz, style, spk).unwrap().value();
    let err = back.data().iter().zip(z.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("flow: log|det J| = {:.4}, max roundtrip error {err:.2e}", logdet.scalar());

    // Three tokens over eight frames; the best path follows the bright cells.
    let ll = Mat::from_fn(3, 8, |t, f| -((f as f64 / 8.0 * 3.0 - t as f64 - 0.5).powi(2)));
    let a = best_path(&ll).unwrap();
    println!("alignment durations {:?}, frame path {:?}", a.durations, a.path);
}
