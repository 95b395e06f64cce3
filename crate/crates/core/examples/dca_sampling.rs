//! Deformable cross attention on a motion field: with zero offsets each
//! query reads its own cell; after perturbing the offset head the sample
//! locations spread out. Writes the sampling pattern as an image.
//!
//! cargo run --release --example dca_sampling -- [out.ppm]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vremd::bmd::Dca;
use vremd::config::ModelConfig;
use vremd::image::Image;
use vremd::nn::Init;
use vremd::params::trunc_normal;
use vremd::viz::sampling_overlay;
use vremd::{Graph, ParamStore};

fn main() -> vremd::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "dca_sampling.ppm".into());
    let cfg = ModelConfig::default();
    let (gh, gw) = cfg.grid();
    let n = gh * gw;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dca = {
        let mut init = Init::new(&mut store, &mut rng, 0.2);
        Dca::new(&mut init.scoped("dca"), &cfg)?
    };
    let motion = trunc_normal(&[n, cfg.dim], 1.0, &mut rng);
    let constraint = trunc_normal(&[n, cfg.dim], 1.0, &mut rng);

    let spread = |store: &ParamStore| -> vremd::Result<(f64, vremd::Tensor)> {
        let g = Graph::new(store);
        let (_, field) = dca.forward(&g, g.input(motion.clone()), g.input(constraint.clone()))?;
        let off = field.offsets.value();
        let mean = off.data().iter().map(|v| v.abs()).sum::<f64>() / off.len() as f64;
        Ok((mean, field.locations.value().as_ref().clone()))
    };
    let (zero, _) = spread(&store)?;
    println!("offset head at init: mean |offset| = {zero} cells (samples sit on reference points)");

    let shape = store.value(dca.theta.weight).shape().to_vec();
    store.get_mut(dca.theta.weight).value = trunc_normal(&shape, 0.1, &mut rng);
    let (moved, locations) = spread(&store)?;
    println!(
        "perturbed offset head: mean |offset| = {moved:.3} cells, bound {:.3}",
        cfg.offset_radius()
    );

    let canvas = Image::from_fn(cfg.image_height, cfg.image_width, |y, x| 0.15 + 0.1 * (((x / 8) + (y / 8)) % 2) as f64);
    sampling_overlay(&canvas, &locations, cfg.sample_points, (gh, gw), cfg.patch, 6, 2).write_ppm(out.as_ref())?;
    println!("sampling pattern written to {out}");
    Ok(())
}
