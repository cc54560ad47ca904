//! Builds a batch-normalized model, saves it, reloads it and confirms the
//! reloaded copy produces identical logits.

use prkan::layers::{checkpoint, NormPosition};
use prkan::nn::{Mode, NormKind};
use prkan::{Model, ModelSpec, Tape, Tensor, Variant};

fn logits(model: &mut Model, x: &Tensor) -> prkan::Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = model.forward(&mut tape, xv, Mode::Eval)?;
    Ok(tape.value(out).clone())
}

fn main() -> prkan::Result<()> {
    let spec = ModelSpec::new(Variant::Attn).with_norm(NormKind::Batch, NormPosition::Reduced);
    let mut model = Model::build(&spec, 42)?;
    let path = std::env::temp_dir().join("prkan_attn.ckpt");
    checkpoint::save(&model, &path)?;
    let size = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    println!("wrote {} ({size} bytes, {} params)", path.display(), model.num_params());

    let mut restored = checkpoint::load(&path)?;
    let x = Tensor::new(&[2, 784], (0..2 * 784).map(|i| (i % 255) as f64 / 255.0).collect())?;
    let diff = logits(&mut model, &x)?.max_abs_diff(&logits(&mut restored, &x)?);
    println!("max |logit difference| after reload: {diff}");
    std::fs::remove_file(&path).ok();
    Ok(())
}
