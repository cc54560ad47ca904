//! Parameter census and FLOP estimate for every variant at its default shape.

use prkan::audit::{count_params, estimate_flops};
use prkan::{Model, ModelSpec, Variant};

fn main() -> prkan::Result<()> {
    println!("{:<18} {:>14} {:>10} {:>12}", "variant", "structure", "params", "flops");
    for v in Variant::ALL {
        let spec = ModelSpec::new(v);
        let model = Model::build(&spec, 0)?;
        let structure = spec
            .structure
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        println!(
            "{:<18} {:>14} {:>10} {:>12}",
            v.label(),
            structure,
            count_params(&model).total(),
            estimate_flops(&model).total()
        );
    }
    let attn = Model::build(&ModelSpec::new(Variant::Attn), 0)?;
    println!("\n{}", count_params(&attn));
    Ok(())
}
