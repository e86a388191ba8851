//! Resolve unit aliases, convert between compatible units and compare dimensions.

use measured::units::UnitRegistry;

fn main() -> measured::Result<()> {
    let reg = UnitRegistry::builtin();

    let km = reg.resolve("  Kilometres ")?;
    let mi = reg.resolve("mi")?;
    println!("2 km = {:.4} mi", reg.convert(2.0, km, mi)?);

    let c = reg.resolve("degrees Celsius")?;
    let k = reg.unit_id("K")?;
    println!("100 °C = {} K", reg.convert(100.0, c, k)?);

    let (value, canonical) = reg.canonicalize(30.0, reg.unit_id("mph")?)?;
    println!("30 mph = {value:.4} {}", reg.unit(canonical).name);

    match reg.convert(1.0, km, reg.unit_id("kg")?) {
        Ok(_) => unreachable!(),
        Err(e) => println!("km -> kg: {e}"),
    }

    println!("\ndistance between dimensions:");
    for (a, b) in [("velocity", "length"), ("area", "length"), ("power", "mass")] {
        let (da, db) = (reg.dimension_id(a)?, reg.dimension_id(b)?);
        println!(
            "  {a} [{}] vs {b} [{}]: {}",
            reg.dimension(da).exponents,
            reg.dimension(db).exponents,
            reg.manhattan(da, db)
        );
    }
    Ok(())
}
