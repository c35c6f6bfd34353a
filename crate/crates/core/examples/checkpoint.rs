//! Saves a network, loads it back and checks the forward pass is
//! bit-identical.

use stdnet::tagcn::{DeformationNetwork, NetworkConfig};
use stdnet::train::make_fixtures;

fn main() -> stdnet::Result<()> {
    let net = DeformationNetwork::new(NetworkConfig {
        channels: 32,
        layers_per_block: 4,
        seed: 3,
        ..NetworkConfig::default()
    })?;
    let mut bytes = Vec::new();
    net.save(&mut bytes)?;
    println!("{} parameters, {} checkpoint bytes", net.parameter_count(), bytes.len());

    let back = DeformationNetwork::load(bytes.as_slice())?;
    let source = make_fixtures("two-box-chair", 0)?.remove(0).source.mesh();
    let same = net.deform(&source)? == back.deform(&source)?;
    println!("forward outputs identical after reload: {same}");
    Ok(())
}
