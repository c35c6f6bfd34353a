//! Metrics of an untrained network: on a cube-to-cube pair the identity
//! deformation scores perfectly, on cube-to-sphere it does not.

use stdnet::mesh::icosphere;
use stdnet::metrics::{evaluate, EvalConfig};
use stdnet::tagcn::{DeformationNetwork, NetworkConfig};
use stdnet::train::{make_fixtures, DatasetPair};

fn main() -> stdnet::Result<()> {
    let net = DeformationNetwork::new(NetworkConfig {
        channels: 16,
        layers_per_block: 2,
        ..NetworkConfig::default()
    })?;
    let sphere = make_fixtures("cube-to-sphere", 0)?.remove(0);
    let cube = DatasetPair::new("cube-to-cube", sphere.source.clone(), sphere.source.mesh().subdivide_n(2))?;
    let scaled = DatasetPair::new(
        "cube-to-small-sphere",
        sphere.source.clone(),
        icosphere(3).map_vertices(|p| p.map(|c| 0.5 * c)),
    )?;
    let config = EvalConfig {
        threshold: 1e-2,
        ..EvalConfig::default()
    };
    let report = evaluate(&net, &[cube, sphere, scaled], &config)?;
    print!("{}", report.to_json_lines()?);
    Ok(())
}
