//! Shared fixtures for the criterion benches.

use scope_core::numeric::{Matrix, RngStream};
use scope_core::proadapter::{AdapterConfig, AdapterStack, BackboneConfig, FrozenBackbone};
use scope_core::tpn::{TpnArch, TpnNet};

pub fn random_similarity(b: usize, m: usize, seed: u64) -> Matrix {
    let mut rng = RngStream::new(seed);
    Matrix::from_vec(b, m, (0..b * m).map(|_| 2.0 * rng.uniform() - 1.0).collect()).unwrap()
}

pub fn default_tpn() -> (TpnNet, Vec<f64>) {
    let net = TpnNet::new(TpnArch::default(), 4, 16, 5).unwrap();
    let params = net.init_params(&mut RngStream::new(1));
    (net, params)
}

pub fn default_adapted() -> (FrozenBackbone, AdapterStack, Vec<f64>) {
    let backbone = FrozenBackbone::new(BackboneConfig::default(), 4, 16).unwrap();
    let mut rng = RngStream::new(2);
    let stack = AdapterStack::new(AdapterConfig::default(), &backbone, 5, &mut rng).unwrap();
    let features = rng.normal_vec(backbone.feature_dim());
    (backbone, stack, features)
}
