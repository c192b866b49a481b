//! Named example kernels.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::integrability::LambdaAtom;
use crate::kernel::{embed_mixed_lfsm, AtomSpec, KernelSpec, LfsmAtom, MixedLfsmSpec, StableParams};
use crate::profile::Profile;
use crate::quadrature::gauss_legendre;

pub const NAMES: [&str; 5] = ["linear", "tent", "indicator", "cosine", "mixed-lfsm"];

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryOptions {
    /// Gauss–Legendre nodes for the cosine mixing measure on `[1, 3]`.
    /// One node gives the single atom `z = 1`.
    pub cosine_nodes: usize,
    pub lfsm_atoms: Vec<LfsmAtom>,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        Self {
            cosine_nodes: 5,
            lfsm_atoms: vec![
                LfsmAtom {
                    weight: 0.6,
                    f1: 1.0,
                    f2: 0.0,
                },
                LfsmAtom {
                    weight: 0.4,
                    f1: 1.0,
                    f2: -0.5,
                },
            ],
        }
    }
}

pub fn build(name: &str, params: StableParams) -> Result<KernelSpec> {
    build_with(name, params, &RegistryOptions::default())
}

pub fn build_with(name: &str, params: StableParams, opts: &RegistryOptions) -> Result<KernelSpec> {
    match name {
        "linear" => single("linear", params, Profile::Linear { slope: 1.0 }),
        "tent" => single("tent", params, Profile::Tent { amplitude: 1.0 }),
        "indicator" => single(
            "indicator",
            params,
            Profile::Indicator {
                half: 0.5,
                amplitude: 1.0,
            },
        ),
        "cosine" => cosine(params, opts.cosine_nodes),
        "mixed-lfsm" => Ok(embed_mixed_lfsm(&MixedLfsmSpec::new(params, opts.lfsm_atoms.clone())?)),
        other => Err(Error::invalid(
            "name",
            format!("unknown kernel {other:?}; expected one of {}", NAMES.join(", ")),
        )),
    }
}

fn single(label: &str, params: StableParams, f: Profile) -> Result<KernelSpec> {
    KernelSpec::new(label, params, vec![AtomSpec::simple(1.0, f)])
}

/// The mixing measure of the cosine kernel: uniform probability on `[1, 3]`
/// discretised by Gauss–Legendre, or a unit atom at `z = 1`.
pub fn cosine_lambda(nodes: usize) -> Result<Vec<LambdaAtom>> {
    match nodes {
        0 => Err(Error::invalid("cosine_nodes", "need at least one node")),
        1 => Ok(vec![LambdaAtom { z: 1.0, weight: 1.0 }]),
        n => {
            let (x, w) = gauss_legendre(n);
            Ok(x.iter()
                .zip(&w)
                .map(|(x, w)| LambdaAtom {
                    z: 2.0 + x,
                    weight: 0.5 * w,
                })
                .collect())
        }
    }
}

fn cosine(params: StableParams, nodes: usize) -> Result<KernelSpec> {
    let atoms = cosine_lambda(nodes)?
        .into_iter()
        .map(|l| AtomSpec {
            weight: l.weight,
            q: TAU,
            b1: 1,
            s: l.z,
            f1: Profile::Cosine {
                frequency: 1.0,
                phase: 0.0,
                amplitude: 1.0,
            },
            f2: Profile::zero(),
            f3: 0.0,
        })
        .collect();
    KernelSpec::new("cosine", params, atoms)
}
