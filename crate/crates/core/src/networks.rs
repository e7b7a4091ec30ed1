//! Layer lists of common vision networks at batch size 1.
//!
//! Inception-v3's asymmetric `1×n`/`n×1` convolutions are approximated by
//! square 3×3 kernels, and spatial sizes follow this crate's `floor(H/S)`
//! output rule rather than the original valid-padding sizes.

use crate::error::{Error, Result};
use crate::partition::LayerSpec;

pub const BUNDLED_NETWORKS: [&str; 4] = ["vgg16", "resnet18", "resnet34", "inception_v3"];

fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "vgg16" => include_str!("../data/networks/vgg16.json"),
        "resnet18" => include_str!("../data/networks/resnet18.json"),
        "resnet34" => include_str!("../data/networks/resnet34.json"),
        "inception_v3" => include_str!("../data/networks/inception_v3.json"),
        _ => return None,
    })
}

pub fn bundled(name: &str) -> Result<Vec<LayerSpec>> {
    let json = source(name).ok_or_else(|| {
        Error::Planning(format!(
            "unknown network `{name}` (bundled: {})",
            BUNDLED_NETWORKS.join(", ")
        ))
    })?;
    LayerSpec::parse_model(json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_networks_parse() {
        for name in BUNDLED_NETWORKS {
            assert!(!bundled(name).unwrap().is_empty());
        }
        assert!(bundled("alexnet").is_err());
    }

    #[test]
    fn vgg16_shape() {
        let layers = bundled("vgg16").unwrap();
        let ops = layers.iter().filter(|l| matches!(l, LayerSpec::Op(_))).count();
        assert_eq!(ops, 16);
        assert_eq!(layers.len() - ops, 5);
    }
}
