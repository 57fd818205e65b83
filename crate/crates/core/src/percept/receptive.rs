use serde::{Deserialize, Serialize};

use super::{PerceptError, PriorBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub stride: u64,
    pub kernel: u64,
}

impl LayerSpec {
    pub fn new(stride: u64, kernel: u64) -> Self {
        Self { stride, kernel }
    }
}

/// Folds `rf ← (rf − 1)·stride + kernel` over the layers, first layer first.
pub fn receptive_field(layers: &[LayerSpec], rf_in: u64) -> u64 {
    layers
        .iter()
        .fold(rf_in, |rf, l| (rf - 1) * l.stride + l.kernel)
}

/// Receptive field after each layer.
pub fn receptive_fields(layers: &[LayerSpec], rf_in: u64) -> Vec<u64> {
    layers
        .iter()
        .scan(rf_in, |rf, l| {
            *rf = (*rf - 1) * l.stride + l.kernel;
            Some(*rf)
        })
        .collect()
}

/// Parses one `stride kernel` pair per line. Blank lines and `#` comments
/// are skipped.
pub fn parse_layer_stack(text: &str) -> Result<Vec<LayerSpec>, PerceptError> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| PerceptError::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected `stride kernel`, got `{line}`")));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|e| err(format!("`{s}`: {e}")));
        let (stride, kernel) = (parse(fields[0])?, parse(fields[1])?);
        if stride == 0 || kernel == 0 {
            return Err(err("stride and kernel must be at least 1".into()));
        }
        layers.push(LayerSpec { stride, kernel });
    }
    Ok(layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAssignment {
    pub prior: PriorBox,
    pub required_rf: f64,
    /// First layer whose receptive field is at least twice the prior's
    /// larger side, if any.
    pub layer: Option<usize>,
}

/// Reports which layer first covers each prior with a receptive field of
/// twice its larger side. Nothing is enforced.
pub fn assign_priors_to_layers(layer_rfs: &[u64], priors: &[PriorBox]) -> Vec<LayerAssignment> {
    priors
        .iter()
        .map(|p| {
            let required_rf = 2.0 * p.width.max(p.height);
            let layer = layer_rfs.iter().position(|&rf| rf as f64 >= required_rf);
            LayerAssignment {
                prior: *p,
                required_rf,
                layer,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recursion_fixtures() {
        assert_eq!(receptive_field(&[], 1), 1);
        assert_eq!(receptive_field(&[LayerSpec::new(1, 3)], 1), 3);
        let stack = [
            LayerSpec::new(1, 3),
            LayerSpec::new(2, 3),
            LayerSpec::new(1, 3),
        ];
        assert_eq!(receptive_field(&stack, 1), 9);
        assert_eq!(receptive_fields(&stack, 1), vec![3, 7, 9]);
    }

    #[test]
    fn parses_layer_files() {
        let text = "# stem\n2 7\n\n1 3  # refine\n";
        assert_eq!(
            parse_layer_stack(text).unwrap(),
            vec![LayerSpec::new(2, 7), LayerSpec::new(1, 3)]
        );
        assert!(matches!(
            parse_layer_stack("1\n"),
            Err(PerceptError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_layer_stack("1 3\n0 3\n"),
            Err(PerceptError::Parse { line: 2, .. })
        ));
        assert!(parse_layer_stack("a b").is_err());
    }

    #[test]
    fn assignment_report() {
        let priors = [
            PriorBox {
                width: 4.0,
                height: 10.0,
            },
            PriorBox {
                width: 100.0,
                height: 50.0,
            },
        ];
        let report = assign_priors_to_layers(&[3, 7, 21, 45], &priors);
        assert_eq!(report[0].layer, Some(2));
        assert_eq!(report[1].layer, None);
    }

    proptest! {
        #[test]
        fn monotone_in_kernel_and_stride(
            layers in prop::collection::vec((1u64..4, 1u64..8), 1..6),
            idx in 0usize..6,
            bump_stride in any::<bool>(),
        ) {
            let base: Vec<LayerSpec> = layers.iter().map(|&(s, k)| LayerSpec::new(s, k)).collect();
            let mut grown = base.clone();
            let i = idx % grown.len();
            if bump_stride { grown[i].stride += 1 } else { grown[i].kernel += 1 }
            prop_assert!(receptive_field(&grown, 1) >= receptive_field(&base, 1));
        }
    }
}
