use crate::model::{ForwardOutput, ModelError};
use crate::tensor::{Graph, Scalar, Var};
use crate::vocab::TagId;

/// Loss terms of one example.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub total: Var,
    pub tag: Var,
    /// `None` when the example has no candidates.
    pub denoise: Option<Var>,
}

/// Tagger cross-entropy over unmasked positions plus `lambda` times the
/// denoiser's binary cross-entropy. With `sigmoid_tagger`, the tagger term is
/// the mean per-label binary cross-entropy against one-hot targets instead.
pub fn joint_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    out: &ForwardOutput,
    targets: &[Option<TagId>],
    denoise_labels: Option<&[bool]>,
    lambda: f64,
    sigmoid_tagger: bool,
) -> Result<JointLoss, ModelError> {
    let tag = if sigmoid_tagger {
        let (_, c) = g.dims(out.tag_logits);
        let mut onehot = Vec::with_capacity(targets.len() * c);
        for t in targets {
            for k in 0..c {
                onehot.push(t.map(|t| if t.index() == k { T::one() } else { T::zero() }));
            }
        }
        let probs = g.sigmoid(out.tag_logits);
        g.binary_cross_entropy(probs, &onehot)?
    } else {
        let idx: Vec<Option<usize>> = targets.iter().map(|t| t.map(TagId::index)).collect();
        g.cross_entropy(out.tag_logits, &idx)?
    };
    let denoise = match (out.denoise_probs, denoise_labels) {
        (Some(z), Some(labels)) => {
            let y: Vec<Option<T>> = labels
                .iter()
                .map(|&b| Some(if b { T::one() } else { T::zero() }))
                .collect();
            Some(g.binary_cross_entropy(z, &y)?)
        }
        _ => None,
    };
    let total = match denoise {
        Some(d) if lambda != 0.0 => {
            let w = g.scale(d, T::from_f64_lossy(lambda));
            g.add(tag, w)?
        }
        _ => tag,
    };
    Ok(JointLoss { total, tag, denoise })
}
