use ndarray::Array4;
use refinegan_core::losses::{compose, finalize_labels};
use refinegan_core::volume::{default_class_names, extract_slices};
use refinegan_core::{AcquisitionPlane, SegMap, Volume};
use refinegan_nets::{NetKind, Network, NormStats, Tensor};

use crate::data::{array_tensor, normalize_input, restack_labels};
use crate::error::{Result, TrainError};
use crate::steps::{binarize, refinement_input};

/// Segments a whole volume slice by slice along `plane`, with normalization
/// statistics taken over the whole patient. With a refinement network the
/// predicted error masks are binarized at 0.5 and composed with the hard
/// generator output; otherwise the result is the generator argmax.
pub fn predict(
    generator: &mut Network<f32>,
    refinement: Option<&mut Network<f32>>,
    volume: &Volume,
    plane: AcquisitionPlane,
) -> Result<SegMap> {
    let cfg = generator.config().clone();
    if generator.kind() != NetKind::Generator {
        return Err(TrainError::Data(format!("expected a generator, got a {}", generator.kind())));
    }
    let [_, h, w] = plane.slice_shape(volume.spatial_shape());
    if (h, w) != (cfg.height, cfg.width) || volume.channels() != cfg.in_channels {
        return Err(TrainError::Data(format!(
            "volume slices are {h}x{w} with {} channels along {plane}, network expects {}x{} with {}",
            volume.channels(),
            cfg.height,
            cfg.width,
            cfg.in_channels
        )));
    }
    let x = array_tensor(extract_slices(volume, plane).slices)?;
    let x = normalize_input(&x, None)?;
    let probs = generator.forward(&x, &NormStats::Batch, false)?.output;
    let classes = cfg.class_count;
    let composed: Tensor<f32> = match refinement {
        None => probs,
        Some(r) => {
            if r.kind() != NetKind::Refinement || r.config().class_count != classes {
                return Err(TrainError::Data("refinement network does not match the generator".into()));
            }
            let masks = r.forward(&refinement_input(&x, &probs)?, &NormStats::Batch, false)?.output;
            let masks = masks.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            let (fp, fn_) = masks.split_channels(classes);
            let hard = binarize(&probs);
            Tensor::new(hard.shape(), compose(hard.data(), fp.data(), fn_.data())?)?
        }
    };
    let [n, sh, sw, sc] = composed.shape();
    let arr = Array4::from_shape_vec((n, sh, sw, sc), composed.into_data()).expect("shape matches");
    let labels = restack_labels(finalize_labels(arr.view()), plane);
    let names = if classes >= 2 { default_class_names(classes) } else { default_class_names(2) };
    Ok(SegMap::from_labels(labels, names, volume.spacing())?)
}
