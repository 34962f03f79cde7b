use super::net::{LayerKind, LayerParams, LayerSpec, NetSpec};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeployError {
    #[error("nothing to deploy: the net has no Data layer")]
    NoDataLayer,
    #[error("deploy net is invalid: {0}")]
    Invalid(String),
}

/// Turns a training net into its inference form: Data layers become input
/// declarations, SoftmaxWithLoss becomes Softmax, Accuracy layers go away.
pub fn derive_deploy(train: &NetSpec) -> Result<NetSpec, DeployError> {
    if !train.layers.iter().any(|l| l.kind == LayerKind::Data) {
        return Err(DeployError::NoDataLayer);
    }
    let mut deploy = NetSpec { name: train.name.clone(), inputs: train.inputs.clone(), ..Default::default() };
    for layer in &train.layers {
        match layer.kind {
            LayerKind::Data => {
                if let Some(top) = layer.tops.first() {
                    deploy.inputs.push(top.clone());
                }
            }
            LayerKind::Accuracy => {}
            LayerKind::SoftmaxWithLoss => deploy.layers.push(LayerSpec {
                name: layer.name.clone(),
                kind: LayerKind::Softmax,
                bottoms: layer.bottoms.iter().take(1).cloned().collect(),
                tops: layer.tops.clone(),
                params: LayerParams::None,
            }),
            _ => deploy.layers.push(layer.clone()),
        }
    }
    deploy.validate().map_err(|d| DeployError::Invalid(d.to_string()))?;
    Ok(deploy)
}
