//! Closed-form parameter and multiply-accumulate counters.
//!
//! "MFLOPs" figures elsewhere in the crate are MAC counts divided by 1e6;
//! biases are counted as parameters but not as MACs.

use super::model::{BackboneConfig, Domain, ModelConfig};

/// MACs per placement in the RU/DU split: the time backbone runs at the RU,
/// the frequency and CSI backbones and the fusion head at the DU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacBreakdown {
    pub time: u64,
    pub freq: u64,
    pub csi: u64,
    pub head: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.time + self.freq + self.csi + self.head
    }

    /// Fractions `(time, freq, csi, head)` of the total.
    pub fn shares(&self) -> [f64; 4] {
        let t = self.total() as f64;
        [
            self.time as f64 / t,
            self.freq as f64 / t,
            self.csi as f64 / t,
            self.head as f64 / t,
        ]
    }
}

fn backbone_params(bb: &BackboneConfig) -> u64 {
    let fb = &bb.filterbank;
    let mut total = (fb.out_channels * (2 * fb.kernel + 1)) as u64;
    let mut ci = fb.out_channels;
    for ds in &bb.ds_layers {
        total += (ci * ds.kernel + ci) as u64; // depthwise
        total += (ds.out_channels * ci + ds.out_channels) as u64; // pointwise
        ci = ds.out_channels;
    }
    total
}

fn dense_params(n_in: usize, n_out: usize) -> u64 {
    (n_out * n_in + n_out) as u64
}

/// Scalar parameter count of the fused model (three backbones + fusion head).
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let backbones: u64 = Domain::ALL.iter().map(|&d| backbone_params(cfg.backbone(d))).sum();
    backbones
        + dense_params(cfg.fused_feature_len(), cfg.head_hidden)
        + dense_params(cfg.head_hidden, cfg.classes)
}

/// MACs of one backbone applied to an `input_len` sequence.
pub fn backbone_macs(bb: &BackboneConfig, input_len: usize) -> u64 {
    let chain = bb.length_chain(input_len);
    let fb = &bb.filterbank;
    let mut total = (fb.out_channels * 2 * fb.kernel) as u64 * chain[1] as u64;
    let mut ci = fb.out_channels;
    for (idx, ds) in bb.ds_layers.iter().enumerate() {
        let lo = chain[idx + 2] as u64;
        total += (ci * ds.kernel) as u64 * lo; // depthwise
        total += (ds.out_channels * ci) as u64 * lo; // pointwise
        ci = ds.out_channels;
    }
    total
}

/// Per-placement MAC counts of one fused inference.
pub fn count_macs(cfg: &ModelConfig) -> MacBreakdown {
    let head = (cfg.fused_feature_len() * cfg.head_hidden + cfg.head_hidden * cfg.classes) as u64;
    MacBreakdown {
        time: backbone_macs(&cfg.time, cfg.input_lens[0]),
        freq: backbone_macs(&cfg.freq, cfg.input_lens[1]),
        csi: backbone_macs(&cfg.csi, cfg.input_lens[2]),
        head,
    }
}
