//! Static cost of the conventional 1-D ResNet-18 used as an ANN reference:
//! a `k=3` stem at full resolution (no max pooling), four stages of two
//! basic blocks at 64/128/256/512 channels, stride 2 on entering stages
//! 2-4 with 1x1 projection shortcuts, global pooling and one fc layer.

use super::count::{flops_conv, flops_fc, OpCount};

/// `(layer, ops)` per inference. Every conv and fc FLOP is a MAC; each
/// residual addition is one AC per element.
pub fn resnet18_1d(input_length: usize, num_classes: usize) -> Vec<(String, OpCount)> {
    let mut lines = Vec::new();
    let mac = |n: u64| OpCount::mac(n as f64);
    lines.push(("stem".to_string(), mac(flops_conv(3, input_length, 1, 64))));
    let (mut c, mut h) = (64, input_length);
    for (stage, &(co, stride)) in [(64, 1), (128, 2), (256, 2), (512, 2)].iter().enumerate() {
        for block in 0..2 {
            let s = if block == 0 { stride } else { 1 };
            let ho = h / s;
            let name = format!("stage{}.{block}", stage + 1);
            lines.push((format!("{name}.conv1"), mac(flops_conv(3, ho, c, co))));
            lines.push((format!("{name}.conv2"), mac(flops_conv(3, ho, co, co))));
            if s != 1 || c != co {
                lines.push((format!("{name}.shortcut"), mac(flops_conv(1, ho, c, co))));
            }
            lines.push((format!("{name}.add"), OpCount::ac((co * ho) as f64)));
            (c, h) = (co, ho);
        }
    }
    lines.push(("fc".into(), mac(flops_fc(c, num_classes))));
    lines
}
