//! Static shape calculator: activation shapes derived from a config alone.

use super::config::NetworkConfig;

fn conv_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len + 2 * (kernel / 2) - kernel) / stride + 1
}

/// `(stage, shape)` for every traced stage, in forward order. Stage names
/// match what [`Session::trace`](super::Session) records during a forward
/// pass.
pub fn shape_trace(cfg: &NetworkConfig, batch: usize) -> Vec<(String, Vec<usize>)> {
    let enc = &cfg.encoder;
    let (c1, c2) = enc.stage_channels;
    let len = cfg.input_length;
    let mut out = Vec::new();
    let mut enc_len = 0;
    for &k in &enc.kernel_sizes {
        let l1 = conv_len(len, k, 1);
        out.push((format!("encoder.p{k}.conv1"), vec![batch, c1, l1]));
        let lp = (l1 - enc.pool_kernel) / enc.pool_stride + 1;
        out.push((format!("encoder.p{k}.pool"), vec![batch, c1, lp]));
        enc_len = conv_len(lp, k, enc.second_stride);
        out.push((format!("encoder.p{k}.conv2"), vec![batch, c2, enc_len]));
    }
    out.push(("encoder.out".into(), vec![batch, c2, enc_len]));
    let mut l = enc_len;
    let mut c = c2;
    for (i, b) in cfg.blocks.iter().enumerate() {
        let name = format!("block{}", i + 1);
        let l1 = conv_len(l, 3, b.downsample_stride);
        out.push((format!("{name}.conv1"), vec![batch, b.out_channels, l1]));
        out.push((format!("{name}.conv2"), vec![batch, b.out_channels, conv_len(l1, 3, 1)]));
        out.push((
            format!("{name}.shortcut.conv"),
            vec![batch, b.out_channels, conv_len(l, 1, b.downsample_stride)],
        ));
        out.push((format!("{name}.out"), vec![batch, b.out_channels, l1]));
        l = l1;
        c = b.out_channels;
    }
    out.push(("head.pool".into(), vec![batch, c]));
    out.push(("logits".into(), vec![batch, cfg.num_classes]));
    out
}
