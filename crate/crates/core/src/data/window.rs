use crate::error::{Error, Result};

/// Cuts a `[channels, M]` record (channel-major) into windows of
/// `[channels, length]`, one every `stride` samples; a trailing remainder
/// shorter than `length` is dropped. `stride == length` gives
/// non-overlapping windows.
pub fn window_signal<T: Copy>(record: &[T], channels: usize, length: usize, stride: usize) -> Result<Vec<Vec<T>>> {
    if channels == 0 || length == 0 || stride == 0 {
        return Err(Error::Param("window", "channels, length and stride must be positive".into()));
    }
    if !record.len().is_multiple_of(channels) {
        return Err(Error::Data(format!(
            "record of {} values does not split into {channels} channels",
            record.len()
        )));
    }
    let m = record.len() / channels;
    if m < length {
        return Err(Error::Data(format!("record has {m} samples per channel, window needs {length}")));
    }
    let count = (m - length) / stride + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * stride;
            (0..channels)
                .flat_map(|c| record[c * m + start..c * m + start + length].iter().copied())
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_counts() {
        let rec = vec![0f32; 143_360];
        assert_eq!(window_signal(&rec, 1, 1024, 1024).unwrap().len(), 140);
        assert_eq!(window_signal(&vec![0f32; 1024], 1, 1024, 1024).unwrap().len(), 1);
        assert_eq!(window_signal(&vec![0f32; 2047], 1, 1024, 1024).unwrap().len(), 1);
        assert_eq!(window_signal(&vec![0f32; 2048], 1, 1024, 512).unwrap().len(), 3);
        assert!(window_signal(&vec![0f32; 1023], 1, 1024, 1024).is_err());
    }

    #[test]
    fn multichannel_layout() {
        // two channels of 6 samples: 0..6 and 10..16
        let rec: Vec<i32> = (0..6).chain(10..16).collect();
        let w = window_signal(&rec, 2, 3, 3).unwrap();
        assert_eq!(w, vec![vec![0, 1, 2, 10, 11, 12], vec![3, 4, 5, 13, 14, 15]]);
    }

    proptest! {
        #[test]
        fn non_overlapping_windows_concatenate_to_a_prefix(m in 8usize..400, len in 1usize..8) {
            let rec: Vec<usize> = (0..m).collect();
            let w = window_signal(&rec, 1, len, len).unwrap();
            let flat: Vec<usize> = w.concat();
            prop_assert_eq!(&flat[..], &rec[..flat.len()]);
            prop_assert!(m - flat.len() < len);
        }
    }
}
