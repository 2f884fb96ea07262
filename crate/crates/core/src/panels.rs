//! Grayscale inspection panels written as binary PGM (P5, 8-bit).
//!
//! One image per quantity: the normalized MR input, the real and
//! synthesized CT in a fixed [-1000, 2000] HU display window, the attention
//! map with its native [0, 1] range stretched over the full gray range, and
//! an absolute-difference map |real - syn| scaled to the same window span.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::phantom::CT_WINDOW;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("panel grids must all be {expected} values, got {got} for {name}")]
    ShapeMismatch {
        name: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Affine map of `v` from `[lo, hi]` (clamping outside) onto 0..=255.
fn to_gray(v: f64, lo: f64, hi: f64) -> u8 {
    let clamped = v.clamp(lo, hi);
    (((clamped - lo) / (hi - lo)) * 255.0).round() as u8
}

/// Writes one 8-bit binary PGM image.
pub fn write_pgm(
    path: &Path,
    height: usize,
    width: usize,
    pixels: &[u8],
) -> Result<(), PanelError> {
    assert_eq!(pixels.len(), height * width, "pixel count mismatch");
    let io_err = |source| PanelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    write!(file, "P5\n{width} {height}\n255\n").map_err(io_err)?;
    file.write_all(pixels).map_err(io_err)?;
    Ok(())
}

/// Maps a grid of values affinely from `[lo, hi]` (clamping outside) onto
/// 8-bit gray, ready for [`write_pgm`].
pub fn gray_panel(values: &[f32], lo: f64, hi: f64) -> Vec<u8> {
    values.iter().map(|&v| to_gray(v as f64, lo, hi)).collect()
}

/// The co-registered image planes of one panel set, each `height * width`
/// values in row-major order.
pub struct PanelPlanes<'a> {
    /// Normalized MR in `[-1, 1]`.
    pub mr: &'a [f32],
    /// Reference CT in HU.
    pub real_ct: &'a [f32],
    /// Synthesized CT in HU.
    pub syn_ct: &'a [f32],
    /// Attention weights in `[0, 1]`, when the model produces them.
    pub attention: Option<&'a [f32]>,
}

/// Writes the panel set into `out_dir` as `{prefix}{name}.pgm` files:
/// `mr`, `real_ct` and `syn_ct` (HU windowed to [-1000, 2000]), `diff`
/// (|real - syn| over the window span), and `attention` (full gray range)
/// when one is given. Returns the written paths.
pub fn emit_panels(
    planes: &PanelPlanes<'_>,
    height: usize,
    width: usize,
    out_dir: &Path,
    prefix: &str,
) -> Result<Vec<PathBuf>, PanelError> {
    let expected = height * width;
    let check = |name: &'static str, len: usize| {
        if len != expected {
            Err(PanelError::ShapeMismatch {
                name,
                expected,
                got: len,
            })
        } else {
            Ok(())
        }
    };
    check("mr", planes.mr.len())?;
    check("real_ct", planes.real_ct.len())?;
    check("syn_ct", planes.syn_ct.len())?;
    if let Some(att) = planes.attention {
        check("attention", att.len())?;
    }

    let (window_lo, window_hi) = CT_WINDOW;
    let span = window_hi - window_lo;
    let diff: Vec<u8> = planes
        .real_ct
        .iter()
        .zip(planes.syn_ct)
        .map(|(&r, &s)| to_gray((r as f64 - s as f64).abs(), 0.0, span))
        .collect();

    let mut panels: Vec<(&str, Vec<u8>)> = vec![
        ("mr", gray_panel(planes.mr, -1.0, 1.0)),
        ("real_ct", gray_panel(planes.real_ct, window_lo, window_hi)),
        ("syn_ct", gray_panel(planes.syn_ct, window_lo, window_hi)),
        ("diff", diff),
    ];
    if let Some(att) = planes.attention {
        panels.push(("attention", gray_panel(att, 0.0, 1.0)));
    }

    let mut written = Vec::new();
    for (name, pixels) in panels {
        let path = out_dir.join(format!("{prefix}{name}.pgm"));
        write_pgm(&path, height, width, &pixels)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
        let bytes = std::fs::read(path).unwrap();
        let header_end = bytes
            .windows(1)
            .enumerate()
            .filter(|(_, w)| w[0] == b'\n')
            .map(|(i, _)| i)
            .nth(2)
            .unwrap();
        let header = std::str::from_utf8(&bytes[..header_end]).unwrap();
        let mut lines = header.lines();
        assert_eq!(lines.next().unwrap(), "P5");
        let mut dims = lines.next().unwrap().split_whitespace();
        let width: usize = dims.next().unwrap().parse().unwrap();
        let height: usize = dims.next().unwrap().parse().unwrap();
        assert_eq!(lines.next().unwrap(), "255");
        (height, width, bytes[header_end + 1..].to_vec())
    }

    fn fresh_dir(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join("agct-panel-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn display_mapping_matches_hand_computed_values() {
        // CT window [-1000, 2000]: -1000 -> 0, 500 -> 128 (127.5 rounded
        // up), 2000 -> 255, and values outside the window clamp.
        assert_eq!(to_gray(-1000.0, -1000.0, 2000.0), 0);
        assert_eq!(to_gray(500.0, -1000.0, 2000.0), 128);
        assert_eq!(to_gray(2000.0, -1000.0, 2000.0), 255);
        assert_eq!(to_gray(-4000.0, -1000.0, 2000.0), 0);
        assert_eq!(to_gray(9999.0, -1000.0, 2000.0), 255);
        // MR range [-1, 1]: zero sits at mid-gray.
        assert_eq!(to_gray(0.0, -1.0, 1.0), 128);
        // Attention range [0, 1].
        assert_eq!(to_gray(0.2, 0.0, 1.0), 51);
    }

    #[test]
    fn panels_round_trip_through_pgm() {
        let dir = fresh_dir("round-trip");
        let mr = vec![-1.0f32, 0.0, 1.0, 0.5];
        let real = vec![-1000.0f32, 40.0, 1000.0, 2000.0];
        let syn = vec![-1000.0f32, 40.0, 1000.0, 2000.0];
        let attention = vec![1.0f32; 4];
        let written =
            emit_panels(&mr, &real, &syn, Some(&attention), 2, 2, &dir, "t_").unwrap();
        assert_eq!(written.len(), 5);

        let (h, w, mr_px) = read_pgm(&dir.join("t_mr.pgm"));
        assert_eq!((h, w), (2, 2));
        assert_eq!(mr_px, vec![0, 128, 255, 191]);

        // Identical CTs: the difference panel is pure black.
        let (_, _, diff_px) = read_pgm(&dir.join("t_diff.pgm"));
        assert_eq!(diff_px, vec![0, 0, 0, 0]);

        // Saturated attention: pure white.
        let (_, _, att_px) = read_pgm(&dir.join("t_attention.pgm"));
        assert_eq!(att_px, vec![255, 255, 255, 255]);

        let (_, _, ct_px) = read_pgm(&dir.join("t_real_ct.pgm"));
        assert_eq!(ct_px, vec![0, to_gray(40.0, -1000.0, 2000.0), 170, 255]);
    }

    #[test]
    fn difference_panel_scales_into_the_window_span() {
        let dir = fresh_dir("diff-scale");
        let mr = vec![0.0f32; 2];
        let real = vec![1000.0f32, 0.0];
        let syn = vec![-500.0f32, 0.0];
        emit_panels(&mr, &real, &syn, None, 1, 2, &dir, "").unwrap();
        let (_, _, diff_px) = read_pgm(&dir.join("diff.pgm"));
        // |1000 - (-500)| = 1500 over a 3000 span -> mid gray.
        assert_eq!(diff_px, vec![128, 0]);
        assert!(!dir.join("attention.pgm").exists());
    }

    #[test]
    fn mismatched_grid_sizes_are_rejected() {
        let dir = fresh_dir("mismatch");
        let err = emit_panels(&[0.0; 4], &[0.0; 3], &[0.0; 4], None, 2, 2, &dir, "")
            .unwrap_err();
        assert!(matches!(
            err,
            PanelError::ShapeMismatch {
                name: "real_ct",
                expected: 4,
                got: 3
            }
        ));
    }
}
