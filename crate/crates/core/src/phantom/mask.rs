//! Binary masks and the head-extraction pipeline: threshold, morphological
//! closing, largest connected component, hole filling.

use super::PhantomError;

/// A binary `height x width` grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    /// Number of set pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn subset_of(&self, other: &Mask) -> bool {
        self.data
            .iter()
            .zip(&other.data)
            .all(|(&a, &b)| !a || b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// Pixels of `self` not in `other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        debug_assert_eq!((self.height, self.width), (other.height, other.width));
        Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a && !b)
                .collect(),
        }
    }
}

/// Minkowski dilation by a `(2r+1)^2` square, computed as a horizontal then
/// a vertical running-window pass.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    square_morph(mask, radius, true)
}

/// Minkowski erosion by a `(2r+1)^2` square; pixels beyond the border count
/// as background, so erosion shrinks masks touching the frame edge.
pub fn erode(mask: &Mask, radius: usize) -> Mask {
    square_morph(mask, radius, false)
}

/// Closing: dilation followed by erosion with the same element.
pub fn close(mask: &Mask, radius: usize) -> Mask {
    erode(&dilate(mask, radius), radius)
}

fn square_morph(mask: &Mask, radius: usize, any: bool) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let r = radius as isize;
    // Horizontal pass.
    let mut mid = vec![false; h * w];
    for y in 0..h {
        for x in 0..w as isize {
            let mut acc = !any;
            for dx in -r..=r {
                let px = x + dx;
                let v = if px < 0 || px >= w as isize {
                    false
                } else {
                    mask.data[y * w + px as usize]
                };
                if any {
                    acc |= v;
                } else {
                    acc &= v;
                }
            }
            mid[y * w + x as usize] = acc;
        }
    }
    // Vertical pass.
    let mut out = Mask::new(h, w);
    for y in 0..h as isize {
        for x in 0..w {
            let mut acc = !any;
            for dy in -r..=r {
                let py = y + dy;
                let v = if py < 0 || py >= h as isize {
                    false
                } else {
                    mid[py as usize * w + x]
                };
                if any {
                    acc |= v;
                } else {
                    acc &= v;
                }
            }
            out.data[y as usize * w + x] = acc;
        }
    }
    out
}

/// Keeps only the largest 4-connected component (ties broken by the first
/// pixel encountered in raster order); an empty mask stays empty.
pub fn largest_component(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut labels = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();

    for start in 0..h * w {
        if !mask.data[start] || labels[start] != usize::MAX {
            continue;
        }
        let label = sizes.len();
        let mut size = 0usize;
        stack.push(start);
        labels[start] = label;
        while let Some(idx) = stack.pop() {
            size += 1;
            let (y, x) = (idx / w, idx % w);
            let mut visit = |ny: usize, nx: usize| {
                let nidx = ny * w + nx;
                if mask.data[nidx] && labels[nidx] == usize::MAX {
                    labels[nidx] = label;
                    stack.push(nidx);
                }
            };
            if y > 0 {
                visit(y - 1, x);
            }
            if y + 1 < h {
                visit(y + 1, x);
            }
            if x > 0 {
                visit(y, x - 1);
            }
            if x + 1 < w {
                visit(y, x + 1);
            }
        }
        sizes.push(size);
    }

    let Some(best) = (0..sizes.len()).max_by_key(|&l| (sizes[l], std::cmp::Reverse(l))) else {
        return Mask::new(h, w);
    };
    let mut out = Mask::new(h, w);
    for idx in 0..h * w {
        out.data[idx] = labels[idx] == best;
    }
    out
}

/// Sets every background region that does not touch the border (flood fill
/// from the frame edge, 4-connectivity).
pub fn fill_holes(mask: &Mask) -> Mask {
    let (h, w) = (mask.height, mask.width);
    let mut outside = vec![false; h * w];
    let mut stack = Vec::new();
    let seed = |idx: usize, mask: &Mask, outside: &mut Vec<bool>, stack: &mut Vec<usize>| {
        if !mask.data[idx] && !outside[idx] {
            outside[idx] = true;
            stack.push(idx);
        }
    };
    for x in 0..w {
        seed(x, mask, &mut outside, &mut stack);
        seed((h - 1) * w + x, mask, &mut outside, &mut stack);
    }
    for y in 0..h {
        seed(y * w, mask, &mut outside, &mut stack);
        seed(y * w + w - 1, mask, &mut outside, &mut stack);
    }
    while let Some(idx) = stack.pop() {
        let (y, x) = (idx / w, idx % w);
        let mut visit = |nidx: usize| {
            if !mask.data[nidx] && !outside[nidx] {
                outside[nidx] = true;
                stack.push(nidx);
            }
        };
        if y > 0 {
            visit(idx - w);
        }
        if y + 1 < h {
            visit(idx + w);
        }
        if x > 0 {
            visit(idx - 1);
        }
        if x + 1 < w {
            visit(idx + 1);
        }
    }

    let mut out = mask.clone();
    for idx in 0..h * w {
        if !outside[idx] {
            out.data[idx] = true;
        }
    }
    out
}

/// Nearest-rank percentile: the smallest value with at least `q` percent of
/// the samples at or below it.
pub fn percentile(values: &[f32], q: f64) -> f32 {
    debug_assert!(!values.is_empty());
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub const HEAD_THRESHOLD_FRACTION: f64 = 0.05;
pub const HEAD_MORPH_RADIUS: usize = 2;

/// Extracts the head region from a raw (non-negative) MR slice: threshold at
/// `threshold_fraction` of the slice's 99.9th percentile, close with a
/// square element of `morph_radius`, keep the largest 4-connected component,
/// fill enclosed holes.
pub fn head_mask(
    mr_slice: &[f32],
    height: usize,
    width: usize,
    threshold_fraction: f64,
    morph_radius: usize,
) -> Result<Mask, PhantomError> {
    debug_assert_eq!(mr_slice.len(), height * width);
    let p999 = percentile(mr_slice, 99.9) as f64;
    let threshold = threshold_fraction * p999;
    let raw = Mask::from_fn(height, width, |y, x| {
        mr_slice[y * width + x] as f64 > threshold
    });
    let closed = close(&raw, morph_radius);
    let body = largest_component(&closed);
    let filled = fill_holes(&body);
    if filled.is_empty() {
        return Err(PhantomError::NoHead);
    }
    Ok(filled)
}

/// Air/body boundary in Hounsfield units, used when a head mask must be
/// derived from a CT volume because no MR counterpart is available.
pub const CT_HEAD_THRESHOLD_HU: f32 = -400.0;

/// Extracts the head region from a CT slice in Hounsfield units: threshold
/// above [`CT_HEAD_THRESHOLD_HU`], then the same cleanup as [`head_mask`]
/// (closing, largest component, hole filling). A slice of pure air yields an
/// empty mask rather than an error.
pub fn ct_head_mask(ct_slice: &[f32], height: usize, width: usize) -> Mask {
    debug_assert_eq!(ct_slice.len(), height * width);
    let raw = Mask::from_fn(height, width, |y, x| {
        ct_slice[y * width + x] > CT_HEAD_THRESHOLD_HU
    });
    if raw.is_empty() {
        return raw;
    }
    fill_holes(&largest_component(&close(&raw, HEAD_MORPH_RADIUS)))
}
