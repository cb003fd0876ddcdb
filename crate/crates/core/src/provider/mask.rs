use crate::grid::{ImageBuffer, MaskMap};

/// Binary erosion with a `size`×`size` square element. Neighbors outside the
/// image are ignored.
pub fn erode(mask: &MaskMap, size: usize) -> MaskMap {
    morph(mask, size, true)
}

/// Binary dilation with a `size`×`size` square element. Neighbors outside the
/// image are ignored.
pub fn dilate(mask: &MaskMap, size: usize) -> MaskMap {
    morph(mask, size, false)
}

fn morph(mask: &MaskMap, size: usize, all: bool) -> MaskMap {
    let r = (size / 2) as isize;
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    MaskMap::from_fn(mask.width(), mask.height(), |row, col| {
        let mut hit = all;
        for dr in -r..=r {
            for dc in -r..=r {
                let (rr, cc) = (row as isize + dr, col as isize + dc);
                if rr < 0 || cc < 0 || rr >= h || cc >= w {
                    continue;
                }
                let v = mask[(rr as usize, cc as usize)];
                if all && !v {
                    return false;
                }
                if !all && v {
                    hit = true;
                }
            }
        }
        hit
    })
}

/// Morphological opening: erosion followed by dilation.
pub fn open(mask: &MaskMap, size: usize) -> MaskMap {
    dilate(&erode(mask, size), size)
}

/// Fills `region` by repeated averaging of 4-neighbors that are either
/// outside `region` or already filled. Pixels outside `region` are left
/// untouched; region pixels never reached stay as they were.
pub fn diffusion_fill(image: &ImageBuffer, region: &MaskMap, sources: &MaskMap, iterations: usize) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    let mut out = image.clone();
    let mut filled = vec![false; w * h];
    let targets: Vec<usize> = (0..w * h).filter(|&i| region.data()[i]).collect();
    for _ in 0..iterations {
        let prev = out.clone();
        let prev_filled = filled.clone();
        for &i in &targets {
            let (r, c) = (i / w, i % w);
            let mut acc = [0.0f64; 3];
            let mut n = 0usize;
            let mut visit = |j: usize| {
                let usable = if region.data()[j] {
                    prev_filled[j]
                } else {
                    sources.data()[j]
                };
                if usable {
                    for ch in 0..3 {
                        acc[ch] += prev.data()[j][ch] as f64;
                    }
                    n += 1;
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if n > 0 {
                let k = n as f64;
                out.data_mut()[i] = [(acc[0] / k) as f32, (acc[1] / k) as f32, (acc[2] / k) as f32];
                filled[i] = true;
            }
        }
    }
    out
}

/// Result of [`preprocess_mask`].
#[derive(Clone, Debug)]
pub struct PreparedMask {
    /// The opened inpainting mask: the region the provider has to fill.
    pub opened: MaskMap,
    /// Inpainting pixels removed by the opening, prefilled by diffusion.
    pub ring: MaskMap,
    /// The input image with the ring prefilled and the opened region zeroed.
    pub prefilled: ImageBuffer,
}

impl PreparedMask {
    /// Pixels the provider should treat as known.
    pub fn known(&self) -> MaskMap {
        self.opened.not()
    }
}

/// Opens the inpainting mask with a `kernel`×`kernel` square and prefills
/// the slivers the opening removed from the surrounding known pixels, so the
/// provider only sees blob-like holes.
pub fn preprocess_mask(inpaint: &MaskMap, image: &ImageBuffer, kernel: usize, iterations: usize) -> PreparedMask {
    let opened = open(inpaint, kernel);
    let ring = inpaint.and_not(&opened);
    let known = inpaint.not();
    let mut prefilled = diffusion_fill(image, &ring, &known, iterations);
    for (px, &m) in prefilled.data_mut().iter_mut().zip(opened.data()) {
        if m {
            *px = [0.0; 3];
        }
    }
    PreparedMask {
        opened,
        ring,
        prefilled,
    }
}
