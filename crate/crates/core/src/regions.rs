//! Per-class connected-component extraction and region gating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DiffMask, PixelRect, SemanticMask};

/// Pixel adjacency used for component labelling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// A connected set of pixels, stored in row-major order.
pub type Component = Vec<(u32, u32)>;

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass sequential labelling with union-find over provisional labels.
///
/// Components are returned in order of their first pixel in a row-major scan,
/// and each component lists its pixels in row-major order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.bits();
    let mut labels = vec![0u32; w * h];
    // parent[0] is the background sentinel
    let mut parent: Vec<u32> = vec![0];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !bits[i] {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            let mut push = |l: u32| {
                if l != 0 {
                    neighbours[n] = l;
                    n += 1;
                }
            };
            if x > 0 {
                push(labels[i - 1]);
            }
            if y > 0 {
                push(labels[i - w]);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        push(labels[i - w - 1]);
                    }
                    if x + 1 < w {
                        push(labels[i - w + 1]);
                    }
                }
            }
            let neighbours = &neighbours[..n];
            match neighbours.iter().min() {
                None => {
                    let l = parent.len() as u32;
                    parent.push(l);
                    labels[i] = l;
                }
                Some(&m) => {
                    labels[i] = m;
                    for &l in neighbours {
                        union(&mut parent, m, l);
                    }
                }
            }
        }
    }

    // Resolve roots; numbering by first appearance keeps row-major ordering.
    let mut root_to_component = vec![usize::MAX; parent.len()];
    let mut components: Vec<Component> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == 0 {
                continue;
            }
            let r = find(&mut parent, l) as usize;
            if root_to_component[r] == usize::MAX {
                root_to_component[r] = components.len();
                components.push(Vec::new());
            }
            components[root_to_component[r]].push((x as u32, y as u32));
        }
    }
    components
}

/// Which side of `iou_threshold` gets rejected.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouDirection {
    /// Drop regions whose temporal IoU is below the threshold.
    #[default]
    RejectBelow,
    /// Drop regions whose temporal IoU is above the threshold (low IoU = change).
    RejectAbove,
}

/// Gate parameters for [`extract_candidates`]. Size and changed-ratio gates are per class.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionThresholds {
    pub min_size: Vec<usize>,
    pub changed_threshold: Vec<f64>,
    pub iou_threshold: f64,
    pub iou_direction: IouDirection,
    pub connectivity: Connectivity,
}

impl RegionThresholds {
    /// Same thresholds for every one of `num_classes` classes.
    pub fn uniform(
        num_classes: usize,
        min_size: usize,
        changed_threshold: f64,
        iou_threshold: f64,
        iou_direction: IouDirection,
    ) -> Self {
        Self {
            min_size: vec![min_size; num_classes],
            changed_threshold: vec![changed_threshold; num_classes],
            iou_threshold,
            iou_direction,
            connectivity: Connectivity::default(),
        }
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.min_size.len() != num_classes || self.changed_threshold.len() != num_classes {
            return Err(Error::Config(format!(
                "region thresholds cover {} / {} classes, masks have {num_classes}",
                self.min_size.len(),
                self.changed_threshold.len()
            )));
        }
        if self.min_size.iter().any(|&s| s < 1) {
            return Err(Error::Config("regions.min_size must be >= 1".into()));
        }
        let ratio_ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ratio_ok(self.iou_threshold) || !self.changed_threshold.iter().all(|&r| ratio_ok(r)) {
            return Err(Error::Config("region ratio thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// True when a region with these statistics passes every gate.
    pub fn admits(&self, class: usize, size: usize, iou: f64, changed_ratio: f64) -> bool {
        if size < self.min_size[class] {
            return false;
        }
        let iou_ok = match self.iou_direction {
            IouDirection::RejectBelow => iou >= self.iou_threshold,
            IouDirection::RejectAbove => iou <= self.iou_threshold,
        };
        iou_ok && changed_ratio >= self.changed_threshold[class]
    }
}

/// One connected component of a class's two-date support, with its statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeRegion {
    pub class_id: usize,
    #[serde(skip)]
    pub pixels: Component,
    pub size: usize,
    pub bbox: PixelRect,
    pub iou: f64,
    pub changed_ratio: f64,
    /// Class pixels inside the region before / after.
    pub before_count: usize,
    pub after_count: usize,
}

impl ChangeRegion {
    /// True when the class gained pixels inside the region.
    pub fn appeared(&self) -> bool {
        self.after_count >= self.before_count
    }
}

fn bbox_of(pixels: &[(u32, u32)]) -> PixelRect {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for &(x, y) in pixels {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    PixelRect::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// Temporal IoU of class `class` and the changed-pixel ratio, both restricted to `pixels`.
pub fn region_stats(
    pixels: &[(u32, u32)],
    class: usize,
    before: &SemanticMask,
    after: &SemanticMask,
    diff: &DiffMask,
) -> Result<ChangeRegion> {
    if pixels.is_empty() {
        return Err(Error::Contract("region_stats needs a nonempty pixel set".into()));
    }
    if before.width() != after.width()
        || before.height() != after.height()
        || diff.width() != before.width()
        || diff.height() != before.height()
    {
        return Err(Error::Shape("region_stats inputs differ in size".into()));
    }
    let k = class as u8;
    let (mut inter, mut uni, mut changed, mut nb, mut na) = (0usize, 0usize, 0usize, 0, 0);
    for &(x, y) in pixels {
        let b = before.get(x, y) == k;
        let a = after.get(x, y) == k;
        inter += (a && b) as usize;
        uni += (a || b) as usize;
        nb += b as usize;
        na += a as usize;
        changed += diff.get(x, y) as usize;
    }
    let iou = if uni == 0 { 0.0 } else { inter as f64 / uni as f64 };
    Ok(ChangeRegion {
        class_id: class,
        pixels: pixels.to_vec(),
        size: pixels.len(),
        bbox: bbox_of(pixels),
        iou,
        changed_ratio: changed as f64 / pixels.len() as f64,
        before_count: nb,
        after_count: na,
    })
}

/// All regions, per class, before any gating.
pub fn all_regions(
    before: &SemanticMask,
    after: &SemanticMask,
    diff: &DiffMask,
    connectivity: Connectivity,
) -> Result<Vec<ChangeRegion>> {
    let mut out = Vec::new();
    for k in 0..before.num_classes() {
        let support = before.support(k as u8).or(&after.support(k as u8))?;
        for comp in connected_components(&support, connectivity) {
            out.push(region_stats(&comp, k, before, after, diff)?);
        }
    }
    Ok(out)
}

/// Candidate change regions surviving the size, IoU and changed-ratio gates,
/// ordered by class then by first pixel.
pub fn extract_candidates(
    before: &SemanticMask,
    after: &SemanticMask,
    diff: &DiffMask,
    th: &RegionThresholds,
) -> Result<Vec<ChangeRegion>> {
    th.validate(before.num_classes())?;
    Ok(all_regions(before, after, diff, th.connectivity)?
        .into_iter()
        .filter(|r| th.admits(r.class_id, r.size, r.iou, r.changed_ratio))
        .collect())
}
