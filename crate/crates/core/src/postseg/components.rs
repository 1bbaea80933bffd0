use crate::specio::BinaryMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u32> for Connectivity {
    type Error = super::PostError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        match v {
            4 => Ok(Self::Four),
            8 => Ok(Self::Eight),
            other => Err(super::PostError::Connectivity(other)),
        }
    }
}

impl Connectivity {
    pub fn as_u32(self) -> u32 {
        match self {
            Self::Four => 4,
            Self::Eight => 8,
        }
    }
}

/// Inclusive pixel bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl BoundingBox {
    fn point(r: usize, c: usize) -> Self {
        Self {
            min_row: r,
            min_col: c,
            max_row: r,
            max_col: c,
        }
    }

    fn include(&mut self, r: usize, c: usize) {
        self.min_row = self.min_row.min(r);
        self.min_col = self.min_col.min(c);
        self.max_row = self.max_row.max(r);
        self.max_col = self.max_col.max(c);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Component {
    pub id: u32,
    pub area: usize,
    pub bbox: BoundingBox,
}

/// Per-pixel component ids (0 = background, components `1..=K`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeling {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl Labeling {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Indexed by `id - 1`.
    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let (ra, rb) = (find(parent, a), find(parent, b));
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Two-pass union-find labeling. Final ids follow the row-major order in
/// which each component's first pixel is met.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> Labeling {
    let (h, w) = (mask.height(), mask.width());
    let fg = mask.data();
    let mut prov = vec![0u32; h * w];
    // parent[0] is the unused background slot
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if fg[r * w + c] == 0 {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut k = 0;
            let mut push = |rr: usize, cc: usize| {
                let l = prov[rr * w + cc];
                if l != 0 {
                    neighbours[k] = l;
                    k += 1;
                }
            };
            if c > 0 {
                push(r, c - 1);
            }
            if r > 0 {
                push(r - 1, c);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        push(r - 1, c - 1);
                    }
                    if c + 1 < w {
                        push(r - 1, c + 1);
                    }
                }
            }
            prov[r * w + c] = if k == 0 {
                let id = parent.len() as u32;
                parent.push(id);
                id
            } else {
                let mut root = neighbours[0];
                for &n in &neighbours[1..k] {
                    root = union(&mut parent, root, n);
                }
                find(&mut parent, root)
            };
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut labels = vec![0u32; h * w];
    let mut components: Vec<Component> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let p = prov[r * w + c];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if remap[root] == 0 {
                components.push(Component {
                    id: components.len() as u32 + 1,
                    area: 0,
                    bbox: BoundingBox::point(r, c),
                });
                remap[root] = components.len() as u32;
            }
            let id = remap[root];
            labels[r * w + c] = id;
            let comp = &mut components[id as usize - 1];
            comp.area += 1;
            comp.bbox.include(r, c);
        }
    }
    Labeling {
        height: h,
        width: w,
        labels,
        components,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    /// Sorted row-major pixel indices.
    pub pixels: Vec<u32>,
    pub area: usize,
    pub bbox: BoundingBox,
}

impl Instance {
    pub fn intersection(&self, other: &Instance) -> usize {
        let (a, b) = (&self.pixels, &other.pixels);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn iou(&self, other: &Instance) -> f64 {
        let inter = self.intersection(other);
        let union = self.area + other.area - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Disjoint foreground segments of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceSet {
    height: usize,
    width: usize,
    instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn from_labeling(labeling: &Labeling) -> Self {
        let mut instances: Vec<Instance> = labeling
            .components()
            .iter()
            .map(|c| Instance {
                pixels: Vec::with_capacity(c.area),
                area: c.area,
                bbox: c.bbox,
            })
            .collect();
        for (i, &l) in labeling.labels().iter().enumerate() {
            if l != 0 {
                instances[l as usize - 1].pixels.push(i as u32);
            }
        }
        Self {
            height: labeling.height(),
            width: labeling.width(),
            instances,
        }
    }

    pub fn from_mask(mask: &BinaryMask, connectivity: Connectivity) -> Self {
        Self::from_labeling(&label_components(mask, connectivity))
    }

    /// Builds a set from explicit pixel lists; pixels must be in bounds and
    /// sets pairwise disjoint.
    pub fn from_pixel_lists(height: usize, width: usize, lists: Vec<Vec<u32>>) -> Result<Self, String> {
        let mut seen = vec![false; height * width];
        let mut instances = Vec::with_capacity(lists.len());
        for mut pixels in lists {
            pixels.sort_unstable();
            pixels.dedup();
            let first = *pixels.first().ok_or("empty instance")? as usize;
            let mut bbox = BoundingBox::point(first / width, first % width);
            for &p in &pixels {
                let p = p as usize;
                if p >= height * width {
                    return Err(format!("pixel {p} out of bounds"));
                }
                if std::mem::replace(&mut seen[p], true) {
                    return Err(format!("pixel {p} belongs to two instances"));
                }
                bbox.include(p / width, p % width);
            }
            instances.push(Instance {
                area: pixels.len(),
                pixels,
                bbox,
            });
        }
        Ok(Self {
            height,
            width,
            instances,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut data = vec![0u8; self.height * self.width];
        for inst in &self.instances {
            for &p in &inst.pixels {
                data[p as usize] = 1;
            }
        }
        BinaryMask::new(self.height, self.width, data).expect("dims preserved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pair() {
        let m = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(label_components(&m, Connectivity::Eight).len(), 1);
        assert_eq!(label_components(&m, Connectivity::Four).len(), 2);
    }

    #[test]
    fn empty_mask() {
        let m = BinaryMask::zeros(5, 5).unwrap();
        assert!(label_components(&m, Connectivity::Eight).is_empty());
    }

    #[test]
    fn u_shape_merges_and_ids_follow_first_pixel() {
        // the two arms get separate provisional labels and merge at the bottom;
        // the lone pixel at (0, 4) is met second
        #[rustfmt::skip]
        let m = BinaryMask::new(3, 5, vec![
            1, 0, 1, 0, 1,
            1, 0, 1, 0, 0,
            1, 1, 1, 0, 0,
        ]).unwrap();
        let lab = label_components(&m, Connectivity::Four);
        assert_eq!(lab.len(), 2);
        assert_eq!(lab.labels()[0], 1);
        assert_eq!(lab.labels()[4], 2);
        assert_eq!(lab.components()[0].area, 7);
        assert_eq!(
            lab.components()[0].bbox,
            BoundingBox {
                min_row: 0,
                min_col: 0,
                max_row: 2,
                max_col: 2
            }
        );
    }

    #[test]
    fn instance_set_round_trip() {
        let m = BinaryMask::new(3, 3, vec![1, 0, 1, 0, 0, 1, 1, 0, 0]).unwrap();
        let set = InstanceSet::from_mask(&m, Connectivity::Four);
        assert_eq!(set.len(), 3);
        assert_eq!(set.to_mask(), m);
        let total: usize = set.instances().iter().map(|i| i.area).sum();
        assert_eq!(total, m.count_ones());
    }

    #[test]
    fn iou_of_overlapping_lists() {
        let set = InstanceSet::from_pixel_lists(4, 4, vec![vec![0, 1, 2, 3], vec![8, 9]]).unwrap();
        let other = InstanceSet::from_pixel_lists(4, 4, vec![vec![2, 3, 4, 5, 6, 7]]).unwrap();
        assert!((set.instances()[0].iou(&other.instances()[0]) - 0.25).abs() < 1e-15);
        assert!(InstanceSet::from_pixel_lists(4, 4, vec![vec![0], vec![0]]).is_err());
    }
}
