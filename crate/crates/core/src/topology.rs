//! Discrete topology of binary masks: connected-component labeling, the Euler
//! characteristic of the cubical complex spanned by foreground pixels/voxels,
//! largest-component post-processing, and the topology certificate for a prediction.

use serde::{Deserialize, Serialize};

use crate::deform::{min_determinant, JacobianGrid};
use crate::error::Result;
use crate::grid::{Dims, Lattice, MaskGrid};

/// Adjacency used for labeling: `Face` is 4 (2D) / 6 (3D), `Full` is 8 / 26.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Connectivity {
    #[default]
    Face,
    Full,
}

/// Labels are consecutive from 1 in order of each component's first pixel in scan order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labeling {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub count: usize,
    /// `sizes[k]` is the pixel count of label `k + 1`.
    pub sizes: Vec<usize>,
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new() -> Self {
        DisjointSet { parent: Vec::new() }
    }

    fn make(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // the smaller root wins so roots follow scan order
        if ra < rb {
            self.parent[rb] = ra;
        } else if rb < ra {
            self.parent[ra] = rb;
        }
    }
}

/// Neighbor offsets that precede a node in scan order.
fn backward_offsets(ndim: usize, conn: Connectivity) -> Vec<[isize; 3]> {
    let zr: &[isize] = if ndim == 3 { &[-1, 0, 1] } else { &[0] };
    let mut out = Vec::new();
    for &dz in zr {
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let off = [dx, dy, dz];
                let nonzero = off.iter().filter(|&&v| v != 0).count();
                if nonzero == 0 || (conn == Connectivity::Face && nonzero > 1) {
                    continue;
                }
                // lexicographic (z, y, x) order: strictly before the center
                if (dz, dy, dx) < (0, 0, 0) {
                    out.push(off);
                }
            }
        }
    }
    out
}

fn offset_node(dims: &Dims, node: [usize; 3], off: [isize; 3]) -> Option<[usize; 3]> {
    let mut out = [0; 3];
    for a in 0..3 {
        let v = node[a] as isize + off[a];
        if v < 0 || v >= dims.extent(a) as isize {
            return None;
        }
        out[a] = v as usize;
    }
    Some(out)
}

fn label_foreground(dims: &Dims, fg: &[bool], conn: Connectivity) -> Labeling {
    let offsets = backward_offsets(dims.ndim(), conn);
    let mut set = DisjointSet::new();
    let mut provisional = vec![usize::MAX; fg.len()];
    for i in 0..fg.len() {
        if !fg[i] {
            continue;
        }
        let node = dims.node(i);
        let mut mine = usize::MAX;
        for &off in &offsets {
            if let Some(n) = offset_node(dims, node, off) {
                let j = dims.index(n);
                if fg[j] {
                    let other = provisional[j];
                    if mine == usize::MAX {
                        mine = other;
                    } else {
                        set.union(mine, other);
                    }
                }
            }
        }
        provisional[i] = if mine == usize::MAX { set.make() } else { mine };
    }
    // final labels in order of first appearance
    let mut root_label = vec![0u32; set.parent.len()];
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = Vec::new();
    for i in 0..fg.len() {
        if provisional[i] == usize::MAX {
            continue;
        }
        let root = set.find(provisional[i]);
        if root_label[root] == 0 {
            sizes.push(0);
            root_label[root] = sizes.len() as u32;
        }
        let l = root_label[root];
        labels[i] = l;
        sizes[l as usize - 1] += 1;
    }
    Labeling {
        dims: *dims,
        labels,
        count: sizes.len(),
        sizes,
    }
}

pub fn connected_components(mask: &MaskGrid, conn: Connectivity) -> Result<Labeling> {
    mask.require_binary()?;
    let fg: Vec<bool> = mask.values().iter().map(|&v| v == 1.0).collect();
    Ok(label_foreground(&mask.dims(), &fg, conn))
}

/// χ of the closed cubical complex formed by the foreground unit squares/cubes:
/// `V - E + F` in 2D, `V - E + F - C` in 3D.
pub fn euler_characteristic(mask: &MaskGrid) -> Result<i64> {
    mask.require_binary()?;
    let dims = mask.dims();
    let d = dims.ndim();
    // doubled lattice: even coordinates are vertices, odd ones open intervals
    let mut ext = [1usize; 3];
    for (a, e) in ext.iter_mut().enumerate().take(d) {
        *e = 2 * dims.extent(a) + 1;
    }
    let idx = |p: [usize; 3]| p[0] + ext[0] * (p[1] + ext[1] * p[2]);
    let mut marked = vec![false; ext.iter().product()];
    let zr = if d == 3 { 0..3 } else { 0..1 };
    for (i, &v) in mask.values().iter().enumerate() {
        if v != 1.0 {
            continue;
        }
        let n = dims.node(i);
        for dz in zr.clone() {
            for dy in 0..3 {
                for dx in 0..3 {
                    let z = if d == 3 { 2 * n[2] + dz } else { 0 };
                    marked[idx([2 * n[0] + dx, 2 * n[1] + dy, z])] = true;
                }
            }
        }
    }
    let mut chi = 0i64;
    for (i, &m) in marked.iter().enumerate() {
        if !m {
            continue;
        }
        let p = [i % ext[0], (i / ext[0]) % ext[1], i / (ext[0] * ext[1])];
        let dim = p[..d].iter().filter(|&&c| c % 2 == 1).count();
        chi += if dim % 2 == 0 { 1 } else { -1 };
    }
    Ok(chi)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CcaOptions {
    /// Also fill background regions enclosed by the kept component.
    pub fill_holes: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CcaOutcome {
    pub mask: MaskGrid,
    /// Set when the input had no foreground; the mask is returned unchanged.
    pub empty_input: bool,
}

/// Keeps only the largest face-connected component; ties go to the lowest label.
pub fn cca_postprocess(mask: &MaskGrid, options: CcaOptions) -> Result<CcaOutcome> {
    let lab = connected_components(mask, Connectivity::Face)?;
    if lab.count == 0 {
        return Ok(CcaOutcome {
            mask: mask.clone(),
            empty_input: true,
        });
    }
    let mut keep = 1u32;
    for (k, &size) in lab.sizes.iter().enumerate() {
        if size > lab.sizes[keep as usize - 1] {
            keep = k as u32 + 1;
        }
    }
    let mut out = mask.clone();
    for node in lab.dims.nodes() {
        if lab.labels[lab.dims.index(node)] != keep {
            out.set(node, 0.0);
        }
    }
    if options.fill_holes {
        out = fill_holes(&out)?;
    }
    Ok(CcaOutcome {
        mask: out,
        empty_input: false,
    })
}

/// Fills background components (full adjacency) that do not touch the grid border.
pub fn fill_holes(mask: &MaskGrid) -> Result<MaskGrid> {
    mask.require_binary()?;
    let dims = mask.dims();
    let bg: Vec<bool> = mask.values().iter().map(|&v| v == 0.0).collect();
    let lab = label_foreground(&dims, &bg, Connectivity::Full);
    let mut touches = vec![false; lab.count + 1];
    for node in dims.nodes() {
        let on_border = (0..dims.ndim()).any(|a| node[a] == 0 || node[a] + 1 == dims.extent(a));
        if on_border {
            touches[lab.labels[dims.index(node)] as usize] = true;
        }
    }
    let mut out = mask.clone();
    for node in dims.nodes() {
        let l = lab.labels[dims.index(node)];
        if l != 0 && !touches[l as usize] {
            out.set(node, 1.0);
        }
    }
    Ok(out)
}

/// Measured topology of a prediction, compared against its template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyReport {
    pub component_count: usize,
    pub euler_characteristic: i64,
    pub min_determinant: Option<f64>,
    pub fold_cell_count: usize,
    pub matches_template: bool,
}

pub fn certify(
    pred: &MaskGrid,
    template: &MaskGrid,
    jac: Option<&JacobianGrid>,
) -> Result<TopologyReport> {
    let component_count = connected_components(pred, Connectivity::Face)?.count;
    let euler = euler_characteristic(pred)?;
    let template_count = connected_components(template, Connectivity::Face)?.count;
    let template_euler = euler_characteristic(template)?;
    Ok(TopologyReport {
        component_count,
        euler_characteristic: euler,
        min_determinant: jac.map(min_determinant),
        fold_cell_count: jac.map_or(0, JacobianGrid::fold_count),
        matches_template: component_count == template_count && euler == template_euler,
    })
}
