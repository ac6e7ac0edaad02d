//! Verlet neighbor lists built from a cell (bin) decomposition.

use crate::system::{norm2, sub, Configuration, SimulationCell, Vec3};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NeighborError {
    #[error("periodic edge {edge:.4} Å is not larger than 2×(cutoff + skin) = {needed:.4} Å; minimum image would be ambiguous")]
    CellTooSmall { edge: f64, needed: f64 },
    #[error("cutoff must be positive and skin non-negative (cutoff={cutoff}, skin={skin})")]
    BadRadius { cutoff: f64, skin: f64 },
}

/// Half neighbor list: each pair closer than `cutoff + skin` at build time is
/// stored once, under its lower atom index.
#[derive(Debug, Clone)]
pub struct NeighborList {
    cutoff: f64,
    skin: f64,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    reference: Vec<Vec3>,
    cell: SimulationCell,
}

impl NeighborList {
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn skin(&self) -> f64 {
        self.skin
    }

    pub fn atom_count(&self) -> usize {
        self.reference.len()
    }

    pub fn pair_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbors `j > i` of atom `i`.
    pub fn neighbors_of(&self, i: usize) -> &[u32] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Per-atom neighbor counts, used for load balancing.
    pub fn counts(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.atom_count()).flat_map(move |i| self.neighbors_of(i).iter().map(move |&j| (i, j as usize)))
    }

    /// Largest minimum-image displacement of any atom since the build.
    pub fn max_displacement(&self, config: &Configuration) -> f64 {
        if config.len() != self.reference.len() {
            return f64::INFINITY;
        }
        let cell = config.cell();
        config
            .positions()
            .iter()
            .zip(self.reference.iter())
            .map(|(p, r)| norm2(cell.minimum_image(sub(*p, *r))))
            .fold(0.0f64, f64::max)
            .sqrt()
    }

    /// False once any atom moved more than skin/2 or the cell changed.
    pub fn is_valid_for(&self, config: &Configuration) -> bool {
        config.cell() == &self.cell && self.max_displacement(config) <= 0.5 * self.skin
    }
}

fn check_radii(cell: &SimulationCell, cutoff: f64, skin: f64) -> Result<f64, NeighborError> {
    if !(cutoff > 0.0 && skin >= 0.0 && cutoff.is_finite() && skin.is_finite()) {
        return Err(NeighborError::BadRadius { cutoff, skin });
    }
    let reach = cutoff + skin;
    let edge = cell.min_periodic_edge();
    if edge <= 2.0 * reach {
        return Err(NeighborError::CellTooSmall { edge, needed: 2.0 * reach });
    }
    Ok(reach)
}

/// Builds a neighbor list with a cell-list search, falling back to the
/// all-pairs scan when fewer than three bins fit along a periodic axis.
pub fn build_neighbor_list(config: &Configuration, cutoff: f64, skin: f64) -> Result<NeighborList, NeighborError> {
    let cell = *config.cell();
    let reach = check_radii(&cell, cutoff, skin)?;
    let lengths = cell.lengths();
    let bins: [usize; 3] = std::array::from_fn(|a| ((lengths[a] / reach).floor() as usize).max(1));
    let too_coarse = (0..3).any(|a| cell.is_periodic(a) && bins[a] < 3);
    if too_coarse {
        return build_brute_force(config, cutoff, skin);
    }

    let n = config.len();
    let pos = config.positions();
    let bin_of = |p: &Vec3| -> [usize; 3] {
        std::array::from_fn(|a| {
            let w = lengths[a] / bins[a] as f64;
            let b = (p[a] / w).floor();
            b.clamp(0.0, (bins[a] - 1) as f64) as usize
        })
    };
    let flat = |b: [usize; 3]| (b[0] * bins[1] + b[1]) * bins[2] + b[2];
    let nbins = bins[0] * bins[1] * bins[2];

    // Counting sort of atoms into bins.
    let atom_bin: Vec<usize> = pos.iter().map(|p| flat(bin_of(p))).collect();
    let mut start = vec![0usize; nbins + 1];
    for &b in &atom_bin {
        start[b + 1] += 1;
    }
    for b in 0..nbins {
        start[b + 1] += start[b];
    }
    let mut fill = start.clone();
    let mut sorted = vec![0u32; n];
    for (i, &b) in atom_bin.iter().enumerate() {
        sorted[fill[b]] = i as u32;
        fill[b] += 1;
    }

    let reach2 = reach * reach;
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    let mut stencil: Vec<usize> = Vec::with_capacity(27);
    for i in 0..n {
        let bi = bin_of(&pos[i]);
        stencil.clear();
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    let d = [dx, dy, dz];
                    let mut nb = [0usize; 3];
                    let mut inside = true;
                    for a in 0..3 {
                        let k = bi[a] as i64 + d[a];
                        let m = bins[a] as i64;
                        if cell.is_periodic(a) {
                            nb[a] = k.rem_euclid(m) as usize;
                        } else if k < 0 || k >= m {
                            inside = false;
                        } else {
                            nb[a] = k as usize;
                        }
                    }
                    if inside {
                        stencil.push(flat(nb));
                    }
                }
            }
        }
        stencil.sort_unstable();
        stencil.dedup();
        let first = neighbors.len();
        for &b in &stencil {
            for &j in &sorted[start[b]..start[b + 1]] {
                if (j as usize) <= i {
                    continue;
                }
                let d = cell.minimum_image(sub(pos[i], pos[j as usize]));
                if norm2(d) < reach2 {
                    neighbors.push(j);
                }
            }
        }
        neighbors[first..].sort_unstable();
        offsets.push(neighbors.len());
    }

    Ok(NeighborList { cutoff, skin, offsets, neighbors, reference: pos.to_vec(), cell })
}

/// O(N²) construction; the reference for the cell-list path.
pub fn build_brute_force(config: &Configuration, cutoff: f64, skin: f64) -> Result<NeighborList, NeighborError> {
    let cell = *config.cell();
    let reach = check_radii(&cell, cutoff, skin)?;
    let reach2 = reach * reach;
    let pos = config.positions();
    let n = pos.len();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut neighbors = Vec::new();
    offsets.push(0);
    for i in 0..n {
        for j in i + 1..n {
            if norm2(cell.minimum_image(sub(pos[i], pos[j]))) < reach2 {
                neighbors.push(j as u32);
            }
        }
        offsets.push(neighbors.len());
    }
    Ok(NeighborList { cutoff, skin, offsets, neighbors, reference: pos.to_vec(), cell })
}
