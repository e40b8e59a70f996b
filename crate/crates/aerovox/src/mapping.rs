//! Ternary occupancy octree, simulated depth sensing, and budgeted scan
//! integration.
//!
//! Conflict rules: within one scan Occupied always beats Free (endpoint
//! voxels are stamped with the scan id). Across scans the newest scan wins:
//! endpoints re-occupy stale Free space, and a newer free sweep may clear a
//! stale Occupied leaf of the same or coarser size (progressive refinement),
//! but never a node with finer Occupied structure inside, so mapped surfaces
//! cannot be erased by grazing rays.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::SimError;
use crate::geom::{Aabb, Vec3};
use crate::world::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellState {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone)]
enum Node {
    Free,
    /// Occupied leaf stamped with the scan that asserted it.
    Occupied { scan: u32 },
    Internal(Box<Octant>),
}

#[derive(Debug, Clone)]
struct Octant {
    children: [Option<Node>; 8],
    known_volume: f64,
    has_occupied: bool,
}

impl Octant {
    fn empty() -> Self {
        Octant { children: Default::default(), known_volume: 0.0, has_occupied: false }
    }

    fn solid(state: Node, child_size: f64) -> Self {
        let child_vol = child_size.powi(3);
        let has_occupied = matches!(state, Node::Occupied { .. });
        let children = std::array::from_fn(|_| Some(state.clone()));
        Octant { children, known_volume: 8.0 * child_vol, has_occupied }
    }

    fn refresh(&mut self, child_size: f64) {
        let child_vol = child_size.powi(3);
        let mut vol = 0.0;
        let mut occ = false;
        for c in self.children.iter().flatten() {
            match c {
                Node::Free => vol += child_vol,
                Node::Occupied { .. } => {
                    vol += child_vol;
                    occ = true;
                }
                Node::Internal(o) => {
                    vol += o.known_volume;
                    occ |= o.has_occupied;
                }
            }
        }
        self.known_volume = vol;
        self.has_occupied = occ;
    }
}

fn node_known_volume(node: &Node, size: f64) -> f64 {
    match node {
        Node::Free | Node::Occupied { .. } => size.powi(3),
        Node::Internal(o) => o.known_volume,
    }
}

fn node_has_occupied(node: &Node) -> bool {
    match node {
        Node::Occupied { .. } => true,
        Node::Free => false,
        Node::Internal(o) => o.has_occupied,
    }
}

/// Ternary-state octree over a cubic region. Leaves exist at power-of-two
/// multiples of `vox_min`; absent children are Unknown.
#[derive(Debug, Clone)]
pub struct OccupancyTree {
    origin: Vec3,
    root_size: f64,
    vox_min: f64,
    depth: u32,
    root: Option<Node>,
}

impl OccupancyTree {
    /// Builds an empty tree whose root cube covers `bounds`.
    pub fn new(bounds: Aabb, vox_min: f64) -> Self {
        assert!(vox_min > 0.0);
        let extent = (bounds.max.x - bounds.min.x)
            .max(bounds.max.y - bounds.min.y)
            .max(bounds.max.z - bounds.min.z)
            .max(vox_min);
        let mut depth = 0u32;
        let mut root_size = vox_min;
        while root_size < extent - 1e-12 {
            root_size *= 2.0;
            depth += 1;
        }
        OccupancyTree { origin: bounds.min, root_size, vox_min, depth, root: None }
    }

    pub fn vox_min(&self) -> f64 {
        self.vox_min
    }

    pub fn root_size(&self) -> f64 {
        self.root_size
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn bounds(&self) -> Aabb {
        let s = self.root_size;
        Aabb::new(self.origin, self.origin + Vec3::new(s, s, s))
    }

    /// Total volume of known (Free or Occupied) leaves.
    pub fn known_volume(&self) -> f64 {
        self.root.as_ref().map_or(0.0, |r| node_known_volume(r, self.root_size))
    }

    fn level_for(&self, precision: f64) -> u32 {
        assert!(precision > 0.0);
        let ratio = self.root_size / precision;
        let level = ratio.log2().round();
        let level = level.clamp(0.0, self.depth as f64) as u32;
        debug_assert!(
            ((self.root_size / (1u64 << level) as f64) - precision).abs() < 1e-6 * precision,
            "precision {} is not a power-of-two multiple of vox_min {}",
            precision,
            self.vox_min
        );
        level
    }

    /// Voxel size actually used for marks requested at `precision`.
    pub fn snapped_size(&self, precision: f64) -> f64 {
        self.root_size / (1u64 << self.level_for(precision)) as f64
    }

    fn child_index(center: Vec3, p: Vec3) -> usize {
        ((p.x >= center.x) as usize) | (((p.y >= center.y) as usize) << 1) | (((p.z >= center.z) as usize) << 2)
    }

    fn child_min(min: Vec3, half: f64, idx: usize) -> Vec3 {
        Vec3::new(
            min.x + if idx & 1 != 0 { half } else { 0.0 },
            min.y + if idx & 2 != 0 { half } else { 0.0 },
            min.z + if idx & 4 != 0 { half } else { 0.0 },
        )
    }

    /// Marks the voxel of size `precision` containing `p` as Occupied.
    /// Returns (newly known volume, whether the voxel became occupied).
    pub fn mark_occupied(&mut self, p: Vec3, precision: f64, scan: u32) -> (f64, bool) {
        if !self.bounds().contains(p) {
            return (0.0, false);
        }
        let level = self.level_for(precision);
        let origin = self.origin;
        let root_size = self.root_size;
        Self::occ_rec(&mut self.root, origin, root_size, p, level, scan)
    }

    fn occ_rec(slot: &mut Option<Node>, min: Vec3, size: f64, p: Vec3, level: u32, scan: u32) -> (f64, bool) {
        if level == 0 {
            // A coarse mark means "a surface exists in this cell", but the
            // hit point itself is exact. Where the cell already holds finer
            // structure, push the mark down the point's path instead of
            // erasing it: wiping finer Free cells would close every passage
            // a finer scan opened.
            if matches!(slot, Some(Node::Internal(_))) {
                let Some(Node::Internal(oct)) = slot else { unreachable!() };
                let half = size / 2.0;
                let center = min + Vec3::new(half, half, half);
                let idx = Self::child_index(center, p);
                let cmin = Self::child_min(min, half, idx);
                let result = Self::occ_rec(&mut oct.children[idx], cmin, half, p, 0, scan);
                oct.refresh(half);
                return result;
            }
            let prior_known = slot.as_ref().map_or(0.0, |n| node_known_volume(n, size));
            let was_occupied = slot.as_ref().is_some_and(node_has_occupied);
            let newly_occupied = !matches!(slot, Some(Node::Occupied { .. })) && !was_occupied;
            *slot = Some(Node::Occupied { scan });
            return (size.powi(3) - prior_known, newly_occupied);
        }
        let half = size / 2.0;
        match slot {
            None => *slot = Some(Node::Internal(Box::new(Octant::empty()))),
            Some(Node::Free) => *slot = Some(Node::Internal(Box::new(Octant::solid(Node::Free, half)))),
            Some(Node::Occupied { scan: s }) => {
                let s = *s;
                *slot = Some(Node::Internal(Box::new(Octant::solid(Node::Occupied { scan: s }, half))));
            }
            Some(Node::Internal(_)) => {}
        }
        let Some(Node::Internal(oct)) = slot else { unreachable!() };
        let center = min + Vec3::new(half, half, half);
        let idx = Self::child_index(center, p);
        let cmin = Self::child_min(min, half, idx);
        let result = Self::occ_rec(&mut oct.children[idx], cmin, half, p, level - 1, scan);
        oct.refresh(half);
        result
    }

    /// Marks the voxel of size `precision` containing `p` as Free, subject
    /// to the conflict rules. Returns newly known volume.
    pub fn mark_free(&mut self, p: Vec3, precision: f64, scan: u32) -> f64 {
        self.mark_free_probed(p, precision, scan).0
    }

    /// `mark_free` that also returns the bounds of the wholly-Free node now
    /// containing `p`, if any: ray integration uses it to skip the rest of
    /// a known-Free cell without another descent.
    pub fn mark_free_probed(&mut self, p: Vec3, precision: f64, scan: u32) -> (f64, Option<(Vec3, f64)>) {
        if !self.bounds().contains(p) {
            return (0.0, None);
        }
        let level = self.level_for(precision);
        let origin = self.origin;
        let root_size = self.root_size;
        Self::free_rec(&mut self.root, origin, root_size, p, level, scan)
    }

    fn free_rec(slot: &mut Option<Node>, min: Vec3, size: f64, p: Vec3, level: u32, scan: u32) -> (f64, Option<(Vec3, f64)>) {
        match slot {
            Some(Node::Free) => return (0.0, Some((min, size))),
            Some(Node::Occupied { scan: s }) => {
                if *s == scan {
                    return (0.0, None); // same-scan endpoint wins over free sweeps
                }
                if level == 0 {
                    *slot = Some(Node::Free); // stale leaf of equal size: heal
                    return (0.0, Some((min, size)));
                }
                // A newer sweep through part of a stale coarse endpoint mark
                // supersedes it. The mark's single hit no longer evidences
                // the untraversed remainder, so that remainder reverts to
                // unknown; a real surface is re-marked by the same scan's
                // endpoints. Keeping the remainder occupied leaves phantom
                // fragments in ray shadows that no sweep can ever reach.
                *slot = Some(Node::Internal(Box::new(Octant::empty())));
            }
            _ => {}
        }
        if level == 0 {
            match slot {
                None => {
                    *slot = Some(Node::Free);
                    return (size.powi(3), Some((min, size)));
                }
                Some(Node::Internal(oct)) => {
                    if oct.has_occupied {
                        return (0.0, None); // never wipe finer occupied structure
                    }
                    let prior = oct.known_volume;
                    *slot = Some(Node::Free);
                    return (size.powi(3) - prior, Some((min, size)));
                }
                _ => unreachable!(),
            }
        }
        if slot.is_none() {
            *slot = Some(Node::Internal(Box::new(Octant::empty())));
        }
        let Some(Node::Internal(oct)) = slot else { unreachable!() };
        let half = size / 2.0;
        let center = min + Vec3::new(half, half, half);
        let idx = Self::child_index(center, p);
        let cmin = Self::child_min(min, half, idx);
        let (delta, free_box) = Self::free_rec(&mut oct.children[idx], cmin, half, p, level - 1, scan);
        oct.refresh(half);
        if oct.children.iter().all(|c| matches!(c, Some(Node::Free))) {
            *slot = Some(Node::Free);
            return (delta, Some((min, size)));
        }
        (delta, free_box)
    }

    /// State of the node of size >= `at_precision` containing `p`: Occupied
    /// if any known descendant is Occupied, Free if at least one descendant
    /// is known and all known descendants are Free, otherwise Unknown.
    pub fn query(&self, p: Vec3, at_precision: f64) -> CellState {
        if !self.bounds().contains(p) {
            return CellState::Unknown;
        }
        let level = self.level_for(at_precision);
        let mut node = match &self.root {
            None => return CellState::Unknown,
            Some(n) => n,
        };
        let mut min = self.origin;
        let mut size = self.root_size;
        for _ in 0..level {
            match node {
                Node::Free => return CellState::Free,
                Node::Occupied { .. } => return CellState::Occupied,
                Node::Internal(oct) => {
                    let half = size / 2.0;
                    let center = min + Vec3::new(half, half, half);
                    let idx = Self::child_index(center, p);
                    match &oct.children[idx] {
                        None => return CellState::Unknown,
                        Some(child) => {
                            node = child;
                            min = Self::child_min(min, half, idx);
                            size = half;
                        }
                    }
                }
            }
        }
        match node {
            Node::Free => CellState::Free,
            Node::Occupied { .. } => CellState::Occupied,
            Node::Internal(oct) => {
                if oct.has_occupied {
                    CellState::Occupied
                } else if oct.known_volume > 0.0 {
                    CellState::Free
                } else {
                    CellState::Unknown
                }
            }
        }
    }

    /// Finest stored state at a point.
    pub fn state_at(&self, p: Vec3) -> CellState {
        self.query(p, self.vox_min)
    }

    /// Distance from `p` to the nearest Occupied leaf, measured to the
    /// leaf's inscribed sphere (center distance minus half size), clamped
    /// at zero. Infinity when the map holds no Occupied leaf.
    pub fn nearest_occupied_distance(&self, p: Vec3) -> f64 {
        let mut best = f64::INFINITY;
        if let Some(root) = &self.root {
            Self::nearest_occ_rec(root, self.origin, self.root_size, p, &mut best);
        }
        best.max(0.0)
    }

    fn nearest_occ_rec(node: &Node, min: Vec3, size: f64, p: Vec3, best: &mut f64) {
        if !node_has_occupied(node) {
            return;
        }
        let cube = Aabb::new(min, min + Vec3::new(size, size, size));
        if cube.distance_to_point(p) >= *best {
            return;
        }
        match node {
            Node::Occupied { .. } => {
                let d = p.distance(cube.center()) - size / 2.0;
                if d < *best {
                    *best = d;
                }
            }
            Node::Internal(oct) => {
                let half = size / 2.0;
                let mut order: Vec<(f64, usize)> = (0..8)
                    .filter(|&i| oct.children[i].is_some())
                    .map(|i| {
                        let cmin = Self::child_min(min, half, i);
                        let cube = Aabb::new(cmin, cmin + Vec3::new(half, half, half));
                        (cube.distance_to_point(p), i)
                    })
                    .collect();
                order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                for (_, i) in order {
                    let cmin = Self::child_min(min, half, i);
                    Self::nearest_occ_rec(oct.children[i].as_ref().unwrap(), cmin, half, p, best);
                }
            }
            Node::Free => {}
        }
    }

    /// Known leaves in deterministic depth-first order: (center, size, state).
    pub fn leaves(&self) -> Vec<(Vec3, f64, CellState)> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            Self::leaves_rec(root, self.origin, self.root_size, &mut out);
        }
        out
    }

    fn leaves_rec(node: &Node, min: Vec3, size: f64, out: &mut Vec<(Vec3, f64, CellState)>) {
        let half = size / 2.0;
        match node {
            Node::Free => out.push((min + Vec3::new(half, half, half), size, CellState::Free)),
            Node::Occupied { .. } => out.push((min + Vec3::new(half, half, half), size, CellState::Occupied)),
            Node::Internal(oct) => {
                for i in 0..8 {
                    if let Some(c) = &oct.children[i] {
                        Self::leaves_rec(c, Self::child_min(min, half, i), half, out);
                    }
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Occupied leaves whose centers lie within `radius` of `center` in the
    /// horizontal plane, pruned by the per-node occupancy aggregate.
    pub fn occupied_leaves_within(&self, center: Vec3, radius: f64) -> Vec<(Vec3, f64)> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            Self::occ_within_rec(root, self.origin, self.root_size, center, radius, &mut out);
        }
        out
    }

    fn occ_within_rec(node: &Node, min: Vec3, size: f64, center: Vec3, radius: f64, out: &mut Vec<(Vec3, f64)>) {
        if !node_has_occupied(node) {
            return;
        }
        // Horizontal distance from the query to the node's XY footprint.
        let dx = (min.x - center.x).max(center.x - (min.x + size)).max(0.0);
        let dy = (min.y - center.y).max(center.y - (min.y + size)).max(0.0);
        if dx * dx + dy * dy > radius * radius {
            return;
        }
        let half = size / 2.0;
        match node {
            Node::Occupied { .. } => {
                let c = min + Vec3::new(half, half, half);
                let hd = ((c.x - center.x).powi(2) + (c.y - center.y).powi(2)).sqrt();
                if hd <= radius {
                    out.push((c, size));
                }
            }
            Node::Internal(oct) => {
                for i in 0..8 {
                    if let Some(child) = &oct.children[i] {
                        Self::occ_within_rec(child, Self::child_min(min, half, i), half, center, radius, out);
                    }
                }
            }
            Node::Free => {}
        }
    }

    /// CSV snapshot of known leaves: x,y,z,size,state.
    pub fn leaves_csv(&self) -> String {
        let mut s = String::from("x,y,z,size,state\n");
        for (c, size, state) in self.leaves() {
            let tag = match state {
                CellState::Free => 'F',
                CellState::Occupied => 'O',
                CellState::Unknown => 'U',
            };
            let _ = writeln!(s, "{:.6},{:.6},{:.6},{:.6},{tag}", c.x, c.y, c.z, size);
        }
        s
    }

    pub fn write_leaves_csv(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.leaves_csv()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }

    /// Copies known subtrees nearest `center` first until their cumulative
    /// known volume reaches `volume_cap`, collapsing so no leaf is finer
    /// than `precision`. Collapse is strict: a cell is Free only when fully
    /// known-free, Occupied when any descendant is Occupied, else Unknown.
    /// Returns the pruned tree and the included source volume.
    pub fn pruned_copy(&self, precision: f64, volume_cap: f64, center: Vec3) -> (OccupancyTree, f64) {
        let p1 = self.snapped_size(precision.max(self.vox_min));
        let mut out = OccupancyTree {
            origin: self.origin,
            root_size: self.root_size,
            vox_min: p1,
            depth: self.level_for(p1),
            root: None,
        };
        let mut included = 0.0f64;
        if volume_cap <= 0.0 {
            return (out, included);
        }

        struct Item<'a> {
            dist: f64,
            seq: u64,
            node: &'a Node,
            min: Vec3,
            size: f64,
        }
        impl PartialEq for Item<'_> {
            fn eq(&self, o: &Self) -> bool {
                self.dist == o.dist && self.seq == o.seq
            }
        }
        impl Eq for Item<'_> {}
        impl PartialOrd for Item<'_> {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item<'_> {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                // Min-heap on (distance, insertion order) via reversed compare.
                o.dist
                    .partial_cmp(&self.dist)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(o.seq.cmp(&self.seq))
            }
        }

        let mut heap = std::collections::BinaryHeap::new();
        let mut seq = 0u64;
        if let Some(root) = &self.root {
            heap.push(Item { dist: 0.0, seq, node: root, min: self.origin, size: self.root_size });
        }
        while let Some(item) = heap.pop() {
            if included >= volume_cap {
                break;
            }
            let vol = node_known_volume(item.node, item.size);
            if vol <= 0.0 {
                continue;
            }
            let fits = included + vol <= volume_cap;
            let splittable = item.size > p1 * 1.5;
            if fits || !splittable {
                Self::copy_collapsed(item.node, item.min, item.size, p1, &mut out);
                included += vol;
            } else if let Node::Internal(oct) = item.node {
                let half = item.size / 2.0;
                for i in 0..8 {
                    if let Some(child) = &oct.children[i] {
                        let cmin = Self::child_min(item.min, half, i);
                        let cube = Aabb::new(cmin, cmin + Vec3::new(half, half, half));
                        seq += 1;
                        heap.push(Item { dist: cube.distance_to_point(center), seq, node: child, min: cmin, size: half });
                    }
                }
            } else {
                // Solid leaf larger than p1: split virtually into octants.
                let half = item.size / 2.0;
                for i in 0..8 {
                    let cmin = Self::child_min(item.min, half, i);
                    let cube = Aabb::new(cmin, cmin + Vec3::new(half, half, half));
                    seq += 1;
                    heap.push(Item { dist: cube.distance_to_point(center), seq, node: item.node, min: cmin, size: half });
                }
            }
        }
        (out, included)
    }

    fn copy_collapsed(node: &Node, min: Vec3, size: f64, p1: f64, out: &mut OccupancyTree) {
        if let Some(built) = Self::build_collapsed(node, size, p1) {
            let origin = out.origin;
            let root_size = out.root_size;
            Self::attach_rec(&mut out.root, origin, root_size, min, size, built);
        }
    }

    /// Clones a subtree with every node finer than `p1` collapsed: Occupied
    /// if any descendant is Occupied, Free only when fully known-free, else
    /// dropped (Unknown).
    fn build_collapsed(node: &Node, size: f64, p1: f64) -> Option<Node> {
        match node {
            Node::Occupied { .. } => Some(Node::Occupied { scan: 0 }),
            Node::Free => Some(Node::Free),
            Node::Internal(oct) => {
                if size <= p1 * 1.5 {
                    if oct.has_occupied {
                        Some(Node::Occupied { scan: 0 })
                    } else if oct.known_volume >= size.powi(3) * (1.0 - 1e-9) {
                        Some(Node::Free)
                    } else {
                        None // partially known without occupancy stays Unknown
                    }
                } else {
                    let half = size / 2.0;
                    let mut copy = Octant::empty();
                    let mut any = false;
                    for i in 0..8 {
                        if let Some(child) = &oct.children[i] {
                            copy.children[i] = Self::build_collapsed(child, half, p1);
                            any |= copy.children[i].is_some();
                        }
                    }
                    if !any {
                        return None;
                    }
                    copy.refresh(half);
                    Some(Node::Internal(Box::new(copy)))
                }
            }
        }
    }

    /// Attaches a built subtree at the cell (`tmin`, `tsize`), creating the
    /// internal path down to it and refreshing aggregates on unwind. Copied
    /// regions are disjoint, so the target slot and every solid ancestor
    /// position are guaranteed vacant or Internal.
    fn attach_rec(slot: &mut Option<Node>, min: Vec3, size: f64, tmin: Vec3, tsize: f64, built: Node) {
        if size <= tsize * 1.5 {
            *slot = Some(built);
            return;
        }
        if slot.is_none() {
            *slot = Some(Node::Internal(Box::new(Octant::empty())));
        }
        let Some(Node::Internal(oct)) = slot else { unreachable!() };
        let half = size / 2.0;
        let center = min + Vec3::new(half, half, half);
        let tcenter = tmin + Vec3::new(tsize / 2.0, tsize / 2.0, tsize / 2.0);
        let idx = Self::child_index(center, tcenter);
        let cmin = Self::child_min(min, half, idx);
        Self::attach_rec(&mut oct.children[idx], cmin, half, tmin, tsize, built);
        oct.refresh(half);
    }
}

/// One simulated depth scan: surface hits plus the directions that saw
/// nothing within range (needed to carve known-free space).
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub origin: Vec3,
    pub heading: f64,
    pub max_range: f64,
    pub points: Vec<Vec3>,
    pub miss_dirs: Vec<Vec3>,
    /// Solid angle accounted per emitted ray, steradians.
    pub ray_solid_angle: f64,
    pub rays_total: usize,
}

impl PointCloud {
    pub fn empty(origin: Vec3, heading: f64, max_range: f64) -> Self {
        PointCloud { origin, heading, max_range, points: Vec::new(), miss_dirs: Vec::new(), ray_solid_angle: 0.0, rays_total: 0 }
    }

    /// Analytic volume of the full (untruncated) scanned frustum.
    pub fn frustum_volume(&self) -> f64 {
        self.rays_total as f64 * self.ray_solid_angle * self.max_range.powi(3) / 3.0
    }

    /// CSV export of hit points: x,y,z.
    pub fn points_csv(&self) -> String {
        let mut s = String::from("x,y,z\n");
        for p in &self.points {
            let _ = writeln!(s, "{:.6},{:.6},{:.6}", p.x, p.y, p.z);
        }
        s
    }
}

/// Sensor geometry: four 90-degree horizontal frusta (full 360 coverage)
/// at `elevation_rings` elevation angles around level flight.
#[derive(Debug, Clone, Copy)]
pub struct SensorRig {
    pub max_range: f64,
    pub azimuth_step: f64,
    pub elevation_rings: usize,
}

impl SensorRig {
    pub fn from_config(cfg: &crate::config::SimConfig) -> Self {
        SensorRig {
            max_range: cfg.sensor_range(),
            azimuth_step: cfg.sensor_azimuth_step(),
            elevation_rings: cfg.elevation_rings,
        }
    }

    fn elevations(&self) -> Vec<f64> {
        let n = self.elevation_rings.max(1) as i64;
        let half = (n - 1) / 2;
        (-half..=(n - 1 - half)).map(|i| i as f64 * self.azimuth_step).collect()
    }
}

/// Casts the rig's rays against ground truth. Each ray yields a surface
/// point at the first pillar hit within range, otherwise a miss direction.
pub fn sense(gt: &GroundTruth, pose: Vec3, heading: f64, rig: &SensorRig) -> PointCloud {
    let reach = rig.max_range + gt.grid_size;
    let nearby: Vec<&Obstacle> = gt
        .obstacles
        .iter()
        .filter(|o| (o.base - pose).norm_xy() <= reach + o.radius)
        .collect();

    let azimuths = (std::f64::consts::TAU / rig.azimuth_step).round() as usize;
    let az_step = std::f64::consts::TAU / azimuths as f64;
    let elevations = rig.elevations();
    let mut cloud = PointCloud::empty(pose, heading, rig.max_range);
    cloud.rays_total = azimuths * elevations.len();
    cloud.ray_solid_angle = az_step * rig.azimuth_step;

    for &phi in &elevations {
        let (sin_phi, cos_phi) = phi.sin_cos();
        for a in 0..azimuths {
            let theta = heading + a as f64 * az_step;
            let (sin_t, cos_t) = theta.sin_cos();
            let dir = Vec3::new(cos_phi * cos_t, cos_phi * sin_t, sin_phi);
            match nearest_hit(&nearby, pose, dir, rig.max_range) {
                Some(t) => cloud.points.push(pose + dir * t),
                None => cloud.miss_dirs.push(dir),
            }
        }
    }
    cloud
}

use crate::world::Obstacle;

fn nearest_hit(obstacles: &[&Obstacle], origin: Vec3, dir: Vec3, max_range: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for o in obstacles {
        let ox = origin.x - o.base.x;
        let oy = origin.y - o.base.y;
        let a = dir.x * dir.x + dir.y * dir.y;
        if a < 1e-18 {
            continue; // vertical ray, pillars are vertical too
        }
        let b = 2.0 * (ox * dir.x + oy * dir.y);
        let c = ox * ox + oy * oy - o.radius * o.radius;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
            if t <= 1e-9 || t > max_range {
                continue;
            }
            let z = origin.z + dir.z * t;
            if z < o.base.z || z > o.base.z + o.height {
                continue;
            }
            if best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
            break; // roots are ordered; nearer valid root wins
        }
    }
    best
}

/// Averages hit points within cells of side `cell` (the perception
/// precision knob). Miss rays pass through untouched.
pub fn downsample_cloud(cloud: &PointCloud, cell: f64) -> PointCloud {
    assert!(cell > 0.0);
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64);
        let entry = cells.entry(key).or_insert((Vec3::ZERO, 0));
        entry.0 = entry.0 + *p;
        entry.1 += 1;
    }
    let points = cells.values().map(|(sum, n)| *sum / *n as f64).collect();
    PointCloud { points, ..cloud.clone() }
}

/// Perception-stage budget: marking precision and newly-known volume cap.
#[derive(Debug, Clone, Copy)]
pub struct MapBudget {
    pub precision: f64,
    pub volume: f64,
}

#[derive(Debug, Clone, Default)]
pub struct IntegrationOutcome {
    /// Volume that transitioned Unknown -> known, m^3.
    pub integrated_volume: f64,
    /// Total volume swept by marks including re-marks, m^3.
    pub swept_volume: f64,
    /// Centers of voxels that newly became Occupied.
    pub new_occupied: Vec<Vec3>,
    /// True when the volume monitor halted integration early.
    pub truncated: bool,
}

/// Ray-marches the scan into the tree at the budget precision. Rays are
/// processed nearest-to-the-reference-polyline first (or nearest the drone
/// when no trajectory exists) and integration halts once newly-known volume
/// reaches the budget.
pub fn integrate(
    tree: &mut OccupancyTree,
    cloud: &PointCloud,
    budget: MapBudget,
    reference: &[Vec3],
    scan: u32,
) -> IntegrationOutcome {
    let mut out = IntegrationOutcome::default();
    let p0 = budget.precision;
    assert!(p0 > 0.0);
    let voxel = tree.snapped_size(p0).powi(3);

    // The sensor's own cell is traversable a priori (the vehicle flies in
    // it), so clear it outside the volume budget. Without this a coarse
    // scan never frees the cell the drone occupies: free marks start one
    // whole voxel out.
    tree.mark_free(cloud.origin, p0, scan);

    struct Ray {
        end: Vec3,
        dir: Vec3,
        len: f64,
        hit: bool,
    }
    let mut rays: Vec<Ray> = Vec::with_capacity(cloud.points.len() + cloud.miss_dirs.len());
    for p in &cloud.points {
        let d = *p - cloud.origin;
        if let Some(dir) = d.unit() {
            rays.push(Ray { end: *p, dir, len: d.norm(), hit: true });
        }
    }
    for dir in &cloud.miss_dirs {
        rays.push(Ray { end: cloud.origin + *dir * cloud.max_range, dir: *dir, len: cloud.max_range, hit: false });
    }

    // Marks within one scan commute (endpoints always beat sweeps), so ray
    // order only matters when the volume budget can truncate the scan. When
    // it cannot, keep the emitted (angular) order: adjacent rays then walk
    // adjacent cells, which is what makes the free-box skip effective.
    let marks_bound: f64 = rays
        .iter()
        .map(|r| (((r.len - p0 / 2.0) / p0).floor().max(0.0) + 1.0) * voxel)
        .sum();
    let keyed: Vec<(f64, usize)> = if budget.volume >= marks_bound {
        rays.iter().enumerate().map(|(i, _)| (0.0, i)).collect()
    } else {
        let dist_to_ref = |p: Vec3| -> f64 {
            if reference.len() < 2 {
                return p.distance(*reference.first().unwrap_or(&cloud.origin));
            }
            let mut best = f64::INFINITY;
            for w in reference.windows(2) {
                best = best.min(p.distance_to_segment(w[0], w[1]));
            }
            best
        };
        let mut keyed: Vec<(f64, usize)> = rays.iter().enumerate().map(|(i, r)| (dist_to_ref(r.end), i)).collect();
        keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        keyed
    };

    // Steps that stay inside a cell already known wholly Free need no tree
    // work at all; merged Free leaves make this skip most of each ray over
    // explored space (the mark would be a no-op: within a scan, endpoint
    // marks always beat free sweeps, so a once-Free box stays skippable).
    let mut skip: Option<(Vec3, f64)> = None;
    let inside = |b: &(Vec3, f64), q: Vec3| {
        q.x >= b.0.x && q.x < b.0.x + b.1 && q.y >= b.0.y && q.y < b.0.y + b.1 && q.z >= b.0.z && q.z < b.0.z + b.1
    };
    'rays: for &(_, i) in &keyed {
        let ray = &rays[i];
        if ray.hit {
            if out.integrated_volume >= budget.volume {
                out.truncated = true;
                break 'rays;
            }
            let (delta, newly_occ) = tree.mark_occupied(ray.end, p0, scan);
            out.integrated_volume += delta;
            out.swept_volume += voxel;
            if newly_occ {
                out.new_occupied.push(ray.end);
            }
        }
        // Free marks stop half a voxel short of the surface.
        let steps = ((ray.len - p0 / 2.0) / p0).floor() as i64;
        for k in 1..=steps {
            if out.integrated_volume >= budget.volume {
                out.truncated = true;
                break 'rays;
            }
            let pt = cloud.origin + ray.dir * (k as f64 * p0);
            if skip.as_ref().is_some_and(|b| inside(b, pt)) {
                out.swept_volume += voxel;
                continue;
            }
            let (freed, free_box) = tree.mark_free_probed(pt, p0, scan);
            out.integrated_volume += freed;
            out.swept_volume += voxel;
            skip = free_box;
        }
    }
    out
}
