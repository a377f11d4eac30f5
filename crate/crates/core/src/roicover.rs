//! Tile-based region-of-interest masks.
//!
//! Frames are cut into a fixed grid; a coverage matrix records which tiles
//! touch each tracked object; a tile set cover picks the tiles to keep; kept
//! tiles are merged into rectangles and everything else is blacked out.

use std::collections::{BTreeMap, BTreeSet};

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::geometry::{BBox, PixelRect};
use crate::scenario::Frame;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileGrid {
    pub frame_width: u32,
    pub frame_height: u32,
    pub rows: u32,
    pub cols: u32,
    /// Nominal tile size; the last column and row may be narrower.
    pub tile_width: u32,
    pub tile_height: u32,
}

pub fn partition_tiles(width: u32, height: u32, rows: u32, cols: u32) -> Result<TileGrid> {
    if width == 0 || height == 0 || rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "tile grid {cols}x{rows} over {width}x{height} has a zero dimension"
        )));
    }
    let tile_width = width.div_ceil(cols);
    let tile_height = height.div_ceil(rows);
    if (cols - 1) * tile_width >= width || (rows - 1) * tile_height >= height {
        return Err(Error::Config(format!(
            "{cols}x{rows} grid leaves empty tiles on a {width}x{height} frame"
        )));
    }
    Ok(TileGrid {
        frame_width: width,
        frame_height: height,
        rows,
        cols,
        tile_width,
        tile_height,
    })
}

impl TileGrid {
    pub fn tile_count(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    /// Row-major tile index.
    pub fn tile_index(&self, row: u32, col: u32) -> usize {
        (row * self.cols + col) as usize
    }

    pub fn tile_rect(&self, index: usize) -> PixelRect {
        let (row, col) = (index as u32 / self.cols, index as u32 % self.cols);
        PixelRect::new(
            col * self.tile_width,
            row * self.tile_height,
            ((col + 1) * self.tile_width).min(self.frame_width),
            ((row + 1) * self.tile_height).min(self.frame_height),
        )
    }

    /// Tiles sharing positive area with `bbox`, ascending.
    pub fn tiles_overlapping(&self, bbox: &BBox) -> Vec<usize> {
        (0..self.tile_count())
            .filter(|&i| self.tile_rect(i).overlaps_bbox(bbox))
            .collect()
    }
}

/// Coverage matrix key: one tracked object as seen by one camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectKey {
    pub global_id: u32,
    pub camera_id: u32,
}

/// A detection box labeled with its global identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub global_id: u32,
    pub camera_id: u32,
    pub t: u32,
    pub bbox: BBox,
}

/// Object x tile incidence, `bits[o][tau] = 1` iff tile `tau` touches object `o` in some frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageMatrix {
    pub objects: Vec<ObjectKey>,
    pub tile_count: usize,
    pub bits: Vec<FixedBitSet>,
}

impl CoverageMatrix {
    /// Build directly from per-object tile lists.
    pub fn from_rows(tile_count: usize, rows: &[Vec<usize>]) -> Self {
        let objects = (0..rows.len())
            .map(|i| ObjectKey {
                global_id: i as u32,
                camera_id: 0,
            })
            .collect();
        let bits = rows
            .iter()
            .map(|r| {
                let mut b = FixedBitSet::with_capacity(tile_count);
                r.iter().for_each(|&t| b.insert(t));
                b
            })
            .collect();
        Self {
            objects,
            tile_count,
            bits,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn covers(&self, object: usize, tile: usize) -> bool {
        self.bits[object].contains(tile)
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones(..)).sum()
    }

    fn check_feasible(&self) -> Result<()> {
        if let Some(o) = self.bits.iter().position(|b| b.is_clear()) {
            let key = self.objects[o];
            return Err(Error::Infeasible {
                object: format!("global_id={} camera_id={}", key.global_id, key.camera_id),
            });
        }
        Ok(())
    }

    /// True when `tiles` hits every object row.
    pub fn is_cover(&self, tiles: &[usize]) -> bool {
        self.bits
            .iter()
            .all(|row| tiles.iter().any(|&t| row.contains(t)))
    }
}

/// Coverage of all boxes on one grid. Objects are keyed by `(global_id, camera_id)`
/// and sorted; callers restrict `boxes` to the camera and time window of interest.
pub fn build_coverage(boxes: &[LabeledBox], grid: &TileGrid) -> CoverageMatrix {
    let mut rows: BTreeMap<ObjectKey, FixedBitSet> = BTreeMap::new();
    for b in boxes {
        let key = ObjectKey {
            global_id: b.global_id,
            camera_id: b.camera_id,
        };
        let row = rows
            .entry(key)
            .or_insert_with(|| FixedBitSet::with_capacity(grid.tile_count()));
        for tile in grid.tiles_overlapping(&b.bbox) {
            row.insert(tile);
        }
    }
    let (objects, bits) = rows.into_iter().unzip();
    CoverageMatrix {
        objects,
        tile_count: grid.tile_count(),
        bits,
    }
}

/// Classic greedy set cover: repeatedly take the tile covering the most
/// uncovered objects, lowest index on ties. Result is sorted.
pub fn solve_cover_greedy(matrix: &CoverageMatrix) -> Result<Vec<usize>> {
    matrix.check_feasible()?;
    let mut uncovered: BTreeSet<usize> = (0..matrix.objects.len()).collect();
    let mut chosen = Vec::new();
    while !uncovered.is_empty() {
        let (best, gain) = (0..matrix.tile_count)
            .map(|t| {
                (
                    t,
                    uncovered.iter().filter(|&&o| matrix.covers(o, t)).count(),
                )
            })
            .fold((0, 0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        debug_assert!(gain > 0, "feasibility checked");
        uncovered.retain(|&o| !matrix.covers(o, best));
        chosen.push(best);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

struct BranchAndBound<'a> {
    /// Objects covered by each tile.
    tile_objects: Vec<FixedBitSet>,
    /// For each object, the highest tile index covering it.
    last_tile: Vec<usize>,
    matrix: &'a CoverageMatrix,
    best: Vec<usize>,
    current: Vec<usize>,
}

impl BranchAndBound<'_> {
    fn lower_bound(&self, uncovered: &FixedBitSet, from: usize) -> usize {
        let remaining = uncovered.count_ones(..);
        if remaining == 0 {
            return 0;
        }
        let widest = self.tile_objects[from..]
            .iter()
            .map(|objs| objs.intersection(uncovered).count())
            .max()
            .unwrap_or(0);
        if widest == 0 {
            usize::MAX
        } else {
            remaining.div_ceil(widest)
        }
    }

    fn improves(&self, candidate: &[usize]) -> bool {
        (candidate.len(), candidate) < (self.best.len(), self.best.as_slice())
    }

    /// Include-first search over tiles in index order; sets are visited in
    /// lexicographic order, and a branch is pruned only when it cannot reach
    /// the incumbent size.
    fn search(&mut self, tile: usize, uncovered: &FixedBitSet) {
        if uncovered.is_clear() {
            if self.improves(&self.current) {
                self.best = self.current.clone();
            }
            return;
        }
        if tile == self.matrix.tile_count {
            return;
        }
        // an uncovered object whose last covering tile is behind us is lost
        if uncovered.ones().any(|o| self.last_tile[o] < tile) {
            return;
        }
        let bound = self.lower_bound(uncovered, tile);
        if bound == usize::MAX || self.current.len() + bound > self.best.len() {
            return;
        }
        if self.tile_objects[tile]
            .intersection(uncovered)
            .next()
            .is_some()
        {
            let mut next = uncovered.clone();
            next.difference_with(&self.tile_objects[tile]);
            self.current.push(tile);
            self.search(tile + 1, &next);
            self.current.pop();
        }
        self.search(tile + 1, uncovered);
    }
}

/// Minimum-cardinality cover, lexicographically smallest among the minima.
///
/// Branch and bound seeded with the greedy cover as incumbent; prunes on a
/// counting lower bound and on objects that no remaining tile can cover.
pub fn solve_cover_exact(matrix: &CoverageMatrix) -> Result<Vec<usize>> {
    let greedy = solve_cover_greedy(matrix)?;
    if matrix.is_empty() {
        return Ok(greedy);
    }
    let objects = matrix.objects.len();
    let tile_objects = (0..matrix.tile_count)
        .map(|t| {
            let mut s = FixedBitSet::with_capacity(objects);
            (0..objects)
                .filter(|&o| matrix.covers(o, t))
                .for_each(|o| s.insert(o));
            s
        })
        .collect();
    let last_tile = matrix
        .bits
        .iter()
        .map(|row| row.ones().next_back().expect("feasible row"))
        .collect();
    let mut bb = BranchAndBound {
        tile_objects,
        last_tile,
        matrix,
        best: greedy,
        current: Vec::new(),
    };
    let mut all = FixedBitSet::with_capacity(objects);
    all.insert_range(..);
    bb.search(0, &all);
    Ok(bb.best)
}

/// Merge selected tiles into disjoint rectangles: horizontal runs per grid
/// row, then runs with identical column span stacked over consecutive rows.
pub fn merge_tiles(selected: &[usize], grid: &TileGrid) -> Vec<PixelRect> {
    let chosen: BTreeSet<usize> = selected
        .iter()
        .copied()
        .filter(|&t| t < grid.tile_count())
        .collect();
    // (col_start, col_end_exclusive) -> (row_start, row_end_exclusive)
    let mut open: BTreeMap<(u32, u32), (u32, u32)> = BTreeMap::new();
    let mut blocks: Vec<(u32, u32, u32, u32)> = Vec::new();
    for row in 0..grid.rows {
        let mut runs = Vec::new();
        let mut col = 0;
        while col < grid.cols {
            if chosen.contains(&grid.tile_index(row, col)) {
                let start = col;
                while col < grid.cols && chosen.contains(&grid.tile_index(row, col)) {
                    col += 1;
                }
                runs.push((start, col));
            } else {
                col += 1;
            }
        }
        let mut next_open = BTreeMap::new();
        for run in runs {
            let rows = match open.remove(&run) {
                Some((r0, _)) => (r0, row + 1),
                None => (row, row + 1),
            };
            next_open.insert(run, rows);
        }
        for ((c0, c1), (r0, r1)) in std::mem::replace(&mut open, next_open) {
            blocks.push((r0, r1, c0, c1));
        }
    }
    blocks.extend(
        open.into_iter()
            .map(|((c0, c1), (r0, r1))| (r0, r1, c0, c1)),
    );
    blocks.sort_unstable();
    blocks
        .into_iter()
        .map(|(r0, r1, c0, c1)| {
            let top_left = grid.tile_rect(grid.tile_index(r0, c0));
            let bottom_right = grid.tile_rect(grid.tile_index(r1 - 1, c1 - 1));
            PixelRect::new(top_left.x0, top_left.y0, bottom_right.x1, bottom_right.y1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    /// Every tile touching any box.
    #[default]
    Full,
    /// Minimum tile set with at least one tile per object (exact).
    MinExact,
    /// Greedy approximation of `MinExact`.
    MinGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiMask {
    pub camera_id: u32,
    pub grid: TileGrid,
    pub selected_tiles: Vec<usize>,
    pub merged_rects: Vec<PixelRect>,
}

impl RoiMask {
    pub fn from_tiles(camera_id: u32, grid: TileGrid, tiles: &[usize]) -> Self {
        let mut selected_tiles: Vec<usize> = tiles
            .iter()
            .copied()
            .filter(|&t| t < grid.tile_count())
            .collect();
        selected_tiles.sort_unstable();
        selected_tiles.dedup();
        let merged_rects = merge_tiles(&selected_tiles, &grid);
        Self {
            camera_id,
            grid,
            selected_tiles,
            merged_rects,
        }
    }

    pub fn full(camera_id: u32, grid: TileGrid) -> Self {
        let all: Vec<usize> = (0..grid.tile_count()).collect();
        Self::from_tiles(camera_id, grid, &all)
    }

    pub fn is_full(&self) -> bool {
        self.selected_tiles.len() == self.grid.tile_count()
    }

    pub fn contains_tile(&self, tile: usize) -> bool {
        self.selected_tiles.binary_search(&tile).is_ok()
    }

    pub fn covers_pixel(&self, x: u32, y: u32) -> bool {
        self.merged_rects.iter().any(|r| r.contains(x, y))
    }

    pub fn covered_pixels(&self) -> u64 {
        self.merged_rects.iter().map(PixelRect::area).sum()
    }
}

/// Pick tiles for one camera's boxes under `mode`.
pub fn select_tiles(boxes: &[LabeledBox], grid: &TileGrid, mode: CoverMode) -> Result<Vec<usize>> {
    match mode {
        CoverMode::Full => {
            let mut tiles: BTreeSet<usize> = BTreeSet::new();
            for b in boxes {
                tiles.extend(grid.tiles_overlapping(&b.bbox));
            }
            Ok(tiles.into_iter().collect())
        }
        CoverMode::MinExact => solve_cover_exact(&build_coverage(boxes, grid)),
        CoverMode::MinGreedy => solve_cover_greedy(&build_coverage(boxes, grid)),
    }
}

/// Copy pixels inside the mask rectangles and zero the rest.
pub fn apply_mask(frame: &Frame, mask: &RoiMask) -> Result<Frame> {
    if frame.width != mask.grid.frame_width || frame.height != mask.grid.frame_height {
        return Err(Error::Shape(format!(
            "mask grid {}x{} vs frame {}x{}",
            mask.grid.frame_width, mask.grid.frame_height, frame.width, frame.height
        )));
    }
    let mut out = Frame {
        pixels: vec![0; frame.pixels.len()],
        ..frame.clone()
    };
    let w = frame.width as usize;
    for r in &mask.merged_rects {
        for y in r.y0..r.y1 {
            let span = y as usize * w + r.x0 as usize..y as usize * w + r.x1 as usize;
            out.pixels[span.clone()].copy_from_slice(&frame.pixels[span]);
        }
    }
    Ok(out)
}
