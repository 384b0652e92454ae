//! Maximally stable extremal regions over a union-find component tree.
//!
//! Pixels are flooded in order of increasing key; each union-find root
//! carries the component-tree node it currently belongs to. After flooding,
//! nodes created at the same gray level are collapsed into canonical nodes,
//! and stability is measured on the canonical tree.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::geom::PixelBox;
use crate::imageio::{ChannelId, PyramidLevel, Raster};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    /// Dark region surrounded by brighter pixels.
    DarkOnLight,
    /// Bright region surrounded by darker pixels.
    LightOnDark,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MserParams {
    /// Gray-level step used to measure stability.
    pub delta: u8,
    /// Minimum region area as a fraction of image area.
    pub min_area: f64,
    /// Maximum region area as a fraction of image area.
    pub max_area: f64,
    /// Upper bound on relative area variation.
    pub max_variation: f64,
}

impl Default for MserParams {
    fn default() -> Self {
        MserParams {
            delta: 2,
            min_area: 0.00007,
            max_area: 0.5,
            max_variation: 0.3,
        }
    }
}

impl MserParams {
    pub fn validate(&self) -> Result<()> {
        if self.delta < 1 {
            return arg_err("mser delta must be >= 1");
        }
        if !(self.min_area > 0.0 && self.min_area < self.max_area && self.max_area <= 1.0) {
            return arg_err(format!(
                "mser area bounds must satisfy 0 < min ({}) < max ({}) <= 1",
                self.min_area, self.max_area
            ));
        }
        if !(self.max_variation > 0.0 && self.max_variation.is_finite()) {
            return arg_err("mser max_variation must be positive");
        }
        Ok(())
    }
}

/// One extremal region.
#[derive(Clone, Debug)]
pub struct Region {
    /// Pixel coordinates in row-major order.
    pub pixels: Vec<(u32, u32)>,
    pub bbox: PixelBox,
    pub centroid: (f64, f64),
    /// Gray level of the threshold at which the region was taken.
    pub level: u8,
    pub polarity: Polarity,
    pub source: Option<(ChannelId, PyramidLevel)>,
}

impl Region {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn from_pixels(mut pixels: Vec<(u32, u32)>, level: u8, polarity: Polarity) -> Region {
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        let (x0, y0) = pixels[0];
        let mut bbox = PixelBox::point(x0, y0);
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(x, y) in &pixels {
            bbox.include(x, y);
            sx += x as f64;
            sy += y as f64;
        }
        let n = pixels.len() as f64;
        Region {
            pixels,
            bbox,
            centroid: (sx / n, sy / n),
            level,
            polarity,
            source: None,
        }
    }
}

const NONE: u32 = u32::MAX;

/// Canonical component tree over flooding keys.
struct ComponentTree {
    level: Vec<u8>,
    area: Vec<u32>,
    parent: Vec<u32>,
    child_start: Vec<u32>,
    children: Vec<u32>,
    largest_child: Vec<u32>,
    /// Canonical node of each pixel.
    pixel_node: Vec<u32>,
}

fn find(uf: &mut [u32], mut x: u32) -> u32 {
    let mut root = x;
    while uf[root as usize] != root {
        root = uf[root as usize];
    }
    while uf[x as usize] != root {
        let next = uf[x as usize];
        uf[x as usize] = root;
        x = next;
    }
    root
}

impl ComponentTree {
    /// Builds the tree of lower level sets `{key <= t}` under 4-connectivity.
    fn build(width: usize, height: usize, keys: &[u8]) -> ComponentTree {
        let n = keys.len();

        // counting sort, stable in pixel index
        let mut hist = [0usize; 257];
        for &k in keys {
            hist[k as usize + 1] += 1;
        }
        for i in 1..257 {
            hist[i] += hist[i - 1];
        }
        let mut order = vec![0u32; n];
        for (i, &k) in keys.iter().enumerate() {
            order[hist[k as usize]] = i as u32;
            hist[k as usize] += 1;
        }

        let mut uf: Vec<u32> = (0..n as u32).collect();
        let mut uf_rank = vec![0u8; n];
        let mut root_node = vec![NONE; n];
        let mut done = vec![false; n];
        let mut raw_pixel_node = vec![NONE; n];
        let mut level: Vec<u8> = Vec::new();
        let mut area: Vec<u32> = Vec::new();
        let mut parent: Vec<u32> = Vec::new();

        for &p in &order {
            let pu = p as usize;
            let v = keys[pu];
            let cur = level.len() as u32;
            level.push(v);
            area.push(1);
            parent.push(NONE);
            root_node[pu] = cur;
            raw_pixel_node[pu] = cur;
            done[pu] = true;

            let (x, y) = (pu % width, pu / width);
            let mut neighbors = [NONE; 4];
            if x > 0 {
                neighbors[0] = p - 1;
            }
            if x + 1 < width {
                neighbors[1] = p + 1;
            }
            if y > 0 {
                neighbors[2] = p - width as u32;
            }
            if y + 1 < height {
                neighbors[3] = p + width as u32;
            }
            for q in neighbors {
                if q == NONE || !done[q as usize] {
                    continue;
                }
                let rp = find(&mut uf, p);
                let rq = find(&mut uf, q);
                if rp == rq {
                    continue;
                }
                let np = root_node[rp as usize];
                let nq = root_node[rq as usize];
                parent[nq as usize] = np;
                area[np as usize] += area[nq as usize];
                let r = match uf_rank[rp as usize].cmp(&uf_rank[rq as usize]) {
                    std::cmp::Ordering::Less => {
                        uf[rp as usize] = rq;
                        rq
                    }
                    std::cmp::Ordering::Greater => {
                        uf[rq as usize] = rp;
                        rp
                    }
                    std::cmp::Ordering::Equal => {
                        uf[rq as usize] = rp;
                        uf_rank[rp as usize] += 1;
                        rp
                    }
                };
                root_node[r as usize] = np;
            }
        }

        // Parents are always created after their children, so a descending
        // sweep resolves same-level chains to their topmost node.
        let raw = level.len();
        let mut canon = vec![NONE; raw];
        for i in (0..raw).rev() {
            let par = parent[i];
            canon[i] = if par != NONE && level[par as usize] == level[i] {
                canon[par as usize]
            } else {
                i as u32
            };
        }
        let mut compact = vec![NONE; raw];
        let mut c_level = Vec::new();
        let mut c_area = Vec::new();
        let mut c_raw = Vec::new();
        for i in 0..raw {
            if canon[i] == i as u32 {
                compact[i] = c_level.len() as u32;
                c_level.push(level[i]);
                c_area.push(area[i]);
                c_raw.push(i as u32);
            }
        }
        let m = c_level.len();
        let mut c_parent = vec![NONE; m];
        for (ci, &ri) in c_raw.iter().enumerate() {
            let par = parent[ri as usize];
            if par != NONE {
                c_parent[ci] = compact[canon[par as usize] as usize];
            }
        }
        let mut counts = vec![0u32; m + 1];
        for &par in &c_parent {
            if par != NONE {
                counts[par as usize + 1] += 1;
            }
        }
        for i in 1..=m {
            counts[i] += counts[i - 1];
        }
        let child_start = counts.clone();
        let mut fill = counts;
        let mut children = vec![0u32; child_start[m] as usize];
        let mut largest_child = vec![NONE; m];
        for ci in 0..m {
            let par = c_parent[ci];
            if par != NONE {
                let pu = par as usize;
                children[fill[pu] as usize] = ci as u32;
                fill[pu] += 1;
                let best = largest_child[pu];
                if best == NONE || c_area[ci] > c_area[best as usize] {
                    largest_child[pu] = ci as u32;
                }
            }
        }
        let pixel_node = raw_pixel_node
            .iter()
            .map(|&r| compact[canon[r as usize] as usize])
            .collect();

        ComponentTree {
            level: c_level,
            area: c_area,
            parent: c_parent,
            child_start,
            children,
            largest_child,
            pixel_node,
        }
    }

    fn children_of(&self, node: usize) -> &[u32] {
        &self.children[self.child_start[node] as usize..self.child_start[node + 1] as usize]
    }

    /// Smallest relative area variation `(A(t+delta) - A(t-delta)) / A`
    /// over the thresholds `t` at which this node is the component.
    fn variation(&self, node: usize, delta: u8) -> f64 {
        let delta = delta as i32;
        let birth = self.level[node] as i32;
        let end = match self.parent[node] {
            NONE => 255,
            p => self.level[p as usize] as i32 - 1,
        };
        let own = self.area[node] as f64;

        // ancestors in increasing level
        let mut up = vec![(birth, self.area[node])];
        let mut a = self.parent[node];
        while a != NONE {
            let lv = self.level[a as usize] as i32;
            if lv > end + delta {
                break;
            }
            up.push((lv, self.area[a as usize]));
            a = self.parent[a as usize];
        }
        // largest-child chain in decreasing level
        let mut down = vec![(birth, self.area[node])];
        let mut d = self.largest_child[node];
        while d != NONE {
            let lv = self.level[d as usize] as i32;
            down.push((lv, self.area[d as usize]));
            if lv < birth - delta {
                break;
            }
            d = self.largest_child[d as usize];
        }

        let mut best = f64::INFINITY;
        let mut ui = 0;
        for t in birth..=end {
            while ui + 1 < up.len() && up[ui + 1].0 <= t + delta {
                ui += 1;
            }
            let s = t - delta;
            let below = down.iter().find(|&&(lv, _)| lv <= s).map_or(0, |&(_, ar)| ar);
            let v = (up[ui].1 - below) as f64 / own;
            if v < best {
                best = v;
            }
        }
        best
    }
}

/// Extracts maximally stable extremal regions of one polarity.
///
/// Regions are returned largest first; ties fall back to level, then to the
/// first pixel in row-major order.
pub fn extract_mser(raster: &Raster, params: &MserParams, polarity: Polarity) -> Result<Vec<Region>> {
    params.validate()?;
    let (w, h) = (raster.width(), raster.height());
    // Bright regions are lower level sets of the inverted intensities.
    let keys: Vec<u8> = match polarity {
        Polarity::LightOnDark => raster.data().iter().map(|&v| 255 - v).collect(),
        Polarity::DarkOnLight => raster.inverted().data().iter().map(|&v| 255 - v).collect(),
    };
    let tree = ComponentTree::build(w, h, &keys);
    let m = tree.level.len();

    let total = (w * h) as f64;
    let min_px = (params.min_area * total).ceil().max(1.0) as u32;
    let max_px = (params.max_area * total).floor() as u32;

    let variation: Vec<Option<f64>> = (0..m)
        .map(|i| {
            let a = tree.area[i];
            (a >= min_px && a <= max_px).then(|| tree.variation(i, params.delta))
        })
        .collect();

    let mut selected = Vec::new();
    for i in 0..m {
        let Some(v) = variation[i] else { continue };
        if v > params.max_variation {
            continue;
        }
        let parent_ok = match tree.parent[i] {
            NONE => true,
            p => variation[p as usize].is_none_or(|pv| v <= pv),
        };
        let children_ok = tree
            .children_of(i)
            .iter()
            .all(|&c| variation[c as usize].is_none_or(|cv| v <= cv));
        if parent_ok && children_ok {
            selected.push(i);
        }
    }
    if selected.is_empty() {
        return Ok(Vec::new());
    }

    // pixels grouped by canonical node
    let mut start = vec![0u32; m + 1];
    for &nd in &tree.pixel_node {
        start[nd as usize + 1] += 1;
    }
    for i in 1..=m {
        start[i] += start[i - 1];
    }
    let mut fill = start.clone();
    let mut by_node = vec![0u32; w * h];
    for (p, &nd) in tree.pixel_node.iter().enumerate() {
        by_node[fill[nd as usize] as usize] = p as u32;
        fill[nd as usize] += 1;
    }

    let mut regions = Vec::with_capacity(selected.len());
    let mut stack = Vec::new();
    for &node in &selected {
        let mut pixels = Vec::with_capacity(tree.area[node] as usize);
        stack.clear();
        stack.push(node as u32);
        while let Some(nd) = stack.pop() {
            let nd = nd as usize;
            for &p in &by_node[start[nd] as usize..start[nd + 1] as usize] {
                pixels.push((p % w as u32, p / w as u32));
            }
            stack.extend_from_slice(tree.children_of(nd));
        }
        let key = tree.level[node];
        let level = match polarity {
            Polarity::LightOnDark => 255 - key,
            Polarity::DarkOnLight => key,
        };
        regions.push(Region::from_pixels(pixels, level, polarity));
    }
    regions.sort_by(|a, b| {
        b.area()
            .cmp(&a.area())
            .then(a.level.cmp(&b.level))
            .then((a.pixels[0].1, a.pixels[0].0).cmp(&(b.pixels[0].1, b.pixels[0].0)))
    });
    Ok(regions)
}

/// Extracts both polarities and tags each region with its source.
pub fn extract_both(
    raster: &Raster,
    params: &MserParams,
    source: (ChannelId, PyramidLevel),
) -> Result<Vec<Region>> {
    let mut out = extract_mser(raster, params, Polarity::DarkOnLight)?;
    out.extend(extract_mser(raster, params, Polarity::LightOnDark)?);
    for r in &mut out {
        r.source = Some(source);
    }
    Ok(out)
}

/// Renders regions into a label raster (0 = background, later regions drawn
/// over earlier ones), for debugging output as PGM.
pub fn label_raster(width: usize, height: usize, regions: &[Region]) -> Raster {
    let mut data = vec![0u8; width * height];
    for (i, r) in regions.iter().enumerate() {
        let label = (i % 255 + 1) as u8;
        for &(x, y) in &r.pixels {
            data[y as usize * width + x as usize] = label;
        }
    }
    Raster::new(width, height, data).expect("dimensions come from a valid raster")
}
