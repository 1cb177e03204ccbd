use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::cost::{CostFunction, MatchingConfig, NEUTRAL_ZNCC_COST};
use super::hypotheses::Hypotheses;
use super::MvsError;
use crate::geometry::{CameraIntrinsics, Image, RigidPose, MIN_PROJECTION_DEPTH};

/// A source image with the transform taking reference-camera points into it.
#[derive(Debug, Clone, Copy)]
pub struct SourceView<'a> {
    pub image: &'a Image,
    pub rel: RigidPose,
}

/// Matching costs for every pixel and hypothesis.
///
/// A cell is valid when at least `min_valid_sources` sources saw the whole
/// patch; invalid cells hold `f32::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    hypotheses: Hypotheses,
    costs: Vec<f32>,
    valid_sources: Vec<u8>,
    min_valid_sources: usize,
}

impl CostVolume {
    /// Assembles a volume from precomputed costs (layout `[k * pixels + pixel]`).
    pub fn from_parts(
        hypotheses: Hypotheses,
        costs: Vec<f32>,
        valid_sources: Vec<u8>,
        min_valid_sources: usize,
    ) -> Result<Self, MvsError> {
        let cells = hypotheses.count() * hypotheses.width() * hypotheses.height();
        if costs.len() != cells || valid_sources.len() != cells {
            return Err(MvsError::DimensionMismatch);
        }
        let costs = costs
            .into_iter()
            .zip(&valid_sources)
            .map(|(c, n)| {
                if (*n as usize) >= min_valid_sources && c.is_finite() {
                    c
                } else {
                    f32::INFINITY
                }
            })
            .collect();
        Ok(Self {
            width: hypotheses.width(),
            height: hypotheses.height(),
            hypotheses,
            costs,
            valid_sources,
            min_valid_sources,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn count(&self) -> usize {
        self.hypotheses.count()
    }

    pub fn hypotheses(&self) -> &Hypotheses {
        &self.hypotheses
    }

    pub fn costs(&self) -> &[f32] {
        &self.costs
    }

    #[inline]
    pub fn valid_sources(&self, k: usize, pixel: usize) -> usize {
        self.valid_sources[k * self.width * self.height + pixel] as usize
    }

    #[inline]
    pub fn cost(&self, k: usize, pixel: usize) -> Option<f32> {
        let i = k * self.width * self.height + pixel;
        ((self.valid_sources[i] as usize) >= self.min_valid_sources).then_some(self.costs[i])
    }
}

/// `K * R * ray(u)` for every reference pixel, plus `K * t`: the source
/// homogeneous pixel at depth `d` is `d * a(u) + b`.
struct WarpTable {
    ax: Vec<f32>,
    ay: Vec<f32>,
    az: Vec<f32>,
    b: [f32; 3],
}

impl WarpTable {
    fn new(intr: &CameraIntrinsics, rel: &RigidPose) -> Self {
        let k = Matrix3::new(intr.fx, 0.0, intr.cx, 0.0, intr.fy, intr.cy, 0.0, 0.0, 1.0);
        let kr = k * rel.rotation;
        let kt: Vector3<f64> = k * rel.translation;
        let npix = intr.width * intr.height;
        let mut ax = Vec::with_capacity(npix);
        let mut ay = Vec::with_capacity(npix);
        let mut az = Vec::with_capacity(npix);
        for y in 0..intr.height {
            for x in 0..intr.width {
                let v = kr * intr.ray(&Vector2::new(x as f64, y as f64));
                ax.push(v.x as f32);
                ay.push(v.y as f32);
                az.push(v.z as f32);
            }
        }
        Self {
            ax,
            ay,
            az,
            b: [kt.x as f32, kt.y as f32, kt.z as f32],
        }
    }
}

/// Source raster with a replicated column and two replicated rows appended,
/// so the four bilinear taps at the last pixel stay in bounds.
struct Padded {
    data: Vec<f32>,
    width: usize,
    height: usize,
}

impl Padded {
    fn new(image: &Image) -> Self {
        let (w, h) = (image.width(), image.height());
        let mut data = Vec::with_capacity((w + 1) * (h + 2));
        for y in 0..h + 2 {
            let src = &image.pixels()[y.min(h - 1) * w..(y.min(h - 1) + 1) * w];
            data.extend_from_slice(src);
            data.push(src[w - 1]);
        }
        Self {
            data,
            width: w,
            height: h,
        }
    }
}

/// `2^23`: adding it to a float in `[0, 2^22)` puts the rounded integer in
/// the low mantissa bits.
const MANTISSA_SHIFT: f32 = 8_388_608.0;

/// Rows between exact recomputations of the running column sums.
const REFRESH_ROWS: usize = 16;

/// Floor of `x` for `0 <= x < 2^22`, without a float-to-int conversion.
#[inline(always)]
fn floor_small(x: f32) -> f32 {
    let r = (x + MANTISSA_SHIFT) - MANTISSA_SHIFT;
    if r > x {
        r - 1.0
    } else {
        r
    }
}

/// Integer value of an exact small non-negative integral float.
#[inline(always)]
fn small_index(v: f32) -> usize {
    ((v + MANTISSA_SHIFT).to_bits() - MANTISSA_SHIFT.to_bits()) as usize
}

/// Per-row warp buffers: depths, top-left tap index, weights, in-view flag.
struct RowWarp {
    depth: Vec<f32>,
    index: Vec<f32>,
    fx: Vec<f32>,
    fy: Vec<f32>,
    seen: Vec<f32>,
}

impl RowWarp {
    fn new(w: usize) -> Self {
        let v = || vec![0.0; w];
        Self {
            depth: v(),
            index: v(),
            fx: v(),
            fy: v(),
            seen: v(),
        }
    }
}

/// Warps reference row `y` into `image` at the depths in `buf.depth`,
/// writing the in-view flag and the bilinear sample (zero when out of view).
fn warp_row(y: usize, image: &Padded, table: &WarpTable, buf: &mut RowWarp, inside: &mut [u8], sample: &mut [f32]) {
    let (w, stride) = (image.width, image.width + 1);
    let (max_x, max_y) = ((image.width - 1) as f32, (image.height - 1) as f32);
    let [bx, by, bz] = table.b;
    let base = y * w;
    let (ax, ay, az) = (&table.ax[base..base + w], &table.ay[base..base + w], &table.az[base..base + w]);
    let depth = &buf.depth[..w];
    let (index, fxs, fys, seen) = (&mut buf.index[..w], &mut buf.fx[..w], &mut buf.fy[..w], &mut buf.seen[..w]);
    let min_z = MIN_PROJECTION_DEPTH as f32;
    for x in 0..w {
        let d = depth[x];
        let z = d * az[x] + bz;
        let inv = 1.0 / z;
        let px = (d * ax[x] + bx) * inv;
        let py = (d * ay[x] + by) * inv;
        let ok = (z > min_z) & (px >= 0.0) & (py >= 0.0) & (px <= max_x) & (py <= max_y);
        let px = if ok { px } else { 0.0 };
        let py = if ok { py } else { 0.0 };
        let (x0, y0) = (floor_small(px), floor_small(py));
        fxs[x] = px - x0;
        fys[x] = py - y0;
        index[x] = y0 * stride as f32 + x0;
        seen[x] = if ok { 1.0 } else { 0.0 };
    }
    let data = &image.data;
    let (inside, sample) = (&mut inside[..w], &mut sample[..w]);
    for x in 0..w {
        let p = small_index(index[x]);
        let q = &data[p..p + stride + 2];
        let fx = fxs[x];
        let top = q[0] + (q[1] - q[0]) * fx;
        let bottom = q[stride] + (q[stride + 1] - q[stride]) * fx;
        sample[x] = (top + (bottom - top) * fys[x]) * seen[x];
        inside[x] = seen[x] as u8;
    }
}

/// Last `2r + 1` warped rows of one source, and running column sums over
/// the rows currently inside the vertical window.
struct Ring {
    inside: Vec<u8>,
    channels: [Vec<f32>; 3],
    col_inside: Vec<u8>,
    col: [Vec<f32>; 3],
}

impl Ring {
    fn new(w: usize, rows: usize) -> Self {
        Self {
            inside: vec![0; rows * w],
            channels: std::array::from_fn(|_| vec![0.0; rows * w]),
            col_inside: vec![0; w],
            col: std::array::from_fn(|_| vec![0.0; w]),
        }
    }

    fn add_slot(&mut self, at: usize, w: usize, channels: usize) {
        for (c, v) in self.col_inside.iter_mut().zip(&self.inside[at..at + w]) {
            *c += v;
        }
        for ch in 0..channels {
            for (c, v) in self.col[ch].iter_mut().zip(&self.channels[ch][at..at + w]) {
                *c += v;
            }
        }
    }

    fn remove_slot(&mut self, at: usize, w: usize, channels: usize) {
        for (c, v) in self.col_inside.iter_mut().zip(&self.inside[at..at + w]) {
            *c -= v;
        }
        for ch in 0..channels {
            for (c, v) in self.col[ch].iter_mut().zip(&self.channels[ch][at..at + w]) {
                *c -= v;
            }
        }
    }

    /// Recomputes the column sums from the stored rows at slot offsets `ats`.
    fn recount(&mut self, ats: impl Iterator<Item = usize> + Clone, w: usize, channels: usize) {
        self.col_inside.fill(0);
        for ch in 0..channels {
            self.col[ch].fill(0.0);
        }
        for at in ats {
            self.add_slot(at, w, channels);
        }
    }
}

/// Horizontal window sum over `[x - r, x + r]` clipped to the row.
fn row_box_sum(src: &[f32], r: usize, out: &mut [f32]) {
    let w = src.len();
    out.copy_from_slice(src);
    for o in 1..=r.min(w - 1) {
        for (acc, v) in out[..w - o].iter_mut().zip(&src[o..]) {
            *acc += v;
        }
        for (acc, v) in out[o..].iter_mut().zip(&src[..w - o]) {
            *acc += v;
        }
    }
}

/// Integer counterpart of [`row_box_sum`].
fn row_box_count(src: &[u8], r: usize, out: &mut [u8]) {
    let w = src.len();
    out.copy_from_slice(src);
    for o in 1..=r.min(w - 1) {
        for (acc, v) in out[..w - o].iter_mut().zip(&src[o..]) {
            *acc += v;
        }
        for (acc, v) in out[o..].iter_mut().zip(&src[..w - o]) {
            *acc += v;
        }
    }
}

/// Sums over the `(2r+1)^2` window clipped to the raster.
fn box_sum(src: &[f32], w: usize, h: usize, r: usize, out: &mut [f32]) {
    let mut col = vec![0.0f32; w];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(h - 1);
        col.copy_from_slice(&src[y0 * w..(y0 + 1) * w]);
        for yy in y0 + 1..=y1 {
            for (acc, v) in col.iter_mut().zip(&src[yy * w..(yy + 1) * w]) {
                *acc += v;
            }
        }
        row_box_sum(&col, r, &mut out[y * w..(y + 1) * w]);
    }
}

/// Per-worker buffers; only `acc` and `counts` span the whole image.
struct Scratch {
    rings: Vec<Ring>,
    warp: RowWarp,
    covered: Vec<u8>,
    sums: [Vec<f32>; 3],
    acc: Vec<f32>,
    counts: Vec<f32>,
}

impl Scratch {
    fn new(w: usize, h: usize, r: usize, sources: usize) -> Self {
        Self {
            rings: (0..sources).map(|_| Ring::new(w, 2 * r + 1)).collect(),
            warp: RowWarp::new(w),
            covered: vec![0; w],
            sums: std::array::from_fn(|_| vec![0.0; w]),
            acc: vec![0.0; w * h],
            counts: vec![0.0; w * h],
        }
    }
}

struct SweepContext<'a> {
    reference: &'a Image,
    sources: Vec<(Padded, WarpTable)>,
    hypotheses: &'a Hypotheses,
    cfg: &'a MatchingConfig,
    /// Clipped window pixel count, its reciprocal, and the reference window
    /// mean and variance, per pixel.
    area: Vec<u8>,
    inv_area: Vec<f32>,
    mean_r: Vec<f32>,
    var_r: Vec<f32>,
}

impl SweepContext<'_> {
    fn width(&self) -> usize {
        self.reference.width()
    }

    fn height(&self) -> usize {
        self.reference.height()
    }

    fn rows(&self) -> usize {
        2 * self.cfg.patch_radius + 1
    }

    fn channels(&self) -> usize {
        match self.cfg.cost {
            CostFunction::ZnccNegated => 3,
            CostFunction::Sad => 1,
        }
    }

    fn fill_depths(&self, k: usize, y: usize, out: &mut [f32]) {
        let w = self.width();
        match self.hypotheses {
            Hypotheses::Planes { depths, .. } => out.fill(depths[k] as f32),
            Hypotheses::PerPixel { depths, .. } => {
                let start = k * w * self.height() + y * w;
                for (o, d) in out.iter_mut().zip(&depths[start..start + w]) {
                    *o = *d as f32;
                }
            }
        }
    }

    /// Warps row `y` (depths already in `warp.depth`) into its ring slot.
    fn fill_row(&self, y: usize, (image, table): &(Padded, WarpTable), ring: &mut Ring, warp: &mut RowWarp) {
        let w = self.width();
        let at = (y % self.rows()) * w;
        let inside = &mut ring.inside[at..at + w];
        let [c0, c1, c2] = &mut ring.channels;
        let (c0, c1, c2) = (&mut c0[at..at + w], &mut c1[at..at + w], &mut c2[at..at + w]);
        warp_row(y, image, table, warp, inside, c0);
        let refp = &self.reference.pixels()[y * w..(y + 1) * w];
        match self.cfg.cost {
            CostFunction::ZnccNegated => {
                for x in 0..w {
                    let s = c0[x];
                    c1[x] = s * s;
                    c2[x] = refp[x] * s;
                }
            }
            CostFunction::Sad => {
                let seen = &warp.seen[..w];
                for x in 0..w {
                    c0[x] = (refp[x] - c0[x]).abs() * seen[x];
                }
            }
        }
    }

    /// Adds one source's costs for output row `y` into `acc` and `counts`.
    fn accumulate_row(
        &self,
        y: usize,
        ring: &Ring,
        covered: &mut [u8],
        sums: &mut [Vec<f32>; 3],
        acc: &mut [f32],
        counts: &mut [f32],
    ) {
        let (w, r) = (self.width(), self.cfg.patch_radius);
        row_box_count(&ring.col_inside, r, covered);
        for c in 0..self.channels() {
            row_box_sum(&ring.col[c], r, &mut sums[c]);
        }
        let base = y * w;
        let area = &self.area[base..base + w];
        let inv_area = &self.inv_area[base..base + w];
        let acc = &mut acc[base..base + w];
        let counts = &mut counts[base..base + w];
        let covered = &covered[..w];
        match self.cfg.cost {
            CostFunction::ZnccNegated => {
                let eps = self.cfg.zncc_epsilon;
                let mean_r = &self.mean_r[base..base + w];
                let var_r = &self.var_r[base..base + w];
                let [s1, s2, s3] = &*sums;
                let (s1, s2, s3) = (&s1[..w], &s2[..w], &s3[..w]);
                for x in 0..w {
                    let valid = if covered[x] == area[x] { 1.0 } else { 0.0 };
                    let inv = inv_area[x];
                    let mean_s = s1[x] * inv;
                    let var_s = s2[x] * inv - mean_s * mean_s;
                    let cov = s3[x] * inv - mean_r[x] * mean_s;
                    let zncc = (cov / (var_r[x] * var_s).sqrt()).clamp(-1.0, 1.0);
                    let textured = (var_r[x] > eps) & (var_s > eps);
                    let cost = if textured { 1.0 - zncc } else { NEUTRAL_ZNCC_COST };
                    acc[x] += cost * valid;
                    counts[x] += valid;
                }
            }
            CostFunction::Sad => {
                let s1 = &sums[0][..w];
                for x in 0..w {
                    let valid = if covered[x] == area[x] { 1.0 } else { 0.0 };
                    acc[x] += s1[x] * inv_area[x] * valid;
                    counts[x] += valid;
                }
            }
        }
    }

    /// Mean cost over sources for hypothesis `k`, with per-pixel source counts.
    ///
    /// Rows stream through per-source rings; each output row is emitted once
    /// its whole vertical window has been warped.
    fn slice(&self, k: usize, scratch: &mut Scratch) -> (Vec<f32>, Vec<u8>) {
        let (w, h, r, rows) = (self.width(), self.height(), self.cfg.patch_radius, self.rows());
        let channels = self.channels();
        let Scratch {
            rings,
            warp,
            covered,
            sums,
            acc,
            counts,
        } = scratch;
        acc.fill(0.0);
        counts.fill(0.0);
        for ring in rings.iter_mut() {
            ring.recount(std::iter::empty(), w, channels);
        }
        for y in 0..h + r {
            if y < h {
                self.fill_depths(k, y, &mut warp.depth);
            }
            for (source, ring) in self.sources.iter().zip(rings.iter_mut()) {
                let slot = (y % rows) * w;
                if y >= rows {
                    ring.remove_slot(slot, w, channels);
                }
                if y < h {
                    self.fill_row(y, source, ring, warp);
                    if y % REFRESH_ROWS == 0 {
                        let first = y.saturating_sub(rows - 1);
                        ring.recount((first..=y).map(|yy| (yy % rows) * w), w, channels);
                    } else {
                        ring.add_slot(slot, w, channels);
                    }
                }
            }
            if y >= r {
                for ring in rings.iter() {
                    self.accumulate_row(y - r, ring, covered, sums, acc, counts);
                }
            }
        }
        let costs = acc
            .iter()
            .zip(counts.iter())
            .map(|(a, n)| if *n > 0.0 { a / n } else { 0.0 })
            .collect();
        (costs, counts.iter().map(|n| *n as u8).collect())
    }
}

/// Plane-sweep matching of the reference against every source at every hypothesis.
///
/// Each source warp is evaluated per pixel at that pixel's own hypothesis
/// depth and sampled bilinearly; a source contributes to a cell only when the
/// whole patch around the pixel lands inside it.
pub fn sweep(
    reference: &Image,
    sources: &[SourceView<'_>],
    intr: &CameraIntrinsics,
    hypotheses: Hypotheses,
    cfg: &MatchingConfig,
) -> Result<CostVolume, MvsError> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(MvsError::NoSources);
    }
    let (w, h) = (reference.width(), reference.height());
    if (intr.width, intr.height) != (w, h)
        || (hypotheses.width(), hypotheses.height()) != (w, h)
        || sources
            .iter()
            .any(|s| (s.image.width(), s.image.height()) != (w, h))
    {
        return Err(MvsError::DimensionMismatch);
    }
    if sources.len() > u8::MAX as usize {
        return Err(MvsError::InvalidConfig("at most 255 sources".into()));
    }
    let npix = w * h;
    let r = cfg.patch_radius;
    let mut area = vec![0.0f32; npix];
    box_sum(&vec![1.0; npix], w, h, r, &mut area);
    let mut sum_r = vec![0.0f32; npix];
    box_sum(reference.pixels(), w, h, r, &mut sum_r);
    let squares: Vec<f32> = reference.pixels().iter().map(|v| v * v).collect();
    let mut sum_rr = vec![0.0f32; npix];
    box_sum(&squares, w, h, r, &mut sum_rr);
    let inv_area: Vec<f32> = area.iter().map(|a| 1.0 / a).collect();
    let mean_r: Vec<f32> = sum_r.iter().zip(&inv_area).map(|(s, i)| s * i).collect();
    let var_r: Vec<f32> = (0..npix).map(|i| sum_rr[i] * inv_area[i] - mean_r[i] * mean_r[i]).collect();

    let ctx = SweepContext {
        reference,
        sources: sources
            .iter()
            .map(|s| (Padded::new(s.image), WarpTable::new(intr, &s.rel)))
            .collect(),
        hypotheses: &hypotheses,
        cfg,
        area: area.iter().map(|a| *a as u8).collect(),
        inv_area,
        mean_r,
        var_r,
    };
    let count = hypotheses.count();
    let new_scratch = || Scratch::new(w, h, r, sources.len());
    let slices: Vec<(Vec<f32>, Vec<u8>)> = if cfg.parallel {
        (0..count)
            .into_par_iter()
            .map_init(new_scratch, |scratch, k| ctx.slice(k, scratch))
            .collect()
    } else {
        let mut scratch = new_scratch();
        (0..count).map(|k| ctx.slice(k, &mut scratch)).collect()
    };
    drop(ctx);
    let mut costs = Vec::with_capacity(count * npix);
    let mut valid = Vec::with_capacity(count * npix);
    for (c, n) in slices {
        costs.extend_from_slice(&c);
        valid.extend_from_slice(&n);
    }
    CostVolume::from_parts(hypotheses, costs, valid, cfg.min_valid_sources)
}
