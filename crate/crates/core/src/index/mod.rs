//! Nearest-neighbour indexes over clip embeddings.
//!
//! Only moment-independent (no temporal endpoint) clip embeddings can be
//! indexed, one entry per clip. Distances are squared Euclidean in 32-bit
//! arithmetic; ties are broken by `(video ordinal, clip index)`, which orders
//! like `(video_id, clip)` because corpora keep videos sorted by id.

mod kmeans;

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::model::{ModelParams, VisualEncoder};

pub const INDEX_MAGIC: [u8; 4] = *b"CALX";
pub const INDEX_VERSION: u16 = 1;

#[inline]
pub(crate) fn sqdist(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Key of one indexed clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntryKey {
    pub video: u32,
    pub clip: u32,
}

/// Flat collection of clip embeddings ready to be indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntries {
    dim: usize,
    keys: Vec<EntryKey>,
    data: Vec<f32>,
}

impl IndexEntries {
    pub fn new(dim: usize, keys: Vec<EntryKey>, data: Vec<f32>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::Empty("index entries"));
        }
        if dim == 0 || keys.len() * dim != data.len() {
            return Err(Error::DimMismatch {
                context: "index entries",
                expected: keys.len() * dim,
                actual: data.len(),
            });
        }
        Ok(Self { dim, keys, data })
    }

    /// Embeds every clip of the corpus with a model that has no endpoint inputs.
    pub fn from_corpus(corpus: &Corpus, params: &ModelParams) -> Result<Self> {
        if params.dims.use_tef {
            return Err(Error::Config(
                "clips embedded with temporal endpoints depend on the moment and cannot be indexed"
                    .into(),
            ));
        }
        if corpus.feature_dim() != params.dims.visual_in {
            return Err(Error::DimMismatch {
                context: "clip features",
                expected: params.dims.visual_in,
                actual: corpus.feature_dim(),
            });
        }
        let per_video: Vec<Vec<f32>> = (0..corpus.len())
            .into_par_iter()
            .map(|v| {
                let encoder = VisualEncoder::new(params, corpus.context(v))?;
                Ok(corpus
                    .features(v)
                    .iter_rows()
                    .flat_map(|row| encoder.encode_f32(row, None))
                    .map(|x| x as f32)
                    .collect())
            })
            .collect::<Result<_>>()?;
        let keys = corpus
            .videos()
            .iter()
            .enumerate()
            .flat_map(|(v, meta)| {
                (0..meta.num_clips).map(move |k| EntryKey {
                    video: v as u32,
                    clip: k as u32,
                })
            })
            .collect();
        Self::new(params.dims.embed, keys, per_video.concat())
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn keys(&self) -> &[EntryKey] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// One search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipHit {
    pub key: EntryKey,
    pub distance: f32,
}

fn hit_order(a: &ClipHit, b: &ClipHit) -> Ordering {
    a.distance.total_cmp(&b.distance).then(a.key.cmp(&b.key))
}

/// Keeps the `top` smallest hits, sorted.
fn select_top(mut hits: Vec<ClipHit>, top: usize) -> Vec<ClipHit> {
    if hits.len() > top {
        hits.select_nth_unstable_by(top - 1, hit_order);
        hits.truncate(top);
    }
    hits.sort_unstable_by(hit_order);
    hits
}

/// Advisory work counters; exact when searches run on one thread.
#[derive(Debug, Default)]
pub struct SearchCounters {
    distances: AtomicU64,
    centroid_distances: AtomicU64,
    partitions_probed: AtomicU64,
    searches: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// Entry (clip) distance evaluations.
    pub distances: u64,
    /// Query-to-centroid distance evaluations (inverted-file index only).
    pub centroid_distances: u64,
    pub partitions_probed: u64,
    pub searches: u64,
}

impl SearchCounters {
    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            distances: self.distances.load(AtomicOrdering::Relaxed),
            centroid_distances: self.centroid_distances.load(AtomicOrdering::Relaxed),
            partitions_probed: self.partitions_probed.load(AtomicOrdering::Relaxed),
            searches: self.searches.load(AtomicOrdering::Relaxed),
        }
    }

    pub fn reset(&self) {
        self.distances.store(0, AtomicOrdering::Relaxed);
        self.centroid_distances.store(0, AtomicOrdering::Relaxed);
        self.partitions_probed.store(0, AtomicOrdering::Relaxed);
        self.searches.store(0, AtomicOrdering::Relaxed);
    }

    fn add(&self, distances: u64, centroids: u64, probed: u64) -> CounterSnapshot {
        self.distances.fetch_add(distances, AtomicOrdering::Relaxed);
        self.centroid_distances
            .fetch_add(centroids, AtomicOrdering::Relaxed);
        self.partitions_probed
            .fetch_add(probed, AtomicOrdering::Relaxed);
        self.searches.fetch_add(1, AtomicOrdering::Relaxed);
        CounterSnapshot {
            distances,
            centroid_distances: centroids,
            partitions_probed: probed,
            searches: 1,
        }
    }
}

/// Flat index: every search scans every entry.
#[derive(Debug)]
pub struct ExactIndex {
    entries: IndexEntries,
    counters: SearchCounters,
}

pub fn build_exact(entries: IndexEntries) -> ExactIndex {
    ExactIndex {
        entries,
        counters: SearchCounters::default(),
    }
}

impl ExactIndex {
    pub fn entries(&self) -> &IndexEntries {
        &self.entries
    }

    pub fn counters(&self) -> &SearchCounters {
        &self.counters
    }

    pub fn search(&self, query: &[f32], top_c: usize) -> Vec<ClipHit> {
        self.search_counted(query, top_c).0
    }

    /// Like [`search`](Self::search), also returning this call's own counts.
    pub fn search_counted(&self, query: &[f32], top_c: usize) -> (Vec<ClipHit>, CounterSnapshot) {
        let e = &self.entries;
        let hits = (0..e.len())
            .map(|i| ClipHit {
                key: e.keys[i],
                distance: sqdist(e.row(i), query),
            })
            .collect();
        let stats = self.counters.add(e.len() as u64, 0, 0);
        (select_top(hits, top_c.max(1)), stats)
    }
}

/// Inverted-file index: entries grouped by nearest centroid; a search scans
/// only the `nprobe` partitions whose centroids are closest to the query.
#[derive(Debug)]
pub struct IvfIndex {
    /// Entries reordered so each partition is contiguous.
    entries: IndexEntries,
    centroids: Vec<f32>,
    /// `offsets[p]..offsets[p + 1]` spans partition `p`.
    offsets: Vec<usize>,
    counters: SearchCounters,
}

/// Clusters `entries` into `partitions` groups with k-means (k-means++ seeding,
/// `kmeans_iters` Lloyd iterations).
pub fn build_ivf(
    entries: IndexEntries,
    partitions: usize,
    seed: u64,
    kmeans_iters: usize,
) -> Result<IvfIndex> {
    if partitions == 0 || partitions > entries.len() {
        return Err(Error::Config(format!(
            "partition count {partitions} must be in 1..={}",
            entries.len()
        )));
    }
    let dim = entries.dim;
    let clustering = kmeans::kmeans(&entries.data, dim, partitions, seed, kmeans_iters);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    // stable: within a partition entries keep corpus order
    order.sort_by_key(|&i| clustering.assignment[i]);
    let mut offsets = vec![0usize; partitions + 1];
    for &c in &clustering.assignment {
        offsets[c as usize + 1] += 1;
    }
    for p in 0..partitions {
        offsets[p + 1] += offsets[p];
    }
    let keys = order.iter().map(|&i| entries.keys[i]).collect();
    let data = order
        .iter()
        .flat_map(|&i| entries.row(i).iter().copied())
        .collect();
    Ok(IvfIndex {
        entries: IndexEntries { dim, keys, data },
        centroids: clustering.centroids,
        offsets,
        counters: SearchCounters::default(),
    })
}

impl IvfIndex {
    pub fn partitions(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entries(&self) -> &IndexEntries {
        &self.entries
    }

    pub fn centroid(&self, p: usize) -> &[f32] {
        let d = self.entries.dim;
        &self.centroids[p * d..(p + 1) * d]
    }

    pub fn partition_keys(&self, p: usize) -> &[EntryKey] {
        &self.entries.keys[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn counters(&self) -> &SearchCounters {
        &self.counters
    }

    pub fn search(&self, query: &[f32], top_c: usize, nprobe: usize) -> Vec<ClipHit> {
        self.search_counted(query, top_c, nprobe).0
    }

    pub fn search_counted(
        &self,
        query: &[f32],
        top_c: usize,
        nprobe: usize,
    ) -> (Vec<ClipHit>, CounterSnapshot) {
        let p = self.partitions();
        let nprobe = nprobe.clamp(1, p);
        let mut order: Vec<(f32, usize)> = (0..p)
            .map(|c| (sqdist(self.centroid(c), query), c))
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut hits = Vec::new();
        for &(_, c) in &order[..nprobe] {
            for i in self.offsets[c]..self.offsets[c + 1] {
                hits.push(ClipHit {
                    key: self.entries.keys[i],
                    distance: sqdist(self.entries.row(i), query),
                });
            }
        }
        let stats = self
            .counters
            .add(hits.len() as u64, p as u64, nprobe as u64);
        (select_top(hits, top_c.max(1)), stats)
    }
}

/// Either index flavour behind one search interface.
#[derive(Debug)]
pub enum ClipIndex {
    Exact(ExactIndex),
    Ivf(IvfIndex),
}

/// Index flavour tag, as stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexFlavor {
    Exact,
    Ivf,
}

impl std::str::FromStr for IndexFlavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(IndexFlavor::Exact),
            "ivf" => Ok(IndexFlavor::Ivf),
            _ => Err(Error::Config(format!("unknown index flavor {s:?}"))),
        }
    }
}

impl ClipIndex {
    pub fn flavor(&self) -> IndexFlavor {
        match self {
            ClipIndex::Exact(_) => IndexFlavor::Exact,
            ClipIndex::Ivf(_) => IndexFlavor::Ivf,
        }
    }

    pub fn entries(&self) -> &IndexEntries {
        match self {
            ClipIndex::Exact(i) => i.entries(),
            ClipIndex::Ivf(i) => i.entries(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries().is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries().dim()
    }

    pub fn counters(&self) -> &SearchCounters {
        match self {
            ClipIndex::Exact(i) => i.counters(),
            ClipIndex::Ivf(i) => i.counters(),
        }
    }

    /// Top `top_c` clips; `nprobe` is ignored by the exact index.
    pub fn search(&self, query: &[f32], top_c: usize, nprobe: usize) -> Vec<ClipHit> {
        self.search_counted(query, top_c, nprobe).0
    }

    pub fn search_counted(
        &self,
        query: &[f32],
        top_c: usize,
        nprobe: usize,
    ) -> (Vec<ClipHit>, CounterSnapshot) {
        match self {
            ClipIndex::Exact(i) => i.search_counted(query, top_c),
            ClipIndex::Ivf(i) => i.search_counted(query, top_c, nprobe),
        }
    }

    /// Bytes the index occupies in its on-disk form.
    pub fn encoded_len(&self) -> u64 {
        let e = self.entries();
        let mut n = 4 + 2 + 1 + 4 + 8 + e.len() as u64 * entry_bytes(e.dim());
        if let ClipIndex::Ivf(i) = self {
            n += 4 + i.centroids.len() as u64 * 4 + i.offsets.len() as u64 * 8;
        }
        n
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let e = self.entries();
        w.write_all(&INDEX_MAGIC)?;
        w.write_u16::<LittleEndian>(INDEX_VERSION)?;
        w.write_u8(match self.flavor() {
            IndexFlavor::Exact => 0,
            IndexFlavor::Ivf => 1,
        })?;
        w.write_u32::<LittleEndian>(e.dim as u32)?;
        w.write_u64::<LittleEndian>(e.len() as u64)?;
        for (i, key) in e.keys.iter().enumerate() {
            w.write_u32::<LittleEndian>(key.video)?;
            w.write_u32::<LittleEndian>(key.clip)?;
            for &x in e.row(i) {
                w.write_f32::<LittleEndian>(x)?;
            }
        }
        if let ClipIndex::Ivf(i) = self {
            w.write_u32::<LittleEndian>(i.partitions() as u32)?;
            for &x in &i.centroids {
                w.write_f32::<LittleEndian>(x)?;
            }
            for &o in &i.offsets {
                w.write_u64::<LittleEndian>(o as u64)?;
            }
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = crate::io::binary::CountingReader::new(BufReader::new(file), path);
        Self::read_from(&mut r)
    }

    fn read_from<R: Read>(r: &mut crate::io::binary::CountingReader<R>) -> Result<Self> {
        r.expect_magic(INDEX_MAGIC)?;
        r.expect_version(INDEX_VERSION)?;
        let flavor = r.u8()?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        if dim == 0 {
            return Err(r.format_error("zero embedding dimension"));
        }
        if flavor > 1 {
            return Err(r.format_error(&format!("unknown flavor {flavor}")));
        }
        let mut keys = Vec::with_capacity(count.min(1 << 24));
        let mut data = Vec::with_capacity(count.min(1 << 24) * dim);
        for row in 0..count {
            keys.push(EntryKey {
                video: r.u32()?,
                clip: r.u32()?,
            });
            for col in 0..dim {
                data.push(r.f32_finite(row, col)?);
            }
        }
        let entries =
            IndexEntries::new(dim, keys, data).map_err(|e| r.format_error(&e.to_string()))?;
        let index = if flavor == 0 {
            ClipIndex::Exact(build_exact(entries))
        } else {
            let p = r.u32()? as usize;
            if p == 0 || p > count {
                return Err(r.format_error(&format!("bad partition count {p}")));
            }
            let mut centroids = Vec::with_capacity(p * dim);
            for row in 0..p {
                for col in 0..dim {
                    centroids.push(r.f32_finite(row, col)?);
                }
            }
            let mut offsets = Vec::with_capacity(p + 1);
            for _ in 0..=p {
                offsets.push(r.u64()? as usize);
            }
            let monotone = offsets.windows(2).all(|w| w[0] <= w[1]);
            if offsets[0] != 0 || offsets[p] != count || !monotone {
                return Err(r.format_error("partition offsets are inconsistent"));
            }
            ClipIndex::Ivf(IvfIndex {
                entries,
                centroids,
                offsets,
                counters: SearchCounters::default(),
            })
        };
        r.expect_eof()?;
        Ok(index)
    }
}

/// On-disk bytes per entry: two u32 keys plus the f32 row.
pub fn entry_bytes(dim: usize) -> u64 {
    8 + 4 * dim as u64
}

/// Default partition count: `ceil(sqrt(entries))`.
pub fn default_partitions(entries: usize) -> usize {
    ((entries as f64).sqrt().ceil() as usize).clamp(1, entries.max(1))
}
