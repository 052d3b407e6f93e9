//! `SVXG` binary volume files.
//!
//! Layout (little-endian): magic `SVXG`, version u32, level u32, voxel_size
//! f32, origin 3×f32, payload_kind u32, cell_count u64, then per cell
//! `i, j, k: i32` followed by the payload's f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;

use super::{SparseVoxelGrid, TsdfVoxel, VoxelCoord};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"SVXG";
const VERSION: u32 = 1;

pub const KIND_TSDF: u32 = 1;
pub const KIND_WEIGHTED_TSDF: u32 = 2;
pub const KIND_SCALAR: u32 = 3;
/// Feature vectors set this bit and store the channel count in the low bits.
pub const KIND_FEATURE_FLAG: u32 = 0x1000_0000;

/// A voxel payload that can be stored as a fixed-width f32 record.
pub trait VoxelPayload: Sized {
    /// `payload_kind` header value for this payload.
    fn kind(&self) -> u32;
    fn encode(&self, out: &mut Vec<f32>);
    /// Number of f32 values per record for `kind`, or `None` if `kind` does
    /// not describe this payload type.
    fn width_for(kind: u32) -> Option<usize>;
    fn decode(kind: u32, values: &[f32]) -> Self;
}

impl VoxelPayload for TsdfVoxel {
    fn kind(&self) -> u32 {
        KIND_TSDF
    }
    fn encode(&self, out: &mut Vec<f32>) {
        out.extend([self.o, self.x]);
    }
    fn width_for(kind: u32) -> Option<usize> {
        (kind == KIND_TSDF).then_some(2)
    }
    fn decode(_: u32, v: &[f32]) -> Self {
        TsdfVoxel { o: v[0], x: v[1] }
    }
}

impl VoxelPayload for f32 {
    fn kind(&self) -> u32 {
        KIND_SCALAR
    }
    fn encode(&self, out: &mut Vec<f32>) {
        out.push(*self);
    }
    fn width_for(kind: u32) -> Option<usize> {
        (kind == KIND_SCALAR).then_some(1)
    }
    fn decode(_: u32, v: &[f32]) -> Self {
        v[0]
    }
}

impl VoxelPayload for Vec<f32> {
    fn kind(&self) -> u32 {
        KIND_FEATURE_FLAG | self.len() as u32
    }
    fn encode(&self, out: &mut Vec<f32>) {
        out.extend_from_slice(self);
    }
    fn width_for(kind: u32) -> Option<usize> {
        (kind & KIND_FEATURE_FLAG != 0).then_some((kind & !KIND_FEATURE_FLAG) as usize)
    }
    fn decode(_: u32, v: &[f32]) -> Self {
        v.to_vec()
    }
}

pub fn write_grid_to<P: VoxelPayload, W: Write>(grid: &SparseVoxelGrid<P>, mut w: W) -> std::io::Result<()> {
    // An empty feature grid has no payload to infer a width from.
    let kind = grid.values().next().map(|p| p.kind()).unwrap_or(0);
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(u32::from(grid.level()))?;
    w.write_f32::<LittleEndian>(grid.voxel_size() as f32)?;
    for a in 0..3 {
        w.write_f32::<LittleEndian>(grid.origin()[a] as f32)?;
    }
    w.write_u32::<LittleEndian>(kind)?;
    w.write_u64::<LittleEndian>(grid.len() as u64)?;
    let mut buf = Vec::new();
    for c in grid.sorted_coords() {
        w.write_i32::<LittleEndian>(c.i)?;
        w.write_i32::<LittleEndian>(c.j)?;
        w.write_i32::<LittleEndian>(c.k)?;
        buf.clear();
        grid.get(&c).expect("coordinate from grid").encode(&mut buf);
        for v in &buf {
            w.write_f32::<LittleEndian>(*v)?;
        }
    }
    w.flush()
}

pub fn write_grid<P: VoxelPayload>(grid: &SparseVoxelGrid<P>, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_grid_to(grid, BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

fn truncated(what: &'static str) -> impl FnOnce(std::io::Error) -> Error {
    move |_| Error::Truncated(what)
}

pub fn read_grid_from<P: VoxelPayload, R: Read>(mut r: R) -> Result<SparseVoxelGrid<P>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated("header"))?;
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let level = r.read_u32::<LittleEndian>().map_err(truncated("header"))?;
    let voxel_size = r.read_f32::<LittleEndian>().map_err(truncated("header"))?;
    let mut origin = Vector3::zeros();
    for a in 0..3 {
        origin[a] = f64::from(r.read_f32::<LittleEndian>().map_err(truncated("header"))?);
    }
    let kind = r.read_u32::<LittleEndian>().map_err(truncated("header"))?;
    let count = r.read_u64::<LittleEndian>().map_err(truncated("header"))?;
    let mut grid = SparseVoxelGrid::new(level as u8, f64::from(voxel_size), origin);
    if count == 0 {
        return Ok(grid);
    }
    let width = P::width_for(kind)
        .ok_or_else(|| Error::Shape(format!("payload kind {kind:#x} does not match the requested payload type")))?;
    let mut vals = vec![0f32; width];
    for _ in 0..count {
        let i = r.read_i32::<LittleEndian>().map_err(truncated("cell"))?;
        let j = r.read_i32::<LittleEndian>().map_err(truncated("cell"))?;
        let k = r.read_i32::<LittleEndian>().map_err(truncated("cell"))?;
        r.read_f32_into::<LittleEndian>(&mut vals).map_err(truncated("cell"))?;
        grid.insert(VoxelCoord::new(i, j, k), P::decode(kind, &vals));
    }
    Ok(grid)
}

pub fn read_grid<P: VoxelPayload>(path: &Path) -> Result<SparseVoxelGrid<P>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid_from(BufReader::new(f))
}
