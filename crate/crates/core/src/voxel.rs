use std::io::{Read, Write};

use crate::datagen::Family;
use crate::error::{Error, Result};

/// Dense occupancy grid stored in `D x H x W` order.
///
/// Targets hold 0/1; predictions hold continuous values.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    data: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("voxel grid dims must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "voxel grid {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn cube(res: usize) -> Self {
        Self::zeros([res; 3])
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    pub fn set(&mut self, z: usize, y: usize, x: usize, v: f32) {
        let i = self.index(z, y, x);
        self.data[i] = v;
    }

    /// Number of voxels at or above `threshold`.
    pub fn count_at_least(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&v| v >= threshold).count()
    }

    pub fn occupancy(&self) -> f64 {
        self.count_at_least(0.5) as f64 / self.len() as f64
    }
}

pub const VOLUMES_MAGIC: &[u8; 4] = b"VXVG";
pub const VOLUMES_VERSION: u32 = 1;

/// Writes predicted grids: magic `VXVG`, then little-endian u32 version,
/// family code (0 head, 1 chair), count, and per grid u32 `D, H, W`
/// followed by `D * H * W` f32 values.
pub fn write_volumes(w: &mut impl Write, family: Family, grids: &[VoxelGrid]) -> Result<()> {
    w.write_all(VOLUMES_MAGIC)?;
    for v in [VOLUMES_VERSION, family.code(), grids.len() as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for g in grids {
        for d in g.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(g.len() * 4);
        for v in &g.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_volumes(r: &mut impl Read) -> Result<(Family, Vec<VoxelGrid>)> {
    let mut u32_at = || -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("volume file is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(u32::from_le_bytes(b))
    };
    if u32_at()?.to_le_bytes() != *VOLUMES_MAGIC {
        return Err(Error::Format("not a volume file".into()));
    }
    let version = u32_at()?;
    if version != VOLUMES_VERSION {
        return Err(Error::Format(format!("unsupported volume file version {version}")));
    }
    let family = Family::from_code(u32_at()?)?;
    let count = u32_at()? as usize;
    let mut grids = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let dims = [u32_at()? as usize, u32_at()? as usize, u32_at()? as usize];
        let n = dims.iter().product::<usize>();
        if n == 0 || n > 1 << 30 {
            return Err(Error::Format(format!("bad grid dims {dims:?}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_bits(u32_at()?));
        }
        grids.push(VoxelGrid::new(dims, data)?);
    }
    Ok((family, grids))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_is_depth_major() {
        let g = VoxelGrid::from_fn([2, 3, 4], |z, y, x| (z * 100 + y * 10 + x) as f32);
        assert_eq!(g.get(1, 2, 3), 123.0);
        assert_eq!(g.data()[12 + 4 + 1], 111.0);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(VoxelGrid::new([2, 2, 2], vec![0.0; 7]).is_err());
        assert!(VoxelGrid::new([0, 2, 2], vec![]).is_err());
    }

    #[test]
    fn volume_file_round_trip() {
        let g = VoxelGrid::from_fn([2, 3, 4], |z, y, x| (z + y) as f32 * 0.25 - x as f32);
        let mut bytes = Vec::new();
        write_volumes(&mut bytes, Family::Chair, &[g.clone(), VoxelGrid::cube(2)]).unwrap();
        let (f, back) = read_volumes(&mut bytes.as_slice()).unwrap();
        assert_eq!(f, Family::Chair);
        assert_eq!(back, vec![g, VoxelGrid::cube(2)]);
        assert!(read_volumes(&mut &bytes[..bytes.len() - 1]).is_err());
    }
}
