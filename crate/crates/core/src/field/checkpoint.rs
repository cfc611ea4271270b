//! Binary checkpoint of one local field.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic            8 bytes  "LHEXFLD\0"
//! version          u32      1
//! spatial cells    3 × u32  x, y, z
//! temporal cells   u32
//! channels         u32      per plane
//! bbox             6 × f32  min xyz, max xyz
//! t_span           2 × u32  first, last frame of the time axis
//! frames           2 × u32  first, last assigned frame
//! origin           3 × f32
//! density scale    f32
//! view freqs       u32
//! frozen           u32      0 or 1
//! density sizes    u32 count, then count × u32
//! color sizes      u32 count, then count × u32
//! planes           f32 blocks in order XY, XZ, YZ, XT, YT, ZT; each node-major, channel-last
//! density MLP      f32 block (per layer: input-major weights, then biases)
//! color MLP        f32 block
//! ```

use super::grid::{HexPlaneGrid, Plane, PLANE_AXES};
use super::local::{FrameSpan, LocalField};
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::scalar::Real;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"LHEXFLD\0";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_block<T: Real, W: Write>(w: &mut W, data: &[T]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.as_f32().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn get_block<T: Real, R: Read>(r: &mut R, len: usize) -> Result<Vec<T>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn get_sizes<R: Read>(r: &mut R) -> Result<Vec<usize>> {
    let n = get_u32(r)?;
    if !(2..=64).contains(&n) {
        return Err(Error::Checkpoint(format!("implausible MLP depth {n}")));
    }
    (0..n).map(|_| get_u32(r)).collect()
}

pub fn write_field<T: Real, W: Write>(field: &LocalField<T>, w: &mut W) -> Result<()> {
    let g = &field.grid;
    w.write_all(MAGIC)?;
    put_u32(w, VERSION as usize)?;
    for &r in &g.spatial_res {
        put_u32(w, r)?;
    }
    put_u32(w, g.temporal_res)?;
    put_u32(w, g.channels_per_plane)?;
    for v in g.bbox_min.to_array().iter().chain(g.bbox_max.to_array().iter()) {
        put_f32(w, v.as_f32())?;
    }
    put_u32(w, g.t_span.0)?;
    put_u32(w, g.t_span.1)?;
    put_u32(w, field.frames.first)?;
    put_u32(w, field.frames.last)?;
    for v in field.origin.to_array() {
        put_f32(w, v.as_f32())?;
    }
    put_f32(w, field.density_scale.as_f32())?;
    put_u32(w, field.view_frequencies)?;
    put_u32(w, field.frozen as usize)?;
    for mlp in [&field.density_mlp, &field.color_mlp] {
        put_u32(w, mlp.sizes.len())?;
        for &s in &mlp.sizes {
            put_u32(w, s)?;
        }
    }
    for p in &g.planes {
        put_block(w, &p.data)?;
    }
    put_block(w, &field.density_mlp.params)?;
    put_block(w, &field.color_mlp.params)?;
    Ok(())
}

pub fn read_field<T: Real, R: Read>(r: &mut R) -> Result<LocalField<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = get_u32(r)? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let spatial = [get_u32(r)?, get_u32(r)?, get_u32(r)?];
    let temporal = get_u32(r)?;
    let channels = get_u32(r)?;
    let mut bb = [0f32; 6];
    for v in &mut bb {
        *v = get_f32(r)?;
    }
    let t_span = (get_u32(r)?, get_u32(r)?);
    let frames = FrameSpan::new(get_u32(r)?, get_u32(r)?);
    let origin = [get_f32(r)?, get_f32(r)?, get_f32(r)?];
    let density_scale = get_f32(r)?;
    let view_frequencies = get_u32(r)?;
    let frozen = get_u32(r)? != 0;
    let dens_sizes = get_sizes(r)?;
    let col_sizes = get_sizes(r)?;

    let v3 = |a: &[f32]| Vec3::new(T::lit(a[0] as f64), T::lit(a[1] as f64), T::lit(a[2] as f64));
    let mut grid = HexPlaneGrid::zeros(spatial, temporal, channels, v3(&bb[..3]), v3(&bb[3..]), t_span)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let res = [spatial[0], spatial[1], spatial[2], temporal];
    for (plane, &(a, b)) in grid.planes.iter_mut().zip(PLANE_AXES.iter()) {
        let fresh = Plane::<T>::zeros([res[a], res[b]], channels);
        plane.data = get_block(r, fresh.data.len())?;
    }
    let mut density_mlp = Mlp::zeros(&dens_sizes);
    density_mlp.params = get_block(r, density_mlp.params.len())?;
    let mut color_mlp = Mlp::zeros(&col_sizes);
    color_mlp.params = get_block(r, color_mlp.params.len())?;
    if dens_sizes[0] != grid.feature_len() || col_sizes[0] < grid.feature_len() {
        return Err(Error::Checkpoint("decoder input width does not match grid".into()));
    }
    Ok(LocalField {
        grid,
        density_mlp,
        color_mlp,
        origin: v3(&origin),
        frames,
        density_scale: T::lit(density_scale as f64),
        view_frequencies,
        frozen,
    })
}

pub fn save_field<T: Real>(field: &LocalField<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(field, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_field<T: Real>(path: &Path) -> Result<LocalField<T>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::load(path, e.to_string()))?);
    read_field(&mut r).map_err(|e| match e {
        Error::Io(io) => Error::load(path, io.to_string()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::local::FieldConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let cfg = FieldConfig {
            spatial_res: 4,
            temporal_res: Some(3),
            channels_per_plane: 2,
            hidden_width: 5,
            ..FieldConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = LocalField::<f32>::new(
            &cfg,
            4,
            3,
            Vec3::new(1.0, 2.0, 3.0),
            2.5,
            (10, 40),
            FrameSpan::new(10, 25),
            7.0,
            &mut rng,
        )
        .unwrap();
        f.frozen = true;
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        let back: LocalField<f32> = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(&buf[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut buf = b"NOTAFILE".to_vec();
        buf.extend_from_slice(&[0; 64]);
        assert!(matches!(
            read_field::<f32, _>(&mut buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
        let cfg = FieldConfig {
            spatial_res: 2,
            channels_per_plane: 1,
            hidden_width: 2,
            ..FieldConfig::default()
        };
        let f = LocalField::<f32>::new(
            &cfg,
            2,
            2,
            Vec3::zeros(),
            1.0,
            (0, 4),
            FrameSpan::new(0, 4),
            1.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_field::<f32, _>(&mut buf.as_slice()).is_err());
    }
}
