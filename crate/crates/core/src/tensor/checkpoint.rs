//! Binary container for named tensors.
//!
//! Layout: the ASCII magic `HSSG1`, then records until end of file. Each
//! record is a little-endian `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` `u64` dimensions and the `f32` payload in row-major order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::{NamedTensors, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"HSSG1";

pub fn write_checkpoint(path: &Path, tensors: &NamedTensors) -> Result<()> {
    let mut out = Vec::new();
    encode(&mut out, tensors)?;
    fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<NamedTensors> {
    let bytes = fs::read(path)?;
    decode(&mut bytes.as_slice())
}

pub(crate) fn encode(w: &mut impl Write, tensors: &NamedTensors) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub(crate) fn decode(r: &mut impl Read) -> Result<NamedTensors> {
    let magic: [u8; 5] = read_exact(r).map_err(|_| Error::data("checkpoint shorter than its header"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::data("not a checkpoint: bad magic"));
    }
    let mut out = NamedTensors::new();
    loop {
        let mut first = [0u8; 4];
        match r.read(&mut first[..1])? {
            0 => break,
            _ => r.read_exact(&mut first[1..])?,
        }
        let name_len = u32::from_le_bytes(first) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::data("tensor name is not UTF-8"))?;
        let rank = u32::from_le_bytes(read_exact(r)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_exact(r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f32::from_le_bytes(read_exact(r)?));
        }
        if out.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::data(format!("duplicate tensor {name} in checkpoint")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_fixed() {
        let t = NamedTensors::from([("ab".to_string(), Tensor::new(vec![1, 2], vec![1.0f32, -2.0]).unwrap())]);
        let mut buf = Vec::new();
        encode(&mut buf, &t).unwrap();
        let mut expected = b"HSSG1".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(b"ab");
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u64.to_le_bytes());
        expected.extend(2u64.to_le_bytes());
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(decode(&mut &b"HSSG2"[..]), Err(Error::Data(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::btree_map(
                "[a-z.]{1,12}",
                (prop::collection::vec(0usize..4, 0..3), any::<u32>()),
                0..5,
            )
        ) {
            let tensors: NamedTensors = entries
                .into_iter()
                .map(|(name, (shape, bits))| {
                    let n: usize = shape.iter().product();
                    let data = (0..n as u32).map(|i| f32::from_bits(bits.wrapping_add(i.wrapping_mul(2654435761)))).collect();
                    (name, Tensor::new(shape, data).unwrap())
                })
                .collect();
            let mut buf = Vec::new();
            encode(&mut buf, &tensors).unwrap();
            let back = decode(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), tensors.len());
            for (name, t) in &tensors {
                let b = &back[name];
                prop_assert_eq!(b.shape(), t.shape());
                let lhs: Vec<u32> = b.data().iter().map(|x| x.to_bits()).collect();
                let rhs: Vec<u32> = t.data().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(lhs, rhs);
            }
        }
    }
}
