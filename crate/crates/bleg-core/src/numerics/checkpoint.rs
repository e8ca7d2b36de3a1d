//! Flat versioned binary checkpoint: parameter names, shapes, and row-major
//! f64 values in registration order. Canonical encoding, so
//! write → read → write is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::{NumericsError, Result};

const MAGIC: &[u8; 8] = b"BLEGCKPT";
const VERSION: u32 = 1;

/// Serialize the given sets (in order) into one checkpoint file.
pub fn save(path: &Path, sets: &[&ParamSet]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count: u64 = sets.iter().map(|s| s.len() as u64).sum();
    w.write_all(&count.to_le_bytes())?;
    for set in sets {
        for p in set.entries() {
            let name = p.name.as_bytes();
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name)?;
            w.write_all(&[u8::from(p.trainable)])?;
            w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
            for d in &p.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            for v in p.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One deserialized checkpoint entry.
#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub trainable: bool,
}

pub fn load(path: &Path) -> Result<Vec<Entry>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NumericsError::CorruptCheckpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NumericsError::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let count = read_u64(&mut r)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NumericsError::CorruptCheckpoint("non-utf8 name".into()))?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push(Entry { name, shape, data, trainable: flag[0] != 0 });
    }
    Ok(entries)
}

/// Overwrite an existing set's values from checkpoint entries, matched by
/// name prefix. Shapes must agree exactly.
pub fn restore_into(entries: &[Entry], set: &ParamSet) -> Result<usize> {
    let mut restored = 0;
    for e in entries {
        if let Some(p) = set.get(&e.name) {
            if p.shape != e.shape {
                return Err(NumericsError::CorruptCheckpoint(format!(
                    "'{}': checkpoint shape {:?} vs live shape {:?}",
                    e.name, e.shape, p.shape
                )));
            }
            p.set(e.data.clone());
            restored += 1;
        }
    }
    Ok(restored)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn write_read_write_is_byte_identical() {
        let dir = std::env::temp_dir().join("bleg_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");

        let mut set = ParamSet::new();
        set.add("m.w", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-12, -7.0], true).unwrap();
        set.add("m.running", vec![3], vec![0.1, 0.2, 0.3], false).unwrap();
        save(&p1, &[&set]).unwrap();

        let entries = load(&p1).unwrap();
        let mut set2 = ParamSet::new();
        set2.add_zeros("m.w", vec![2, 3], true).unwrap();
        set2.add_zeros("m.running", vec![3], false).unwrap();
        assert_eq!(restore_into(&entries, &set2).unwrap(), 2);
        save(&p2, &[&set2]).unwrap();

        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
        assert!(set2.get("m.running").unwrap().trainable == false);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = std::env::temp_dir().join("bleg_ckpt_test2");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("garbage.ckpt");
        std::fs::write(&p, b"NOTACKPTxxxxxxxxxxx").unwrap();
        assert!(matches!(load(&p), Err(NumericsError::CorruptCheckpoint(_))));
    }
}
