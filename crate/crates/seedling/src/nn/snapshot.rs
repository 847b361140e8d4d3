//! Versioned parameter snapshots and checkpoint files.
//!
//! The trainer owns the only mutable parameter set. After each update it
//! publishes an immutable [`ParamSnapshot`] into a [`SnapshotSlot`];
//! inference threads load the current snapshot once per forward pass, so a
//! single forward never mixes parameters from two versions.

use super::Tensor;
use crate::error::{Result, SeedError};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, RwLock};

const MAGIC: &[u8; 8] = b"SEEDCKPT";

/// Immutable, versioned copy of all model parameters.
#[derive(Clone, Debug)]
pub struct ParamSnapshot {
    version: u64,
    names: Arc<Vec<String>>,
    params: Vec<Tensor>,
}

impl ParamSnapshot {
    pub fn new(version: u64, names: Arc<Vec<String>>, params: Vec<Tensor>) -> Self {
        assert_eq!(names.len(), params.len(), "one name per tensor");
        ParamSnapshot {
            version,
            names,
            params,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn names_arc(&self) -> Arc<Vec<String>> {
        Arc::clone(&self.names)
    }
}

/// Single-writer, many-reader publication point for the current snapshot.
pub struct SnapshotSlot {
    current: RwLock<Arc<ParamSnapshot>>,
}

impl SnapshotSlot {
    pub fn new(initial: ParamSnapshot) -> Self {
        SnapshotSlot {
            current: RwLock::new(Arc::new(initial)),
        }
    }

    /// Atomically replaces the published snapshot. Versions must advance.
    pub fn publish(&self, snapshot: ParamSnapshot) {
        let mut slot = self.current.write().expect("snapshot lock");
        assert!(
            snapshot.version > slot.version,
            "snapshot versions must increase ({} -> {})",
            slot.version,
            snapshot.version
        );
        *slot = Arc::new(snapshot);
    }

    /// Returns the latest published snapshot.
    pub fn load(&self) -> Arc<ParamSnapshot> {
        Arc::clone(&self.current.read().expect("snapshot lock"))
    }
}

/// Writes a snapshot to the on-disk checkpoint format: an 8-byte magic,
/// a u32 little-endian version, then per tensor a u16 name length, the
/// name bytes, a u8 rank, the u32 dims and the raw little-endian f32 data.
pub fn write_checkpoint(path: &Path, snapshot: &ParamSnapshot) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(snapshot.version.min(u32::MAX as u64) as u32).to_le_bytes())?;
    for (name, tensor) in snapshot.names().iter().zip(snapshot.params()) {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(SeedError::config("checkpoint tensor name too long"));
        }
        if tensor.shape().len() > u8::MAX as usize {
            return Err(SeedError::config("checkpoint tensor rank too large"));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[tensor.shape().len() as u8])?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(tensor.len() * 4);
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| SeedError::config(format!("checkpoint truncated reading {what}")))
}

/// Reads a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(path: &Path) -> Result<ParamSnapshot> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(SeedError::config("not a checkpoint file (bad magic)"));
    }
    let mut v4 = [0u8; 4];
    read_exact_or(&mut r, &mut v4, "version")?;
    let version = u32::from_le_bytes(v4) as u64;

    let mut names = Vec::new();
    let mut params = Vec::new();
    loop {
        let mut len2 = [0u8; 2];
        match r.read_exact(&mut len2) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u16::from_le_bytes(len2) as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact_or(&mut r, &mut name_buf, "tensor name")?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| SeedError::config("checkpoint tensor name is not UTF-8"))?;
        let mut rank1 = [0u8; 1];
        read_exact_or(&mut r, &mut rank1, "tensor rank")?;
        let mut shape = Vec::with_capacity(rank1[0] as usize);
        for _ in 0..rank1[0] {
            read_exact_or(&mut r, &mut v4, "tensor dim")?;
            shape.push(u32::from_le_bytes(v4) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data_buf = vec![0u8; count * 4];
        read_exact_or(&mut r, &mut data_buf, "tensor data")?;
        let data = data_buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        names.push(name);
        params.push(Tensor::from_vec(&shape, data).expect("shape/data consistent"));
    }
    Ok(ParamSnapshot::new(version, Arc::new(names), params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{HeadKind, NetworkSpec};

    fn snapshot() -> ParamSnapshot {
        let spec = NetworkSpec {
            input_dim: 4,
            mlp_hidden: vec![3],
            lstm_units: 2,
            head: HeadKind::PolicyValue,
            num_actions: 2,
            dueling_hidden: 0,
        };
        let names: Vec<String> = spec.param_layout().into_iter().map(|(n, _)| n).collect();
        ParamSnapshot::new(5, Arc::new(names), spec.init_params(9))
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let snap = snapshot();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &snap).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.version(), 5);
        assert_eq!(back.names(), snap.names());
        assert_eq!(back.params(), snap.params());
    }

    #[test]
    fn checkpoint_bytes_are_stable() {
        let names = Arc::new(vec!["w".to_string()]);
        let params = vec![Tensor::from_vec(&[1], vec![1.0]).unwrap()];
        let snap = ParamSnapshot::new(7, names, params);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.ckpt");
        write_checkpoint(&path, &snap).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let expected = [
            b'S', b'E', b'E', b'D', b'C', b'K', b'P', b'T', // magic
            7, 0, 0, 0, // version
            1, 0, // name length
            b'w', // name
            1, // rank
            1, 0, 0, 0, // dim
            0x00, 0x00, 0x80, 0x3F, // 1.0f32
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let snap = snapshot();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        write_checkpoint(&path, &snap).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }

    #[test]
    fn published_snapshots_are_isolated_from_later_updates() {
        let snap = snapshot();
        let frozen = snap.params().to_vec();
        let slot = SnapshotSlot::new(snap);
        let first = slot.load();

        let mut live = first.params().to_vec();
        live[0].data_mut()[0] += 1.0;
        slot.publish(ParamSnapshot::new(6, first.names_arc(), live));

        assert_eq!(first.params(), &frozen[..]);
        assert_eq!(slot.load().version(), 6);
        assert_ne!(slot.load().params()[0], first.params()[0]);
    }

    #[test]
    #[should_panic(expected = "versions must increase")]
    fn stale_publish_panics() {
        let snap = snapshot();
        let names = snap.names_arc();
        let params = snap.params().to_vec();
        let slot = SnapshotSlot::new(snap);
        slot.publish(ParamSnapshot::new(5, names, params));
    }
}
