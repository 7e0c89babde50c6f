//! Model files.
//!
//! ```text
//! magic "DHCPMLP1" (8) | input u32 | hidden1 u32 | hidden2 u32 | classes u32
//! seed u64 | trained_epochs u32
//! f32 parameters: per layer, weights (out x in, row-major) then bias
//! ```
//!
//! All little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{Architecture, Dense, MlpModel};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"DHCPMLP1";

pub fn write_model_to<W: Write>(mut w: W, m: &MlpModel) -> std::io::Result<()> {
    let a = m.arch();
    w.write_all(MODEL_MAGIC)?;
    for d in a.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&m.seed.to_le_bytes())?;
    w.write_all(&m.trained_epochs.to_le_bytes())?;
    let mut buf = Vec::with_capacity(1 << 16);
    for p in m.params() {
        buf.extend_from_slice(&p.to_le_bytes());
        if buf.len() >= 1 << 16 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)
}

pub fn read_model_from<R: Read>(mut r: R) -> Result<MlpModel> {
    let bad = |msg: &str| Error::BadModelFile(msg.to_string());
    let mut read = |buf: &mut [u8]| {
        r.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => bad("truncated"),
            _ => Error::io("<model>", e),
        })
    };
    let mut header = [0u8; 8 + 16 + 8 + 4];
    read(&mut header)?;
    if &header[..8] != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let dim = |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let arch = Architecture {
        input: dim(0),
        hidden1: dim(1),
        hidden2: dim(2),
        classes: dim(3),
    };
    let seed = u64::from_le_bytes(header[24..32].try_into().unwrap());
    let trained_epochs = u32::from_le_bytes(header[32..36].try_into().unwrap());
    arch.check()?;

    let mut layers = Vec::with_capacity(3);
    for w in arch.dims().windows(2) {
        let (in_dim, out_dim) = (w[0], w[1]);
        let mut floats = |n: usize| -> Result<Vec<f32>> {
            let mut bytes = vec![0u8; 4 * n];
            read(&mut bytes)?;
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let weights = floats(in_dim * out_dim)?;
        let bias = floats(out_dim)?;
        layers.push(Dense {
            in_dim,
            out_dim,
            weights,
            bias,
        });
    }
    let mut tail = [0u8; 1];
    if r.read(&mut tail).map_err(|e| Error::io("<model>", e))? != 0 {
        return Err(bad("trailing bytes"));
    }
    let mut m = MlpModel::from_layers(arch, layers)?;
    m.seed = seed;
    m.trained_epochs = trained_epochs;
    Ok(m)
}

pub fn save_model(path: impl AsRef<Path>, m: &MlpModel) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_model_to(&mut w, m)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model_from(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let arch = Architecture {
            input: 7,
            hidden1: 5,
            hidden2: 3,
            classes: 2,
        };
        let mut m = MlpModel::init(arch, 99).unwrap();
        m.trained_epochs = 12;
        *m.param_mut(m.param_count() - 1) = -0.0;
        let mut buf = Vec::new();
        write_model_to(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 36 + 4 * arch.param_count());
        assert_eq!(&buf[..8], b"DHCPMLP1");
        let back = read_model_from(&buf[..]).unwrap();
        assert_eq!(back.seed, 99);
        assert_eq!(back.trained_epochs, 12);
        let bits = |m: &MlpModel| m.params().map(f32::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));

        assert!(read_model_from(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_model_from(&extra[..]).is_err());
        let mut bad = buf;
        bad[0] = b'x';
        assert!(matches!(read_model_from(&bad[..]), Err(Error::BadModelFile(_))));
    }
}
