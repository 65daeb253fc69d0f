//! Little-endian helpers shared by the binary file formats.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub(crate) fn expect_magic<R: Read>(r: &mut R, magic: &[u8]) -> Result<()> {
    let mut buf = vec![0u8; magic.len()];
    r.read_exact(&mut buf)?;
    if buf != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

/// Peeks the leading magic of a file so callers can dispatch on format.
pub fn sniff_magic(bytes: &[u8]) -> Option<&'static str> {
    const KNOWN: [&str; 4] = ["QCKP1", "QCDS1", "QCOB1", "QCU1"];
    KNOWN.into_iter().find(|m| bytes.starts_with(m.as_bytes()))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(r.read_u32::<LittleEndian>()?)
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(r.read_u64::<LittleEndian>()?)
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(r.read_f64::<LittleEndian>()?)
}

pub(crate) fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(r.read_u8()?)
}

pub(crate) fn write_u32<W: Write>(w: &mut W, x: u32) -> Result<()> {
    Ok(w.write_u32::<LittleEndian>(x)?)
}

pub(crate) fn write_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    Ok(w.write_u64::<LittleEndian>(x)?)
}

pub(crate) fn write_f64<W: Write>(w: &mut W, x: f64) -> Result<()> {
    Ok(w.write_f64::<LittleEndian>(x)?)
}

pub(crate) fn write_u8<W: Write>(w: &mut W, x: u8) -> Result<()> {
    Ok(w.write_u8(x)?)
}

pub(crate) fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::InvalidArgument(format!("{what} does not fit in 32 bits")))
}
