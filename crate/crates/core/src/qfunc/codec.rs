//! Little-endian binary encoding for checkpoints.

use thiserror::Error;

use super::arch::ArchConfig;
use super::net::NetworkParams;
use super::optim::AdamState;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("file ends early")]
    Truncated,
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn len_prefixed(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.bytes(b);
    }

    pub fn str(&mut self, s: &str) {
        self.len_prefixed(s.as_bytes());
    }

    pub fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.f32(*x);
        }
    }

    pub fn arch(&mut self, a: &ArchConfig) {
        self.u32(a.input_channels as u32);
        self.u32(a.encoder_channels.len() as u32);
        for &c in &a.encoder_channels {
            self.u32(c as u32);
        }
        self.u32(a.bottleneck_channels as u32);
        self.u32(a.decoder_channels.len() as u32);
        for &c in &a.decoder_channels {
            self.u32(c as u32);
        }
        self.f64(a.leaky_slope);
        self.u8(a.push_head as u8);
    }

    pub fn params(&mut self, p: &NetworkParams<f32>) {
        self.arch(&p.arch);
        self.f32s(p.data());
    }

    pub fn adam(&mut self, s: &AdamState<f32>) {
        self.f32s(&s.m);
        self.f32s(&s.v);
        self.u64(s.t);
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).ok_or(CodecError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CodecError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().expect("length"))
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32, CodecError> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64, CodecError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn count(&mut self, elem: usize) -> Result<usize, CodecError> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem).map_or(true, |b| b > self.buf.len() - self.pos) {
            return Err(CodecError::Truncated);
        }
        Ok(n)
    }

    pub fn len_prefixed(&mut self) -> Result<&'a [u8], CodecError> {
        let n = self.count(1)?;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String, CodecError> {
        String::from_utf8(self.len_prefixed()?.to_vec()).map_err(|_| CodecError::Corrupt("invalid utf-8".into()))
    }

    pub fn f32s(&mut self) -> Result<Vec<f32>, CodecError> {
        let n = self.count(4)?;
        (0..n).map(|_| self.f32()).collect()
    }

    pub fn arch(&mut self) -> Result<ArchConfig, CodecError> {
        let input_channels = self.u32()? as usize;
        let n = self.u32()? as usize;
        if n > 64 {
            return Err(CodecError::Corrupt("implausible encoder depth".into()));
        }
        let encoder_channels = (0..n).map(|_| self.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
        let bottleneck_channels = self.u32()? as usize;
        let n = self.u32()? as usize;
        if n > 64 {
            return Err(CodecError::Corrupt("implausible decoder depth".into()));
        }
        let decoder_channels = (0..n).map(|_| self.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
        let leaky_slope = self.f64()?;
        let push_head = match self.u8()? {
            0 => false,
            1 => true,
            v => return Err(CodecError::Corrupt(format!("push flag {v}"))),
        };
        Ok(ArchConfig { input_channels, encoder_channels, bottleneck_channels, decoder_channels, leaky_slope, push_head })
    }

    pub fn params(&mut self) -> Result<NetworkParams<f32>, CodecError> {
        let arch = self.arch()?;
        let data = self.f32s()?;
        NetworkParams::from_data(&arch, data).map_err(|e| CodecError::Corrupt(e.to_string()))
    }

    pub fn adam(&mut self) -> Result<AdamState<f32>, CodecError> {
        Ok(AdamState { m: self.f32s()?, v: self.f32s()?, t: self.u64()? })
    }
}
