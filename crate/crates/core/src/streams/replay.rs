//! Binary record/replay of emitted observation pairs.
//!
//! Layout (little endian): the 8-byte magic `DEKIRPL1`, the noise level as
//! `f64`, then one record per emission: `u32 p`, `u32 d`, the `p x d`
//! operator in row-major order as `f64`, and the `p` data values as `f64`.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};

use nalgebra::{DMatrix, DVector};

use super::{NoiseModel, Observation, ObservationStream};
use crate::error::{DekiError, Result};

pub const REPLAY_MAGIC: &[u8; 8] = b"DEKIRPL1";

fn format_err(detail: impl Into<String>) -> DekiError {
    DekiError::Format {
        what: "replay log",
        detail: detail.into(),
    }
}

pub fn write_replay_header<W: Write>(out: &mut W, noise: NoiseModel) -> Result<()> {
    out.write_all(REPLAY_MAGIC)?;
    out.write_all(&noise.sigma.to_le_bytes())?;
    Ok(())
}

pub fn write_replay_record<W: Write>(out: &mut W, obs: &Observation) -> Result<()> {
    let (p, d) = obs.operator.shape();
    let p32 = u32::try_from(p).map_err(|_| format_err("operator too large"))?;
    let d32 = u32::try_from(d).map_err(|_| format_err("operator too large"))?;
    out.write_all(&p32.to_le_bytes())?;
    out.write_all(&d32.to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * (p * d + p));
    for r in 0..p {
        for c in 0..d {
            buf.extend_from_slice(&obs.operator[(r, c)].to_le_bytes());
        }
    }
    for v in obs.data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn write_replay<W: Write>(
    mut out: W,
    noise: NoiseModel,
    history: &[Observation],
) -> Result<()> {
    write_replay_header(&mut out, noise)?;
    for obs in history {
        write_replay_record(&mut out, obs)?;
    }
    out.flush()?;
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * count];
    input
        .read_exact(&mut bytes)
        .map_err(|_| format_err("truncated record"))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_replay<R: Read>(mut input: R) -> Result<(NoiseModel, Vec<Observation>)> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| format_err("missing header"))?;
    if &magic != REPLAY_MAGIC {
        return Err(format_err("bad magic"));
    }
    let sigma = read_f64s(&mut input, 1)?[0];
    let noise = NoiseModel::new(sigma)?;
    let mut history = Vec::new();
    loop {
        let mut dims = [0u8; 8];
        match input.read_exact(&mut dims[..1]) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        input
            .read_exact(&mut dims[1..])
            .map_err(|_| format_err("truncated record header"))?;
        let p = u32::from_le_bytes(dims[..4].try_into().expect("4 bytes")) as usize;
        let d = u32::from_le_bytes(dims[4..].try_into().expect("4 bytes")) as usize;
        let op = read_f64s(&mut input, p * d)?;
        let data = read_f64s(&mut input, p)?;
        history.push(Observation {
            operator: DMatrix::from_row_slice(p, d, &op),
            data: DVector::from_vec(data),
        });
    }
    Ok((noise, history))
}

/// Emits a fixed list of observations in order.
#[derive(Debug, Clone)]
pub struct MemoryStream {
    pending: VecDeque<Observation>,
    noise: NoiseModel,
    param_dim: usize,
    obs_dim: usize,
    emitted: usize,
}

impl MemoryStream {
    pub fn new(history: Vec<Observation>, noise: NoiseModel) -> Result<Self> {
        let (obs_dim, param_dim) = history
            .first()
            .map(|o| o.operator.shape())
            .ok_or_else(|| DekiError::InvalidArgument("empty observation history".into()))?;
        if let Some(i) = history
            .iter()
            .position(|o| o.operator.shape() != (obs_dim, param_dim) || o.data.len() != obs_dim)
        {
            return Err(DekiError::Dimension(format!(
                "observation {i} does not match the first"
            )));
        }
        Ok(Self {
            pending: history.into(),
            noise,
            param_dim,
            obs_dim,
            emitted: 0,
        })
    }

    pub fn from_replay<R: Read>(input: R) -> Result<Self> {
        let (noise, history) = read_replay(input)?;
        Self::new(history, noise)
    }
}

impl ObservationStream for MemoryStream {
    fn param_dim(&self) -> usize {
        self.param_dim
    }
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn noise(&self) -> NoiseModel {
        self.noise
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let obs = self
            .pending
            .pop_front()
            .ok_or(DekiError::StreamExhausted(self.emitted))?;
        self.emitted += 1;
        Ok(obs)
    }
    fn emitted(&self) -> usize {
        self.emitted
    }
}

/// Passes observations through and keeps a copy of each.
pub struct RecordingStream<S> {
    inner: S,
    history: Vec<Observation>,
}

impl<S: ObservationStream> RecordingStream<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            history: Vec::new(),
        }
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn into_parts(self) -> (S, Vec<Observation>) {
        (self.inner, self.history)
    }

    pub fn write_replay<W: Write>(&self, out: W) -> Result<()> {
        write_replay(out, self.inner.noise(), &self.history)
    }
}

impl<S: ObservationStream> ObservationStream for RecordingStream<S> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn noise(&self) -> NoiseModel {
        self.inner.noise()
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let obs = self.inner.next_observation()?;
        self.history.push(obs.clone());
        Ok(obs)
    }
    fn emitted(&self) -> usize {
        self.inner.emitted()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Observation> {
        vec![
            Observation {
                operator: DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                data: DVector::from_vec(vec![0.1, -0.2]),
            },
            Observation {
                operator: DMatrix::from_row_slice(
                    2,
                    3,
                    &[f64::MIN_POSITIVE, -0.0, 1e300, 7.0, 8.0, 9.0],
                ),
                data: DVector::from_vec(vec![1.0 / 3.0, 2.0]),
            },
        ]
    }

    #[test]
    fn replay_round_trip_is_bit_exact() {
        let noise = NoiseModel::new(0.01).unwrap();
        let mut buf = Vec::new();
        write_replay(&mut buf, noise, &sample()).unwrap();
        assert_eq!(&buf[..8], REPLAY_MAGIC);
        assert_eq!(buf.len(), 16 + 2 * (8 + 8 * 8));
        let (n2, back) = read_replay(buf.as_slice()).unwrap();
        assert_eq!(n2, noise);
        assert_eq!(back, sample());
        // row-major layout: second f64 of the first record is S[0,1]
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 2.0);
    }

    #[test]
    fn corrupted_logs_are_rejected() {
        let mut buf = Vec::new();
        write_replay(&mut buf, NoiseModel::new(0.0).unwrap(), &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_replay(bad.as_slice()).is_err());
        assert!(read_replay(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn memory_stream_emits_in_order_then_exhausts() {
        let mut s = MemoryStream::new(sample(), NoiseModel::new(0.0).unwrap()).unwrap();
        assert_eq!((s.obs_dim(), s.param_dim()), (2, 3));
        assert_eq!(s.next_observation().unwrap(), sample()[0]);
        assert_eq!(s.next_observation().unwrap(), sample()[1]);
        assert!(matches!(
            s.next_observation(),
            Err(DekiError::StreamExhausted(2))
        ));
    }

    #[test]
    fn recording_stream_replays_identically() {
        let inner = MemoryStream::new(sample(), NoiseModel::new(0.5).unwrap()).unwrap();
        let mut rec = RecordingStream::new(inner);
        rec.next_observation().unwrap();
        rec.next_observation().unwrap();
        let mut buf = Vec::new();
        rec.write_replay(&mut buf).unwrap();
        let mut replay = MemoryStream::from_replay(buf.as_slice()).unwrap();
        assert_eq!(replay.noise().sigma, 0.5);
        assert_eq!(replay.next_observation().unwrap(), sample()[0]);
    }
}
