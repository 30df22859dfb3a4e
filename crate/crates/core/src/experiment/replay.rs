//! Compact replay log for the Darcy streams.
//!
//! Instead of the dense operators, each record holds what the stream drew
//! (the observation points, or the chain's coefficient vector) and the data
//! vector. Operators are rebuilt deterministically on replay.
//!
//! Layout (little endian): magic `DEKIDRV1`, `u8` source kind (0 points,
//! 1 coefficients), noise level `f64`, then per emission `u32` input length,
//! `u32` data length, the inputs and the data as `f64`.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::darcy::{DarcySolver, ObservationPoints};
use crate::error::{DekiError, Result};
use crate::random_field::KleBasis;
use crate::streams::ergodic::chain_operator;
use crate::streams::{NoiseModel, Observation, ObservationStream};

pub const DRIVER_MAGIC: &[u8; 8] = b"DEKIDRV1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverKind {
    /// Flattened `(x, y)` pairs.
    Points,
    /// KLE coefficients of the log-diffusion field.
    Coefficients,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverRecord {
    pub inputs: Vec<f64>,
    pub data: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverLog {
    pub kind: DriverKind,
    pub noise: NoiseModel,
    pub records: Vec<DriverRecord>,
}

fn format_err(detail: impl Into<String>) -> DekiError {
    DekiError::Format {
        what: "driver log",
        detail: detail.into(),
    }
}

fn read_f64s<R: Read>(input: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * count];
    input
        .read_exact(&mut bytes)
        .map_err(|_| format_err("truncated record"))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight bytes")))
        .collect())
}

impl DriverLog {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(DRIVER_MAGIC)?;
        out.write_all(&[match self.kind {
            DriverKind::Points => 0u8,
            DriverKind::Coefficients => 1u8,
        }])?;
        out.write_all(&self.noise.sigma.to_le_bytes())?;
        for rec in &self.records {
            let n_in =
                u32::try_from(rec.inputs.len()).map_err(|_| format_err("record too large"))?;
            let n_data =
                u32::try_from(rec.data.len()).map_err(|_| format_err("record too large"))?;
            let mut buf = Vec::with_capacity(8 + 8 * (rec.inputs.len() + rec.data.len()));
            buf.extend_from_slice(&n_in.to_le_bytes());
            buf.extend_from_slice(&n_data.to_le_bytes());
            for v in rec.inputs.iter().chain(rec.data.iter()) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| format_err("missing header"))?;
        if &magic != DRIVER_MAGIC {
            return Err(format_err("bad magic"));
        }
        let mut tag = [0u8; 1];
        input
            .read_exact(&mut tag)
            .map_err(|_| format_err("missing header"))?;
        let kind = match tag[0] {
            0 => DriverKind::Points,
            1 => DriverKind::Coefficients,
            other => return Err(format_err(format!("unknown source kind {other}"))),
        };
        let sigma = read_f64s(&mut input, 1)?[0];
        let noise = NoiseModel::new(sigma)?;
        let mut records = Vec::new();
        loop {
            let mut lens = [0u8; 8];
            match input.read_exact(&mut lens[..1]) {
                Ok(()) => {}
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            input
                .read_exact(&mut lens[1..])
                .map_err(|_| format_err("truncated record header"))?;
            let n_in = u32::from_le_bytes(lens[..4].try_into().expect("four bytes")) as usize;
            let n_data = u32::from_le_bytes(lens[4..].try_into().expect("four bytes")) as usize;
            let inputs = read_f64s(&mut input, n_in)?;
            let data = DVector::from_vec(read_f64s(&mut input, n_data)?);
            records.push(DriverRecord { inputs, data });
        }
        Ok(Self {
            kind,
            noise,
            records,
        })
    }
}

/// Rebuilds operators from logged inputs.
#[derive(Clone)]
pub enum OperatorSource {
    /// Fixed coefficient; inputs are point coordinates.
    Points(Arc<DarcySolver>),
    /// Fixed points; inputs are chain coefficients.
    Coefficients {
        basis: Arc<KleBasis>,
        mean: f64,
        points: ObservationPoints,
    },
}

impl OperatorSource {
    pub fn kind(&self) -> DriverKind {
        match self {
            OperatorSource::Points(_) => DriverKind::Points,
            OperatorSource::Coefficients { .. } => DriverKind::Coefficients,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            OperatorSource::Points(solver) => solver.grid().dim(),
            OperatorSource::Coefficients { basis, .. } => basis.grid().dim(),
        }
    }

    pub fn operator(&self, inputs: &[f64]) -> Result<DMatrix<f64>> {
        match self {
            OperatorSource::Points(solver) => {
                if !inputs.len().is_multiple_of(2) {
                    return Err(format_err("odd number of point coordinates"));
                }
                let pts =
                    ObservationPoints::new(inputs.chunks_exact(2).map(|c| (c[0], c[1])).collect())?;
                Ok(solver.forward_matrix(&pts))
            }
            OperatorSource::Coefficients {
                basis,
                mean,
                points,
            } => chain_operator(basis, *mean, &DVector::from_column_slice(inputs), points),
        }
    }
}

/// Emits the logged data with operators rebuilt from the logged inputs.
pub struct DriverReplayStream {
    source: OperatorSource,
    noise: NoiseModel,
    obs_dim: usize,
    pending: VecDeque<DriverRecord>,
    emitted: usize,
}

impl DriverReplayStream {
    pub fn new(source: OperatorSource, log: DriverLog) -> Result<Self> {
        if log.kind != source.kind() {
            return Err(format_err("log kind does not match the operator source"));
        }
        let obs_dim = log.records.first().map_or(0, |r| r.data.len());
        if log.records.iter().any(|r| r.data.len() != obs_dim) {
            return Err(format_err("records have different data lengths"));
        }
        Ok(Self {
            source,
            noise: log.noise,
            obs_dim,
            pending: log.records.into(),
            emitted: 0,
        })
    }
}

impl ObservationStream for DriverReplayStream {
    fn param_dim(&self) -> usize {
        self.source.param_dim()
    }
    fn obs_dim(&self) -> usize {
        self.obs_dim
    }
    fn noise(&self) -> NoiseModel {
        self.noise
    }
    fn next_observation(&mut self) -> Result<Observation> {
        let rec = self
            .pending
            .pop_front()
            .ok_or(DekiError::StreamExhausted(self.emitted))?;
        let operator = self.source.operator(&rec.inputs)?;
        if operator.nrows() != rec.data.len() {
            return Err(format_err(
                "logged data does not match the rebuilt operator",
            ));
        }
        self.emitted += 1;
        Ok(Observation {
            operator,
            data: rec.data,
        })
    }
    fn emitted(&self) -> usize {
        self.emitted
    }
}
