//! `CSIM` model files.
//!
//! ```text
//! "CSIM" | u32 version = 1 | u32 kind (0 mlp, 1 lstm, 2 mlp ensemble,
//!          3 lstm ensemble) | body
//!
//! mlp body:      u32 L | L × u32 layer widths (input … output)
//!                | f64 dropout | f64 bn_l2
//!                | input mean, input std (F × f64 each)
//!                | label mean, label std (out × f64 each)
//!                | u64 P | P × f64 parameters (order documented on `Mlp`)
//!                | per hidden layer: running mean, running var (width × f64 each)
//! lstm body:     u32 F | u32 cells | u32 out | u32 window
//!                | normalization as above
//!                | u64 P | P × f64 parameters (order documented on `Lstm`)
//! ensemble body: u32 count | count × member body (mlp or lstm)
//! ```

use std::io::Write;
use std::path::Path;

use super::{Lstm, LstmModel, Mlp, MlpModel, Standardizer};
use crate::linalg::Matrix;
use crate::wire::{self, Reader, Writer};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CSIM";
const VERSION: u32 = 1;

/// Any trained network regressor.
#[derive(Debug, Clone, PartialEq)]
pub enum NetModel {
    Mlp(MlpModel),
    Lstm(LstmModel),
    Ensemble(Vec<MlpModel>),
    LstmEnsemble(Vec<LstmModel>),
}

impl NetModel {
    pub fn input_width(&self) -> usize {
        match self {
            NetModel::Mlp(m) => m.input_width(),
            NetModel::Lstm(m) => m.input_width(),
            NetModel::Ensemble(ms) => ms[0].input_width(),
            NetModel::LstmEnsemble(ms) => ms[0].input_width(),
        }
    }

    pub fn predict(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        match self {
            NetModel::Mlp(m) => m.predict(x),
            NetModel::Lstm(m) => m.predict(x),
            NetModel::Ensemble(ms) => super::ensemble_predict(ms, x),
            NetModel::LstmEnsemble(ms) => super::rnn_ensemble_predict(ms, x),
        }
    }
}

fn put_norm<W: Write>(w: &mut Writer<W>, s: &Standardizer) -> std::io::Result<()> {
    w.f64s(&s.mean)?;
    w.f64s(&s.std)
}

fn get_norm(rd: &mut Reader, width: usize) -> Result<Standardizer> {
    let mean = rd.f64s(width)?;
    let std = rd.f64s(width)?;
    if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::Format("invalid normalization statistics".into()));
    }
    Ok(Standardizer { mean, std })
}

fn put_params<W: Write>(w: &mut Writer<W>, p: &[f32]) -> std::io::Result<()> {
    w.u64(p.len() as u64)?;
    p.iter().try_for_each(|&v| w.f64(v as f64))
}

fn get_params(rd: &mut Reader, expected: usize) -> Result<Vec<f32>> {
    let n = rd.u64()? as usize;
    if n != expected {
        return Err(Error::Format(format!(
            "parameter count {n} does not match layer dimensions ({expected})"
        )));
    }
    let p = rd.f64s(n)?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite parameter".into()));
    }
    Ok(p.into_iter().map(|v| v as f32).collect())
}

fn put_mlp<W: Write>(w: &mut Writer<W>, m: &MlpModel) -> std::io::Result<()> {
    let dims = m.net.dims();
    w.u32(dims.len() as u32)?;
    dims.iter().try_for_each(|&d| w.u32(d as u32))?;
    w.f64(m.net.dropout)?;
    w.f64(m.net.bn_l2)?;
    put_norm(w, &m.input_norm)?;
    put_norm(w, &m.label_norm)?;
    put_params(w, m.net.params())?;
    let (mean, var) = m.net.running_stats();
    for (a, b) in mean.iter().zip(var) {
        a.iter().try_for_each(|&v| w.f64(v as f64))?;
        b.iter().try_for_each(|&v| w.f64(v as f64))?;
    }
    Ok(())
}

fn get_mlp(rd: &mut Reader) -> Result<MlpModel> {
    let n_dims = rd.u32()? as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Format(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| rd.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if dims.contains(&0) {
        return Err(Error::Format("zero layer width".into()));
    }
    let dropout = rd.f64()?;
    let bn_l2 = rd.f64()?;
    let input_norm = get_norm(rd, dims[0])?;
    let label_norm = get_norm(rd, dims[n_dims - 1])?;
    let mut net = Mlp::<f32>::zeros(&dims, dropout, bn_l2);
    let params = get_params(rd, net.params().len())?;
    net.params_mut().copy_from_slice(&params);
    let mut mean = Vec::new();
    let mut var = Vec::new();
    for &w in &dims[1..n_dims - 1] {
        mean.push(rd.f64s(w)?.into_iter().map(|v| v as f32).collect());
        var.push(rd.f64s(w)?.into_iter().map(|v| v as f32).collect());
    }
    net.set_running_stats(mean, var)?;
    Ok(MlpModel {
        net,
        input_norm,
        label_norm,
    })
}

fn put_lstm<W: Write>(w: &mut Writer<W>, m: &LstmModel) -> std::io::Result<()> {
    w.u32(m.net.input_width() as u32)?;
    w.u32(m.net.cells() as u32)?;
    w.u32(m.net.output_width() as u32)?;
    w.u32(m.window as u32)?;
    put_norm(w, &m.input_norm)?;
    put_norm(w, &m.label_norm)?;
    put_params(w, m.net.params())
}

fn get_lstm(rd: &mut Reader) -> Result<LstmModel> {
    let input = rd.u32()? as usize;
    let cells = rd.u32()? as usize;
    let output = rd.u32()? as usize;
    let window = rd.u32()? as usize;
    if input == 0 || cells == 0 || output == 0 || window == 0 {
        return Err(Error::Format("zero LSTM dimension".into()));
    }
    let input_norm = get_norm(rd, input)?;
    let label_norm = get_norm(rd, output)?;
    let mut net = Lstm::<f32>::zeros(input, cells, output);
    let params = get_params(rd, net.params().len())?;
    net.params_mut().copy_from_slice(&params);
    Ok(LstmModel {
        net,
        window,
        input_norm,
        label_norm,
    })
}

fn get_members<M>(
    rd: &mut Reader,
    get: fn(&mut Reader) -> Result<M>,
    width: fn(&M) -> usize,
) -> Result<Vec<M>> {
    let count = rd.u32()? as usize;
    if count == 0 {
        return Err(Error::Format("empty ensemble".into()));
    }
    let members = (0..count).map(|_| get(rd)).collect::<Result<Vec<_>>>()?;
    if members.iter().any(|m| width(m) != width(&members[0])) {
        return Err(Error::Format(
            "ensemble members differ in input width".into(),
        ));
    }
    Ok(members)
}

pub fn save_model(model: &NetModel, path: &Path) -> Result<()> {
    wire::write_file(path, |w| {
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        match model {
            NetModel::Mlp(m) => {
                w.u32(0)?;
                put_mlp(w, m)
            }
            NetModel::Lstm(m) => {
                w.u32(1)?;
                put_lstm(w, m)
            }
            NetModel::Ensemble(ms) => {
                w.u32(2)?;
                w.u32(ms.len() as u32)?;
                ms.iter().try_for_each(|m| put_mlp(w, m))
            }
            NetModel::LstmEnsemble(ms) => {
                w.u32(3)?;
                w.u32(ms.len() as u32)?;
                ms.iter().try_for_each(|m| put_lstm(w, m))
            }
        }
    })
}

pub fn load_model(path: &Path) -> Result<NetModel> {
    let buf = wire::read_file(path)?;
    let mut rd = Reader::new(&buf);
    rd.expect_magic(MAGIC)?;
    rd.expect_version(VERSION)?;
    let model = match rd.u32()? {
        0 => NetModel::Mlp(get_mlp(&mut rd)?),
        1 => NetModel::Lstm(get_lstm(&mut rd)?),
        2 => NetModel::Ensemble(get_members(&mut rd, get_mlp, MlpModel::input_width)?),
        3 => NetModel::LstmEnsemble(get_members(&mut rd, get_lstm, LstmModel::input_width)?),
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    if rd.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes", rd.remaining())));
    }
    Ok(model)
}
