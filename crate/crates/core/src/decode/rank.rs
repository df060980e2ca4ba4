use std::io::Write;
use std::path::Path;

use nmt_corpus::{EncodedPair, EOS, SOS};
use nmt_tensor::{Scalar, Tape};

use crate::error::{CoreError, Result};
use crate::model::layers::Ctx;
use crate::model::{Model, TokenBatch};
use crate::train::label_smoothing_loss;

/// Teacher-forced smoothed loss per target token (counting `<eos>`) of each
/// pair, as `(index, loss)` sorted by ascending loss, ties by index.
pub fn rank_corpus<T: Scalar>(
    model: &Model<T>,
    pairs: &[EncodedPair],
    smoothing: f64,
    forbidden: &[u32],
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        if p.src.is_empty() {
            return Err(CoreError::Contract(format!("pair {i} has an empty source")));
        }
        let src = TokenBatch::new(p.src.clone(), 1, p.src.len())?;
        let mut framed = Vec::with_capacity(p.tgt.len() + 2);
        framed.push(SOS);
        framed.extend_from_slice(&p.tgt);
        framed.push(EOS);
        let tgt_in = TokenBatch::new(framed[..framed.len() - 1].to_vec(), 1, framed.len() - 1)?;
        let tgt_out = TokenBatch::new(framed[1..].to_vec(), 1, framed.len() - 1)?;
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, model.store());
        let logits = model.forward(&cx, &src, &tgt_in)?;
        let loss = label_smoothing_loss(logits, &tgt_out, smoothing, forbidden)?;
        out.push((i, loss.sum.value().item().as_f64() / loss.tokens.max(1) as f64));
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

/// Writes `index<TAB>loss` lines.
pub fn write_ranking(path: &Path, ranking: &[(usize, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (i, l) in ranking {
        writeln!(f, "{i}\t{l}")?;
    }
    f.flush()?;
    Ok(())
}
