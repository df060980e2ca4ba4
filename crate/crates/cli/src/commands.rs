use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nmt_core::config::ConfigMap;
use nmt_core::decode::{rank_corpus, write_ranking};
use nmt_core::model::{Model, ModelConfig};
use nmt_core::toolbox::average_checkpoints;
use nmt_core::train::{train_loop, Checkpoint, TrainConfig};
use nmt_core::Translator;
use nmt_corpus::{
    build_vocab, clean_by_ratios, clean_by_vocab, collect_forbidden_indexes, estimate_thresholds, forbidden_config_line,
    max_keeper, read_dataset, read_parallel, sort_and_batch, tokenize, write_dataset, write_parallel, EncodedPair,
    RatioThresholds, SentencePair, Vocab,
};
use nmt_server::ServerConfig;

use crate::error::{CliError, Result};
use crate::{AvgArgs, CleanArgs, ForbiddenArgs, MkdataArgs, ModelArgs, RankArgs, ServeArgs, TrainArgs, TranslateArgs};

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", p.display())))
    }
}

fn threads_or_all(n: Option<usize>) -> usize {
    n.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
}

pub fn clean(a: CleanArgs) -> Result<()> {
    require_file(&a.src)?;
    require_file(&a.tgt)?;
    let pairs = read_parallel(&a.src, &a.tgt)?;
    let report = |stage: &str, before: usize, after: usize| {
        println!("{stage}: kept {after} of {before} pairs, removed {}", before - after);
    };
    let mut cur = max_keeper(&pairs);
    report("max_keeper", pairs.len(), cur.len());
    if let Some(v) = a.vratio {
        let n = cur.len();
        cur = clean_by_vocab(&cur, v)?;
        report("vocab", n, cur.len());
    }
    let explicit = [a.max_cratio, a.max_bratio, a.max_sratio, a.max_uratio, a.max_oratio];
    if a.dev_src.is_some() || explicit.iter().any(Option::is_some) {
        let mut t = match (&a.dev_src, &a.dev_tgt) {
            (Some(s), Some(g)) => {
                require_file(s)?;
                require_file(g)?;
                estimate_thresholds(&read_parallel(s, g)?, &a.marker)?
            }
            _ => RatioThresholds {
                max_cratio: f64::INFINITY,
                max_bratio: f64::INFINITY,
                max_sratio: f64::INFINITY,
                max_uratio: f64::INFINITY,
                max_oratio: f64::INFINITY,
            },
        };
        let slots = [
            &mut t.max_cratio,
            &mut t.max_bratio,
            &mut t.max_sratio,
            &mut t.max_uratio,
            &mut t.max_oratio,
        ];
        for (slot, v) in slots.into_iter().zip(explicit) {
            if let Some(v) = v {
                *slot = v;
            }
        }
        println!(
            "thresholds: cratio {} bratio {} sratio {} uratio {} oratio {}",
            t.max_cratio, t.max_bratio, t.max_sratio, t.max_uratio, t.max_oratio
        );
        let n = cur.len();
        cur = clean_by_ratios(&cur, &t, &a.marker)?;
        report("ratios", n, cur.len());
    }
    write_parallel(&cur, &a.out_src, &a.out_tgt)?;
    report("total", pairs.len(), cur.len());
    Ok(())
}

fn encode(pairs: &[SentencePair], sv: &Vocab, tv: &Vocab) -> Vec<EncodedPair> {
    pairs
        .iter()
        .map(|p| EncodedPair::new(sv.encode(&p.src), tv.encode(&p.tgt)))
        .collect()
}

pub fn mkdata(a: MkdataArgs) -> Result<()> {
    if a.dataid.is_empty() || a.dataid.contains(['/', '\\']) || a.dataid.contains("..") {
        return Err(CliError::Usage(format!("bad data id {:?}", a.dataid)));
    }
    require_file(&a.src)?;
    require_file(&a.tgt)?;
    let dir = a.cache_dir.join(&a.dataid);
    std::fs::create_dir_all(&dir)?;
    let train = read_parallel(&a.src, &a.tgt)?;
    let (sv, tv) = build_vocab(&train, a.min_freq, a.shared_vocab);
    let write = |pairs: &[SentencePair], name: &str| -> Result<usize> {
        let batches = sort_and_batch(&encode(pairs, &sv, &tv), a.batch_tokens, a.max_len)?;
        if batches.is_empty() {
            return Err(CliError::Data(format!("no pair of the {name} set fits --max-len {}", a.max_len)));
        }
        write_dataset(&batches, sv.len() as u32, tv.len() as u32, &dir.join(format!("{name}.ntrn")))?;
        Ok(batches.len())
    };
    let n = write(&train, "train")?;
    println!("train: {} pairs in {n} batch units", train.len());
    if let (Some(s), Some(g)) = (&a.dev_src, &a.dev_tgt) {
        require_file(s)?;
        require_file(g)?;
        let dev = read_parallel(s, g)?;
        let n = write(&dev, "dev")?;
        println!("dev: {} pairs in {n} batch units", dev.len());
    }
    sv.save(&dir.join("src.vocab"))?;
    tv.save(&dir.join("tgt.vocab"))?;
    println!("vocabularies: source {} target {}", sv.len(), tv.len());
    println!("written to {}", dir.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut map = match &a.config {
        Some(p) => {
            require_file(p)?;
            ConfigMap::load(p)?
        }
        None => ConfigMap::default(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {o:?}")))?;
        map.set_raw(k.trim(), v.trim())?;
    }
    let cfg_train = map.opt_string("train_data")?;
    let cfg_dev = map.opt_string("dev_data")?;
    let train_path = a
        .train_data
        .or(cfg_train.map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no training data: pass --train-data or set train_data".into()))?;
    let dev_path = a
        .dev_data
        .or(cfg_dev.map(PathBuf::from))
        .ok_or_else(|| CliError::Usage("no validation data: pass --dev-data or set dev_data".into()))?;
    require_file(&train_path)?;
    require_file(&dev_path)?;
    let train = read_dataset(&train_path)?;
    let dev = read_dataset(&dev_path)?;
    let (sv, tv) = (train.header.src_vocab as usize, train.header.tgt_vocab as usize);
    if (dev.header.src_vocab as usize, dev.header.tgt_vocab as usize) != (sv, tv) {
        return Err(CliError::Data("training and validation data use different vocabularies".into()));
    }
    let model_cfg = ModelConfig::from_config(&mut map, sv, tv)?;
    let tcfg = TrainConfig::from_config(&mut map)?;
    map.finish()?;

    let resume = match &a.resume {
        Some(p) => {
            require_file(p)?;
            let ck = Checkpoint::load(p)?;
            if (ck.meta.model.src_vocab, ck.meta.model.tgt_vocab) != (sv, tv) {
                return Err(CliError::Data("checkpoint vocabulary sizes do not match the data".into()));
            }
            Some(ck)
        }
        None => None,
    };
    let model = Model::new(model_cfg, tcfg.seed)?;
    log::info!("{} parameters", model.param_count());
    let out = train_loop(model, &train.batches, &dev.batches, &tcfg, resume.as_ref())?;
    println!("best: {}", out.best.display());
    println!("last: {}", out.last.display());
    println!("steps: {} epochs: {}", out.steps, out.epochs_completed);
    Ok(())
}

fn load_translator(m: &ModelArgs) -> Result<Translator> {
    if m.beam == 0 {
        return Err(CliError::Usage("--beam must be at least 1".into()));
    }
    if !(m.alpha >= 0.0 && m.alpha.is_finite()) {
        return Err(CliError::Usage("--alpha must be a non-negative number".into()));
    }
    if m.max_len == 0 {
        return Err(CliError::Usage("--max-len must be at least 1".into()));
    }
    for p in m.models.iter().chain([&m.src_vocab, &m.tgt_vocab]) {
        require_file(p)?;
    }
    Ok(Translator::load(&m.models, &m.src_vocab, &m.tgt_vocab, m.beam, m.alpha, m.max_len)?)
}

pub fn translate(a: TranslateArgs) -> Result<()> {
    let tr = load_translator(&a.model)?;
    let text = match &a.input {
        Some(p) => {
            require_file(p)?;
            std::fs::read_to_string(p)?
        }
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let out = tr.translate_batch(&lines, None, None, threads_or_all(a.threads))?;
    let mut body = String::new();
    for l in out {
        body.push_str(&l);
        body.push('\n');
    }
    match &a.output {
        Some(p) => std::fs::write(p, body)?,
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(body.as_bytes())?;
            so.flush()?;
        }
    }
    Ok(())
}

pub fn avg(a: AvgArgs) -> Result<()> {
    for p in &a.inputs {
        require_file(p)?;
    }
    average_checkpoints(&a.inputs)?.save(&a.output)?;
    println!("averaged {} checkpoints into {}", a.inputs.len(), a.output.display());
    Ok(())
}

pub fn rank(a: RankArgs) -> Result<()> {
    for p in [&a.model, &a.src_vocab, &a.tgt_vocab, &a.src, &a.tgt] {
        require_file(p)?;
    }
    let ck = Checkpoint::load(&a.model)?;
    let model = ck.to_model()?;
    let (sv, tv) = (Vocab::load(&a.src_vocab)?, Vocab::load(&a.tgt_vocab)?);
    if (sv.len(), tv.len()) != (model.config().src_vocab, model.config().tgt_vocab) {
        return Err(CliError::Data("vocabulary files do not match the model".into()));
    }
    let pairs = encode(&read_parallel(&a.src, &a.tgt)?, &sv, &tv);
    if let Some(i) = pairs.iter().position(|p| p.src.is_empty()) {
        return Err(CliError::Data(format!("line {} has an empty source", i + 1)));
    }
    let ranking = rank_corpus(&model, &pairs, ck.meta.label_smoothing, &ck.meta.forbidden_indexes)?;
    write_ranking(&a.output, &ranking)?;
    println!("ranked {} pairs into {}", ranking.len(), a.output.display());
    Ok(())
}

pub fn forbidden(a: ForbiddenArgs) -> Result<()> {
    require_file(&a.tgt)?;
    require_file(&a.vocab)?;
    let vocab = Vocab::load(&a.vocab)?;
    let sents: Vec<Vec<String>> = std::fs::read_to_string(&a.tgt)?.lines().map(tokenize).collect();
    let idx = collect_forbidden_indexes(sents.iter().map(Vec::as_slice), &vocab);
    std::fs::write(&a.output, forbidden_config_line(&idx))?;
    println!("{} forbidden indexes written to {}", idx.len(), a.output.display());
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let tr = Arc::new(load_translator(&a.model)?);
    let model_name = a
        .model
        .models
        .iter()
        .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
        .collect::<Vec<_>>()
        .join("+");
    let cfg = ServerConfig {
        max_batch: a.max_batch,
        workers: threads_or_all(a.workers),
        model_name,
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((a.addr.as_str(), a.port))
            .await
            .map_err(|e| CliError::Runtime(format!("cannot bind {}:{}: {e}", a.addr, a.port)))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        nmt_server::serve(listener, tr, cfg)
            .await
            .map_err(|e| CliError::Runtime(format!("server stopped: {e}")))
    })
}
