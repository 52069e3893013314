//! Maximum-likelihood training with Adam, dev-perplexity tracking and
//! evaluation reports.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{batch_by_length, Corpus, Vocabulary};
use crate::grammar::{save_grammar, GrammarDims, GrammarGrad, SimpleGrammar};
use crate::inside::{
    corpus_log_likelihood, inside_backward, inside_reference, CorpusLikelihood, Engine, FlashInside, Parallelism,
};
use crate::neural::{
    adam_step, clip_grad_norm, init_params, save_params, AdamConfig, AdamState, DirectLogits, Model, ParamKind,
    DEFAULT_CLIP_NORM, DEFAULT_DIRECT_INIT_STD, DEFAULT_EMBED_DIM,
};
use crate::parse::{corpus_f1, grammar_predictor, Decoder, F1Report, GoldAnnotation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub parameterization: ParamKind,
    pub n_nt: usize,
    /// Defaults to `n_nt`.
    pub n_pt: Option<usize>,
    pub d: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub max_epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    /// Token cap per batch; batches hold sentences of one length.
    pub batch_tokens: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub engine: Engine,
    pub tied: bool,
    pub max_train_len: usize,
    /// Fixed-order gradient reduction, so runs are bit-reproducible.
    pub reproducible: bool,
    /// Standard deviation of the initial scores of the direct
    /// parameterization.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            parameterization: ParamKind::Neural,
            n_nt: 30,
            n_pt: None,
            d: DEFAULT_EMBED_DIM,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip: DEFAULT_CLIP_NORM,
            max_epochs: 10,
            max_steps: None,
            batch_tokens: 400,
            eval_every: 100,
            seed: 0,
            engine: Engine::Flash,
            tied: false,
            max_train_len: 40,
            reproducible: true,
            init_std: DEFAULT_DIRECT_INIT_STD,
        }
    }
}

impl TrainConfig {
    pub fn n_pt(&self) -> usize {
        self.n_pt.unwrap_or(self.n_nt)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_nt == 0 || self.n_pt() == 0 {
            return bad("n_nt and n_pt must be positive");
        }
        if !(self.lr > 0.0 && self.eps > 0.0 && self.clip > 0.0 && self.init_std > 0.0) {
            return bad("lr, eps, clip and init_std must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eval_every == 0 || self.batch_tokens == 0 {
            return bad("eval_every and batch_tokens must be positive");
        }
        if self.parameterization == ParamKind::Neural && self.d < 2 {
            return bad("embedding dimension must be at least 2");
        }
        if self.max_train_len < 2 || self.batch_tokens < self.max_train_len {
            return bad("max_train_len must be at least 2 and at most batch_tokens");
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Fresh model for `config` over `vocab_size` words.
pub fn init_model(config: &TrainConfig, vocab_size: usize) -> Result<Model> {
    let dims = GrammarDims::new(config.n_nt, config.n_pt(), vocab_size)?;
    Ok(match config.parameterization {
        ParamKind::Neural => Model::Neural(init_params(dims, config.d, config.seed, config.tied)?),
        ParamKind::Direct => Model::Direct(DirectLogits::random(dims, config.tied, config.seed, config.init_std)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub sentences: usize,
    /// Mean negative log-likelihood per sentence, before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub dev_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub config: TrainConfig,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    /// Equality of everything except wall-clock time, comparing floats by
    /// bit pattern.
    pub fn same_trajectory(&self, other: &TrainLog) -> bool {
        let steps = self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                a.step == b.step
                    && a.epoch == b.epoch
                    && a.sentences == b.sentences
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.grad_norm.to_bits() == b.grad_norm.to_bits()
            });
        let evals = self.evals.len() == other.evals.len()
            && self
                .evals
                .iter()
                .zip(&other.evals)
                .all(|(a, b)| a.step == b.step && a.dev_ppl.to_bits() == b.dev_ppl.to_bits());
        steps && evals && self.seed == other.seed && self.config == other.config
    }

    /// One row per step; `dev_ppl` is filled on evaluation steps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,sentences,loss,grad_norm,dev_ppl\n");
        for s in &self.steps {
            let ppl = self
                .evals
                .iter()
                .find(|e| e.step == s.step)
                .map(|e| e.dev_ppl.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step, s.epoch, s.sentences, s.loss, s.grad_norm, ppl
            );
        }
        out
    }

    pub fn best_eval(&self) -> Option<&EvalRecord> {
        self.evals.iter().min_by(|a, b| a.dev_ppl.total_cmp(&b.dev_ppl))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest dev perplexity seen.
    pub best: Model,
    pub best_dev_ppl: f64,
    pub last: Model,
    pub log: TrainLog,
}

struct SentenceResult {
    log_z: f64,
    grad: Option<GrammarGrad>,
}

fn sentence_gradient(g: &SimpleGrammar, tokens: &[usize], engine: Engine, parallelism: Parallelism) -> Result<SentenceResult> {
    let flash = FlashInside::new(g).with_parallelism(parallelism);
    let chart = match engine {
        Engine::Flash => flash.forward(tokens)?,
        Engine::Reference => inside_reference(g, tokens)?,
    };
    if !chart.log_z().is_finite() {
        return Ok(SentenceResult {
            log_z: chart.log_z(),
            grad: None,
        });
    }
    let (grad, _) = match engine {
        Engine::Flash => flash.backward(tokens, &chart)?,
        Engine::Reference => inside_backward(g, tokens, &chart)?,
    };
    Ok(SentenceResult {
        log_z: chart.log_z(),
        grad: Some(grad),
    })
}

/// Sum of sentence log-likelihoods and gradients over `batch`.
fn batch_gradient(
    g: &SimpleGrammar,
    corpus: &Corpus,
    batch: &[usize],
    config: &TrainConfig,
    step: usize,
) -> Result<(f64, GrammarGrad)> {
    // sentences are spread over the pool, so each chart runs serially
    let results: Vec<SentenceResult> = batch
        .par_iter()
        .map(|&i| sentence_gradient(g, &corpus.sentences[i], config.engine, Parallelism::Serial).map_err(|e| e.at_sentence(i)))
        .collect::<Result<_>>()?;
    if let Some((pos, r)) = results.iter().enumerate().find(|(_, r)| r.grad.is_none()) {
        return Err(Error::NonFiniteLoss {
            step,
            sentence: batch[pos],
            log_z: r.log_z,
        });
    }
    let mut total = GrammarGrad::zeros(g.dims);
    let mut log_z = 0.0;
    if config.reproducible {
        for r in &results {
            log_z += r.log_z;
            total.add_assign(r.grad.as_ref().expect("checked"));
        }
    } else {
        log_z = results.par_iter().map(|r| r.log_z).sum();
        total = results
            .into_par_iter()
            .map(|r| r.grad.expect("checked"))
            .reduce(
                || GrammarGrad::zeros(g.dims),
                |mut a, b| {
                    a.add_assign(&b);
                    a
                },
            );
    }
    Ok((log_z, total))
}

fn dev_perplexity(model: &Model, dev: &Corpus, engine: Engine) -> Result<f64> {
    let g = model.grammar()?;
    Ok(corpus_log_likelihood(&g, &dev.sentences, engine)?.perplexity)
}

/// Trains `model` in place of a fresh initialization.
pub fn train_model(config: &TrainConfig, mut model: Model, train: &Corpus, dev: &Corpus) -> Result<TrainOutcome> {
    config.validate()?;
    let started = Instant::now();
    let train = train.filter_max_len(config.max_train_len);
    if train.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("training and dev corpora must be non-empty".into()));
    }
    let batches = batch_by_length(&train.sentences, config.batch_tokens)?;
    let mut order: Vec<usize> = (0..batches.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.tensors());
    let adam_cfg = config.adam();

    let mut log = TrainLog {
        seed: config.seed,
        config: config.clone(),
        steps: Vec::new(),
        evals: Vec::new(),
        wall_clock_secs: 0.0,
    };
    let mut best = (dev_perplexity(&model, dev, config.engine)?, model.clone());
    log.evals.push(EvalRecord { step: 0, dev_ppl: best.0 });

    let mut step = 0;
    'epochs: for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for &b in &order {
            if config.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let batch = &batches[b];
            let (g, cache) = model.forward()?;
            let (log_z, mut grad) = batch_gradient(&g, &train, batch, config, step)?;
            let n = batch.len() as f64;
            grad.scale(-1.0 / n);
            let mut pgrad = model.backward(&g, &cache, &grad)?;
            let grad_norm = clip_grad_norm(&mut pgrad, config.clip);
            adam_step(model.tensors_mut(), &pgrad, &mut adam, &adam_cfg)?;
            step += 1;
            log.steps.push(StepRecord {
                step,
                epoch,
                sentences: batch.len(),
                loss: -log_z / n,
                grad_norm,
            });
            if step % config.eval_every == 0 {
                let ppl = dev_perplexity(&model, dev, config.engine)?;
                log.evals.push(EvalRecord { step, dev_ppl: ppl });
                log::info!("step {step} epoch {epoch} dev ppl {ppl:.4}");
                if ppl < best.0 {
                    best = (ppl, model.clone());
                }
            }
        }
    }
    if log.evals.last().is_none_or(|e| e.step != step) {
        let ppl = dev_perplexity(&model, dev, config.engine)?;
        log.evals.push(EvalRecord { step, dev_ppl: ppl });
        if ppl < best.0 {
            best = (ppl, model.clone());
        }
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(TrainOutcome {
        best: best.1,
        best_dev_ppl: best.0,
        last: model,
        log,
    })
}

/// Trains a freshly initialized model over `vocab_size` words.
pub fn train(config: &TrainConfig, vocab_size: usize, train: &Corpus, dev: &Corpus) -> Result<TrainOutcome> {
    let model = init_model(config, vocab_size)?;
    train_model(config, model, train, dev)
}

/// Writes `config.json`, `model.sprm`, `grammar.spcfg` (+ `.vocab`) and
/// `train_log.csv` for the best model into `dir`.
pub fn save_checkpoint_dir(dir: impl AsRef<Path>, outcome: &TrainOutcome, vocab: Option<&Vocabulary>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("config.json", &outcome.log.config.to_json())?;
    write("train_log.csv", &outcome.log.to_csv())?;
    save_params(&outcome.best, dir.join("model.sprm"))?;
    save_grammar(&outcome.best.grammar()?, dir.join("grammar.spcfg"))?;
    if let Some(v) = vocab {
        v.save(dir.join("grammar.spcfg.vocab"))?;
    }
    Ok(())
}

/// Perplexity and, when a treebank is given, S-F1.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub likelihood: CorpusLikelihood,
    pub f1: Option<F1Report>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "sentences: {}\ntokens: {}\nlog-likelihood: {:.6}\nperplexity: {:.6}\n",
            self.likelihood.log_z.len(),
            self.likelihood.n_tokens,
            self.likelihood.total_log_z(),
            self.likelihood.perplexity
        );
        if let Some(f1) = &self.f1 {
            out.push_str(&f1.summary());
        }
        out
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        let _ = writeln!(out, "perplexity,{}", self.likelihood.perplexity);
        let _ = writeln!(out, "log_likelihood,{}", self.likelihood.total_log_z());
        let _ = writeln!(out, "tokens,{}", self.likelihood.n_tokens);
        if let Some(f1) = &self.f1 {
            let _ = writeln!(out, "s_f1,{}", f1.mean_f1);
            let _ = writeln!(out, "f1_sentences,{}", f1.sentences.len());
        }
        out
    }
}

pub fn evaluate(
    g: &SimpleGrammar,
    vocab: &Vocabulary,
    corpus: &Corpus,
    treebank: Option<&[GoldAnnotation]>,
    engine: Engine,
    decoder: Decoder,
) -> Result<EvalReport> {
    if vocab.len() != g.dims.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "vocabulary has {} words but the grammar emits {}",
            vocab.len(),
            g.dims.vocab_size
        )));
    }
    let likelihood = corpus_log_likelihood(g, &corpus.sentences, engine)?;
    let f1 = treebank
        .map(|tb| corpus_f1(tb, grammar_predictor(g, vocab, decoder)))
        .transpose()?;
    Ok(EvalReport { likelihood, f1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr, 0.002);
        assert_eq!(cfg.beta1, 0.75);
        assert_eq!(cfg.d, 512);
        assert_eq!(cfg.n_pt(), cfg.n_nt);
        let back: TrainConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let partial: TrainConfig = serde_json::from_str(r#"{"n_nt": 4, "parameterization": "direct"}"#).unwrap();
        assert_eq!(partial.n_nt, 4);
        assert_eq!(partial.parameterization, ParamKind::Direct);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            n_nt: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
