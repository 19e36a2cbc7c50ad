//! Pre-training and fine-tuning loops.
//!
//! Pre-training runs three phases: local-only epochs, forest initialization
//! from clean embeddings of the whole dataset, then joint epochs in which
//! every batch gets one E-step and one Adam update on `L_local + L_global`
//! for both the encoder and the prototypes. The loop is a resumable state
//! machine; all randomness comes from substreams keyed by the global step.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{EStepInput, FinetuneMode, TrainConfig};
use crate::em::{e_step_batch, monitored_mb_loglik, nce_global_loss, EmDiagnostics};
use crate::error::{Error, Result};
use crate::eval::{cluster_metrics, roc_auc, MetricReport, Pca, PlotRow};
use crate::forest::{init_forest, PrototypeForest};
use crate::gin::GinParams;
use crate::graph::{mask_attributes, AttrSchema, Graph, GraphBatch};
use crate::local::{graph_loss, subgraph_loss, LocalBatchView};
use crate::optim::{lr_schedule, Adam};
use crate::rng::{substream, Purpose};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

/// Linear classification head `d -> T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub w: ParamId,
    pub b: ParamId,
    pub tasks: usize,
}

impl Head {
    pub fn attach(params: &ParamSet, tasks: usize) -> Result<Self> {
        let find = |n: &str| {
            params
                .find(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {n}")))
        };
        Ok(Self {
            w: find("head.w")?,
            b: find("head.b")?,
            tasks,
        })
    }
}

/// Encoder parameters plus the optional prototype forest and task head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ParamSet,
    pub gin: GinParams,
    pub forest: Option<PrototypeForest>,
    pub head: Option<Head>,
}

impl Model {
    /// Fresh encoder drawn from the init substream of `cfg.seed`.
    pub fn init(cfg: &TrainConfig, schema: &AttrSchema) -> Result<Self> {
        let mut params = ParamSet::new();
        let mut rng = substream(cfg.seed, Purpose::Init, 0, 0);
        let gin = GinParams::init_with_std(
            &mut params,
            schema,
            cfg.model.layers,
            cfg.model.hidden,
            cfg.model.table_init_std,
            &mut rng,
        )?;
        Ok(Self {
            params,
            gin,
            forest: None,
            head: None,
        })
    }

    /// Graph embeddings `[M, d]` without gradients.
    pub fn embed(&self, graphs: &[Graph], chunk: usize) -> Result<Tensor> {
        self.gin.embed_graphs(&self.params, graphs, chunk)
    }

    /// Head logits `[M, T]` without gradients.
    pub fn logits(&self, graphs: &[Graph], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::invalid("model has no task head"))?;
        let h = self.embed(graphs, chunk)?;
        Ok(head_logits(&self.params, head, &h))
    }

    /// Nearest bottom prototype (by cosine) of every row of `h`.
    pub fn bottom_assignments(&self, h: &Tensor) -> Result<Vec<usize>> {
        let forest = self
            .forest
            .as_ref()
            .ok_or_else(|| Error::Forest("model has no prototype forest".into()))?;
        Ok((0..h.rows())
            .map(|i| forest.nearest_bottom(&self.params, h.row(i)))
            .collect())
    }
}

fn head_logits(params: &ParamSet, head: &Head, h: &Tensor) -> Vec<Vec<f64>> {
    let (w, b) = (params.get(head.w), params.get(head.b));
    let t = head.tasks;
    (0..h.rows())
        .map(|i| {
            let x = h.row(i);
            (0..t)
                .map(|k| {
                    b.data()[k]
                        + x.iter()
                            .enumerate()
                            .map(|(j, &xj)| xj * w.data()[j * t + k])
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Position of the training loop.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Progress {
    pub epoch: usize,
    /// Next batch within the epoch.
    pub batch: usize,
    /// Completed optimizer steps.
    pub step: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Local,
    Joint,
}

/// One row of the metrics stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub batch_size: usize,
    pub loss_local: Option<f64>,
    pub loss_global: Option<f64>,
    /// `sum_n f(h_n, z_n)` over the batch.
    pub monitored_mb_loglik: Option<f64>,
    pub lr: f64,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,loss_local,loss_global,monitored_mb_loglik,lr";

    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.step,
            o(self.loss_local),
            o(self.loss_global),
            o(self.monitored_mb_loglik),
            self.lr
        )
    }
}

/// Batches of one epoch: a seeded permutation cut into runs of `n`. A
/// trailing batch of one graph is merged into the previous batch, because the
/// graph-level loss needs an in-batch negative.
pub fn epoch_batches(num_graphs: usize, n: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..num_graphs).collect();
    perm.shuffle(&mut substream(seed, Purpose::Permutation, epoch as u64, 0));
    let mut batches: Vec<Vec<usize>> = perm.chunks(n).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

/// Resumable pre-training loop over a fixed dataset.
pub struct Pretrainer<'a> {
    pub cfg: TrainConfig,
    graphs: &'a [Graph],
    schema: AttrSchema,
    pub model: Model,
    pub adam: Adam,
    pub progress: Progress,
    pub diagnostics: Option<EmDiagnostics>,
    pub history: Vec<StepRecord>,
    batches: Option<(usize, Vec<Vec<usize>>)>,
}

impl<'a> Pretrainer<'a> {
    pub fn new(cfg: TrainConfig, graphs: &'a [Graph], schema: &AttrSchema) -> Result<Self> {
        cfg.validate()?;
        let model = Model::init(&cfg, schema)?;
        let adam = Adam::new(cfg.adam);
        Self::resume(cfg, graphs, schema, model, adam, Progress::default())
    }

    /// Continues from saved state; with the same config and data the result
    /// equals an uninterrupted run.
    pub fn resume(
        cfg: TrainConfig,
        graphs: &'a [Graph],
        schema: &AttrSchema,
        model: Model,
        adam: Adam,
        progress: Progress,
    ) -> Result<Self> {
        cfg.validate()?;
        if graphs.len() < 2 {
            return Err(Error::Dataset(format!(
                "pre-training needs at least 2 graphs, got {}",
                graphs.len()
            )));
        }
        for (i, g) in graphs.iter().enumerate() {
            g.validate(schema, i)?;
        }
        let diagnostics = model.forest.as_ref().map(EmDiagnostics::new);
        Ok(Self {
            cfg,
            graphs,
            schema: schema.clone(),
            model,
            adam,
            progress,
            diagnostics,
            history: Vec::new(),
            batches: None,
        })
    }

    /// Epochs of the local-only phase; zero when no local objective is on.
    /// [`Pretrainer::resume`] from a loaded checkpoint, keeping its diagnostics.
    pub fn from_checkpoint(
        ck: Checkpoint,
        graphs: &'a [Graph],
        schema: &AttrSchema,
    ) -> Result<Self> {
        let mut t = Self::resume(ck.config, graphs, schema, ck.model, ck.adam, ck.progress)?;
        if ck.diagnostics.is_some() {
            t.diagnostics = ck.diagnostics;
        }
        Ok(t)
    }

    /// Everything needed to continue this run later.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            model: self.model.clone(),
            adam: self.adam.clone(),
            progress: self.progress,
            diagnostics: self.diagnostics.clone(),
        }
    }

    pub fn local_epochs(&self) -> usize {
        if self.cfg.pretrain.uses_local() {
            self.cfg.pretrain.epochs_local
        } else {
            0
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.local_epochs() + self.cfg.pretrain.epochs_joint
    }

    pub fn is_done(&self) -> bool {
        self.progress.epoch >= self.total_epochs()
    }

    pub fn phase(&self) -> Phase {
        if self.progress.epoch < self.local_epochs() {
            Phase::Local
        } else {
            Phase::Joint
        }
    }

    fn wants_forest(&self) -> bool {
        self.cfg.pretrain.use_global && self.phase() == Phase::Joint && self.model.forest.is_none()
    }

    /// Embeds the dataset with the current (unmasked) encoder and builds the forest.
    pub fn init_forest(&mut self) -> Result<()> {
        let h = self
            .model
            .embed(self.graphs, self.cfg.pretrain.embed_chunk)?;
        let rows: Vec<Vec<f64>> = (0..h.rows()).map(|i| h.row(i).to_vec()).collect();
        let mut rng = substream(self.cfg.seed, Purpose::KMeans, 0, 0);
        let (forest, _) = init_forest(
            &mut self.model.params,
            &rows,
            &self.cfg.global.k_per_layer,
            &self.cfg.global.forest_init(),
            &mut rng,
        )?;
        self.diagnostics = Some(EmDiagnostics::new(&forest));
        self.model.forest = Some(forest);
        Ok(())
    }

    fn current_batches(&mut self) -> &[Vec<usize>] {
        let epoch = self.progress.epoch;
        if self.batches.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let b = epoch_batches(
                self.graphs.len(),
                self.cfg.pretrain.batch_size,
                self.cfg.seed,
                epoch,
            );
            self.batches = Some((epoch, b));
        }
        &self.batches.as_ref().unwrap().1
    }

    fn trainable(&self) -> Vec<ParamId> {
        let mut ids = self.model.gin.param_ids();
        if let Some(f) = &self.model.forest {
            ids.extend_from_slice(f.param_ids());
        }
        ids
    }

    /// Runs one optimizer step; `None` once every epoch is done. The forest
    /// is initialized on entering the joint phase, even if it has no epochs.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.wants_forest() {
            self.init_forest()?;
        }
        if self.is_done() {
            return Ok(None);
        }
        let phase = self.phase();
        let b = self.progress.batch;
        let idx = self.current_batches()[b].clone();
        let record = self.train_batch(&idx, phase)?;
        self.progress.step += 1;
        self.progress.batch += 1;
        if self.progress.batch >= self.current_batches().len() {
            self.progress.batch = 0;
            self.progress.epoch += 1;
        }
        self.history.push(record.clone());
        Ok(Some(record))
    }

    /// Runs to completion (including forest initialization).
    pub fn run(&mut self) -> Result<()> {
        while self.step()?.is_some() {}
        Ok(())
    }

    /// Runs at most `n` steps; returns how many ran.
    pub fn run_steps(&mut self, n: u64) -> Result<u64> {
        let mut done = 0;
        while done < n && self.step()?.is_some() {
            done += 1;
        }
        Ok(done)
    }

    fn train_batch(&mut self, idx: &[usize], phase: Phase) -> Result<StepRecord> {
        let cfg = &self.cfg;
        let (seed, step) = (cfg.seed, self.progress.step);
        let strict = cfg.strict_numerics;
        let use_local = cfg.pretrain.uses_local();
        let use_global = phase == Phase::Joint && cfg.pretrain.use_global;
        let need_masked = use_local || (use_global && cfg.global.estep_input == EStepInput::Masked);

        let graphs: Vec<&Graph> = idx.iter().map(|&i| &self.graphs[i]).collect();
        let batch = GraphBatch::new(graphs.iter().copied())?;
        let mut tape = Tape::with_strict(strict);
        let params = &self.model.params;
        let enc = self.model.gin.encode(&mut tape, params, &batch)?;
        let enc_masked = if need_masked {
            let masked: Vec<Graph> = graphs
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let mut rng = substream(seed, Purpose::Mask, step, i as u64);
                    mask_attributes(g, cfg.mask.rate, cfg.mask.mode, &self.schema, &mut rng)
                })
                .collect();
            let mbatch = GraphBatch::new(&masked)?;
            Some(self.model.gin.encode(&mut tape, params, &mbatch)?)
        } else {
            None
        };

        let mut local: Option<Var> = None;
        if use_local {
            let m = enc_masked
                .as_ref()
                .expect("masked pass runs with local terms");
            let view = LocalBatchView {
                graphs: enc.graphs,
                graphs_masked: m.graphs,
                nodes: enc.nodes,
                nodes_masked: m.nodes,
                offsets: batch.graph_offsets().to_vec(),
            };
            let mut rng = substream(seed, Purpose::Local, step, 0);
            if cfg.pretrain.use_graph {
                local = Some(graph_loss(&mut tape, &view, &cfg.local, &mut rng)?);
            }
            if cfg.pretrain.use_sub {
                let s = subgraph_loss(&mut tape, &view, &cfg.local, &mut rng)?;
                local = Some(match local {
                    Some(g) => tape.add(g, s)?,
                    None => s,
                });
            }
        }

        let mut global: Option<(Var, f64, Vec<crate::em::LatentChain>)> = None;
        if use_global {
            let forest = self
                .model
                .forest
                .as_ref()
                .expect("forest initialized before joint steps");
            let h_e = match cfg.global.estep_input {
                EStepInput::Clean => tape.value(enc.graphs).clone(),
                EStepInput::Masked => tape.value(enc_masked.as_ref().unwrap().graphs).clone(),
            };
            let chains = e_step_batch(&h_e, forest, params, cfg.global.temperature, seed, step)?;
            let monitored = monitored_mb_loglik(tape.value(enc.graphs), &chains, forest, params)?;
            let mut rng = substream(seed, Purpose::Nce, step, 0);
            let nce = nce_global_loss(
                &mut tape,
                enc.graphs,
                &chains,
                forest,
                params,
                cfg.global.negatives,
                &mut rng,
            )?;
            global = Some((nce.loss, monitored, chains));
        }

        let loss_local = local.map(|v| tape.item(v));
        let loss_global = global.as_ref().map(|(v, _, _)| tape.item(*v));
        if strict {
            for (name, v) in [("local loss", loss_local), ("global loss", loss_global)] {
                if v.is_some_and(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        op: "pretrain",
                        context: Some(format!("{name} at step {step}")),
                    });
                }
            }
        }

        let forest_ids: Vec<ParamId> = self
            .model
            .forest
            .as_ref()
            .map(|f| f.param_ids().to_vec())
            .unwrap_or_default();
        let params = &mut self.model.params;
        params.zero_grad();
        if let Some(l) = local {
            tape.backward_retain(l, params)?;
            // the local objective never reads the prototypes
            for &id in &forest_ids {
                if params
                    .get(id)
                    .grad()
                    .is_some_and(|g| g.iter().any(|&x| x != 0.0))
                {
                    return Err(Error::Forest(
                        "local objective produced a prototype gradient".into(),
                    ));
                }
            }
        }
        if let Some((g, _, _)) = &global {
            tape.backward(*g, params)?;
        }

        let lr = lr_schedule(self.progress.epoch, cfg.pretrain.lr, None);
        let ids = self.trainable();
        let strict = self.cfg.strict_numerics;
        self.adam.step(&mut self.model.params, &ids, lr, strict)?;

        let monitored = global.as_ref().map(|(_, m, _)| *m);
        if let (Some((_, m, chains)), Some(diag)) = (&global, self.diagnostics.as_mut()) {
            diag.record(loss_global.unwrap(), *m, chains);
        }
        Ok(StepRecord {
            step: self.progress.step,
            epoch: self.progress.epoch,
            phase,
            batch_size: idx.len(),
            loss_local,
            loss_global,
            monitored_mb_loglik: monitored,
            lr,
        })
    }

    pub fn graphs(&self) -> &[Graph] {
        self.graphs
    }
}

/// Targets and mask of one graph's label vector.
fn label_targets(g: &Graph, tasks: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let label = g
        .label
        .as_ref()
        .ok_or_else(|| Error::Dataset("fine-tuning needs labeled graphs".into()))?;
    if label.len() != tasks {
        return Err(Error::Dataset(format!(
            "label arity {} differs from {tasks}",
            label.len()
        )));
    }
    Ok((
        label
            .iter()
            .map(|l| f64::from(u8::from(*l == Some(true))))
            .collect(),
        label.iter().map(Option::is_some).collect(),
    ))
}

/// Result of fine-tuning: the model with its head, the evaluation report
/// and warnings about undefined tasks.
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub model: Model,
    pub report: MetricReport,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Appends a `d -> T` head and trains with masked logistic loss; the encoder
/// trains too in full mode and stays frozen in probe mode. Evaluates on `eval`.
pub fn finetune(
    pretrained: &Model,
    train: &[Graph],
    eval: &[Graph],
    cfg: &TrainConfig,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let tasks = train
        .first()
        .and_then(|g| g.label.as_ref())
        .map(Vec::len)
        .ok_or_else(|| {
            Error::Dataset("fine-tuning needs a non-empty labeled training set".into())
        })?;
    let targets: Vec<(Vec<f64>, Vec<bool>)> = train
        .iter()
        .map(|g| label_targets(g, tasks))
        .collect::<Result<_>>()?;
    for g in eval {
        label_targets(g, tasks)?;
    }

    let fc = &cfg.finetune;
    let mut model = pretrained.clone();
    let d = model.gin.hidden;
    let mut rng = substream(cfg.seed, Purpose::Finetune, 0, 0);
    let bound = 1.0 / (d as f64).sqrt();
    let w: Vec<f64> = (0..d * tasks)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let b: Vec<f64> = (0..tasks)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    let head = Head {
        w: model.params.add("head.w", Tensor::matrix(d, tasks, w)?),
        b: model.params.add("head.b", Tensor::vector(b)),
        tasks,
    };
    let probe = fc.mode == FinetuneMode::Probe;
    let frozen = probe
        .then(|| model.embed(train, cfg.pretrain.embed_chunk))
        .transpose()?;
    let mut ids = vec![head.w, head.b];
    if !probe {
        ids.extend(model.gin.param_ids());
    }
    let mut adam = Adam::new(cfg.adam);
    let mut epoch_loss = Vec::with_capacity(fc.epochs);
    for epoch in 0..fc.epochs {
        let lr = lr_schedule(epoch, fc.lr, fc.schedule());
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(cfg.seed, Purpose::Finetune, 1, epoch as u64));
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(fc.batch_size) {
            let mut tape = Tape::with_strict(cfg.strict_numerics);
            let h = match &frozen {
                Some(all) => {
                    let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| all.row(i).to_vec()).collect();
                    tape.constant(Tensor::from_rows(&rows)?)?
                }
                None => {
                    let batch = GraphBatch::new(chunk.iter().map(|&i| &train[i]))?;
                    model.gin.encode(&mut tape, &model.params, &batch)?.graphs
                }
            };
            let wv = tape.param(&model.params, head.w)?;
            let bv = tape.param(&model.params, head.b)?;
            let z = tape.matmul(h, wv)?;
            let logits = tape.add_row(z, bv)?;
            let t: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| targets[i].0.iter().copied())
                .collect();
            let m: Vec<bool> = chunk
                .iter()
                .flat_map(|&i| targets[i].1.iter().copied())
                .collect();
            if !m.iter().any(|&x| x) {
                continue;
            }
            let loss = tape.bce_with_logits(logits, &t, &m)?;
            total += tape.item(loss) * chunk.len() as f64;
            count += chunk.len();
            model.params.zero_grad();
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params, &ids, lr, cfg.strict_numerics)?;
        }
        epoch_loss.push(total / count.max(1) as f64);
    }
    model.head = Some(head);
    let (report, warnings) = evaluate(&model, eval, cfg)?;
    Ok(FinetuneOutcome {
        model,
        report,
        epoch_loss,
        warnings,
    })
}

/// Task AUCs (and top-1 accuracy for one-hot labels) of a model with a head,
/// plus NMI/purity of nearest-bottom-prototype assignments against leaf
/// classes when the model has a forest and the graphs carry classes.
pub fn evaluate(
    model: &Model,
    graphs: &[Graph],
    cfg: &TrainConfig,
) -> Result<(MetricReport, Vec<String>)> {
    let mut report = MetricReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        ..MetricReport::default()
    };
    let mut warnings = Vec::new();
    if graphs.is_empty() {
        return Err(Error::Dataset("nothing to evaluate".into()));
    }
    let h = model.embed(graphs, cfg.pretrain.embed_chunk)?;
    if let Some(head) = &model.head {
        let logits = head_logits(&model.params, head, &h);
        let mut aucs = Vec::with_capacity(head.tasks);
        for k in 0..head.tasks {
            let (mut s, mut y) = (Vec::new(), Vec::new());
            for (g, z) in graphs.iter().zip(&logits) {
                if let Some(Some(l)) = g.label.as_ref().map(|l| l[k]) {
                    s.push(z[k]);
                    y.push(l);
                }
            }
            let auc = roc_auc(&s, &y);
            if auc.is_none() {
                warnings.push(format!(
                    "task {k}: a single class in the evaluated split, AUC undefined and excluded"
                ));
            }
            aucs.push(auc);
        }
        report.set_aucs(aucs);
        report.accuracy = one_hot_accuracy(graphs, &logits);
    }
    if let (Some(_), Some(classes)) = (&model.forest, leaf_classes(graphs)) {
        let assign = model.bottom_assignments(&h)?;
        let (nmi, purity) = cluster_metrics(&assign, &classes);
        report.nmi = Some(nmi);
        report.purity = Some(purity);
    }
    Ok((report, warnings))
}

/// Leaf class of every graph, if all carry a class path.
pub fn leaf_classes(graphs: &[Graph]) -> Option<Vec<usize>> {
    graphs
        .iter()
        .map(|g| g.classes.as_ref().and_then(|c| c.last().copied()))
        .collect()
}

/// 2-D PCA plot rows: one per graph, then every prototype (top layer first)
/// projected with the components fitted on the graph embeddings.
pub fn projection(model: &Model, graphs: &[Graph], chunk: usize) -> Result<Vec<PlotRow>> {
    let h = model.embed(graphs, chunk)?;
    let points: Vec<Vec<f64>> = (0..h.rows()).map(|i| h.row(i).to_vec()).collect();
    let pca = Pca::fit(&points)?;
    let mut rows: Vec<PlotRow> = points
        .iter()
        .zip(graphs)
        .map(|(p, g)| {
            let [x, y] = pca.project(p);
            PlotRow {
                x,
                y,
                leaf_label: g.classes.as_ref().and_then(|c| c.last().copied()),
                is_prototype: false,
                layer: None,
            }
        })
        .collect();
    if let Some(f) = &model.forest {
        for l in 0..f.depth() {
            for v in f.layer_vectors(&model.params, l) {
                let [x, y] = pca.project(&v);
                rows.push(PlotRow {
                    x,
                    y,
                    leaf_label: None,
                    is_prototype: true,
                    layer: Some(l),
                });
            }
        }
    }
    Ok(rows)
}

fn one_hot_accuracy(graphs: &[Graph], logits: &[Vec<f64>]) -> Option<f64> {
    let mut hits = 0usize;
    for (g, z) in graphs.iter().zip(logits) {
        let label = g.label.as_ref()?;
        let ones: Vec<usize> = (0..label.len())
            .filter(|&k| label[k] == Some(true))
            .collect();
        if ones.len() != 1 || label.iter().any(Option::is_none) {
            return None;
        }
        let pred = (0..z.len()).fold(0, |best, k| if z[k] > z[best] { k } else { best });
        hits += usize::from(pred == ones[0]);
    }
    Some(hits as f64 / graphs.len() as f64)
}
