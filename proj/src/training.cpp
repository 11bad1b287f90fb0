#include "dcolor/training.hpp"

#include "dcolor/checkpoint.hpp"
#include "dcolor/config.hpp"
#include "dcolor/error.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace dcolor {

using nlohmann::json;

void ExperimentConfig::resolve() {
    augment.mode = dataset.kind == "image" ? Modality::Image : Modality::Vector;
    if (encoder.widths.size() > encoder.tap) coloringHead.inputDim = encoder.tapWidth();
    if (!encoder.widths.empty()) whiteningHead.inputDim = encoder.outputWidth();
}

void ExperimentConfig::validate() const {
    if (dataset.kind != "synthetic" && dataset.kind != "image") {
        throw ConfigError("dataset.kind must be 'synthetic' or 'image', got '" + dataset.kind + "'");
    }
    if (dataset.kind == "synthetic") {
        const auto& s = dataset.synthetic;
        if (s.numClasses < 2) throw ConfigError("dataset.num_classes must be >= 2");
        if (s.sparseDim < s.numClasses) throw ConfigError("dataset.sparse_dim must be >= dataset.num_classes");
        if (s.samples < 2) throw ConfigError("dataset.samples must be >= 2");
        if (!encoder.widths.empty() && encoder.widths.front() != s.sparseDim + s.denseDim) {
            throw ConfigError("encoder.widths[0] = " + std::to_string(encoder.widths.front()) +
                              " must equal the sample dimension sparse_dim + dense_dim = " +
                              std::to_string(s.sparseDim + s.denseDim));
        }
    } else if (dataset.imagePath.empty()) {
        throw ConfigError("dataset.image_path is required for image datasets");
    }
    augment.validate();
    encoder.validate();
    coloringHead.validate();
    whiteningHead.validate();
    if (coloringHead.inputDim != encoder.tapWidth()) {
        throw ConfigError("coloring head input must equal the tap width " + std::to_string(encoder.tapWidth()));
    }
    if (whiteningHead.inputDim != encoder.outputWidth()) {
        throw ConfigError("whitening head input must equal the encoder output width " +
                          std::to_string(encoder.outputWidth()));
    }
    if (coloringHead.outputDim() != whiteningHead.outputDim()) {
        throw ConfigError("coloring and whitening heads must share the embedding size d (" +
                          std::to_string(coloringHead.outputDim()) + " vs " +
                          std::to_string(whiteningHead.outputDim()) + ")");
    }
    loss.validate();
    if (batchSize < 2) throw ConfigError("batch_size must be >= 2 (got " + std::to_string(batchSize) + ")");
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (diagnosticSamples < 2) throw ConfigError("diagnostic_samples must be >= 2");
    if (!(optim.learningRate > 0.0)) throw ConfigError("optim.learning_rate must be > 0");
    if (!(optim.weightDecay >= 0.0)) throw ConfigError("optim.weight_decay must be >= 0");
    if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
        throw ConfigError("optim.beta1 and optim.beta2 must lie in [0, 1)");
    }
    if (!(optim.epsilon > 0.0)) throw ConfigError("optim.epsilon must be > 0");
    if (target.source == TargetSource::File && target.path.empty()) {
        throw ConfigError("target.path is required when target.source is 'file'");
    }
    if (target.source == TargetSource::Vae || target.source == TargetSource::Autoencoder) {
        if (target.vaeEpochs == 0) throw ConfigError("target.vae_epochs must be >= 1");
        if (target.vaeBatchSize == 0) throw ConfigError("target.vae_batch_size must be >= 1");
        if (!(target.vaeLearningRate > 0.0)) throw ConfigError("target.vae_learning_rate must be > 0");
        if (!(target.betaKL >= 0.0)) throw ConfigError("target.beta_kl must be >= 0");
    }
    if (target.draws == 0) throw ConfigError("target.draws must be >= 1");
    if (!(eval.trainFraction > 0.0 && eval.trainFraction < 1.0)) {
        throw ConfigError("eval.train_fraction must lie in (0, 1)");
    }
    if (eval.probeEpochs == 0) throw ConfigError("eval.probe_epochs must be >= 1");
    if (eval.batchSize == 0) throw ConfigError("eval.batch_size must be >= 1");
    if (!(eval.learningRate > 0.0) || !(eval.finalLearningRate > 0.0)) {
        throw ConfigError("eval learning rates must be > 0");
    }
    if (eval.transfer) {
        const auto& t = *eval.transfer;
        if (!encoder.widths.empty() && t.sparseDim + t.denseDim != encoder.widths.front()) {
            throw ConfigError("eval.transfer sample dimension must equal encoder.widths[0]");
        }
        if (t.sparseDim < t.numClasses || t.numClasses < 2) throw ConfigError("eval.transfer class layout is invalid");
    }
}

Dataset loadDataset(const ExperimentConfig& cfg) {
    Dataset ds;
    if (cfg.dataset.kind == "image") {
        const std::string labels =
            cfg.dataset.labelPath.empty() ? siblingLabelPath(cfg.dataset.imagePath) : cfg.dataset.labelPath;
        ds = loadImageSet(cfg.dataset.imagePath, labels);
    } else {
        SparseDenseSpec spec = cfg.dataset.synthetic;
        spec.seed = deriveSeed(cfg.seed, "dataset");
        ds = generateSparseDense(spec);
    }
    if (!cfg.encoder.widths.empty() && ds.dim != cfg.encoder.widths.front()) {
        throw ConfigError("dataset sample dimension " + std::to_string(ds.dim) + " does not match encoder.widths[0] = " +
                          std::to_string(cfg.encoder.widths.front()));
    }
    return ds;
}

namespace {

void checkTarget(const ExperimentConfig& cfg, const TargetArtifact& target) {
    const std::size_t d = cfg.embeddingDim();
    if (target.dim() != d) {
        throw ConfigError("coloring head output d = " + std::to_string(d) + " does not match the target E dimension " +
                          std::to_string(target.dim()));
    }
    const bool autoKind = target.E.kind == CorrelationKind::Auto;
    if (cfg.variant() == LossVariant::Auto && !autoKind && target.source != TargetSource::Identity) {
        throw ConfigError("the auto variant needs an auto-correlation target E' (got a " +
                          std::string(correlationKindName(target.E.kind)) + " matrix)");
    }
    if (cfg.variant() == LossVariant::Cross && autoKind) {
        throw ConfigError("the cross variant needs a cross-correlation target E, got an auto-correlation matrix");
    }
}

} // namespace

TargetArtifact buildTarget(const ExperimentConfig& cfg, const Dataset& ds) {
    const std::size_t d = cfg.embeddingDim();
    const bool autoKind = cfg.variant() == LossVariant::Auto;
    TargetArtifact t;
    switch (cfg.target.source) {
    case TargetSource::Identity:
        t = identityTarget(d, autoKind ? CorrelationKind::Auto : CorrelationKind::Target);
        break;
    case TargetSource::File:
        t = loadTarget(cfg.target.path, d);
        break;
    case TargetSource::Vae:
    case TargetSource::Autoencoder: {
        const VAESpec spec = VAESpec::fromEncoder(cfg.encoder, d);
        VaeTrainingOptions o;
        o.epochs = cfg.target.vaeEpochs;
        o.batchSize = cfg.target.vaeBatchSize;
        o.learningRate = cfg.target.vaeLearningRate;
        o.betaKL = cfg.target.betaKL;
        const auto seed = deriveSeed(cfg.seed, "target");
        t = cfg.target.source == TargetSource::Vae
                ? computeTargetFromVAE(ds, cfg.augment, spec, o, seed, cfg.target.draws, autoKind)
                : computeTargetFromAE(ds, cfg.augment, spec, o, seed, cfg.target.draws, autoKind);
        break;
    }
    }
    checkTarget(cfg, t);
    return t;
}

Model buildModel(const ExperimentConfig& cfg) {
    Model m;
    const bool shared = cfg.shareHeads || cfg.variant() == LossVariant::Auto;
    m.backbone = Backbone(cfg.encoder, "backbone");
    m.coloring[0] = Projector(cfg.coloringHead, shared ? "color" : "color1");
    m.coloring[1] = Projector(cfg.coloringHead, shared ? "color" : "color2");
    m.whitening[0] = Projector(cfg.whiteningHead, shared ? "white" : "white1");
    m.whitening[1] = Projector(cfg.whiteningHead, shared ? "white" : "white2");
    Rng rng(deriveSeed(cfg.seed, "init"));
    m.backbone.init(m.store, rng);
    const std::size_t heads = shared ? 1 : 2;
    for (std::size_t k = 0; k < heads; ++k) {
        m.coloring[k].init(m.store, rng);
        m.whitening[k].init(m.store, rng);
    }
    return m;
}

std::pair<Tensor, Tensor> embedViews(const Model& model, const Dataset& ds, const AugmentationProtocol& protocol,
                                     std::size_t count, std::uint64_t seed) {
    count = std::min(count, ds.size());
    Rng rng(seed);
    std::vector<double> v1, v2;
    for (std::size_t i = 0; i < count; ++i) {
        auto [a, b] = augmentPair(ds, i, protocol, rng);
        v1.insert(v1.end(), a.begin(), a.end());
        v2.insert(v2.end(), b.begin(), b.end());
    }
    ModelStore store = model.store;
    Graph g;
    Var x1 = g.input("view1", Tensor({count, ds.dim}, std::move(v1)));
    Var x2 = g.input("view2", Tensor({count, ds.dim}, std::move(v2)));
    Var w1 = model.whitening[0].forward(g, store, model.backbone.forward(g, store, x1, false).final, false);
    Var w2 = model.whitening[1].forward(g, store, model.backbone.forward(g, store, x2, false).final, false);
    return {g.value(w1), g.value(w2)};
}

// ---------------------------------------------------------------------------

namespace {

struct StepLosses {
    double total = 0.0;
    double w = 0.0;
    double c = 0.0;
    std::uint64_t macs = 0;
};

StepLosses trainStep(const ExperimentConfig& cfg, Model& model, AdamState& adam, Tensor x, std::size_t m,
                     const Tensor& E, double lambda) {
    ModelStore& store = model.store;
    Graph g;
    Var input = g.input("x", std::move(x));
    auto bb = model.backbone.forward(g, store, input, true);
    const bool autoVariant = cfg.variant() == LossVariant::Auto;

    Var c1, c2, w1, w2, wAll;
    if (model.shared()) {
        Var c = model.coloring[0].forward(g, store, bb.tap, true);
        Var w = model.whitening[0].forward(g, store, bb.final, true);
        c1 = g.sliceRows(c, 0, m);
        c2 = g.sliceRows(c, m, 2 * m);
        w1 = g.sliceRows(w, 0, m);
        w2 = g.sliceRows(w, m, 2 * m);
        wAll = w;
    } else {
        c1 = model.coloring[0].forward(g, store, g.sliceRows(bb.tap, 0, m), true);
        c2 = model.coloring[1].forward(g, store, g.sliceRows(bb.tap, m, 2 * m), true);
        w1 = model.whitening[0].forward(g, store, g.sliceRows(bb.final, 0, m), true);
        w2 = model.whitening[1].forward(g, store, g.sliceRows(bb.final, m, 2 * m), true);
    }

    Var lossC, lossW, total;
    {
        Graph::StageScope stage(g, "correlation");
        Var C, W;
        if (autoVariant) {
            C = autoCorrelation(g, normalizeColumns(g, c1));
            W = autoCorrelation(g, normalizeColumns(g, wAll));
        } else {
            C = crossCorrelation(g, normalizeColumns(g, c1), normalizeColumns(g, c2));
            W = crossCorrelation(g, normalizeColumns(g, w1), normalizeColumns(g, w2));
        }
        lossC = coloringLoss(g, C, E);
        lossW = whiteningLoss(g, W, cfg.loss.alpha);
        total = totalLoss(g, lossW, lossC, lambda);
    }
    store.params.zeroGrad();
    g.backward(total);
    // Coloring heads are held fixed (no weight decay either) while lambda is 0.
    std::vector<std::string> frozen;
    if (lambda == 0.0) {
        frozen.push_back(model.coloring[0].prefix() + ".");
        if (!model.shared()) frozen.push_back(model.coloring[1].prefix() + ".");
    }
    adamStep(store.params, adam, frozen);
    return {g.value(total)[0], g.value(lossW)[0], g.value(lossC)[0], g.macs("correlation")};
}

Tensor batchInput(const Dataset& ds, std::span<const std::size_t> indices, const AugmentationProtocol& protocol,
                  Rng& rng) {
    const std::size_t m = indices.size();
    Tensor x({2 * m, ds.dim});
    for (std::size_t r = 0; r < m; ++r) {
        auto [a, b] = augmentPair(ds, indices[r], protocol, rng);
        std::copy(a.begin(), a.end(), x.data() + r * ds.dim);
        std::copy(b.begin(), b.end(), x.data() + (m + r) * ds.dim);
    }
    return x;
}

void writeCollapseDump(const std::string& dir, const ExperimentConfig& cfg, const TrainingRun& run, std::size_t epoch,
                       std::size_t batch, const CollapseError& e, const std::string& stage) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    json j;
    j["error"] = e.what();
    j["stage"] = stage;
    j["epoch"] = epoch;
    j["batch"] = batch;
    j["column"] = e.column();
    j["lambda"] = lambdaAt(cfg.loss, epoch);
    j["alpha"] = cfg.loss.alpha;
    j["config_digest"] = run.configDigest;
    json rows = json::array();
    for (const auto& r : run.metrics) rows.push_back(formatMetricsRow(r));
    j["metrics"] = rows;
    std::ofstream(std::filesystem::path(dir) / "collapse_dump.json") << j.dump(2) << '\n';
}

[[noreturn]] void abortOnCollapse(const std::string& dumpDir, const ExperimentConfig& cfg, const TrainingRun& run,
                                  std::size_t epoch, std::size_t batch, const CollapseError& e,
                                  const std::string& stage) {
    writeCollapseDump(dumpDir, cfg, run, epoch, batch, e, stage);
    std::string msg = "complete collapse at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                      " (" + stage + "): " + e.what();
    if (!dumpDir.empty()) msg += "; dump written to " + (std::filesystem::path(dumpDir) / "collapse_dump.json").string();
    throw CollapseError(msg, e.column());
}

double offDiagonalOf(const ExperimentConfig& cfg, const Tensor& v1, const Tensor& v2) {
    if (cfg.variant() == LossVariant::Auto) {
        Tensor both({v1.rows() + v2.rows(), v1.cols()});
        std::copy(v1.values().begin(), v1.values().end(), both.data());
        std::copy(v2.values().begin(), v2.values().end(), both.data() + v1.size());
        return meanOffDiagonal(autoCorrelation(normalizeColumns(both)).values);
    }
    return meanOffDiagonal(crossCorrelation(normalizeColumns(v1), normalizeColumns(v2)).values);
}

void runEpochs(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target, TrainingRun& run,
               Rng& rng, const TrainOptions& options) {
    const std::size_t n = ds.size();
    const std::size_t m = cfg.batchSize;
    if (n < m) {
        throw ConfigError("dataset has " + std::to_string(n) + " samples, fewer than batch_size = " + std::to_string(m));
    }
    const std::size_t batches = n / m;
    const auto diagSeed = deriveSeed(cfg.seed, "diagnostics");
    for (std::size_t epoch = run.startEpoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lambda = lambdaAt(cfg.loss, epoch);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

        EpochMetrics row;
        row.epoch = epoch;
        row.lambda = lambda;
        for (std::size_t b = 0; b < batches; ++b) {
            std::span<const std::size_t> idx(perm.data() + b * m, m);
            StepLosses s;
            try {
                s = trainStep(cfg, run.model, run.adam, batchInput(ds, idx, cfg.augment, rng), m, target.E.values,
                              lambda);
            } catch (const CollapseError& e) {
                abortOnCollapse(options.dumpDir, cfg, run, epoch, b, e, "training batch");
            } catch (const NumericalError& e) {
                throw NumericalError("non-finite value at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b) + ": " + e.what());
            }
            if (!std::isfinite(s.total)) {
                throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(b));
            }
            if (run.correlationMacsPerStep == 0) run.correlationMacsPerStep = s.macs;
            row.lossTotal += s.total;
            row.lossW += s.w;
            row.lossC += s.c;
        }
        row.lossTotal /= static_cast<double>(batches);
        row.lossW /= static_cast<double>(batches);
        row.lossC /= static_cast<double>(batches);

        try {
            auto [v1, v2] = embedViews(run.model, ds, cfg.augment, cfg.diagnosticSamples, diagSeed);
            const DiagnosticsReport rep = diagnose(v1, v2, epoch);
            row.variance = rep.embeddingVariance;
            row.effectiveRank = rep.effectiveRank;
            row.alignment = rep.alignment;
            run.offDiagonal.push_back(offDiagonalOf(cfg, v1, v2));
        } catch (const CollapseError& e) {
            abortOnCollapse(options.dumpDir, cfg, run, epoch, batches, e, "diagnostics");
        }
        row.wallMs = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        run.metrics.push_back(row);
    }
}

json configJson(const ExperimentConfig& cfg) { return json::parse(configToJson(cfg, -1)); }

void saveTrainingCheckpoint(const std::string& path, const ExperimentConfig& cfg, const Dataset& ds,
                            const TrainingRun& run) {
    Checkpoint ck;
    for (const auto& [name, p] : run.model.store.params) ck.tensors["param/" + name] = p.value;
    for (const auto& [name, s] : run.model.store.stats) {
        ck.tensors["bn/" + name + "/mean"] = s.mean;
        ck.tensors["bn/" + name + "/var"] = s.var;
    }
    for (const auto& [name, t] : run.adam.firstMoment) ck.tensors["adam.m/" + name] = t;
    for (const auto& [name, t] : run.adam.secondMoment) ck.tensors["adam.v/" + name] = t;
    json meta;
    meta["epoch"] = run.epochsCompleted();
    meta["adam_step"] = run.adam.step;
    meta["rng_state"] = run.rngState;
    meta["config"] = configJson(cfg);
    meta["config_digest"] = run.configDigest;
    meta["dataset_digest"] = ds.digest();
    meta["provenance"] = run.provenance;
    ck.metadata = meta.dump();
    saveCheckpoint(ck, path);
}

void restoreTensor(const Checkpoint& ck, const std::string& key, Tensor& into) {
    auto it = ck.tensors.find(key);
    if (it == ck.tensors.end()) {
        throw ConfigError("checkpoint does not match the configured model: missing tensor '" + key + "'");
    }
    if (!it->second.sameShape(into)) {
        throw ConfigError("checkpoint does not match the configured model: '" + key + "' has shape " +
                          shapeString(it->second.shape()) + ", the config expects " + shapeString(into.shape()));
    }
    into = it->second;
}

void restoreModel(const Checkpoint& ck, Model& model) {
    std::size_t expected = 0;
    for (auto& [name, p] : model.store.params) {
        restoreTensor(ck, "param/" + name, p.value);
        ++expected;
    }
    for (auto& [name, s] : model.store.stats) {
        restoreTensor(ck, "bn/" + name + "/mean", s.mean);
        restoreTensor(ck, "bn/" + name + "/var", s.var);
    }
    std::size_t stored = 0;
    for (const auto& [key, t] : ck.tensors) {
        if (key.rfind("param/", 0) == 0) ++stored;
    }
    if (stored != expected) {
        throw ConfigError("checkpoint does not match the configured model: it holds " + std::to_string(stored) +
                          " parameter tensors, the config builds " + std::to_string(expected));
    }
}

TrainingRun startRun(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target) {
    cfg.validate();
    checkTarget(cfg, target);
    (void)ds;
    TrainingRun run;
    run.configDigest = configDigest(cfg);
    run.model = buildModel(cfg);
    run.adam.options = cfg.optim;
    return run;
}

void finishRun(const ExperimentConfig& cfg, const Dataset& ds, TrainingRun& run, const Rng& rng,
               const TrainOptions& options) {
    run.rngState = rng.state();
    if (!options.checkpointPath.empty()) {
        saveTrainingCheckpoint(options.checkpointPath, cfg, ds, run);
        run.checkpointPath = options.checkpointPath;
    }
}

TrainingRun trainFresh(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                       const TrainOptions& options) {
    TrainingRun run = startRun(cfg, ds, target);
    Rng rng(deriveSeed(cfg.seed, "train"));
    runEpochs(cfg, ds, target, run, rng, options);
    finishRun(cfg, ds, run, rng, options);
    return run;
}

} // namespace

TrainingRun pretrainCross(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                          const TrainOptions& options) {
    if (cfg.variant() != LossVariant::Cross) throw ConfigError("pretrainCross needs loss.variant = cross");
    return trainFresh(cfg, ds, target, options);
}

TrainingRun pretrainAuto(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                         const TrainOptions& options) {
    if (cfg.variant() != LossVariant::Auto) throw ConfigError("pretrainAuto needs loss.variant = auto");
    return trainFresh(cfg, ds, target, options);
}

TrainingRun pretrain(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                     const TrainOptions& options) {
    return cfg.variant() == LossVariant::Auto ? pretrainAuto(cfg, ds, target, options)
                                              : pretrainCross(cfg, ds, target, options);
}

TrainingRun resumeFrom(const std::string& checkpointPath, const ExperimentConfig& cfg, const Dataset& ds,
                       const TargetArtifact& target, const TrainOptions& options) {
    const Checkpoint ck = loadCheckpoint(checkpointPath);
    json meta;
    try {
        meta = json::parse(ck.metadata);
    } catch (const json::exception&) {
        throw FormatError(checkpointPath + ": checkpoint metadata is not valid JSON");
    }
    TrainingRun run = startRun(cfg, ds, target);
    const json stored = meta.at("config");
    if (stored.at("variant") != lossVariantName(cfg.variant())) {
        throw ConfigError("checkpoint was trained with variant '" + stored.at("variant").get<std::string>() +
                          "', the config asks for '" + lossVariantName(cfg.variant()) + "'");
    }
    if (meta.at("dataset_digest").get<std::uint64_t>() != ds.digest()) {
        throw ConfigError("checkpoint was trained on a different dataset (digest mismatch)");
    }
    restoreModel(ck, run.model);
    run.adam.step = meta.at("adam_step").get<std::uint64_t>();
    for (const auto& [name, p] : run.model.store.params) {
        const auto m = ck.tensors.find("adam.m/" + name);
        const auto v = ck.tensors.find("adam.v/" + name);
        if (m == ck.tensors.end() || v == ck.tensors.end()) {
            if (run.adam.step == 0) continue;
            throw ConfigError("checkpoint lacks optimizer moments for '" + name + "'");
        }
        if (!m->second.sameShape(p.value) || !v->second.sameShape(p.value)) {
            throw ConfigError("checkpoint optimizer moments for '" + name + "' do not match the parameter shape");
        }
        run.adam.firstMoment[name] = m->second;
        run.adam.secondMoment[name] = v->second;
    }
    run.provenance = meta.value("provenance", std::vector<std::string>{});
    run.startEpoch = meta.at("epoch").get<std::size_t>();

    const json now = configJson(cfg);
    if (stored.at("loss").at("lambda") != now.at("loss").at("lambda") ||
        stored.at("loss").at("lambda_schedule") != now.at("loss").at("lambda_schedule")) {
        run.provenance.push_back("lambda changed at epoch " + std::to_string(run.startEpoch) + ": " +
                                 stored.at("loss").at("lambda").dump() + " -> " + now.at("loss").at("lambda").dump() +
                                 ", schedule " + stored.at("loss").at("lambda_schedule").dump() + " -> " +
                                 now.at("loss").at("lambda_schedule").dump());
    }

    Rng rng;
    rng.setState(meta.at("rng_state").get<std::string>());
    runEpochs(cfg, ds, target, run, rng, options);
    finishRun(cfg, ds, run, rng, options);
    return run;
}

void loadModelCheckpoint(const std::string& path, Model& model) { restoreModel(loadCheckpoint(path), model); }

} // namespace dcolor
