#include "dcolor/commands.hpp"

#include "dcolor/config.hpp"
#include "dcolor/error.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dcolor {

namespace fs = std::filesystem;
using nlohmann::json;

std::string runPath(const ExperimentConfig& cfg, const std::string& file) {
    return (fs::path(cfg.outputDir) / file).string();
}

void writeManifest(const ExperimentConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.outputDir);
    const std::string path = runPath(cfg, kManifestFile);
    json manifest;
    if (fs::exists(path)) {
        try {
            std::ifstream in(path);
            manifest = json::parse(in);
        } catch (const json::exception&) {
            manifest = json::object();
        }
    }
    manifest["manifest_version"] = 1;
    manifest["config"] = json::parse(configToJson(cfg, -1));
    manifest["config_digest"] = configDigest(cfg);
    manifest["seed_derivation"] = "splitmix64(seed ^ fnv1a64(stage))";
    if (!manifest.contains("commands") || !manifest["commands"].is_array()) manifest["commands"] = json::array();
    manifest["commands"].push_back(command);
    std::ofstream(path) << manifest.dump(2) << '\n';
}

namespace {

std::string hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

// Target for pretrain/diagnose: identity needs no file; a configured file is
// read in place; VAE and autoencoder targets come from compute-target.
TargetArtifact requireTarget(const ExperimentConfig& cfg) {
    const std::size_t d = cfg.embeddingDim();
    if (cfg.target.source == TargetSource::Identity) {
        return identityTarget(d, cfg.variant() == LossVariant::Auto ? CorrelationKind::Auto : CorrelationKind::Target);
    }
    const std::string path = cfg.target.source == TargetSource::File ? cfg.target.path : runPath(cfg, kTargetFile);
    if (!fs::exists(path)) {
        throw PrerequisiteError("missing target file '" + path + "'; run `dcolor compute-target` first");
    }
    return loadTarget(path, d);
}

void requireCheckpoint(const ExperimentConfig& cfg) {
    const std::string path = runPath(cfg, kCheckpointFile);
    if (!fs::exists(path)) {
        throw PrerequisiteError("missing checkpoint '" + path + "'; run `dcolor pretrain` first");
    }
}

} // namespace

std::string commandComputeTarget(const ExperimentConfig& cfg) {
    const Dataset ds = loadDataset(cfg);
    const TargetArtifact t = buildTarget(cfg, ds);
    fs::create_directories(cfg.outputDir);
    saveTarget(t, runPath(cfg, kTargetFile));
    exportCorrelationCsv(t.E, runPath(cfg, "target.csv"));
    writeManifest(cfg, "compute-target");
    std::ostringstream os;
    os << "target " << targetSourceName(t.source) << " d=" << t.dim() << " kind=" << correlationKindName(t.E.kind)
       << " mean_offdiag=" << meanOffDiagonal(t.E.values) << " -> " << runPath(cfg, kTargetFile);
    return os.str();
}

std::string commandPretrain(const ExperimentConfig& cfg, bool resume) {
    const TargetArtifact target = requireTarget(cfg);
    const Dataset ds = loadDataset(cfg);
    fs::create_directories(cfg.outputDir);
    TrainOptions opts;
    opts.checkpointPath = runPath(cfg, kCheckpointFile);
    opts.dumpDir = cfg.outputDir;
    const std::string metrics = runPath(cfg, kMetricsFile);
    TrainingRun run;
    if (resume) {
        requireCheckpoint(cfg);
        run = resumeFrom(opts.checkpointPath, cfg, ds, target, opts);
    } else {
        fs::remove(metrics);
        run = pretrain(cfg, ds, target, opts);
    }
    appendMetricsCsv(metrics, run.metrics);
    writeManifest(cfg, resume ? "pretrain --resume" : "pretrain");
    std::ostringstream os;
    os << "pretrain " << lossVariantName(cfg.variant()) << " epochs " << run.startEpoch << ".." << run.epochsCompleted()
       << " config " << hex(run.configDigest);
    if (!run.metrics.empty()) {
        const auto& last = run.metrics.back();
        os << " loss=" << last.lossTotal << " variance=" << last.variance << " effective_rank=" << last.effectiveRank;
    }
    return os.str();
}

std::string commandEval(const ExperimentConfig& cfg, EvalResult* result) {
    requireCheckpoint(cfg);
    Model model = buildModel(cfg);
    loadModelCheckpoint(runPath(cfg, kCheckpointFile), model);
    Dataset ds;
    if (cfg.eval.transfer) {
        SparseDenseSpec spec = *cfg.eval.transfer;
        spec.seed = deriveSeed(cfg.seed, "transfer");
        ds = generateSparseDense(spec);
    } else {
        ds = loadDataset(cfg);
    }
    const EvalResult r = linearEval(model, ds, cfg.eval, deriveSeed(cfg.seed, "probe"), configDigest(cfg));
    std::ofstream out(runPath(cfg, kEvalFile));
    out << std::setprecision(17) << "accuracy,probe_epochs,train_size,test_size,probe_parameters,config_digest,probe_seed\n"
        << r.accuracy << ',' << r.epochs << ',' << r.trainSize << ',' << r.testSize << ',' << r.probeParameters << ','
        << hex(r.configDigest) << ',' << r.probeSeed << '\n';
    writeManifest(cfg, "eval");
    if (result) *result = r;
    std::ostringstream os;
    os << "eval accuracy=" << r.accuracy << " (" << r.testSize << " held out, " << r.epochs << " probe epochs)";
    return os.str();
}

std::string commandDiagnose(const ExperimentConfig& cfg, bool svg) {
    requireCheckpoint(cfg);
    Model model = buildModel(cfg);
    const Dataset ds = loadDataset(cfg);
    loadModelCheckpoint(runPath(cfg, kCheckpointFile), model);
    const auto seed = deriveSeed(cfg.seed, "diagnostics");
    auto [v1, v2] = embedViews(model, ds, cfg.augment, cfg.diagnosticSamples, seed);

    std::size_t epoch = 0;
    std::vector<EpochMetrics> rows;
    if (fs::exists(runPath(cfg, kMetricsFile))) {
        rows = readMetricsCsv(runPath(cfg, kMetricsFile));
        if (!rows.empty()) epoch = rows.back().epoch;
    }
    DiagnosticsReport rep = diagnose(v1, v2, epoch);
    const Tensor W = cfg.variant() == LossVariant::Auto
                         ? autoCorrelation(normalizeColumns(v1)).values
                         : crossCorrelation(normalizeColumns(v1), normalizeColumns(v2)).values;
    rep.lossW = whiteningLoss(W, cfg.loss.alpha);
    if (cfg.target.source == TargetSource::Identity || fs::exists(runPath(cfg, kTargetFile)) ||
        cfg.target.source == TargetSource::File) {
        // Coloring-head outputs of the same views.
        Rng rng(seed);
        const std::size_t count = std::min(cfg.diagnosticSamples, ds.size());
        Tensor x1({count, ds.dim}), x2({count, ds.dim});
        for (std::size_t i = 0; i < count; ++i) {
            auto [a, b] = augmentPair(ds, i, cfg.augment, rng);
            std::copy(a.begin(), a.end(), x1.data() + i * ds.dim);
            std::copy(b.begin(), b.end(), x2.data() + i * ds.dim);
        }
        ModelStore store = model.store;
        Graph g;
        Var c1 = model.coloring[0].forward(g, store, model.backbone.forward(g, store, g.input("x1", x1), false).tap, false);
        Var c2 = model.coloring[1].forward(g, store, model.backbone.forward(g, store, g.input("x2", x2), false).tap, false);
        const Tensor C = cfg.variant() == LossVariant::Auto
                             ? autoCorrelation(normalizeColumns(g.value(c1))).values
                             : crossCorrelation(normalizeColumns(g.value(c1)), normalizeColumns(g.value(c2))).values;
        rep.lossC = coloringLoss(C, requireTarget(cfg).E.values);
    }
    rep.lossTotal = totalLoss(rep.lossW, rep.lossC, cfg.loss.lambda);
    writeDiagnosticsCsv(runPath(cfg, kDiagnosticsFile), rep);
    if (svg) {
        if (rows.empty()) {
            throw PrerequisiteError("missing metrics '" + runPath(cfg, kMetricsFile) + "'; run `dcolor pretrain` first");
        }
        writeMetricsSvg(runPath(cfg, kDiagnosticsSvg), rows);
    }
    writeManifest(cfg, svg ? "diagnose --svg" : "diagnose");
    std::ostringstream os;
    os << "diagnose variance=" << rep.embeddingVariance << " effective_rank=" << rep.effectiveRank
       << " alignment=" << rep.alignment << " -> " << runPath(cfg, kDiagnosticsFile);
    return os.str();
}

std::string commandSweep(const ExperimentConfig& cfg, const std::string& axis, const std::vector<std::string>& values) {
    const SweepAxis a = parseSweepAxis(axis);
    fs::create_directories(cfg.outputDir);
    writeManifest(cfg, "sweep --axis " + axis);
    const auto rows = ablationSweep(cfg, a, values, runPath(cfg, kSweepFile), runPath(cfg, "sweep"));
    std::ostringstream os;
    os << "sweep " << axis << ':';
    for (const auto& r : rows) {
        os << ' ' << r.value << '=';
        if (r.ok) {
            os << r.accuracy;
        } else {
            os << "failed";
        }
    }
    return os.str();
}

} // namespace dcolor
