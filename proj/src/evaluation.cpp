#include "dcolor/evaluation.hpp"

#include "dcolor/config.hpp"
#include "dcolor/error.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace dcolor {

Tensor encodeFeatures(const Model& model, const Dataset& ds) {
    if (ds.size() == 0) throw ConfigError("cannot encode an empty dataset");
    ModelStore store = model.store;
    Graph g;
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    Var x = g.input("x", ds.rows(all));
    return g.value(model.backbone.forward(g, store, x, false).final);
}

namespace {

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
    return p;
}

Tensor gatherRows(const Tensor& x, std::span<const std::size_t> idx) {
    const std::size_t d = x.cols();
    Tensor out({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy(x.data() + idx[r] * d, x.data() + (idx[r] + 1) * d, out.data() + r * d);
    }
    return out;
}

} // namespace

EvalResult trainProbe(const Tensor& features, std::span<const int> labels, std::size_t numClasses,
                      const EvalConfig& options, std::uint64_t seed) {
    const std::size_t n = features.rows();
    const std::size_t d = features.cols();
    if (labels.empty()) throw ConfigError("linear evaluation needs labels; the dataset has none");
    if (labels.size() != n) {
        throw ConfigError("label count " + std::to_string(labels.size()) + " does not match sample count " +
                          std::to_string(n));
    }
    if (numClasses < 2) throw ConfigError("linear evaluation needs at least 2 classes");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= numClasses) {
            throw ConfigError("label " + std::to_string(y) + " outside [0, " + std::to_string(numClasses) + ")");
        }
    }
    if (!(options.trainFraction > 0.0 && options.trainFraction < 1.0)) {
        throw ConfigError("train fraction must lie in (0, 1)");
    }
    if (options.probeEpochs == 0 || options.batchSize == 0) {
        throw ConfigError("probe epochs and batch size must be positive");
    }
    // Stratified split: each class contributes floor(fraction * count) rows.
    Rng splitRng(deriveSeed(seed, "split"));
    std::vector<std::vector<std::size_t>> byClass(numClasses);
    for (std::size_t i : permutation(n, splitRng)) byClass[static_cast<std::size_t>(labels[i])].push_back(i);
    std::vector<std::size_t> perm;
    std::vector<std::size_t> held;
    for (const auto& members : byClass) {
        const auto take = static_cast<std::size_t>(std::floor(options.trainFraction * static_cast<double>(members.size())));
        perm.insert(perm.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
        held.insert(held.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
    }
    const std::size_t ntrain = perm.size();
    if (ntrain == 0 || held.empty()) {
        throw ConfigError("train fraction " + std::to_string(options.trainFraction) + " leaves an empty split of " +
                          std::to_string(n) + " samples");
    }
    perm.insert(perm.end(), held.begin(), held.end());
    const std::span<const std::size_t> trainIdx(perm.data(), ntrain);
    const std::span<const std::size_t> testIdx(perm.data() + ntrain, n - ntrain);

    Tensor train = gatherRows(features, trainIdx);
    Tensor test = gatherRows(features, testIdx);
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t r = 0; r < ntrain; ++r) mean += train.at(r, j);
        mean /= static_cast<double>(ntrain);
        double var = 0.0;
        for (std::size_t r = 0; r < ntrain; ++r) var += (train.at(r, j) - mean) * (train.at(r, j) - mean);
        double sd = std::sqrt(var / static_cast<double>(ntrain));
        if (!(sd > 1e-12)) sd = 1.0;
        for (std::size_t r = 0; r < train.rows(); ++r) train.at(r, j) = (train.at(r, j) - mean) / sd;
        for (std::size_t r = 0; r < test.rows(); ++r) test.at(r, j) = (test.at(r, j) - mean) / sd;
    }
    std::vector<int> trainLabels(ntrain);
    for (std::size_t r = 0; r < ntrain; ++r) trainLabels[r] = labels[trainIdx[r]];

    ParameterSet probe;
    probe.add("probe.weight", Tensor({d, numClasses}));
    probe.add("probe.bias", Tensor({numClasses}));
    AdamState adam;
    adam.options.learningRate = options.learningRate;

    Rng order(deriveSeed(seed, "order"));
    const double ratio = options.finalLearningRate / options.learningRate;
    for (std::size_t epoch = 0; epoch < options.probeEpochs; ++epoch) {
        const double t =
            options.probeEpochs > 1 ? static_cast<double>(epoch) / static_cast<double>(options.probeEpochs - 1) : 0.0;
        adam.options.learningRate = options.learningRate * std::pow(ratio, t);
        const auto batchOrder = permutation(ntrain, order);
        for (std::size_t start = 0; start < ntrain; start += options.batchSize) {
            const std::size_t end = std::min(ntrain, start + options.batchSize);
            std::span<const std::size_t> idx(batchOrder.data() + start, end - start);
            std::vector<int> y(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) y[r] = trainLabels[idx[r]];
            Graph g;
            Var x = g.input("x", gatherRows(train, idx));
            Var logits = g.addRow(g.matmul(x, g.param(probe.get("probe.weight"))), g.param(probe.get("probe.bias")));
            Var loss = g.softmaxCrossEntropy(logits, y);
            probe.zeroGrad();
            g.backward(loss);
            adamStep(probe, adam);
        }
    }

    const Tensor& w = probe.get("probe.weight").value;
    const Tensor& b = probe.get("probe.bias").value;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < test.rows(); ++r) {
        std::size_t best = 0;
        double bestScore = -INFINITY;
        for (std::size_t k = 0; k < numClasses; ++k) {
            double s = b[k];
            for (std::size_t j = 0; j < d; ++j) s += test.at(r, j) * w.at(j, k);
            if (s > bestScore) {
                bestScore = s;
                best = k;
            }
        }
        if (static_cast<int>(best) == labels[testIdx[r]]) ++correct;
    }

    EvalResult res;
    res.accuracy = static_cast<double>(correct) / static_cast<double>(test.rows());
    res.epochs = options.probeEpochs;
    res.probeSeed = seed;
    res.trainSize = ntrain;
    res.testSize = n - ntrain;
    res.probeParameters = probe.count();
    return res;
}

EvalResult linearEval(const Model& model, const Dataset& ds, const EvalConfig& options, std::uint64_t seed,
                      std::uint64_t configDigest) {
    if (ds.dim != model.backbone.spec().widths.front()) {
        throw ConfigError("dataset sample dimension " + std::to_string(ds.dim) +
                          " does not match the encoder input width " +
                          std::to_string(model.backbone.spec().widths.front()));
    }
    if (ds.labels.empty()) throw ConfigError("linear evaluation needs labels; the dataset has none");
    EvalResult r = trainProbe(encodeFeatures(model, ds), ds.labels, ds.numClasses, options, seed);
    r.configDigest = configDigest;
    return r;
}

ExperimentResult runExperiment(const ExperimentConfig& cfg, const Dataset& ds, const TrainOptions& options) {
    ExperimentResult out;
    out.target = buildTarget(cfg, ds);
    out.run = pretrain(cfg, ds, out.target, options);
    const auto probeSeed = deriveSeed(cfg.seed, "probe");
    if (cfg.eval.transfer) {
        SparseDenseSpec spec = *cfg.eval.transfer;
        spec.seed = deriveSeed(cfg.seed, "transfer");
        out.eval = linearEval(out.run.model, generateSparseDense(spec), cfg.eval, probeSeed, out.run.configDigest);
    } else {
        out.eval = linearEval(out.run.model, ds, cfg.eval, probeSeed, out.run.configDigest);
    }
    return out;
}

// ---------------------------------------------------------------------------

SweepAxis parseSweepAxis(const std::string& name) {
    if (name == "lambda") return SweepAxis::Lambda;
    if (name == "projector_dim" || name == "projectorDim") return SweepAxis::ProjectorDim;
    if (name == "tap_index" || name == "tapIndex") return SweepAxis::TapIndex;
    if (name == "target_source" || name == "targetSource") return SweepAxis::TargetSource;
    throw ConfigError("unknown sweep axis '" + name + "' (expected lambda, projector_dim, tap_index or target_source)");
}

const char* sweepAxisName(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::Lambda: return "lambda";
    case SweepAxis::ProjectorDim: return "projector_dim";
    case SweepAxis::TapIndex: return "tap_index";
    case SweepAxis::TargetSource: return "target_source";
    }
    return "unknown";
}

namespace {

double parseNumber(const std::string& s, SweepAxis axis) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigError(std::string("sweep value '") + s + "' is not a number for axis " + sweepAxisName(axis));
    }
    return v;
}

std::size_t parseCount(const std::string& s, SweepAxis axis) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || v == 0) {
        throw ConfigError(std::string("sweep value '") + s + "' is not a positive integer for axis " +
                          sweepAxisName(axis));
    }
    return v;
}

} // namespace

ExperimentConfig applySweepValue(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
    ExperimentConfig cfg = base;
    switch (axis) {
    case SweepAxis::Lambda:
        cfg.loss.lambda = parseNumber(value, axis);
        cfg.loss.useSchedule = false;
        cfg.loss.schedule.clear();
        break;
    case SweepAxis::ProjectorDim: {
        const std::size_t d = parseCount(value, axis);
        cfg.coloringHead.widths.assign(3, d);
        cfg.whiteningHead.widths.assign(3, d);
        break;
    }
    case SweepAxis::TapIndex:
        cfg.encoder.tap = parseCount(value, axis);
        if (cfg.encoder.tap == cfg.encoder.layers()) cfg.encoder.allowFinalTap = true;
        break;
    case SweepAxis::TargetSource:
        cfg.target.source = parseTargetSource(value);
        break;
    }
    cfg.resolve();
    cfg.validate();
    return cfg;
}

void writeSweepCsv(const std::string& path, SweepAxis axis, const std::vector<SweepRow>& rows) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << std::setprecision(17);
    out << sweepAxisName(axis) << ",status,accuracy,final_variance,final_loss_c,config_digest,error\n";
    for (const auto& r : rows) {
        std::string err = r.error;
        for (auto& ch : err) {
            if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
        }
        out << r.value << ',' << (r.ok ? "ok" : "failed") << ',';
        if (r.ok) {
            out << r.accuracy << ',' << r.finalVariance << ',' << r.finalLossC << ',' << r.configDigest;
        } else {
            out << ",,,";
        }
        out << ',' << err << '\n';
    }
}

std::vector<SweepRow> ablationSweep(const ExperimentConfig& base, SweepAxis axis,
                                    const std::vector<std::string>& values, const std::string& csvPath,
                                    const std::string& runDir) {
    if (values.empty()) throw ConfigError(std::string("sweep over ") + sweepAxisName(axis) + " has no values");
    std::vector<ExperimentConfig> configs;
    for (const auto& v : values) configs.push_back(applySweepValue(base, axis, v));

    const Dataset ds = loadDataset(base);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < values.size(); ++i) {
        SweepRow row;
        row.value = values[i];
        TrainOptions opts;
        if (!runDir.empty()) {
            const auto dir = std::filesystem::path(runDir) / (std::string(sweepAxisName(axis)) + "=" + values[i]);
            opts.checkpointPath = (dir / "checkpoint.bin").string();
            opts.dumpDir = dir.string();
        }
        try {
            ExperimentResult res = runExperiment(configs[i], ds, opts);
            row.ok = true;
            row.accuracy = res.eval.accuracy;
            row.configDigest = res.run.configDigest;
            if (!res.run.metrics.empty()) {
                row.finalVariance = res.run.metrics.back().variance;
                row.finalLossC = res.run.metrics.back().lossC;
            }
            if (!opts.dumpDir.empty()) {
                const auto metricsPath = (std::filesystem::path(opts.dumpDir) / "metrics.csv").string();
                std::filesystem::remove(metricsPath);
                appendMetricsCsv(metricsPath, res.run.metrics);
            }
        } catch (const Error& e) {
            row.ok = false;
            row.error = e.what();
        }
        rows.push_back(row);
        if (!csvPath.empty()) writeSweepCsv(csvPath, axis, rows);
    }
    return rows;
}

} // namespace dcolor
