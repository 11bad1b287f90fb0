#include "dcolor/error.hpp"
#include "dcolor/training.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace dcolor;
using testutil::maxAbsDiff;

namespace {

ExperimentConfig smallConfig(std::size_t samples = 64, std::size_t epochs = 2) {
    ExperimentConfig cfg;
    cfg.seed = 17;
    cfg.dataset.synthetic.samples = samples;
    cfg.dataset.synthetic.denseDim = 12;
    cfg.augment.denseNoise = 0.5;
    cfg.augment.denseDropout = 0.2;
    cfg.augment.scaleMin = 0.8;
    cfg.augment.scaleMax = 1.2;
    cfg.encoder.widths = {16, 24, 24, 12};
    cfg.encoder.tap = 2;
    cfg.coloringHead.widths = {16, 16, 8};
    cfg.whiteningHead.widths = {16, 16, 8};
    cfg.target.source = TargetSource::Identity;
    cfg.batchSize = 16;
    cfg.epochs = epochs;
    cfg.diagnosticSamples = 32;
    cfg.resolve();
    return cfg;
}

bool sameMetrics(const std::vector<EpochMetrics>& a, const std::vector<EpochMetrics>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].epoch != b[i].epoch || a[i].lambda != b[i].lambda || a[i].lossTotal != b[i].lossTotal ||
            a[i].lossW != b[i].lossW || a[i].lossC != b[i].lossC || a[i].variance != b[i].variance ||
            a[i].effectiveRank != b[i].effectiveRank || a[i].alignment != b[i].alignment)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("config validation") {
    auto cfg = smallConfig();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.batchSize = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.encoder.widths[0] = 20;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.whiteningHead.widths.back() = 6;
    bad.resolve();
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    const Dataset ds = loadDataset(cfg);
    auto wrong = identityTarget(5);
    CHECK_THROWS_AS(pretrain(cfg, ds, wrong), ConfigError);
}

TEST_CASE("cross pretraining is deterministic") {
    const auto cfg = smallConfig();
    const Dataset ds = loadDataset(cfg);
    const auto target = buildTarget(cfg, ds);
    const auto a = pretrainCross(cfg, ds, target);
    const auto b = pretrainCross(cfg, ds, target);
    REQUIRE(a.metrics.size() == 2);
    CHECK(a.epochsCompleted() == 2);
    CHECK(sameMetrics(a.metrics, b.metrics));
    for (const auto& [name, p] : a.model.store.params) CHECK(maxAbsDiff(p.value, b.model.store.params.get(name).value) == 0.0);
    for (const auto& m : a.metrics) CHECK(m.lambda == 0.05);

    auto other = cfg;
    other.seed = 18;
    CHECK_FALSE(sameMetrics(a.metrics, pretrainCross(other, ds, target).metrics));
}

TEST_CASE("split run equals a straight run") {
    const auto dir = testutil::scratchDir("resume");
    auto cfg = smallConfig(64, 4);
    const Dataset ds = loadDataset(cfg);
    const auto target = buildTarget(cfg, ds);
    const auto straight = pretrain(cfg, ds, target);

    auto first = cfg;
    first.epochs = 2;
    TrainOptions opts;
    opts.checkpointPath = dir + "/ckpt.bin";
    const auto head = pretrain(first, ds, target, opts);
    CHECK(std::filesystem::exists(opts.checkpointPath));
    TrainOptions next;
    next.checkpointPath = dir + "/ckpt2.bin";
    const auto tail = resumeFrom(opts.checkpointPath, cfg, ds, target, next);
    CHECK(tail.startEpoch == 2);
    CHECK(tail.epochsCompleted() == 4);

    std::vector<EpochMetrics> joined = head.metrics;
    joined.insert(joined.end(), tail.metrics.begin(), tail.metrics.end());
    CHECK(sameMetrics(joined, straight.metrics));
    for (const auto& [name, p] : straight.model.store.params)
        CHECK(maxAbsDiff(p.value, tail.model.store.params.get(name).value) == 0.0);
}

TEST_CASE("resume accepts a new lambda and rejects a new shape") {
    const auto dir = testutil::scratchDir("resume2");
    auto cfg = smallConfig(64, 1);
    const Dataset ds = loadDataset(cfg);
    const auto target = buildTarget(cfg, ds);
    TrainOptions opts;
    opts.checkpointPath = dir + "/ckpt.bin";
    pretrain(cfg, ds, target, opts);

    auto more = cfg;
    more.epochs = 2;
    more.loss.lambda = 0.1;
    const auto resumed = resumeFrom(opts.checkpointPath, more, ds, target);
    REQUIRE(resumed.provenance.size() == 1);
    CHECK(resumed.provenance[0].find("lambda") != std::string::npos);
    CHECK(resumed.metrics.at(0).lambda == 0.1);

    auto wider = more;
    wider.coloringHead.widths = {16, 16, 10};
    wider.whiteningHead.widths = {16, 16, 10};
    wider.resolve();
    CHECK_THROWS_AS(resumeFrom(opts.checkpointPath, wider, ds, identityTarget(10)), ConfigError);

    auto autoCfg = more;
    autoCfg.loss.variant = LossVariant::Auto;
    CHECK_THROWS_AS(resumeFrom(opts.checkpointPath, autoCfg, ds, identityTarget(8, CorrelationKind::Auto)),
                    ConfigError);
}

TEST_CASE("lambda zero holds the coloring head fixed") {
    const auto dir = testutil::scratchDir("lambda0");
    auto cfg = smallConfig(64, 2);
    cfg.loss.lambda = 0.0;
    const Dataset ds = loadDataset(cfg);
    const auto target = buildTarget(cfg, ds);
    const Model init = buildModel(cfg);
    TrainOptions opts;
    opts.checkpointPath = dir + "/ckpt.bin";
    const auto run = pretrain(cfg, ds, target, opts);
    for (const auto& [name, p] : run.model.store.params) {
        const double moved = maxAbsDiff(p.value, init.store.params.get(name).value);
        if (name.starts_with("color.")) {
            CHECK_MESSAGE(moved == 0.0, name);
        } else if (name.starts_with("white.")) {
            CHECK_MESSAGE(moved > 0.0, name);
        }
    }
    auto more = cfg;
    more.epochs = 3;
    more.loss.lambda = 0.05;
    const auto resumed = resumeFrom(opts.checkpointPath, more, ds, target);
    CHECK(resumed.epochsCompleted() == 3);
    CHECK(maxAbsDiff(resumed.model.store.params.get("color.l1.weight").value,
                     init.store.params.get("color.l1.weight").value) > 0.0);
}

TEST_CASE("auto variant costs fewer correlation MACs") {
    auto cross = smallConfig();
    auto autoCfg = cross;
    autoCfg.loss.variant = LossVariant::Auto;
    const Dataset ds = loadDataset(cross);
    const auto rc = pretrain(cross, ds, buildTarget(cross, ds));
    const auto ra = pretrain(autoCfg, ds, buildTarget(autoCfg, ds));
    MESSAGE("cross " << rc.correlationMacsPerStep << " auto " << ra.correlationMacsPerStep);
    CHECK(ra.correlationMacsPerStep > 0);
    CHECK(ra.correlationMacsPerStep < rc.correlationMacsPerStep);
    CHECK(ra.model.shared());

    // C' is built from normalized head outputs, so its diagonal is one.
    ModelStore store = ra.model.store;
    Graph g;
    std::vector<std::size_t> idx(16);
    std::iota(idx.begin(), idx.end(), 0);
    Var c = ra.model.coloring[0].forward(g, store, ra.model.backbone.forward(g, store, g.input("x", ds.rows(idx)), true).tap,
                                         true);
    const Tensor C = g.value(autoCorrelation(g, normalizeColumns(g, c)));
    for (std::size_t i = 0; i < C.rows(); ++i) CHECK(std::abs(C.at(i, i) - 1.0) < 1e-12);

    const auto again = pretrain(autoCfg, ds, buildTarget(autoCfg, ds));
    CHECK(sameMetrics(ra.metrics, again.metrics));
}

TEST_CASE("the target steers the loss but is never updated") {
    const auto cfg = smallConfig(64, 1);
    const Dataset ds = loadDataset(cfg);
    const auto eye = buildTarget(cfg, ds);
    auto tilted = eye;
    for (std::size_t i = 0; i + 1 < tilted.dim(); ++i) {
        tilted.E.values.at(i, i + 1) = 0.5;
        tilted.E.values.at(i + 1, i) = 0.5;
    }
    const Tensor before = tilted.E.values;
    const auto a = pretrain(cfg, ds, eye);
    const auto b = pretrain(cfg, ds, tilted);
    CHECK(a.metrics[0].lossC != b.metrics[0].lossC);
    CHECK(maxAbsDiff(tilted.E.values, before) == 0.0);
}

TEST_CASE("unshared heads own separate parameters") {
    auto cfg = smallConfig(64, 1);
    cfg.shareHeads = false;
    const Model m = buildModel(cfg);
    CHECK_FALSE(m.shared());
    CHECK(m.store.params.contains("color2.l1.weight"));
    const Dataset ds = loadDataset(cfg);
    CHECK(pretrain(cfg, ds, buildTarget(cfg, ds)).metrics.size() == 1);
}

TEST_CASE("whitening and coloring make progress") {
    // With alpha = 0.01 and d = 8 the invariance term dominates and the
    // off-diagonal mean grows; the redundancy term needs full weight here.
    auto cfg = smallConfig(256, 30);
    cfg.loss.alpha = 1.0;
    cfg.batchSize = 64;
    cfg.diagnosticSamples = 128;
    const Dataset ds = loadDataset(cfg);
    auto target = buildTarget(cfg, ds);
    const auto run = pretrain(cfg, ds, target);
    MESSAGE("offdiag " << run.offDiagonal.front() << " -> " << run.offDiagonal.back() << ", loss_c "
                       << run.metrics.front().lossC << " -> " << run.metrics.back().lossC);
    CHECK(run.offDiagonal.back() < run.offDiagonal.front());
    CHECK(run.metrics.back().lossC < run.metrics.front().lossC);
    CHECK(run.metrics.back().lossW < run.metrics.front().lossW);
}

TEST_CASE("complete collapse aborts with a dump") {
    const auto dir = testutil::scratchDir("collapse");
    auto cfg = smallConfig(64, 1);
    cfg.augment = AugmentationProtocol{};
    Dataset ds = loadDataset(cfg);
    std::fill(ds.features.begin(), ds.features.end(), 0.5);
    TrainOptions opts;
    opts.dumpDir = dir;
    try {
        pretrain(cfg, ds, buildTarget(cfg, ds), opts);
        FAIL("expected a collapse");
    } catch (const CollapseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 0") != std::string::npos);
        CHECK(msg.find("batch 0") != std::string::npos);
    }
    REQUIRE(std::filesystem::exists(dir + "/collapse_dump.json"));
    std::stringstream dump;
    dump << std::ifstream(dir + "/collapse_dump.json").rdbuf();
    CHECK(dump.str().find("\"column\"") != std::string::npos);
}

TEST_CASE("too few samples for one batch") {
    auto cfg = smallConfig(8, 1);
    const Dataset ds = loadDataset(cfg);
    CHECK_THROWS_AS(pretrain(cfg, ds, buildTarget(cfg, ds)), ConfigError);
}
