#pragma once

#include "dcolor/training.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dcolor {

struct EvalResult {
    double accuracy = 0.0;
    std::size_t epochs = 0;
    std::uint64_t configDigest = 0;
    std::uint64_t probeSeed = 0;
    std::size_t trainSize = 0;
    std::size_t testSize = 0;
    std::size_t probeParameters = 0;
};

// Final backbone outputs (heads removed) in inference mode.
Tensor encodeFeatures(const Model& model, const Dataset& ds);

// One affine layer + softmax trained with cross-entropy on the train split of
// `features`, accuracy measured on the held-out rest. Adam with a learning
// rate decayed exponentially from options.learningRate to
// options.finalLearningRate. Features are standardized with train-split
// statistics. The split is stratified by class.
EvalResult trainProbe(const Tensor& features, std::span<const int> labels, std::size_t numClasses,
                      const EvalConfig& options, std::uint64_t seed);

// Frozen-encoder evaluation of `model` on a labeled dataset.
EvalResult linearEval(const Model& model, const Dataset& ds, const EvalConfig& options, std::uint64_t seed,
                      std::uint64_t configDigest = 0);

struct ExperimentResult {
    TrainingRun run;
    EvalResult eval;
    TargetArtifact target;
};

// Dataset, target, pretraining and linear evaluation for one config. The
// probe runs on eval.transfer data when configured.
ExperimentResult runExperiment(const ExperimentConfig& cfg, const Dataset& ds, const TrainOptions& options = {});

enum class SweepAxis { Lambda, ProjectorDim, TapIndex, TargetSource };

SweepAxis parseSweepAxis(const std::string& name);
const char* sweepAxisName(SweepAxis axis);

// Copy of `base` with one axis set to `value`.
ExperimentConfig applySweepValue(const ExperimentConfig& base, SweepAxis axis, const std::string& value);

struct SweepRow {
    std::string value;
    bool ok = false;
    std::string error;
    double accuracy = 0.0;
    double finalVariance = 0.0;
    double finalLossC = 0.0;
    std::uint64_t configDigest = 0;
};

// One pretrain + eval per value. Failed runs become rows with ok = false and
// the sweep continues. Writes `csvPath` when non-empty; per-run outputs go to
// <runDir>/<axis>=<value>/ when runDir is non-empty.
std::vector<SweepRow> ablationSweep(const ExperimentConfig& base, SweepAxis axis,
                                    const std::vector<std::string>& values, const std::string& csvPath = {},
                                    const std::string& runDir = {});

void writeSweepCsv(const std::string& path, SweepAxis axis, const std::vector<SweepRow>& rows);

} // namespace dcolor
