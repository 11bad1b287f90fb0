#pragma once

#include "dcolor/correlation.hpp"
#include "dcolor/data.hpp"
#include "dcolor/diagnostics.hpp"
#include "dcolor/nn.hpp"
#include "dcolor/optim.hpp"
#include "dcolor/target.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dcolor {

struct DatasetConfig {
    // "synthetic" or "image".
    std::string kind = "synthetic";
    SparseDenseSpec synthetic;
    std::string imagePath;
    std::string labelPath;
};

struct TargetConfig {
    TargetSource source = TargetSource::Vae;
    // Only read when source == File.
    std::string path;
    std::size_t vaeEpochs = 20;
    std::size_t vaeBatchSize = 128;
    double vaeLearningRate = 1e-3;
    double betaKL = 1.0;
    std::size_t draws = 1;
};

struct EvalConfig {
    std::size_t probeEpochs = 100;
    double trainFraction = 0.8;
    double learningRate = 1e-3;
    double finalLearningRate = 1e-6;
    std::size_t batchSize = 128;
    // Probe on a different synthetic spec than pretraining.
    std::optional<SparseDenseSpec> transfer;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string outputDir = "runs/default";
    DatasetConfig dataset;
    AugmentationProtocol augment;
    EncoderSpec encoder;
    // inputDim of both heads follows the encoder (tap width, final width).
    ProjectorSpec coloringHead;
    ProjectorSpec whiteningHead;
    // One head pair applied to both views; false gives each view its own.
    bool shareHeads = true;
    LossConfig loss;
    TargetConfig target;
    AdamOptions optim{3e-3, 0.9, 0.999, 1e-8, 5e-6};
    std::size_t batchSize = 128;
    std::size_t epochs = 200;
    std::size_t diagnosticSamples = 512;
    EvalConfig eval;

    LossVariant variant() const { return loss.variant; }
    std::size_t embeddingDim() const { return coloringHead.widths.empty() ? 0 : coloringHead.widths.back(); }
    // Fills derived fields (head input widths).
    void resolve();
    void validate() const;
};

// Synthetic data seeded from the config seed, or the configured image set.
Dataset loadDataset(const ExperimentConfig& cfg);

// Target selected by cfg.target for the configured variant and d.
TargetArtifact buildTarget(const ExperimentConfig& cfg, const Dataset& ds);

// Backbone and projector heads with their parameters.
struct Model {
    Backbone backbone;
    Projector coloring[2];
    Projector whitening[2];
    ModelStore store;

    bool shared() const { return coloring[1].prefix() == coloring[0].prefix(); }
};

Model buildModel(const ExperimentConfig& cfg);

struct TrainingRun {
    std::uint64_t configDigest = 0;
    std::size_t startEpoch = 0;
    // One row per epoch completed by this call.
    std::vector<EpochMetrics> metrics;
    // Mean |W_ij| off the diagonal per epoch (diagnostic sample).
    std::vector<double> offDiagonal;
    // Multiply-accumulates in the correlation and loss stage of one step.
    std::uint64_t correlationMacsPerStep = 0;
    std::string checkpointPath;
    std::vector<std::string> provenance;

    Model model;
    AdamState adam;
    std::string rngState;

    std::size_t epochsCompleted() const { return startEpoch + metrics.size(); }
};

struct TrainOptions {
    // Written after the final epoch when non-empty.
    std::string checkpointPath;
    // Receives a collapse dump on abort when non-empty.
    std::string dumpDir;
};

TrainingRun pretrainCross(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                          const TrainOptions& options = {});
TrainingRun pretrainAuto(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                         const TrainOptions& options = {});
// Dispatches on cfg.variant().
TrainingRun pretrain(const ExperimentConfig& cfg, const Dataset& ds, const TargetArtifact& target,
                     const TrainOptions& options = {});
// Continues from a checkpoint up to cfg.epochs.
TrainingRun resumeFrom(const std::string& checkpointPath, const ExperimentConfig& cfg, const Dataset& ds,
                       const TargetArtifact& target, const TrainOptions& options = {});

// Checkpoint round trip of a model (parameters and running statistics only).
void loadModelCheckpoint(const std::string& path, Model& model);

// Whitening-head embeddings of both views of the first `count` samples, in
// inference mode, with augmentations drawn from `seed`.
std::pair<Tensor, Tensor> embedViews(const Model& model, const Dataset& ds, const AugmentationProtocol& protocol,
                                     std::size_t count, std::uint64_t seed);

} // namespace dcolor
