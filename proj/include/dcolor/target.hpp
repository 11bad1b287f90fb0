#pragma once

#include "dcolor/correlation.hpp"
#include "dcolor/data.hpp"
#include "dcolor/nn.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dcolor {

enum class TargetSource : std::uint32_t { Vae = 0, Autoencoder = 1, Identity = 2, File = 3 };

const char* targetSourceName(TargetSource s);
TargetSource parseTargetSource(const std::string& name);

struct TargetProvenance {
    std::uint64_t vaeSpecDigest = 0;
    std::uint64_t datasetDigest = 0;
    std::size_t epochs = 0;
    std::uint64_t seed = 0;
    double betaKL = 0.0;
    std::size_t draws = 0;
    std::string variant;  // "cross" (VAE pair) or "auto" (single VAE)

    std::string toJson() const;
    static TargetProvenance fromJson(const std::string& text);
    bool complete() const { return vaeSpecDigest != 0 && datasetDigest != 0 && epochs > 0 && draws > 0; }
};

struct TargetArtifact {
    CorrelationMatrix E;
    TargetSource source = TargetSource::Identity;
    TargetProvenance provenance;

    std::size_t dim() const { return E.dim(); }
};

struct VaeTrainingOptions {
    std::size_t epochs = 20;
    std::size_t batchSize = 128;
    double learningRate = 1e-3;
    double betaKL = 1.0;
    // Plain autoencoder behaviour: latent = mean during training.
    bool deterministic = false;
};

struct TrainedVae {
    VAE net;
    ModelStore store;
    // Mean training loss per epoch.
    std::vector<double> epochLoss;
};

// Mean reconstruction MSE of `x` with deterministic latents.
double reconstructionError(const TrainedVae& vae, const Tensor& x);

// vae1 learns the first augmented view of every sample, vae2 the second.
// Independent initializations and optimizers, one shared batch schedule.
std::pair<TrainedVae, TrainedVae> trainVAEPair(const Dataset& ds, const AugmentationProtocol& protocol,
                                               const VAESpec& spec, const VaeTrainingOptions& options,
                                               std::uint64_t seed);

// Single VAE on first views, for the auto-correlation target.
TrainedVae trainSingleVAE(const Dataset& ds, const AugmentationProtocol& protocol, const VAESpec& spec,
                          const VaeTrainingOptions& options, std::uint64_t seed);

// Latent means of two views per sample (one fresh pair per draw), stacked over
// the whole dataset, column-normalized and cross-correlated. Multiple draws
// average the resulting matrices.
TargetArtifact computeTargetE(const TrainedVae& vae1, const TrainedVae& vae2, const Dataset& ds,
                              const AugmentationProtocol& protocol, std::uint64_t seed, std::size_t draws = 1);

// Auto-correlation of one VAE's latent means over first views.
TargetArtifact computeAutoTarget(const TrainedVae& vae, const Dataset& ds, const AugmentationProtocol& protocol,
                                 std::uint64_t seed, std::size_t draws = 1);

// Full pipeline: train the VAE pair (or a single VAE when autoKind) and
// compute E (or E'). The provenance record is filled in.
TargetArtifact computeTargetFromVAE(const Dataset& ds, const AugmentationProtocol& protocol, const VAESpec& spec,
                                    const VaeTrainingOptions& options, std::uint64_t seed, std::size_t draws = 1,
                                    bool autoKind = false);

// Same pipeline with plain autoencoders (betaKL = 0, deterministic latents).
TargetArtifact computeTargetFromAE(const Dataset& ds, const AugmentationProtocol& protocol, const VAESpec& spec,
                                   VaeTrainingOptions options, std::uint64_t seed, std::size_t draws = 1,
                                   bool autoKind = false);

std::uint64_t vaeSpecDigest(const VAESpec& spec, const VaeTrainingOptions& options);

TargetArtifact identityTarget(std::size_t d, CorrelationKind kind = CorrelationKind::Target);

// Binary target file; layout in docs/formats.md.
void saveTarget(const TargetArtifact& target, const std::string& path);
// With expectedDim, a dimension mismatch is a ConfigError naming both sizes.
TargetArtifact loadTarget(const std::string& path, std::optional<std::size_t> expectedDim = std::nullopt);

} // namespace dcolor
