#pragma once

#include "dcolor/graph.hpp"
#include "dcolor/rng.hpp"

#include <map>
#include <string>
#include <vector>

namespace dcolor {

// Parameters and batch-norm running statistics of one or more networks.
// Networks below are stateless descriptors that read and register their
// tensors here under a name prefix, so a store copies like a value.
struct ModelStore {
    ParameterSet params;
    std::map<std::string, BatchNormStats> stats;
};

struct EncoderSpec {
    // widths[0] is the input dimension; one linear+BN+ReLU block per step.
    std::vector<std::size_t> widths;
    bool batchNorm = true;
    // Index of the block whose output feeds the coloring head.
    std::size_t tap = 1;
    // Permit tap == final block (coloring next to whitening).
    bool allowFinalTap = false;

    std::size_t layers() const { return widths.empty() ? 0 : widths.size() - 1; }
    std::size_t tapWidth() const { return widths.at(tap); }
    std::size_t outputWidth() const { return widths.back(); }
    void validate() const;
};

struct ProjectorSpec {
    std::size_t inputDim = 0;
    // Exactly three linear layers; the last entry is the embedding size d.
    std::vector<std::size_t> widths;
    bool batchNorm = true;

    std::size_t outputDim() const { return widths.back(); }
    void validate() const;
};

struct VAESpec {
    // Input dimension followed by hidden widths (mirrors the backbone up to
    // its tap block).
    std::vector<std::size_t> encoderWidths;
    std::size_t latentDim = 0;

    std::size_t inputDim() const { return encoderWidths.front(); }
    void validate() const;
    static VAESpec fromEncoder(const EncoderSpec& encoder, std::size_t latentDim);
};

class Backbone {
public:
    struct Outputs {
        Var tap;
        Var final;
    };

    Backbone() = default;
    Backbone(EncoderSpec spec, std::string prefix);

    void init(ModelStore& store, Rng& rng) const;
    Outputs forward(Graph& g, ModelStore& store, Var x, bool training) const;
    // Output of the first `blocks` blocks only.
    Var forwardBlocks(Graph& g, ModelStore& store, Var x, std::size_t blocks, bool training) const;

    const EncoderSpec& spec() const { return spec_; }
    const std::string& prefix() const { return prefix_; }
    std::size_t parameterCount() const;

private:
    EncoderSpec spec_;
    std::string prefix_;
};

class Projector {
public:
    Projector() = default;
    Projector(ProjectorSpec spec, std::string prefix);

    void init(ModelStore& store, Rng& rng) const;
    // Raw (un-normalized) batch x d embeddings.
    Var forward(Graph& g, ModelStore& store, Var x, bool training) const;

    const ProjectorSpec& spec() const { return spec_; }
    const std::string& prefix() const { return prefix_; }
    std::size_t parameterCount() const;

private:
    ProjectorSpec spec_;
    std::string prefix_;
};

class VAE {
public:
    struct Outputs {
        Var reconstruction;
        Var mean;
        Var logVar;
        Var latent;
    };

    VAE() = default;
    VAE(VAESpec spec, std::string prefix);

    void init(ModelStore& store, Rng& rng) const;
    // A null rng samples deterministically (latent = mean).
    Outputs forward(Graph& g, ModelStore& store, Var x, Rng* rng) const;
    Var encodeMean(Graph& g, ModelStore& store, Var x) const;

    const VAESpec& spec() const { return spec_; }
    std::size_t parameterCount() const;

private:
    Var encodeHidden(Graph& g, ModelStore& store, Var x) const;

    VAESpec spec_;
    std::string prefix_;
};

// Mean squared reconstruction error (over all elements) plus
// betaKL * KL(N(mean, exp(logVar)) || N(0, I)) summed over latent coordinates
// and averaged over the batch.
Var vaeLoss(Graph& g, Var reconstruction, Var input, Var mean, Var logVar, double betaKL);

} // namespace dcolor
