#include "dcolor/nn.hpp"

#include "dcolor/error.hpp"

#include <cmath>

namespace dcolor {

namespace {

// Kaiming-uniform (ReLU gain) weight, zero bias.
void initLinear(ModelStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    Tensor w({in, out});
    for (auto& v : w.values()) v = rng.uniform(-bound, bound);
    store.params.add(name + ".weight", std::move(w));
    store.params.add(name + ".bias", Tensor({out}));
}

void initBatchNorm(ModelStore& store, const std::string& name, std::size_t width) {
    store.params.add(name + ".gamma", Tensor({width}, 1.0));
    store.params.add(name + ".beta", Tensor({width}, 0.0));
    store.stats[name] = BatchNormStats{Tensor({width}, 0.0), Tensor({width}, 1.0)};
}

Var linear(Graph& g, ModelStore& store, const std::string& name, Var x) {
    const std::size_t expected = store.params.get(name + ".weight").value.rows();
    if (g.value(x).cols() != expected) {
        throw std::invalid_argument(name + ": input width " + std::to_string(g.value(x).cols()) +
                                    " does not match layer input " + std::to_string(expected));
    }
    Var w = g.param(store.params.get(name + ".weight"));
    Var b = g.param(store.params.get(name + ".bias"));
    return g.addRow(g.matmul(x, w), b);
}

Var batchNorm(Graph& g, ModelStore& store, const std::string& name, Var x, bool training) {
    Var gamma = g.param(store.params.get(name + ".gamma"));
    Var beta = g.param(store.params.get(name + ".beta"));
    return g.batchNorm(x, gamma, beta, &store.stats.at(name), training);
}

std::size_t linearCount(std::size_t in, std::size_t out) { return in * out + out; }

} // namespace

// ---------------------------------------------------------------------------
// Specs

void EncoderSpec::validate() const {
    if (widths.size() < 2) throw ConfigError("encoder needs an input width and at least one layer");
    for (auto w : widths) {
        if (w == 0) throw ConfigError("encoder widths must be positive");
    }
    if (tap == 0 || tap > layers()) {
        throw ConfigError("encoder tap index " + std::to_string(tap) + " must lie in [1, " +
                          std::to_string(layers()) + "]");
    }
    if (tap == layers() && !allowFinalTap) {
        throw ConfigError("encoder tap index " + std::to_string(tap) +
                          " is the final layer; set allow_final_tap to permit it");
    }
}

void ProjectorSpec::validate() const {
    if (widths.size() != 3) throw ConfigError("projector must have exactly three linear layers");
    if (inputDim == 0) throw ConfigError("projector input dimension must be positive");
    for (auto w : widths) {
        if (w == 0) throw ConfigError("projector widths must be positive");
    }
}

void VAESpec::validate() const {
    if (encoderWidths.size() < 2) throw ConfigError("VAE encoder needs an input width and at least one hidden layer");
    for (auto w : encoderWidths) {
        if (w == 0) throw ConfigError("VAE widths must be positive");
    }
    if (latentDim == 0) throw ConfigError("VAE latent dimension must be positive");
}

VAESpec VAESpec::fromEncoder(const EncoderSpec& encoder, std::size_t latentDim) {
    encoder.validate();
    VAESpec spec;
    spec.encoderWidths.assign(encoder.widths.begin(), encoder.widths.begin() + static_cast<std::ptrdiff_t>(encoder.tap) + 1);
    spec.latentDim = latentDim;
    return spec;
}

// ---------------------------------------------------------------------------
// Backbone

Backbone::Backbone(EncoderSpec spec, std::string prefix) : spec_(std::move(spec)), prefix_(std::move(prefix)) {
    spec_.validate();
}

void Backbone::init(ModelStore& store, Rng& rng) const {
    for (std::size_t i = 1; i <= spec_.layers(); ++i) {
        const std::string name = prefix_ + ".l" + std::to_string(i);
        initLinear(store, name, spec_.widths[i - 1], spec_.widths[i], rng);
        if (spec_.batchNorm) initBatchNorm(store, name + ".bn", spec_.widths[i]);
    }
}

Var Backbone::forwardBlocks(Graph& g, ModelStore& store, Var x, std::size_t blocks, bool training) const {
    if (blocks == 0 || blocks > spec_.layers()) throw std::out_of_range("backbone block count out of range");
    Var h = x;
    for (std::size_t i = 1; i <= blocks; ++i) {
        const std::string name = prefix_ + ".l" + std::to_string(i);
        h = linear(g, store, name, h);
        if (spec_.batchNorm) h = batchNorm(g, store, name + ".bn", h, training);
        h = g.relu(h);
    }
    return h;
}

Backbone::Outputs Backbone::forward(Graph& g, ModelStore& store, Var x, bool training) const {
    Outputs out;
    Var h = x;
    for (std::size_t i = 1; i <= spec_.layers(); ++i) {
        const std::string name = prefix_ + ".l" + std::to_string(i);
        h = linear(g, store, name, h);
        if (spec_.batchNorm) h = batchNorm(g, store, name + ".bn", h, training);
        h = g.relu(h);
        if (i == spec_.tap) out.tap = h;
    }
    out.final = h;
    return out;
}

std::size_t Backbone::parameterCount() const {
    std::size_t n = 0;
    for (std::size_t i = 1; i <= spec_.layers(); ++i) {
        n += linearCount(spec_.widths[i - 1], spec_.widths[i]);
        if (spec_.batchNorm) n += 2 * spec_.widths[i];
    }
    return n;
}

// ---------------------------------------------------------------------------
// Projector

Projector::Projector(ProjectorSpec spec, std::string prefix) : spec_(std::move(spec)), prefix_(std::move(prefix)) {
    spec_.validate();
}

void Projector::init(ModelStore& store, Rng& rng) const {
    std::size_t in = spec_.inputDim;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = prefix_ + ".l" + std::to_string(i + 1);
        initLinear(store, name, in, spec_.widths[i], rng);
        if (i < 2 && spec_.batchNorm) initBatchNorm(store, name + ".bn", spec_.widths[i]);
        in = spec_.widths[i];
    }
}

Var Projector::forward(Graph& g, ModelStore& store, Var x, bool training) const {
    if (g.value(x).cols() != spec_.inputDim) {
        throw std::invalid_argument(prefix_ + ": input width " + std::to_string(g.value(x).cols()) +
                                    " does not match projector input " + std::to_string(spec_.inputDim));
    }
    Var h = x;
    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = prefix_ + ".l" + std::to_string(i + 1);
        h = linear(g, store, name, h);
        if (i < 2) {
            if (spec_.batchNorm) h = batchNorm(g, store, name + ".bn", h, training);
            h = g.relu(h);
        }
    }
    return h;
}

std::size_t Projector::parameterCount() const {
    std::size_t n = 0, in = spec_.inputDim;
    for (std::size_t i = 0; i < 3; ++i) {
        n += linearCount(in, spec_.widths[i]);
        if (i < 2 && spec_.batchNorm) n += 2 * spec_.widths[i];
        in = spec_.widths[i];
    }
    return n;
}

// ---------------------------------------------------------------------------
// VAE

VAE::VAE(VAESpec spec, std::string prefix) : spec_(std::move(spec)), prefix_(std::move(prefix)) {
    spec_.validate();
}

void VAE::init(ModelStore& store, Rng& rng) const {
    const auto& w = spec_.encoderWidths;
    for (std::size_t i = 1; i < w.size(); ++i) {
        initLinear(store, prefix_ + ".enc" + std::to_string(i), w[i - 1], w[i], rng);
    }
    initLinear(store, prefix_ + ".mean", w.back(), spec_.latentDim, rng);
    initLinear(store, prefix_ + ".logvar", w.back(), spec_.latentDim, rng);
    // Decoder mirrors the encoder: latent -> hidden widths reversed -> input.
    const std::size_t hidden = w.size() - 1;
    std::size_t in = spec_.latentDim;
    for (std::size_t k = 1; k <= hidden; ++k) {
        const std::size_t out = w[hidden - k + 1];
        initLinear(store, prefix_ + ".dec" + std::to_string(k), in, out, rng);
        in = out;
    }
    initLinear(store, prefix_ + ".out", in, w.front(), rng);
}

Var VAE::encodeHidden(Graph& g, ModelStore& store, Var x) const {
    Var h = x;
    for (std::size_t i = 1; i < spec_.encoderWidths.size(); ++i) {
        h = g.relu(linear(g, store, prefix_ + ".enc" + std::to_string(i), h));
    }
    return h;
}

Var VAE::encodeMean(Graph& g, ModelStore& store, Var x) const {
    return linear(g, store, prefix_ + ".mean", encodeHidden(g, store, x));
}

VAE::Outputs VAE::forward(Graph& g, ModelStore& store, Var x, Rng* rng) const {
    Outputs out;
    Var h = encodeHidden(g, store, x);
    out.mean = linear(g, store, prefix_ + ".mean", h);
    out.logVar = linear(g, store, prefix_ + ".logvar", h);
    out.latent = g.reparameterize(out.mean, out.logVar, rng);
    Var d = out.latent;
    const std::size_t hidden = spec_.encoderWidths.size() - 1;
    for (std::size_t k = 1; k <= hidden; ++k) d = g.relu(linear(g, store, prefix_ + ".dec" + std::to_string(k), d));
    out.reconstruction = linear(g, store, prefix_ + ".out", d);
    return out;
}

std::size_t VAE::parameterCount() const {
    const auto& w = spec_.encoderWidths;
    std::size_t n = 0;
    for (std::size_t i = 1; i < w.size(); ++i) n += linearCount(w[i - 1], w[i]);
    n += 2 * linearCount(w.back(), spec_.latentDim);
    std::size_t in = spec_.latentDim;
    for (std::size_t i = w.size() - 1; i >= 1; --i) {
        n += linearCount(in, w[i]);
        in = w[i];
    }
    n += linearCount(in, w.front());
    return n;
}

Var vaeLoss(Graph& g, Var reconstruction, Var input, Var mean, Var logVar, double betaKL) {
    if (!g.value(reconstruction).sameShape(g.value(input))) {
        throw std::invalid_argument("vaeLoss: reconstruction shape " + shapeString(g.value(reconstruction).shape()) +
                                    " does not match input " + shapeString(g.value(input).shape()));
    }
    const double batch = static_cast<double>(g.value(input).rows());
    Var mse = g.mean(g.square(g.sub(reconstruction, input)));
    Var kl = g.sub(g.add(g.square(mean), g.exp(logVar)), logVar);
    kl = g.scale(g.sum(g.addScalar(kl, -1.0)), 0.5 / batch);
    return g.add(mse, g.scale(kl, betaKL));
}

} // namespace dcolor
