#include "dcolor/target.hpp"

#include "binary_io.hpp"
#include "dcolor/error.hpp"
#include "dcolor/optim.hpp"

#include <json.hpp>

#include <numeric>
#include <sstream>

namespace dcolor {

const char* targetSourceName(TargetSource s) {
    switch (s) {
    case TargetSource::Vae: return "vae";
    case TargetSource::Autoencoder: return "autoencoder";
    case TargetSource::Identity: return "identity";
    case TargetSource::File: return "file";
    }
    return "unknown";
}

TargetSource parseTargetSource(const std::string& name) {
    if (name == "vae") return TargetSource::Vae;
    if (name == "autoencoder" || name == "ae") return TargetSource::Autoencoder;
    if (name == "identity") return TargetSource::Identity;
    if (name == "file") return TargetSource::File;
    throw ConfigError("unknown target source '" + name + "' (expected vae, autoencoder, identity or file)");
}

std::string TargetProvenance::toJson() const {
    nlohmann::json j;
    j["vae_spec_digest"] = vaeSpecDigest;
    j["dataset_digest"] = datasetDigest;
    j["epochs"] = epochs;
    j["seed"] = seed;
    j["beta_kl"] = betaKL;
    j["draws"] = draws;
    j["variant"] = variant;
    return j.dump();
}

TargetProvenance TargetProvenance::fromJson(const std::string& text) {
    TargetProvenance p;
    if (text.empty()) return p;
    const auto j = nlohmann::json::parse(text);
    p.vaeSpecDigest = j.value("vae_spec_digest", std::uint64_t{0});
    p.datasetDigest = j.value("dataset_digest", std::uint64_t{0});
    p.epochs = j.value("epochs", std::size_t{0});
    p.seed = j.value("seed", std::uint64_t{0});
    p.betaKL = j.value("beta_kl", 0.0);
    p.draws = j.value("draws", std::size_t{0});
    p.variant = j.value("variant", std::string{});
    return p;
}

std::uint64_t vaeSpecDigest(const VAESpec& spec, const VaeTrainingOptions& o) {
    std::ostringstream os;
    os << "vae:";
    for (auto w : spec.encoderWidths) os << w << ',';
    os << "latent=" << spec.latentDim << ";epochs=" << o.epochs << ";batch=" << o.batchSize << ";lr=" << o.learningRate
       << ";beta=" << o.betaKL << ";det=" << o.deterministic;
    return fnv1a64(os.str());
}

namespace {

TrainedVae makeVae(const VAESpec& spec, const std::string& prefix, std::uint64_t initSeed) {
    TrainedVae v{VAE(spec, prefix), {}, {}};
    Rng init(initSeed);
    v.net.init(v.store, init);
    return v;
}

double trainStep(TrainedVae& vae, AdamState& adam, const Tensor& x, const VaeTrainingOptions& o, Rng& noise) {
    Graph g;
    Var input = g.input("x", x);
    auto out = vae.net.forward(g, vae.store, input, o.deterministic ? nullptr : &noise);
    Var loss = vaeLoss(g, out.reconstruction, input, out.mean, out.logVar, o.betaKL);
    vae.store.params.zeroGrad();
    g.backward(loss);
    adamStep(vae.store.params, adam);
    return g.value(loss)[0];
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    return perm;
}

void checkOptions(const Dataset& ds, const VAESpec& spec, const VaeTrainingOptions& o) {
    if (o.epochs == 0) throw ConfigError("VAE training needs at least one epoch");
    if (o.batchSize == 0) throw ConfigError("VAE batch size must be positive");
    if (ds.size() == 0) throw ConfigError("VAE training needs a non-empty dataset");
    if (spec.inputDim() != ds.dim) {
        throw ConfigError("VAE input width " + std::to_string(spec.inputDim()) + " does not match dataset dimension " +
                          std::to_string(ds.dim));
    }
}

// Shared loop for one or two VAEs; nets[k] consumes view k of every pair.
void trainVaes(std::vector<TrainedVae*> nets, const Dataset& ds, const AugmentationProtocol& protocol,
               const VaeTrainingOptions& o, std::uint64_t seed) {
    protocol.validate();
    Rng schedule(deriveSeed(seed, "vae.schedule"));
    Rng views(deriveSeed(seed, "vae.views"));
    std::vector<Rng> noise;
    std::vector<AdamState> adam(nets.size());
    for (std::size_t k = 0; k < nets.size(); ++k) {
        noise.emplace_back(deriveSeed(seed, "vae" + std::to_string(k + 1) + ".noise"));
        adam[k].options.learningRate = o.learningRate;
    }
    const std::size_t n = ds.size();
    for (std::size_t epoch = 0; epoch < o.epochs; ++epoch) {
        auto perm = shuffled(n, schedule);
        std::vector<double> totals(nets.size(), 0.0);
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += o.batchSize) {
            const std::size_t end = std::min(n, start + o.batchSize);
            std::vector<double> v1, v2;
            for (std::size_t i = start; i < end; ++i) {
                auto [a, b] = augmentPair(ds, perm[i], protocol, views);
                v1.insert(v1.end(), a.begin(), a.end());
                v2.insert(v2.end(), b.begin(), b.end());
            }
            const std::size_t rows = end - start;
            Tensor x[2] = {Tensor({rows, ds.dim}, std::move(v1)), Tensor({rows, ds.dim}, std::move(v2))};
            for (std::size_t k = 0; k < nets.size(); ++k) {
                double loss = 0.0;
                try {
                    loss = trainStep(*nets[k], adam[k], x[k], o, noise[k]);
                } catch (const NumericalError& e) {
                    throw NumericalError("VAE " + std::to_string(k + 1) + " diverged at epoch " + std::to_string(epoch) +
                                         ": " + e.what());
                }
                if (!std::isfinite(loss)) {
                    throw NumericalError("VAE " + std::to_string(k + 1) + " ELBO is non-finite at epoch " +
                                         std::to_string(epoch));
                }
                totals[k] += loss;
            }
            ++batches;
        }
        for (std::size_t k = 0; k < nets.size(); ++k) nets[k]->epochLoss.push_back(totals[k] / static_cast<double>(batches));
    }
}

Tensor latentMeans(const TrainedVae& vae, const Tensor& x) {
    ModelStore store = vae.store;
    Graph g;
    return g.value(vae.net.encodeMean(g, store, g.input("x", x)));
}

Tensor normalizedLatents(const TrainedVae& vae, const Tensor& x) {
    Tensor z = latentMeans(vae, x);
    try {
        return normalizeColumns(z);
    } catch (const CollapseError& e) {
        throw CollapseError("zero-variance latent coordinate " + std::to_string(e.column()) +
                                ": a collapsed VAE latent cannot define a target",
                            e.column());
    }
}

// Views of every sample for one draw; stacked n x dim.
std::pair<Tensor, Tensor> drawViews(const Dataset& ds, const AugmentationProtocol& protocol, Rng& rng) {
    std::vector<double> v1, v2;
    v1.reserve(ds.size() * ds.dim);
    v2.reserve(ds.size() * ds.dim);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto [a, b] = augmentPair(ds, i, protocol, rng);
        v1.insert(v1.end(), a.begin(), a.end());
        v2.insert(v2.end(), b.begin(), b.end());
    }
    return {Tensor({ds.size(), ds.dim}, std::move(v1)), Tensor({ds.size(), ds.dim}, std::move(v2))};
}

} // namespace

double reconstructionError(const TrainedVae& vae, const Tensor& x) {
    ModelStore store = vae.store;
    Graph g;
    Var input = g.input("x", x);
    auto out = vae.net.forward(g, store, input, nullptr);
    return g.value(g.mean(g.square(g.sub(out.reconstruction, input))))[0];
}

std::pair<TrainedVae, TrainedVae> trainVAEPair(const Dataset& ds, const AugmentationProtocol& protocol,
                                               const VAESpec& spec, const VaeTrainingOptions& options,
                                               std::uint64_t seed) {
    checkOptions(ds, spec, options);
    TrainedVae vae1 = makeVae(spec, "vae1", deriveSeed(seed, "vae1.init"));
    TrainedVae vae2 = makeVae(spec, "vae2", deriveSeed(seed, "vae2.init"));
    trainVaes({&vae1, &vae2}, ds, protocol, options, seed);
    return {std::move(vae1), std::move(vae2)};
}

TrainedVae trainSingleVAE(const Dataset& ds, const AugmentationProtocol& protocol, const VAESpec& spec,
                          const VaeTrainingOptions& options, std::uint64_t seed) {
    checkOptions(ds, spec, options);
    TrainedVae vae = makeVae(spec, "vae1", deriveSeed(seed, "vae1.init"));
    trainVaes({&vae}, ds, protocol, options, seed);
    return vae;
}

TargetArtifact computeTargetE(const TrainedVae& vae1, const TrainedVae& vae2, const Dataset& ds,
                              const AugmentationProtocol& protocol, std::uint64_t seed, std::size_t draws) {
    if (vae1.net.spec().latentDim != vae2.net.spec().latentDim) {
        throw ConfigError("VAE latent dimensions differ: " + std::to_string(vae1.net.spec().latentDim) + " vs " +
                          std::to_string(vae2.net.spec().latentDim));
    }
    if (ds.size() < 2) throw ConfigError("target computation needs at least 2 samples");
    if (draws == 0) throw ConfigError("target computation needs at least one augmentation draw");
    const std::size_t d = vae1.net.spec().latentDim;
    Rng rng(seed);
    Tensor sum({d, d});
    for (std::size_t k = 0; k < draws; ++k) {
        auto [x1, x2] = drawViews(ds, protocol, rng);
        Tensor z1 = normalizedLatents(vae1, x1);
        Tensor z2 = normalizedLatents(vae2, x2);
        Tensor e = crossCorrelation(z1, z2).values;
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += e[i];
    }
    if (draws > 1)
        for (auto& v : sum.values()) v /= static_cast<double>(draws);

    TargetArtifact t;
    t.E = {std::move(sum), CorrelationKind::Target};
    t.source = TargetSource::Vae;
    t.provenance.datasetDigest = ds.digest();
    t.provenance.seed = seed;
    t.provenance.draws = draws;
    t.provenance.variant = "cross";
    return t;
}

TargetArtifact computeAutoTarget(const TrainedVae& vae, const Dataset& ds, const AugmentationProtocol& protocol,
                                 std::uint64_t seed, std::size_t draws) {
    if (ds.size() < 2) throw ConfigError("target computation needs at least 2 samples");
    if (draws == 0) throw ConfigError("target computation needs at least one augmentation draw");
    const std::size_t d = vae.net.spec().latentDim;
    Rng rng(seed);
    Tensor sum({d, d});
    for (std::size_t k = 0; k < draws; ++k) {
        auto views = drawViews(ds, protocol, rng);
        Tensor e = autoCorrelation(normalizedLatents(vae, views.first)).values;
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += e[i];
    }
    if (draws > 1)
        for (auto& v : sum.values()) v /= static_cast<double>(draws);

    TargetArtifact t;
    t.E = {std::move(sum), CorrelationKind::Auto};
    t.source = TargetSource::Vae;
    t.provenance.datasetDigest = ds.digest();
    t.provenance.seed = seed;
    t.provenance.draws = draws;
    t.provenance.variant = "auto";
    return t;
}

TargetArtifact computeTargetFromVAE(const Dataset& ds, const AugmentationProtocol& protocol, const VAESpec& spec,
                                    const VaeTrainingOptions& options, std::uint64_t seed, std::size_t draws,
                                    bool autoKind) {
    TargetArtifact t;
    if (autoKind) {
        TrainedVae vae = trainSingleVAE(ds, protocol, spec, options, seed);
        t = computeAutoTarget(vae, ds, protocol, deriveSeed(seed, "target.views"), draws);
    } else {
        auto [vae1, vae2] = trainVAEPair(ds, protocol, spec, options, seed);
        t = computeTargetE(vae1, vae2, ds, protocol, deriveSeed(seed, "target.views"), draws);
    }
    t.source = options.betaKL == 0.0 && options.deterministic ? TargetSource::Autoencoder : TargetSource::Vae;
    t.provenance.vaeSpecDigest = vaeSpecDigest(spec, options);
    t.provenance.epochs = options.epochs;
    t.provenance.betaKL = options.betaKL;
    return t;
}

TargetArtifact computeTargetFromAE(const Dataset& ds, const AugmentationProtocol& protocol, const VAESpec& spec,
                                   VaeTrainingOptions options, std::uint64_t seed, std::size_t draws, bool autoKind) {
    options.betaKL = 0.0;
    options.deterministic = true;
    return computeTargetFromVAE(ds, protocol, spec, options, seed, draws, autoKind);
}

TargetArtifact identityTarget(std::size_t d, CorrelationKind kind) {
    TargetArtifact t;
    t.E = {Tensor::identity(d), kind};
    t.source = TargetSource::Identity;
    return t;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kTargetMagic = "DCTARGET";
constexpr std::uint32_t kTargetVersion = 1;
} // namespace

void saveTarget(const TargetArtifact& target, const std::string& path) {
    const std::string prov = target.provenance.toJson();
    detail::ByteWriter w;
    w.bytes(kTargetMagic);
    w.u32(kTargetVersion);
    w.u32(static_cast<std::uint32_t>(target.dim()));
    w.u32(static_cast<std::uint32_t>(target.source));
    w.u32(static_cast<std::uint32_t>(target.E.kind));
    w.u64(fnv1a64(prov));
    w.u32(static_cast<std::uint32_t>(prov.size()));
    w.bytes(prov);
    for (double v : target.E.values.values()) w.f64(v);
    detail::writeFile(path, w.data());
}

TargetArtifact loadTarget(const std::string& path, std::optional<std::size_t> expectedDim) {
    detail::ByteReader r(detail::readFile(path), path);
    if (r.bytes(kTargetMagic.size(), "magic") != kTargetMagic) r.fail("bad target-file magic", 0);
    const std::size_t versionAt = r.offset();
    const auto version = r.u32("version");
    if (version != kTargetVersion) r.fail("unsupported target-file version " + std::to_string(version), versionAt);
    const std::size_t dimAt = r.offset();
    const auto d = r.u32("dimension");
    if (d == 0) r.fail("zero target dimension", dimAt);
    const std::size_t sourceAt = r.offset();
    const auto source = r.u32("source tag");
    if (source > 3) r.fail("unknown target source tag " + std::to_string(source), sourceAt);
    const std::size_t kindAt = r.offset();
    const auto kind = r.u32("kind tag");
    if (kind > 3) r.fail("unknown correlation kind tag " + std::to_string(kind), kindAt);
    const std::size_t digestAt = r.offset();
    const auto digest = r.u64("provenance digest");
    const auto provLen = r.u32("provenance length");
    std::string prov = r.bytes(provLen, "provenance");
    if (fnv1a64(prov) != digest) r.fail("provenance digest mismatch", digestAt);
    std::vector<double> v(static_cast<std::size_t>(d) * d);
    for (auto& x : v) x = r.f64("matrix data");
    if (!r.atEnd()) r.fail("trailing bytes after target matrix");

    if (expectedDim && *expectedDim != d) {
        throw ConfigError("target file '" + path + "' has dimension " + std::to_string(d) +
                          " but the configured coloring dimension is " + std::to_string(*expectedDim));
    }
    TargetArtifact t;
    t.E = {Tensor({d, d}, std::move(v)), static_cast<CorrelationKind>(kind)};
    t.source = static_cast<TargetSource>(source);
    try {
        t.provenance = TargetProvenance::fromJson(prov);
    } catch (const nlohmann::json::exception&) {
        r.fail("malformed provenance record", digestAt);
    }
    return t;
}

} // namespace dcolor
