#include "dcolor/correlation.hpp"

#include "binary_io.hpp"
#include "dcolor/error.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace dcolor {

const char* correlationKindName(CorrelationKind k) {
    switch (k) {
    case CorrelationKind::Cross: return "cross";
    case CorrelationKind::Whitening: return "whitening";
    case CorrelationKind::Target: return "target";
    case CorrelationKind::Auto: return "auto";
    }
    return "unknown";
}

const char* lossVariantName(LossVariant v) { return v == LossVariant::Cross ? "cross" : "auto"; }

bool CorrelationMatrix::bounded(double slack) const {
    for (double v : values.values()) {
        if (v < -1.0 - slack || v > 1.0 + slack) return false;
    }
    return true;
}

void LossConfig::validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("loss: lambda must be >= 0");
    if (!(alpha >= 0.0)) throw ConfigError("loss: alpha must be >= 0");
    if (!(sigma > 0.0)) throw ConfigError("loss: sigma must be > 0");
    if (useSchedule) {
        if (schedule.empty()) throw ConfigError("loss: lambda schedule is empty");
        if (scheduleBlock == 0) throw ConfigError("loss: schedule block length must be positive");
        for (double v : schedule) {
            if (!(v >= 0.0)) throw ConfigError("loss: lambda schedule values must be >= 0");
        }
    }
}

double lambdaAt(const LossConfig& config, std::size_t epoch) {
    if (!config.useSchedule) return config.lambda;
    if (config.schedule.empty()) throw ConfigError("lambdaAt: lambda schedule is empty");
    const std::size_t block = epoch / std::max<std::size_t>(config.scheduleBlock, 1);
    return config.schedule[std::min(block, config.schedule.size() - 1)];
}

// ---------------------------------------------------------------------------

Var normalizeColumns(Graph& g, Var z) { return g.normalizeColumns(z); }

Var crossCorrelation(Graph& g, Var z1, Var z2) {
    if (!g.value(z1).sameShape(g.value(z2))) {
        throw std::invalid_argument("crossCorrelation: batch shapes differ: " + shapeString(g.value(z1).shape()) +
                                    " vs " + shapeString(g.value(z2).shape()));
    }
    return g.matmulTN(z1, z2);
}

Var autoCorrelation(Graph& g, Var z) { return g.gram(z); }

Var coloringLoss(Graph& g, Var c, const Tensor& target) { return coloringLoss(g, c, g.constant(target)); }

Var coloringLoss(Graph& g, Var c, Var target) {
    if (!g.value(c).sameShape(g.value(target))) {
        throw std::invalid_argument("coloringLoss: correlation " + shapeString(g.value(c).shape()) +
                                    " vs target " + shapeString(g.value(target).shape()));
    }
    return g.sum(g.square(g.sub(c, target)));
}

Var whiteningLoss(Graph& g, Var w, double alpha) {
    const Tensor& W = g.value(w);
    if (W.rank() != 2 || W.rows() != W.cols()) {
        throw std::invalid_argument("whiteningLoss: matrix must be square, got " + shapeString(W.shape()));
    }
    const std::size_t d = W.rows();
    Tensor weights({d, d}, alpha);
    for (std::size_t i = 0; i < d; ++i) weights.at(i, i) = 1.0;
    Var residual = g.square(g.sub(w, g.constant(Tensor::identity(d))));
    return g.sum(g.mul(residual, g.constant(std::move(weights))));
}

Var totalLoss(Graph& g, Var lossW, Var lossC, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("totalLoss: lambda must be >= 0");
    return g.add(lossW, g.scale(lossC, lambda));
}

Var negLogPosterior(Graph& g, Var c, Var w, Var e, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("negLogPosterior: sigma must be > 0");
    const double var = sigma * sigma;
    const std::size_t d = g.value(c).rows();
    const double logNorm = 0.5 * std::log(2.0 * std::numbers::pi * var);
    // Coloring likelihood: every C_ij ~ N(E_ij, σ²).
    Var colorQuad = g.scale(g.sum(g.square(g.sub(c, e))), 1.0 / (2.0 * var));
    // Whitening likelihood: W_ii ~ N(1, σ²), W_ij ~ N(0, σ²).
    Var whitenQuad = g.scale(g.sum(g.square(g.sub(w, g.constant(Tensor::identity(d))))), 1.0 / (2.0 * var));
    const double constants = 2.0 * static_cast<double>(d * d) * logNorm;
    return g.addScalar(g.add(colorQuad, whitenQuad), constants);
}

// ---------------------------------------------------------------------------

Tensor normalizeColumns(const Tensor& z) {
    Graph g;
    return g.value(g.normalizeColumns(g.constant(z)));
}

CorrelationMatrix crossCorrelation(const Tensor& z1, const Tensor& z2) {
    Graph g;
    return {g.value(crossCorrelation(g, g.constant(z1), g.constant(z2))), CorrelationKind::Cross};
}

CorrelationMatrix autoCorrelation(const Tensor& z) {
    Graph g;
    return {g.value(autoCorrelation(g, g.constant(z))), CorrelationKind::Auto};
}

CorrelationMatrix correlateRaw(const Tensor& z1, const Tensor& z2, CorrelationKind kind) {
    Graph g;
    Var c = crossCorrelation(g, g.normalizeColumns(g.constant(z1)), g.normalizeColumns(g.constant(z2)));
    return {g.value(c), kind};
}

double coloringLoss(const Tensor& c, const Tensor& target) {
    Graph g;
    return g.value(coloringLoss(g, g.constant(c), target))[0];
}

double whiteningLoss(const Tensor& w, double alpha) {
    Graph g;
    return g.value(whiteningLoss(g, g.constant(w), alpha))[0];
}

double totalLoss(double lossW, double lossC, double lambda) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("totalLoss: lambda must be >= 0");
    return lossW + lambda * lossC;
}

double negLogPosterior(const Tensor& c, const Tensor& w, const Tensor& e, double sigma) {
    Graph g;
    return g.value(negLogPosterior(g, g.constant(c), g.constant(w), g.constant(e), sigma))[0];
}

double meanOffDiagonal(const Tensor& w) {
    const std::size_t d = w.rows();
    if (d < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (i != j) s += std::abs(w.at(i, j));
    return s / static_cast<double>(d * (d - 1));
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kCorrMagic = "DCCORMAT";
constexpr std::uint32_t kCorrVersion = 1;
} // namespace

void saveCorrelation(const CorrelationMatrix& m, const std::string& path) {
    detail::ByteWriter w;
    w.bytes(kCorrMagic);
    w.u32(kCorrVersion);
    w.u32(static_cast<std::uint32_t>(m.dim()));
    w.u32(static_cast<std::uint32_t>(m.kind));
    for (double v : m.values.values()) w.f64(v);
    detail::writeFile(path, w.data());
}

CorrelationMatrix loadCorrelation(const std::string& path) {
    detail::ByteReader r(detail::readFile(path), path);
    if (r.bytes(kCorrMagic.size(), "magic") != kCorrMagic) r.fail("bad correlation-matrix magic", 0);
    const std::size_t versionAt = r.offset();
    if (r.u32("version") != kCorrVersion) r.fail("unsupported correlation-matrix version", versionAt);
    const std::size_t dimAt = r.offset();
    const auto d = r.u32("dimension");
    if (d == 0) r.fail("zero dimension", dimAt);
    const std::size_t kindAt = r.offset();
    const auto kind = r.u32("kind");
    if (kind > 3) r.fail("unknown correlation kind " + std::to_string(kind), kindAt);
    std::vector<double> v(static_cast<std::size_t>(d) * d);
    for (auto& x : v) x = r.f64("matrix data");
    if (!r.atEnd()) r.fail("trailing bytes after matrix data");
    return {Tensor({d, d}, std::move(v)), static_cast<CorrelationKind>(kind)};
}

void exportCorrelationCsv(const CorrelationMatrix& m, const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << "# kind=" << correlationKindName(m.kind) << " d=" << m.dim() << '\n';
    out << std::setprecision(17);
    for (std::size_t i = 0; i < m.dim(); ++i) {
        for (std::size_t j = 0; j < m.dim(); ++j) out << (j ? "," : "") << m(i, j);
        out << '\n';
    }
}

} // namespace dcolor
