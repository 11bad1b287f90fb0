#pragma once

#include "dcolor/graph.hpp"
#include "dcolor/tensor.hpp"

#include <string>
#include <vector>

namespace dcolor {

enum class CorrelationKind : std::uint32_t { Cross = 0, Whitening = 1, Target = 2, Auto = 3 };

const char* correlationKindName(CorrelationKind k);

// d x d matrix of normalized inner products between feature columns.
struct CorrelationMatrix {
    Tensor values;
    CorrelationKind kind = CorrelationKind::Cross;

    std::size_t dim() const { return values.rows(); }
    double operator()(std::size_t i, std::size_t j) const { return values.at(i, j); }
    // Every element within [-1 - slack, 1 + slack].
    bool bounded(double slack = 1e-9) const;
};

enum class LossVariant { Cross, Auto };

const char* lossVariantName(LossVariant v);

struct LossConfig {
    double lambda = 0.05;
    // When non-empty, lambda for epoch e is schedule[min(e / scheduleBlock,
    // size - 1)]: blocks of scheduleBlock epochs, last value repeats.
    std::vector<double> schedule;
    bool useSchedule = false;
    std::size_t scheduleBlock = 50;
    double alpha = 0.01;
    double sigma = 1.0;
    LossVariant variant = LossVariant::Cross;

    void validate() const;
};

double lambdaAt(const LossConfig& config, std::size_t epoch);

// --- Graph-level operations (differentiable) -------------------------------

Var normalizeColumns(Graph& g, Var z);
// C = Z1ᵀ Z2 for column-normalized Z1, Z2.
Var crossCorrelation(Graph& g, Var z1, Var z2);
// C' = ZᵀZ for column-normalized Z; symmetric, computed on one triangle.
Var autoCorrelation(Graph& g, Var z);
// Σ_ij (C_ij − E_ij)²; E is treated as a constant.
Var coloringLoss(Graph& g, Var c, const Tensor& target);
Var coloringLoss(Graph& g, Var c, Var target);
// Σ_i (1 − W_ii)² + α Σ_{i≠j} W_ij²
Var whiteningLoss(Graph& g, Var w, double alpha);
Var totalLoss(Graph& g, Var lossW, Var lossC, double lambda);
// −Σ log N(C_ij | E_ij, σ²) − Σ_i log N(W_ii | 1, σ²) − Σ_{i≠j} log N(W_ij | 0, σ²)
// with the normalization constants retained.
Var negLogPosterior(Graph& g, Var c, Var w, Var e, double sigma);

// --- Value-level conveniences ----------------------------------------------

Tensor normalizeColumns(const Tensor& z);
CorrelationMatrix crossCorrelation(const Tensor& z1Normalized, const Tensor& z2Normalized);
CorrelationMatrix autoCorrelation(const Tensor& zNormalized);
// Normalizes raw embedding batches, then correlates them.
CorrelationMatrix correlateRaw(const Tensor& z1, const Tensor& z2, CorrelationKind kind = CorrelationKind::Cross);
double coloringLoss(const Tensor& c, const Tensor& target);
double whiteningLoss(const Tensor& w, double alpha);
double totalLoss(double lossW, double lossC, double lambda);
double negLogPosterior(const Tensor& c, const Tensor& w, const Tensor& e, double sigma);
// Mean |W_ij| over off-diagonal elements.
double meanOffDiagonal(const Tensor& w);

// Binary: "DCCORMAT", u32 version, u32 d, u32 kind, d*d little-endian f64.
void saveCorrelation(const CorrelationMatrix& m, const std::string& path);
CorrelationMatrix loadCorrelation(const std::string& path);
void exportCorrelationCsv(const CorrelationMatrix& m, const std::string& path);

} // namespace dcolor
