#pragma once

#include "dcolor/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace dcolor {

// Mean per-coordinate variance across the batch, times d. With
// normalizeVectors each row is first scaled to unit norm, in which case the
// value equals 1 - |mean row|² and lies in [0, 1].
double embeddingVariance(const Tensor& z, bool normalizeVectors = true);

// Eigenvalues of the d x d sample covariance (divisor m - 1), descending,
// rounding negatives clamped to zero.
std::vector<double> covarianceSpectrum(const Tensor& z);

// exp(-Σ p log p), p = λ / Σλ.
double effectiveRank(std::span<const double> eigenvalues);

// Mean cosine similarity between paired rows.
double alignment(const Tensor& z1, const Tensor& z2);

struct DiagnosticsReport {
    std::size_t epoch = 0;
    double embeddingVariance = 0.0;
    std::vector<double> eigenvalues;
    double effectiveRank = 0.0;
    double alignment = 0.0;
    double lossC = 0.0;
    double lossW = 0.0;
    double lossTotal = 0.0;
};

// Builds a report from two views' whitening-head embeddings.
DiagnosticsReport diagnose(const Tensor& view1, const Tensor& view2, std::size_t epoch);

// One row of the training metrics CSV.
struct EpochMetrics {
    std::size_t epoch = 0;
    double lambda = 0.0;
    double lossTotal = 0.0;
    double lossW = 0.0;
    double lossC = 0.0;
    double variance = 0.0;
    double effectiveRank = 0.0;
    double alignment = 0.0;
    double wallMs = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,lambda,loss_total,loss_w,loss_c,variance,effective_rank,alignment,wall_ms";

std::string formatMetricsRow(const EpochMetrics& m);
// Creates the file with a header if missing, then appends rows.
void appendMetricsCsv(const std::string& path, std::span<const EpochMetrics> rows);
std::vector<EpochMetrics> readMetricsCsv(const std::string& path);

void writeDiagnosticsCsv(const std::string& path, const DiagnosticsReport& report);
// Line charts of total loss, embedding variance and effective rank per epoch.
void writeMetricsSvg(const std::string& path, std::span<const EpochMetrics> rows);

} // namespace dcolor
