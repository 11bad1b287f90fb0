#include "dcolor/diagnostics.hpp"

#include "dcolor/correlation.hpp"
#include "dcolor/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dcolor {

double embeddingVariance(const Tensor& z, bool normalizeVectors) {
    if (z.rank() != 2 || z.rows() < 2) throw std::invalid_argument("embeddingVariance: need at least 2 rows");
    const std::size_t m = z.rows(), d = z.cols();
    Tensor rows = z;
    if (normalizeVectors) {
        for (std::size_t r = 0; r < m; ++r) {
            double n = 0.0;
            for (std::size_t j = 0; j < d; ++j) n += rows.at(r, j) * rows.at(r, j);
            n = std::sqrt(n);
            if (n > 0.0)
                for (std::size_t j = 0; j < d; ++j) rows.at(r, j) /= n;
        }
    }
    double total = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        double mean = 0.0;
        for (std::size_t r = 0; r < m; ++r) mean += rows.at(r, j);
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t r = 0; r < m; ++r) var += (rows.at(r, j) - mean) * (rows.at(r, j) - mean);
        total += var / static_cast<double>(m);
    }
    // mean over coordinates, rescaled by d
    return total;
}

std::vector<double> covarianceSpectrum(const Tensor& z) {
    if (z.rank() != 2 || z.rows() < 2) throw std::invalid_argument("covarianceSpectrum: need at least 2 rows");
    const auto m = static_cast<Eigen::Index>(z.rows());
    const auto d = static_cast<Eigen::Index>(z.cols());
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Z(z.data(), m, d);
    Eigen::MatrixXd centered = Z.rowwise() - Z.colwise().mean();
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(m - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw NumericalError("covarianceSpectrum: eigensolver failed");
    std::vector<double> out(static_cast<std::size_t>(d));
    for (Eigen::Index i = 0; i < d; ++i) out[static_cast<std::size_t>(i)] = std::max(0.0, solver.eigenvalues()(i));
    std::sort(out.begin(), out.end(), std::greater<>());
    return out;
}

double effectiveRank(std::span<const double> eigenvalues) {
    if (eigenvalues.empty()) throw std::invalid_argument("effectiveRank: empty spectrum");
    double total = 0.0;
    for (double v : eigenvalues) {
        if (v < 0.0) throw std::invalid_argument("effectiveRank: negative eigenvalue");
        total += v;
    }
    if (total <= 0.0) throw NumericalError("effectiveRank: all-zero spectrum");
    double entropy = 0.0;
    for (double v : eigenvalues) {
        const double p = v / total;
        if (p > 0.0) entropy -= p * std::log(p);
    }
    return std::exp(entropy);
}

double alignment(const Tensor& z1, const Tensor& z2) {
    if (!z1.sameShape(z2) || z1.rank() != 2) throw std::invalid_argument("alignment: batch shapes differ");
    const std::size_t m = z1.rows(), d = z1.cols();
    double total = 0.0;
    for (std::size_t r = 0; r < m; ++r) {
        double dot = 0.0, n1 = 0.0, n2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += z1.at(r, j) * z2.at(r, j);
            n1 += z1.at(r, j) * z1.at(r, j);
            n2 += z2.at(r, j) * z2.at(r, j);
        }
        if (n1 == 0.0 || n2 == 0.0) throw NumericalError("alignment: zero-norm row " + std::to_string(r));
        total += dot / (std::sqrt(n1) * std::sqrt(n2));
    }
    return total / static_cast<double>(m);
}

DiagnosticsReport diagnose(const Tensor& view1, const Tensor& view2, std::size_t epoch) {
    DiagnosticsReport rep;
    rep.epoch = epoch;
    rep.embeddingVariance = embeddingVariance(view1, true);
    rep.eigenvalues = covarianceSpectrum(view1);
    double total = 0.0;
    for (double v : rep.eigenvalues) total += v;
    rep.effectiveRank = total > 0.0 ? effectiveRank(rep.eigenvalues) : 0.0;
    rep.alignment = alignment(view1, view2);
    return rep;
}

// ---------------------------------------------------------------------------

std::string formatMetricsRow(const EpochMetrics& m) {
    std::ostringstream os;
    os << std::setprecision(17) << m.epoch << ',' << m.lambda << ',' << m.lossTotal << ',' << m.lossW << ','
       << m.lossC << ',' << m.variance << ',' << m.effectiveRank << ',' << m.alignment << ',' << std::setprecision(6)
       << m.wallMs;
    return os.str();
}

void appendMetricsCsv(const std::string& path, std::span<const EpochMetrics> rows) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    if (fresh) out << kMetricsHeader << '\n';
    for (const auto& r : rows) out << formatMetricsRow(r) << '\n';
}

std::vector<EpochMetrics> readMetricsCsv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PrerequisiteError("cannot open metrics file '" + path + "'");
    std::string line;
    std::getline(in, line);
    if (line != kMetricsHeader) throw FormatError(path + ": unexpected metrics header");
    std::vector<EpochMetrics> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        EpochMetrics m;
        char comma = 0;
        ls >> m.epoch >> comma >> m.lambda >> comma >> m.lossTotal >> comma >> m.lossW >> comma >> m.lossC >> comma >>
            m.variance >> comma >> m.effectiveRank >> comma >> m.alignment >> comma >> m.wallMs;
        if (ls.fail()) throw FormatError(path + ": malformed metrics row '" + line + "'");
        rows.push_back(m);
    }
    return rows;
}

void writeDiagnosticsCsv(const std::string& path, const DiagnosticsReport& r) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << std::setprecision(17);
    out << "epoch,variance,effective_rank,alignment,loss_c,loss_w,loss_total\n";
    out << r.epoch << ',' << r.embeddingVariance << ',' << r.effectiveRank << ',' << r.alignment << ',' << r.lossC
        << ',' << r.lossW << ',' << r.lossTotal << "\n\n";
    out << "index,eigenvalue\n";
    for (std::size_t i = 0; i < r.eigenvalues.size(); ++i) out << i << ',' << r.eigenvalues[i] << '\n';
}

void writeMetricsSvg(const std::string& path, std::span<const EpochMetrics> rows) {
    struct Series {
        const char* label;
        const char* color;
        double EpochMetrics::*field;
    };
    const Series series[] = {{"loss_total", "#1f77b4", &EpochMetrics::lossTotal},
                             {"variance", "#d62728", &EpochMetrics::variance},
                             {"effective_rank", "#2ca02c", &EpochMetrics::effectiveRank}};
    constexpr double kW = 640, kPanelH = 180, kPad = 40;
    const double height = kPanelH * 3 + kPad;

    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t s = 0; s < 3; ++s) {
        const double top = kPad / 2 + static_cast<double>(s) * kPanelH;
        const double plotH = kPanelH - kPad;
        double lo = 0, hi = 1;
        if (!rows.empty()) {
            lo = hi = rows[0].*series[s].field;
            for (const auto& r : rows) {
                lo = std::min(lo, r.*series[s].field);
                hi = std::max(hi, r.*series[s].field);
            }
        }
        if (hi - lo < 1e-12) hi = lo + 1.0;
        out << "<rect x=\"" << kPad << "\" y=\"" << top << "\" width=\"" << kW - 2 * kPad << "\" height=\"" << plotH
            << "\" fill=\"none\" stroke=\"#999\"/>\n";
        out << "<text x=\"" << kPad << "\" y=\"" << top - 4 << "\" font-size=\"12\" font-family=\"sans-serif\">"
            << series[s].label << " [" << lo << ", " << hi << "]</text>\n";
        out << "<polyline fill=\"none\" stroke=\"" << series[s].color << "\" stroke-width=\"1.5\" points=\"";
        const double n = rows.size() > 1 ? static_cast<double>(rows.size() - 1) : 1.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double x = kPad + (kW - 2 * kPad) * static_cast<double>(i) / n;
            const double y = top + plotH - plotH * ((rows[i].*series[s].field) - lo) / (hi - lo);
            out << x << ',' << y << ' ';
        }
        out << "\"/>\n";
    }
    out << "</svg>\n";
}

} // namespace dcolor
