#include "dcolor/correlation.hpp"
#include "dcolor/diagnostics.hpp"
#include "dcolor/error.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

using namespace dcolor;
using testutil::randomMatrix;

TEST_CASE("embedding variance") {
    const Tensor same = Tensor::matrix(4, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
    CHECK(embeddingVariance(same) == 0.0);
    for (std::size_t j = 0; j < 3; ++j) {
        Tensor col({4, 1});
        for (std::size_t r = 0; r < 4; ++r) col[r] = same.at(r, j);
        CHECK_THROWS_AS(normalizeColumns(col), CollapseError);
    }
    Tensor moved = same;
    moved.at(2, 1) = 2.5;
    CHECK(embeddingVariance(moved) > 0.0);

    // m = d basis rows: each coordinate is 1 once and 0 otherwise, so the
    // per-coordinate variance is (1/d)(1 - 1/d) and the total is 1 - 1/d.
    for (std::size_t d : {4u, 16u, 64u}) {
        const double v = embeddingVariance(Tensor::identity(d));
        CHECK(v == doctest::Approx(1.0 - 1.0 / static_cast<double>(d)).epsilon(1e-12));
        CHECK(v > 0.74);
    }

    Rng rng(1);
    const Tensor z = randomMatrix(50, 8, rng);
    const double v = embeddingVariance(z);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    Tensor scaled = z;
    for (auto& x : scaled.values()) x *= 7.0;
    CHECK(embeddingVariance(scaled) == doctest::Approx(v).epsilon(1e-12));
    CHECK_THROWS(embeddingVariance(Tensor({1, 3}, 1.0)));
}

TEST_CASE("covariance spectrum") {
    Rng rng(2);
    Tensor rank1({20, 5});
    for (std::size_t r = 0; r < 20; ++r) {
        const double s = rng.normal();
        for (std::size_t j = 0; j < 5; ++j) rank1.at(r, j) = s * static_cast<double>(j + 1);
    }
    const auto ev = covarianceSpectrum(rank1);
    CHECK(ev[0] > 1.0);
    for (std::size_t i = 1; i < ev.size(); ++i) CHECK(ev[i] < 1e-10 * ev[0]);
    CHECK(effectiveRank(ev) == doctest::Approx(1.0).epsilon(1e-8));

    // Orthogonal centred columns of equal norm have identity correlation.
    const Tensor white = Tensor::matrix(4, 2, {1, 1, -1, 1, 1, -1, -1, -1});
    const auto flat = covarianceSpectrum(white);
    CHECK(flat[0] == doctest::Approx(flat[1]).epsilon(1e-12));

    const Tensor z = randomMatrix(32, 8, rng, 2.0);
    const auto spec = covarianceSpectrum(z);
    double trace = 0.0;
    for (std::size_t j = 0; j < 8; ++j) {
        double mean = 0.0, var = 0.0;
        for (std::size_t r = 0; r < 32; ++r) mean += z.at(r, j) / 32.0;
        for (std::size_t r = 0; r < 32; ++r) var += (z.at(r, j) - mean) * (z.at(r, j) - mean);
        trace += var / 31.0;
    }
    CHECK(std::abs(std::accumulate(spec.begin(), spec.end(), 0.0) - trace) < 1e-10);
    CHECK(std::is_sorted(spec.rbegin(), spec.rend()));
    for (double e : spec) CHECK(e >= 0.0);
}

TEST_CASE("effective rank") {
    CHECK(effectiveRank(std::vector<double>{3.0, 0.0, 0.0}) == doctest::Approx(1.0));
    CHECK(effectiveRank(std::vector<double>(6, 0.4)) == doctest::Approx(6.0).epsilon(1e-12));
    const double expected = std::exp(-(0.5 * std::log(0.5) + 0.5 * std::log(0.25)));
    CHECK(effectiveRank(std::vector<double>{2, 1, 1, 0}) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(2.828).epsilon(1e-3));
    CHECK(effectiveRank(std::vector<double>{20, 10, 10, 0}) ==
          doctest::Approx(effectiveRank(std::vector<double>{2, 1, 1, 0})).epsilon(1e-12));
    CHECK_THROWS_AS(effectiveRank(std::vector<double>{0.0, 0.0}), NumericalError);
}

TEST_CASE("alignment") {
    Rng rng(3);
    const Tensor z = randomMatrix(10, 4, rng);
    Tensor neg = z;
    for (auto& v : neg.values()) v = -v;
    CHECK(alignment(z, z) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(alignment(z, neg) == doctest::Approx(-1.0).epsilon(1e-12));

    // Remove each row's component along z to get an orthogonal partner.
    const Tensor other = randomMatrix(10, 4, rng);
    Tensor orth = other;
    for (std::size_t r = 0; r < 10; ++r) {
        double dot = 0.0, nn = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
            dot += other.at(r, j) * z.at(r, j);
            nn += z.at(r, j) * z.at(r, j);
        }
        for (std::size_t j = 0; j < 4; ++j) orth.at(r, j) -= dot / nn * z.at(r, j);
    }
    CHECK(std::abs(alignment(z, orth)) < 1e-12);
    Tensor zero = z;
    for (std::size_t j = 0; j < 4; ++j) zero.at(3, j) = 0.0;
    CHECK_THROWS_AS(alignment(z, zero), NumericalError);
}

TEST_CASE("diagnose report invariants") {
    Rng rng(4);
    const Tensor a = randomMatrix(64, 8, rng);
    Tensor b = a;
    for (auto& v : b.values()) v += 0.1 * rng.normal();
    const auto rep = diagnose(a, b, 7);
    CHECK(rep.epoch == 7);
    CHECK(rep.effectiveRank >= 1.0);
    CHECK(rep.effectiveRank <= 8.0);
    CHECK(rep.alignment > 0.9);
    CHECK(rep.alignment <= 1.0);
    CHECK(rep.eigenvalues.size() == 8);
}

TEST_CASE("metrics csv round trip and svg") {
    const auto dir = testutil::scratchDir("diag");
    std::vector<EpochMetrics> rows;
    for (std::size_t e = 0; e < 3; ++e) {
        EpochMetrics m;
        m.epoch = e;
        m.lambda = 0.05;
        m.lossTotal = 1.0 / 3.0 + static_cast<double>(e);
        m.lossW = 0.1 * std::sqrt(2.0);
        m.lossC = 1e-17;
        m.variance = 0.97;
        m.effectiveRank = 5.5;
        m.alignment = -0.25;
        m.wallMs = 12.5;
        rows.push_back(m);
    }
    appendMetricsCsv(dir + "/m.csv", std::span(rows).first(2));
    appendMetricsCsv(dir + "/m.csv", std::span(rows).subspan(2));
    const auto back = readMetricsCsv(dir + "/m.csv");
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[i].epoch == rows[i].epoch);
        CHECK(back[i].lossTotal == rows[i].lossTotal);
        CHECK(back[i].lossW == rows[i].lossW);
        CHECK(back[i].lossC == rows[i].lossC);
        CHECK(back[i].alignment == rows[i].alignment);
    }
    std::ifstream in(dir + "/m.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == kMetricsHeader);

    writeMetricsSvg(dir + "/m.svg", rows);
    std::stringstream svg;
    svg << std::ifstream(dir + "/m.svg").rdbuf();
    CHECK(svg.str().starts_with("<svg"));
    CHECK(svg.str().find("effective_rank") != std::string::npos);

    DiagnosticsReport rep;
    rep.eigenvalues = {2.0, 1.0};
    writeDiagnosticsCsv(dir + "/d.csv", rep);
    CHECK(std::filesystem::file_size(dir + "/d.csv") > 0);

    std::ofstream(dir + "/bad.csv") << "epoch,nope\n";
    CHECK_THROWS_AS(readMetricsCsv(dir + "/bad.csv"), FormatError);
    CHECK_THROWS_AS(readMetricsCsv(dir + "/missing.csv"), PrerequisiteError);
}
