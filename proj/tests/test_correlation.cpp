#include "dcolor/correlation.hpp"
#include "dcolor/error.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>

using namespace dcolor;
using testutil::maxAbsDiff;
using testutil::randomMatrix;

namespace {

// Largest relative error between backward() and central differences of a
// scalar function of one leaf.
double gradientError(const Tensor& x0, const std::function<Var(Graph&, Var)>& f) {
    Graph g;
    Var x = g.leaf(x0);
    g.backward(f(g, x));
    const Tensor analytic = g.grad(x);
    double worst = 0.0;
    const double h = 1e-6;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        Tensor up = x0, down = x0;
        up[i] += h;
        down[i] -= h;
        Graph gu, gd;
        const double fu = gu.value(f(gu, gu.leaf(up, false)))[0];
        const double fd = gd.value(f(gd, gd.leaf(down, false)))[0];
        worst = std::max(worst, testutil::relativeError(analytic[i], (fu - fd) / (2 * h)));
    }
    return worst;
}

} // namespace

TEST_CASE("column normalization") {
    const Tensor two = Tensor::matrix(2, 1, {1.0, -1.0});
    const Tensor n = normalizeColumns(two);
    CHECK(n[0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(n[1] == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-15));

    Rng rng(1);
    const Tensor z = normalizeColumns(randomMatrix(8, 4, rng, 3.0));
    for (std::size_t j = 0; j < 4; ++j) {
        double mean = 0.0, norm = 0.0;
        for (std::size_t r = 0; r < 8; ++r) {
            mean += z.at(r, j);
            norm += z.at(r, j) * z.at(r, j);
        }
        CHECK(std::abs(mean / 8) < 1e-12);
        CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
    }
    CHECK(maxAbsDiff(normalizeColumns(z), z) < 1e-15);
}

TEST_CASE("collapse detection fires exactly on constant columns") {
    Rng rng(2);
    Tensor z = randomMatrix(6, 3, rng);
    CHECK_NOTHROW(normalizeColumns(z));
    for (std::size_t r = 0; r < 6; ++r) z.at(r, 1) = 0.25;
    try {
        normalizeColumns(z);
        FAIL("expected a collapse error");
    } catch (const CollapseError& e) {
        CHECK(e.column() == 1);
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
    CHECK_THROWS(normalizeColumns(Tensor::matrix(1, 2, {1.0, 2.0})));
}

TEST_CASE("cross-correlation of orthonormal columns") {
    const Tensor z = Tensor::matrix(4, 2, {0.5, 0.5, -0.5, 0.5, 0.5, -0.5, -0.5, -0.5});
    const auto c = crossCorrelation(z, z);
    CHECK(maxAbsDiff(c.values, Tensor::identity(2)) < 1e-15);
    Tensor neg = z;
    for (auto& v : neg.values()) v = -v;
    Tensor minusI = Tensor::identity(2);
    for (auto& v : minusI.values()) v = -v;
    CHECK(maxAbsDiff(crossCorrelation(z, neg).values, minusI) < 1e-15);
    CHECK_THROWS(crossCorrelation(z, Tensor({3, 2})));
}

TEST_CASE("normalized cross-correlation equals the literal formula") {
    const Tensor a = Tensor::matrix(3, 2, {1.0, 4.0, 2.0, -1.0, 5.0, 0.5});
    const Tensor b = Tensor::matrix(3, 2, {0.3, 2.0, -1.2, 2.5, 0.7, -3.0});
    CHECK(maxAbsDiff(correlateRaw(a, b).values, oracle::correlation(a, b)) < 1e-12);

    Rng rng(3);
    double worst = 0.0;
    bool bounded = true;
    for (int t = 0; t < 100; ++t) {
        const std::size_t m = 2 + rng.below(30), d = 1 + rng.below(8);
        const Tensor z1 = randomMatrix(m, d, rng, 1.0 + t);
        const Tensor z2 = randomMatrix(m, d, rng);
        const auto c = correlateRaw(z1, z2);
        worst = std::max(worst, maxAbsDiff(c.values, oracle::correlation(z1, z2)));
        bounded = bounded && c.bounded();
    }
    CHECK(worst < 1e-10);
    CHECK(bounded);
}

TEST_CASE("auto-correlation") {
    Rng rng(4);
    const Tensor z = normalizeColumns(randomMatrix(6, 3, rng));
    const auto a = autoCorrelation(z);
    CHECK(a.kind == CorrelationKind::Auto);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a(i, i) - 1.0) < 1e-12);
    CHECK(maxAbsDiff(a.values, a.values.transposed()) < 1e-12);
    CHECK(maxAbsDiff(a.values, crossCorrelation(z, z).values) < 1e-12);

    Tensor twin = randomMatrix(5, 3, rng);
    for (std::size_t r = 0; r < 5; ++r) twin.at(r, 2) = twin.at(r, 0);
    CHECK(autoCorrelation(normalizeColumns(twin))(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("coloring loss") {
    Rng rng(5);
    const Tensor e = randomMatrix(4, 4, rng);
    CHECK(coloringLoss(e, e) == 0.0);
    Tensor c = e;
    c.at(1, 2) += 0.1;
    CHECK(coloringLoss(c, e) == doctest::Approx(0.01).epsilon(1e-12));
    const Tensor r = randomMatrix(4, 4, rng);
    CHECK(std::abs(coloringLoss(r, e) - oracle::coloring(r, e)) < 1e-12);
}

TEST_CASE("whitening loss") {
    CHECK(whiteningLoss(Tensor::identity(5), 0.01) == 0.0);
    for (std::size_t d : {2u, 3u, 7u}) {
        CHECK(whiteningLoss(Tensor({d, d}, 1.0), 0.01) ==
              doctest::Approx(0.01 * static_cast<double>(d * (d - 1))).epsilon(1e-12));
    }
    Rng rng(6);
    const Tensor w = randomMatrix(5, 5, rng);
    CHECK(std::abs(whiteningLoss(w, 0.01) - oracle::whitening(w, 0.01)) < 1e-12);
}

TEST_CASE("total loss and lambda schedule") {
    CHECK(totalLoss(1.0, 2.0, 0.05) == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(totalLoss(0.7, 123.0, 0.0) == 0.7);
    CHECK_THROWS(totalLoss(1.0, 1.0, -0.1));

    LossConfig fixed;
    CHECK(lambdaAt(fixed, 0) == 0.05);
    CHECK(lambdaAt(fixed, 999) == 0.05);

    LossConfig sched;
    sched.useSchedule = true;
    sched.schedule = {0.08, 0.07, 0.06, 0.05, 0.04};
    CHECK(lambdaAt(sched, 0) == 0.08);
    CHECK(lambdaAt(sched, 49) == 0.08);
    CHECK(lambdaAt(sched, 50) == 0.07);
    CHECK(lambdaAt(sched, 120) == 0.06);
    CHECK(lambdaAt(sched, 249) == 0.04);
    CHECK(lambdaAt(sched, 10000) == 0.04);
    sched.schedule.clear();
    CHECK_THROWS_AS(lambdaAt(sched, 0), ConfigError);
    CHECK_THROWS_AS(sched.validate(), ConfigError);
}

TEST_CASE("loss gradients through the correlation match finite differences") {
    Rng rng(7);
    const Tensor z1 = randomMatrix(7, 3, rng);
    const Tensor z2 = randomMatrix(7, 3, rng);
    const Tensor e = randomMatrix(3, 3, rng, 0.3);
    const auto coloring = [&](Graph& g, Var x) {
        Var c = crossCorrelation(g, normalizeColumns(g, x), normalizeColumns(g, g.constant(z2)));
        return coloringLoss(g, c, e);
    };
    const auto whitening = [&](Graph& g, Var x) {
        Var w = crossCorrelation(g, normalizeColumns(g, g.constant(z1)), normalizeColumns(g, x));
        return whiteningLoss(g, w, 0.01);
    };
    const auto autoLoss = [&](Graph& g, Var x) {
        Var a = autoCorrelation(g, normalizeColumns(g, x));
        return totalLoss(g, whiteningLoss(g, a, 0.3), coloringLoss(g, a, e), 0.05);
    };
    CHECK(gradientError(z1, coloring) < 1e-4);
    CHECK(gradientError(z2, whitening) < 1e-4);
    CHECK(gradientError(z1, autoLoss) < 1e-4);
}

TEST_CASE("negative log posterior") {
    const std::size_t d = 3;
    Rng rng(8);
    const Tensor e = randomMatrix(d, d, rng, 0.4);
    for (double sigma : {1.0, 0.5}) {
        const double constant = 0.5 * std::log(2.0 * std::numbers::pi * sigma * sigma);
        CHECK(negLogPosterior(e, Tensor::identity(d), e, sigma) ==
              doctest::Approx(2.0 * d * d * constant).epsilon(1e-12));
    }

    const double sigma = 0.7;
    const double factor = 1.0 / (2.0 * sigma * sigma);
    for (int t = 0; t < 5; ++t) {
        const Tensor c0 = randomMatrix(d, d, rng, 0.5);
        const Tensor w0 = randomMatrix(d, d, rng, 0.5);

        Graph map;
        Var c = map.leaf(c0), w = map.leaf(w0);
        map.backward(negLogPosterior(map, c, w, map.constant(e), sigma));

        Graph loss;
        Var lc = loss.leaf(c0), lw = loss.leaf(w0);
        loss.backward(totalLoss(loss, whiteningLoss(loss, lw, 1.0), coloringLoss(loss, lc, e), 1.0));

        for (std::size_t i = 0; i < d * d; ++i) {
            CHECK(map.grad(c)[i] == doctest::Approx(factor * loss.grad(lc)[i]).epsilon(1e-12));
            CHECK(map.grad(c)[i] == doctest::Approx((c0[i] - e[i]) / (sigma * sigma)).epsilon(1e-12));
            CHECK(map.grad(w)[i] == doctest::Approx(factor * loss.grad(lw)[i]).epsilon(1e-12));
        }

        // With the default alpha the whitening gradients stop being proportional.
        Graph alpha;
        Var aw = alpha.leaf(w0);
        alpha.backward(whiteningLoss(alpha, aw, 0.01));
        CHECK(std::abs(map.grad(w)[1] - factor * alpha.grad(aw)[1]) > 1e-6);
    }
}

TEST_CASE("correlation files") {
    const auto dir = testutil::scratchDir("corr");
    Rng rng(9);
    CorrelationMatrix m{randomMatrix(4, 4, rng), CorrelationKind::Whitening};
    saveCorrelation(m, dir + "/w.bin");
    const auto back = loadCorrelation(dir + "/w.bin");
    CHECK(back.kind == CorrelationKind::Whitening);
    CHECK(maxAbsDiff(back.values, m.values) == 0.0);
    exportCorrelationCsv(m, dir + "/w.csv");
    CHECK(std::filesystem::file_size(dir + "/w.csv") > 0);

    std::string bytes;
    {
        std::ifstream in(dir + "/w.bin", std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    bytes[0] = 'X';
    std::ofstream(dir + "/bad.bin", std::ios::binary) << bytes;
    CHECK_THROWS_AS(loadCorrelation(dir + "/bad.bin"), FormatError);
    bytes[0] = 'D';
    bytes.pop_back();
    std::ofstream(dir + "/short.bin", std::ios::binary) << bytes;
    CHECK_THROWS_AS(loadCorrelation(dir + "/short.bin"), FormatError);
}
