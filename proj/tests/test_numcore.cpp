#include <doctest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "layoutlab/gradcheck.hpp"
#include "layoutlab/graph.hpp"
#include "layoutlab/kernels.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

using namespace layoutlab;
using numcore::Graph;
using numcore::Tensor;

namespace {

// Independent dense oracle: plain triple loop, no shared code with the
// kernels under test.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(kk, j);
            c.at(i, j) = acc;
        }
    return c;
}

bool bytes_equal(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul hand cases") {
    Graph g;
    const auto id2 = g.value(Tensor({2, 2}, {1, 0, 0, 1}));
    const auto v = g.value(Tensor({2, 1}, {3, 4}));
    CHECK(g.val(g.matmul(id2, v)).data == std::vector<double>{3, 4});

    const auto row = g.value(Tensor({1, 2}, {1, 2}));
    CHECK(g.val(g.matmul(row, v)).data == std::vector<double>{11});
}

TEST_CASE("matmul rejects mismatched shapes with both reported") {
    Graph g;
    const auto a = g.value(Tensor::zeros({3, 4}));
    const auto b = g.value(Tensor::zeros({5, 2}));
    try {
        g.matmul(a, b);
        FAIL("expected a shape error");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[3,4]") != std::string::npos);
        CHECK(msg.find("[5,2]") != std::string::npos);
    }
}

TEST_CASE("matmul matches the dense oracle and counts MACs") {
    Rng rng(42);
    const Tensor a = Tensor::randn({5, 7}, rng);
    const Tensor b = Tensor::randn({7, 3}, rng);
    Graph g;
    const auto c = g.matmul(g.value(a), g.value(b));
    CHECK(g.val(c).max_abs_diff(naive_matmul(a, b)) < 1e-12);
    CHECK(g.macs() == 5 * 7 * 3);
}

TEST_CASE("matmul gradient vs central differences") {
    Rng rng(1);
    const Tensor a = Tensor::randn({3, 4}, rng);
    const Tensor b = Tensor::randn({4, 2}, rng);
    const double err = numcore::grad_check(
        [](Graph& g, const std::vector<Graph::Id>& p) { return g.mean_all(g.matmul(p[0], p[1])); },
        {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("softmax rows: symmetry, stability, normalization") {
    Graph g;
    const auto sym = g.softmax_rows(g.value(Tensor({1, 2}, {0, 0})));
    CHECK(g.val(sym).data[0] == doctest::Approx(0.5));
    CHECK(g.val(sym).data[1] == doctest::Approx(0.5));

    const auto hot = g.softmax_rows(g.value(Tensor({1, 2}, {1000, 0})));
    CHECK(g.val(hot).data[0] == doctest::Approx(1.0));
    CHECK(g.val(hot).data[1] == doctest::Approx(0.0));
    CHECK(g.val(hot).all_finite());

    Rng rng(3);
    const auto x = g.value(Tensor::randn({4, 9}, rng, 3.0));
    const auto y = g.softmax_rows(x);
    for (int64_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (int64_t j = 0; j < 9; ++j) {
            const double v = g.val(y).at(i, j);
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax jacobian vs finite differences") {
    Rng rng(5);
    const Tensor x = Tensor::randn({5, 7}, rng);
    const Tensor w = Tensor::randn({5, 7}, rng);
    // Random projection of the Jacobian: d/dx sum(w * softmax(x)).
    const double err = numcore::grad_check(
        [&](Graph& g, const std::vector<Graph::Id>& p) {
            return g.scale(g.mean_all(g.mul(g.softmax_rows(p[0]), g.value(w))), 35.0);
        },
        {x});
    CHECK(err < 1e-5);
}

TEST_CASE("grad_check on exact quadratic and constant") {
    Rng rng(7);
    const Tensor x = Tensor::randn({3, 3}, rng);
    const double quad_err = numcore::grad_check(
        [](Graph& g, const std::vector<Graph::Id>& p) {
            return g.scale(g.mean_all(g.mul(p[0], p[0])), 9.0);
        },
        {x});
    CHECK(quad_err < 1e-9);

    // Constant function: analytic gradient must be exactly zero.
    Graph g;
    const auto p = g.param(x);
    const auto loss = g.mean_all(g.mul(g.value(Tensor::zeros({3, 3})), p));
    g.backward(loss);
    for (double v : g.grad(p).data) CHECK(v == 0.0);
}

TEST_CASE("grad_check rejects non-scalar outputs") {
    const Tensor x = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(numcore::grad_check(
                        [](Graph& g, const std::vector<Graph::Id>& p) { return p[0]; }, {x}),
                    std::invalid_argument);
}

TEST_CASE("every primitive passes the finite-difference check") {
    Rng rng(11);
    const Tensor x = Tensor::randn({4, 6}, rng);
    const Tensor y = Tensor::randn({4, 6}, rng);
    const Tensor bias = Tensor::randn({6}, rng);
    const Tensor gain = Tensor::randn({6}, rng, 0.5);
    const Tensor w = Tensor::randn({4, 6}, rng);

    auto weighted = [&](Graph& g, Graph::Id v) {
        return g.scale(g.mean_all(g.mul(v, g.value(w))), 3.7);
    };

    SUBCASE("add/sub/mul") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                return weighted(g, g.mul(g.sub(g.add(p[0], p[1]), p[1]), p[0]));
            },
            {x, y});
        CHECK(err < 1e-5);
    }
    SUBCASE("bias_add and channel_scale") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                return weighted(g, g.channel_scale(g.bias_add(p[0], p[1]), p[2]));
            },
            {x, bias, gain});
        CHECK(err < 1e-5);
    }
    SUBCASE("layer_norm") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                return weighted(g, g.layer_norm(p[0], p[1], p[2]));
            },
            {x, gain, bias});
        CHECK(err < 1e-5);
    }
    SUBCASE("gelu") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) { return weighted(g, g.gelu(p[0])); },
            {x});
        CHECK(err < 1e-5);
    }
    SUBCASE("transpose and scale") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                return g.scale(g.mean_all(g.transpose(g.scale(p[0], -1.5))), 2.0);
            },
            {x});
        CHECK(err < 1e-5);
    }
    SUBCASE("concat/split across both axes") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                const auto joined = g.concat_rows(std::array{p[0], p[1]});
                const auto rows = g.split_rows(joined, std::array<int64_t, 2>{4, 4});
                const auto cols = g.concat_cols(std::array{rows[0], rows[1]});
                const auto back = g.split_cols(cols, std::array<int64_t, 2>{6, 6});
                return weighted(g, g.mul(back[0], back[1]));
            },
            {x, y});
        CHECK(err < 1e-5);
    }
    SUBCASE("lookup routes gradients to looked-up rows only") {
        const Tensor table = Tensor::randn({5, 3}, rng);
        Graph g;
        const auto tbl = g.param(table);
        const auto emb = g.lookup(tbl, {1, 3, 1});
        g.backward(g.mean_all(emb));
        const Tensor& grad = g.grad(tbl);
        for (int64_t r = 0; r < 5; ++r) {
            const bool used = r == 1 || r == 3;
            for (int64_t c = 0; c < 3; ++c) CHECK((grad.at(r, c) != 0.0) == used);
        }
        const double err = numcore::grad_check(
            [&](Graph& g2, const std::vector<Graph::Id>& p) {
                return g2.scale(g2.mean_all(g2.lookup(p[0], {1, 3, 1})), 4.4);
            },
            {table});
        CHECK(err < 1e-5);
    }
    SUBCASE("masked means") {
        Tensor mask = Tensor::zeros({4, 6});
        for (size_t i = 0; i < mask.data.size(); i += 3) mask.data[i] = 1.0;
        Tensor row_mask({4}, {1, 0, 1, 0});
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                const auto a = g.mean_masked(p[0], mask);
                const auto b = g.mean_all(g.mean_rows_masked(p[0], row_mask));
                return g.add(a, g.scale(b, 0.5));
            },
            {x});
        CHECK(err < 1e-5);
    }
    SUBCASE("softmax + lookup free composition") {
        const double err = numcore::grad_check(
            [&](Graph& g, const std::vector<Graph::Id>& p) {
                return weighted(g, g.softmax_rows(g.add_const(p[0], 0.25)));
            },
            {x});
        CHECK(err < 1e-5);
    }
}

TEST_CASE("concat then split is the identity on gradients") {
    Rng rng(13);
    const Tensor a = Tensor::randn({3, 4}, rng);
    const Tensor b = Tensor::randn({2, 4}, rng);
    Graph g;
    const auto pa = g.param(a), pb = g.param(b);
    const auto joined = g.concat_rows(std::array{pa, pb});
    const auto parts = g.split_rows(joined, std::array<int64_t, 2>{3, 2});
    // Weighted sum downstream of the round trip.
    const Tensor wa = Tensor::randn({3, 4}, rng);
    const Tensor wb = Tensor::randn({2, 4}, rng);
    const auto loss = g.add(g.mean_all(g.mul(parts[0], g.value(wa))),
                            g.mean_all(g.mul(parts[1], g.value(wb))));
    g.backward(loss);
    // Gradient of a weighted mean is exactly the weights over the count.
    for (size_t i = 0; i < wa.data.size(); ++i)
        CHECK(g.grad(pa).data[i] == doctest::Approx(wa.data[i] / 12.0).epsilon(1e-12));
    for (size_t i = 0; i < wb.data.size(); ++i)
        CHECK(g.grad(pb).data[i] == doctest::Approx(wb.data[i] / 8.0).epsilon(1e-12));
}

TEST_CASE("non-finite values are rejected at the op boundary") {
    Graph g;
    CHECK_THROWS(g.value(Tensor({1, 2}, {1.0, std::numeric_limits<double>::infinity()})));
    const auto big = g.value(Tensor({1, 1}, {1e308}));
    CHECK_THROWS(g.mul(big, big));  // overflows to inf
}

TEST_CASE("determinism: same seed gives bit-identical tensors") {
    Rng r1(99), r2(99);
    const Tensor a = Tensor::randn({16, 16}, r1);
    const Tensor b = Tensor::randn({16, 16}, r2);
    CHECK(bytes_equal(a, b));

    Rng s1 = Rng(99).substream("x"), s2 = Rng(99).substream("y");
    CHECK(!bytes_equal(Tensor::randn({8, 8}, s1), Tensor::randn({8, 8}, s2)));
}

TEST_CASE("openmp kernels are bit-identical to the serial references") {
    Rng rng(21);
    for (const auto [m, k, n] : {std::array<int64_t, 3>{33, 17, 29}, {64, 64, 64}, {1, 40, 7}}) {
        const Tensor a = Tensor::randn({m, k}, rng);
        const Tensor b = Tensor::randn({k, n}, rng);
        Tensor c1({m, n}), c2({m, n});
        kernels::matmul_serial(a.data.data(), b.data.data(), c1.data.data(), m, k, n);
        kernels::matmul(a.data.data(), b.data.data(), c2.data.data(), m, k, n);
        CHECK(bytes_equal(c1, c2));

        Tensor nt1({m, n}), nt2({m, n});
        const Tensor bt = Tensor::randn({n, k}, rng);
        kernels::matmul_nt_serial(a.data.data(), bt.data.data(), nt1.data.data(), m, k, n);
        kernels::matmul_nt(a.data.data(), bt.data.data(), nt2.data.data(), m, k, n);
        // accumulate path
        kernels::matmul_nt_serial(a.data.data(), bt.data.data(), nt1.data.data(), m, k, n, true);
        kernels::matmul_nt(a.data.data(), bt.data.data(), nt2.data.data(), m, k, n, true);
        CHECK(bytes_equal(nt1, nt2));
    }
    const Tensor x = Tensor::randn({37, 19}, rng);
    Tensor y1({37, 19}), y2({37, 19});
    kernels::softmax_rows_serial(x.data.data(), y1.data.data(), 37, 19);
    kernels::softmax_rows(x.data.data(), y2.data.data(), 37, 19);
    CHECK(bytes_equal(y1, y2));
    const Tensor gain = Tensor::full({19}, 1.1), bias = Tensor::full({19}, -0.2);
    kernels::layer_norm_rows_serial(x.data.data(), gain.data.data(), bias.data.data(),
                                    y1.data.data(), 37, 19, 1e-6);
    kernels::layer_norm_rows(x.data.data(), gain.data.data(), bias.data.data(), y2.data.data(), 37,
                             19, 1e-6);
    CHECK(bytes_equal(y1, y2));
    kernels::gelu_serial(x.data.data(), y1.data.data(), x.numel());
    kernels::gelu(x.data.data(), y2.data.data(), x.numel());
    CHECK(bytes_equal(y1, y2));
}

TEST_CASE("matmul_nt and matmul_tn agree with explicit transposition") {
    Rng rng(31);
    const Tensor a = Tensor::randn({6, 5}, rng);
    const Tensor b = Tensor::randn({7, 5}, rng);  // used as b^T
    Tensor c({6, 7});
    kernels::matmul_nt(a.data.data(), b.data.data(), c.data.data(), 6, 5, 7);
    Tensor bt({5, 7});
    for (int64_t i = 0; i < 7; ++i)
        for (int64_t j = 0; j < 5; ++j) bt.at(j, i) = b.at(i, j);
    CHECK(c.max_abs_diff(naive_matmul(a, bt)) < 1e-12);

    const Tensor p = Tensor::randn({5, 6}, rng);  // used as p^T
    const Tensor q = Tensor::randn({5, 7}, rng);
    Tensor r({6, 7});
    kernels::matmul_tn(p.data.data(), q.data.data(), r.data.data(), 5, 6, 7);
    Tensor pt({6, 5});
    for (int64_t i = 0; i < 5; ++i)
        for (int64_t j = 0; j < 6; ++j) pt.at(j, i) = p.at(i, j);
    CHECK(r.max_abs_diff(naive_matmul(pt, q)) < 1e-12);
}

TEST_CASE("tensor file format round trip") {
    Rng rng(17);
    const Tensor t = Tensor::randn({3, 5, 2}, rng);
    std::stringstream ss;
    numcore::write_tnsr(ss, t);
    const Tensor back = numcore::read_tnsr(ss);
    REQUIRE(back.shape == t.shape);
    // Stored as f32: equality after one round of narrowing.
    for (size_t i = 0; i < t.data.size(); ++i)
        CHECK(back.data[i] == static_cast<double>(static_cast<float>(t.data[i])));

    std::stringstream bad("NOPE");
    CHECK_THROWS(numcore::read_tnsr(bad));
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);  // length mismatch
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), std::invalid_argument);       // non-positive extent
}
