#include <doctest.h>

#include <cmath>

#include "layoutlab/diffusion.hpp"
#include "layoutlab/model.hpp"
#include "layoutlab/rng.hpp"

using namespace layoutlab;
using diffusion::MixtureSpec;
using diffusion::Schedule;
using numcore::Graph;
using numcore::Tensor;

namespace {

// Kolmogorov-Smirnov critical value at level alpha (two-sided, large n).
double ks_critical(double alpha, int64_t n) {
    return std::sqrt(-std::log(alpha / 2.0) / (2.0 * static_cast<double>(n)));
}

double ks_statistic(const std::vector<int64_t>& counts, const std::vector<double>& cdf) {
    int64_t total = 0;
    for (int64_t c : counts) total += c;
    double d = 0.0;
    int64_t acc = 0;
    for (size_t t = 0; t < counts.size(); ++t) {
        acc += counts[t];
        d = std::max(d, std::abs(static_cast<double>(acc) / static_cast<double>(total) - cdf[t]));
    }
    return d;
}

}  // namespace

TEST_CASE("schedule is strictly decreasing with alpha_bar(0)=1") {
    const Schedule s = Schedule::linear();
    CHECK(s.alpha_bar[0] == 1.0);
    for (int64_t t = 1; t <= s.steps; ++t) {
        CHECK(s.alpha_bar[static_cast<size_t>(t)] < s.alpha_bar[static_cast<size_t>(t - 1)]);
        CHECK(s.alpha_bar[static_cast<size_t>(t)] > 0.0);
    }
}

TEST_CASE("q_sample formula and bounds") {
    const Schedule s = Schedule::linear();
    Rng rng(5);
    const Tensor z0 = Tensor::randn({3, 4, 4}, rng);
    const Tensor eps = Tensor::randn({3, 4, 4}, rng);

    CHECK(diffusion::q_sample(z0, 0, eps, s).bit_equal(z0));  // alpha_bar = 1

    const Tensor no_noise = diffusion::q_sample(z0, 500, Tensor::zeros({3, 4, 4}), s);
    const double a = std::sqrt(s.alpha_bar[500]);
    for (size_t i = 0; i < z0.data.size(); ++i)
        CHECK(no_noise.data[i] == doctest::Approx(a * z0.data[i]).epsilon(1e-12));

    CHECK_THROWS(diffusion::q_sample(z0, 1001, eps, s));
    CHECK_THROWS(diffusion::q_sample(z0, -1, eps, s));
}

TEST_CASE("q_sample norm matches the closed form (Monte Carlo)") {
    const Schedule s = Schedule::linear();
    Rng rng(7);
    const Tensor z0 = Tensor::randn({3, 4, 4}, rng);
    double z0_sq = 0.0;
    for (double v : z0.data) z0_sq += v * v;
    const int64_t t = 600;
    const int64_t n = 10000;
    double mean_sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const Tensor eps = Tensor::randn({3, 4, 4}, rng);
        const Tensor zt = diffusion::q_sample(z0, t, eps, s);
        double sq = 0.0;
        for (double v : zt.data) sq += v * v;
        mean_sq += sq;
    }
    mean_sq /= static_cast<double>(n);
    const double expected =
        s.alpha_bar[t] * z0_sq + (1.0 - s.alpha_bar[t]) * static_cast<double>(z0.numel());
    CHECK(std::abs(mean_sq - expected) / expected < 0.02);
}

TEST_CASE("unbiased timestep sampling is uniform (KS at alpha=0.01)") {
    const Schedule s = Schedule::linear();
    Rng rng(11);
    const int64_t n = 100000;
    std::vector<int64_t> counts(static_cast<size_t>(s.steps), 0);
    for (int64_t i = 0; i < n; ++i) {
        const auto draw = diffusion::sample_timestep(s, MixtureSpec{}, false, rng);
        REQUIRE(draw.component == 0);
        ++counts[static_cast<size_t>(draw.t - 1)];
    }
    std::vector<double> cdf(static_cast<size_t>(s.steps));
    for (int64_t t = 1; t <= s.steps; ++t)
        cdf[static_cast<size_t>(t - 1)] = static_cast<double>(t) / static_cast<double>(s.steps);
    CHECK(ks_statistic(counts, cdf) < ks_critical(0.01, n));
}

TEST_CASE("biased sampling: tagged component fraction and truncated-mixture fit") {
    const Schedule s = Schedule::linear();
    const MixtureSpec mix;
    Rng rng(13);
    const int64_t n = 100000;
    std::vector<int64_t> counts(static_cast<size_t>(s.steps), 0);
    int64_t comp1 = 0, above_half = 0;
    for (int64_t i = 0; i < n; ++i) {
        const auto draw = diffusion::sample_timestep(s, mix, true, rng);
        REQUIRE(draw.t >= 1);
        REQUIRE(draw.t <= s.steps);
        comp1 += draw.component == 1;
        above_half += draw.t > s.steps / 2;
        ++counts[static_cast<size_t>(draw.t - 1)];
    }
    const double frac1 = static_cast<double>(comp1) / static_cast<double>(n);
    CHECK(std::abs(frac1 - 0.70) <= 0.01);

    // Late-step bias: clearly above the uniform 0.5.
    CHECK(static_cast<double>(above_half) / static_cast<double>(n) >= 0.55);

    const auto cdf = diffusion::mixture_cdf(s, mix);
    CHECK(ks_statistic(counts, cdf) < ks_critical(0.01, n));
}

TEST_CASE("mixture cdf cross-checked against direct evaluation") {
    const Schedule s = Schedule::linear();
    const MixtureSpec mix;
    const auto cdf = diffusion::mixture_cdf(s, mix);
    CHECK(cdf.back() == doctest::Approx(1.0).epsilon(1e-9));
    auto phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    const double sigma = 250.0;
    auto component_prob = [&](double mu, int64_t t) {
        const double lo = phi((0.5 - mu) / sigma);
        const double hi = phi((1000.5 - mu) / sigma);
        return (phi((static_cast<double>(t) + 0.5 - mu) / sigma) - lo) / (hi - lo);
    };
    for (int64_t t : {int64_t{1}, int64_t{250}, int64_t{700}, int64_t{999}}) {
        const double want = 0.7 * component_prob(700.0, t) + 0.3 * component_prob(0.0, t);
        CHECK(cdf[static_cast<size_t>(t - 1)] == doctest::Approx(want).epsilon(1e-9));
    }
    // Literal sigma=T reading stays selectable.
    MixtureSpec literal;
    literal.literal_sigma = true;
    CHECK(literal.sigma(1000) == 1000.0);
}

TEST_CASE("region mask by cell-center containment") {
    SUBCASE("quarter box on a 4x4 grid marks the 4 top-left cells") {
        const Tensor mask = diffusion::region_mask({BBox{0.0, 0.0, 0.5, 0.5}}, 4, 4);
        int64_t on = 0;
        for (double v : mask.data) on += v != 0.0;
        CHECK(on == 4);
        CHECK(mask.data[0] == 1.0);
        CHECK(mask.data[1] == 1.0);
        CHECK(mask.data[4] == 1.0);
        CHECK(mask.data[5] == 1.0);
    }
    SUBCASE("empty layout gives an all-zero mask") {
        const Tensor mask = diffusion::region_mask({}, 4, 4);
        for (double v : mask.data) CHECK(v == 0.0);
    }
    SUBCASE("overlapping boxes count once") {
        const Tensor mask =
            diffusion::region_mask({BBox{0.0, 0.0, 0.5, 0.5}, BBox{0.0, 0.0, 0.5, 0.5}}, 4, 4);
        for (double v : mask.data) CHECK(v <= 1.0);
    }
}

TEST_CASE("loss arithmetic") {
    Graph g;
    SUBCASE("uniform error: l_region equals l_layout, lambda=2 triples it") {
        const Tensor pred = Tensor::full({4, 3}, 1.5);
        const Tensor target = Tensor::full({4, 3}, 1.0);
        const Tensor mask = Tensor::full({4}, 1.0);
        const auto l = diffusion::build_losses(g, g.value(pred), g.value(target), mask, 2.0);
        CHECK(g.val(l.l_layout).data[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(g.val(l.l_region).data[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(g.val(l.l_total).data[0] == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("error confined to a quarter of the cells") {
        // 4 tokens, mask covers 1; unit squared error on the masked token only.
        Tensor pred = Tensor::zeros({4, 2});
        pred.at(0, 0) = 1.0;
        pred.at(0, 1) = 1.0;
        const Tensor target = Tensor::zeros({4, 2});
        Tensor mask = Tensor::zeros({4});
        mask.data[0] = 1.0;
        const auto l = diffusion::build_losses(g, g.value(pred), g.value(target), mask, 2.0);
        // l_layout = 2/8 = 0.25u with u=1, l_region = 1, total = 2.25.
        CHECK(g.val(l.l_layout).data[0] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(g.val(l.l_region).data[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(g.val(l.l_total).data[0] == doctest::Approx(2.25).epsilon(1e-12));
    }
    SUBCASE("lambda=0 reduces the total to the plain loss") {
        const Tensor pred = Tensor::full({4, 3}, 2.0);
        const Tensor target = Tensor::zeros({4, 3});
        const Tensor mask = Tensor::full({4}, 1.0);
        const auto l = diffusion::build_losses(g, g.value(pred), g.value(target), mask, 0.0);
        CHECK(g.val(l.l_total).data[0] == g.val(l.l_layout).data[0]);
    }
    SUBCASE("empty mask zeroes the region term") {
        const Tensor pred = Tensor::full({4, 3}, 2.0);
        const Tensor target = Tensor::zeros({4, 3});
        const auto l =
            diffusion::build_losses(g, g.value(pred), g.value(target), Tensor::zeros({4}), 2.0);
        CHECK(g.val(l.l_region).data[0] == 0.0);
        CHECK(g.val(l.l_total).data[0] == g.val(l.l_layout).data[0]);
    }
    SUBCASE("total is monotone in lambda for fixed predictions") {
        const Tensor pred = Tensor::full({4, 3}, 1.0);
        const Tensor target = Tensor::zeros({4, 3});
        Tensor mask = Tensor::zeros({4});
        mask.data[1] = 1.0;
        double prev = -1.0;
        for (double lambda : {0.0, 0.5, 1.0, 2.0, 5.0}) {
            const auto l = diffusion::build_losses(g, g.value(pred), g.value(target), mask, lambda);
            CHECK(g.val(l.l_total).data[0] >= prev);
            prev = g.val(l.l_total).data[0];
        }
    }
}

namespace {

mmdit::ModelWeights sampler_model() {
    mmdit::ModelConfig cfg;
    cfg.width = 8;
    cfg.blocks = 1;
    cfg.heads = 2;
    cfg.image_size = 4;
    cfg.patch = 2;
    cfg.caption_len = 2;
    cfg.region_len = 3;
    cfg.fourier = 2;
    cfg.max_entities = 4;
    cfg.vocab = 12;
    cfg.lora_rank = 3;
    Rng rng(5);
    auto w = mmdit::ModelWeights::init(cfg, mmdit::Variant::Siam, rng);
    for (auto& p : w.params())
        for (auto& v : p.value.data) v = rng.normal(0.0, 0.2);
    return w;
}

encoders::TokenizedLayout sampler_layout() {
    encoders::TokenizedLayout l;
    l.entities.push_back(encoders::TokenizedEntity{{3, 5, 0}, BBox{0.0, 0.0, 0.5, 0.5}});
    return l;
}

}  // namespace

TEST_CASE("ceil(0.3 S) layout window") {
    CHECK(diffusion::layout_active_steps(50) == 15);
    CHECK(diffusion::layout_active_steps(1) == 1);
    CHECK(diffusion::layout_active_steps(10) == 3);
    CHECK(diffusion::layout_active_steps(7) == 3);  // ceil(2.1)
}

TEST_CASE("sampler runs the layout path exactly in the first 30% of steps") {
    const auto w = sampler_model();
    const auto layout = sampler_layout();
    const Schedule s = Schedule::linear();
    for (const int64_t steps : {int64_t{1}, int64_t{10}, int64_t{50}}) {
        const auto result = diffusion::sample_image(w, s, {3, 7}, &layout, steps, 0.0, 99);
        REQUIRE(static_cast<int64_t>(result.layout_calls_per_step.size()) == steps);
        const int64_t active = diffusion::layout_active_steps(steps);
        for (int64_t i = 0; i < steps; ++i) {
            if (i < active)
                CHECK(result.layout_calls_per_step[static_cast<size_t>(i)] == 1);
            else
                CHECK(result.layout_calls_per_step[static_cast<size_t>(i)] == 0);
        }
        for (double v : result.image.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK_THROWS(diffusion::sample_image(w, s, {3, 7}, &layout, 0, 0.0, 99));
}

TEST_CASE("sampler is deterministic for a fixed seed and checkpoint") {
    const auto w = sampler_model();
    const auto layout = sampler_layout();
    const Schedule s = Schedule::linear();
    const auto a = diffusion::sample_image(w, s, {3, 7}, &layout, 10, 0.0, 42);
    const auto b = diffusion::sample_image(w, s, {3, 7}, &layout, 10, 0.0, 42);
    CHECK(a.image.bit_equal(b.image));
    const auto c = diffusion::sample_image(w, s, {3, 7}, &layout, 10, 0.0, 43);
    CHECK(!a.image.bit_equal(c.image));
    // eta > 0 stays deterministic given the seed.
    const auto d1 = diffusion::sample_image(w, s, {3, 7}, &layout, 10, 0.5, 42);
    const auto d2 = diffusion::sample_image(w, s, {3, 7}, &layout, 10, 0.5, 42);
    CHECK(d1.image.bit_equal(d2.image));
}
