#include <doctest.h>

#include <cmath>

#include "layoutlab/diagnostics.hpp"
#include "layoutlab/encoders.hpp"
#include "layoutlab/model.hpp"

using namespace layoutlab;
using diagnostics::top_fraction_mean;
using encoders::TokenizedEntity;
using encoders::TokenizedLayout;
using mmdit::AttnMap;
using mmdit::ModelConfig;
using mmdit::ModelWeights;
using mmdit::Variant;
using numcore::Graph;
using numcore::Tensor;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.width = 8;
    cfg.blocks = 2;
    cfg.heads = 2;
    cfg.image_size = 8;
    cfg.patch = 4;  // 4 image tokens
    cfg.caption_len = 3;
    cfg.region_len = 3;
    cfg.fourier = 2;
    cfg.max_entities = 10;
    cfg.vocab = 12;
    cfg.lora_rank = 3;
    return cfg;
}

TokenizedLayout n_entities(int64_t n) {
    TokenizedLayout layout;
    for (int64_t i = 0; i < n; ++i) {
        const double x = 0.05 + 0.09 * static_cast<double>(i % 10);
        layout.entities.push_back(TokenizedEntity{{3, 5, 0}, BBox{x, 0.1, x + 0.08, 0.3}});
    }
    return layout;
}

uint64_t instrumented_macs(const ModelConfig& cfg, Variant variant, int64_t entities) {
    Rng rng(3);
    const ModelWeights w = ModelWeights::init(cfg, variant, rng);
    Rng zr(4);
    const Tensor z = Tensor::randn({cfg.image_tokens(), cfg.patch_dim()}, zr);
    std::vector<int64_t> caption(static_cast<size_t>(cfg.caption_len), 3);
    const TokenizedLayout layout = n_entities(entities);
    Graph g;
    mmdit::forward_tokens(g, w, mmdit::Phase::Inference, z, caption,
                          entities > 0 ? &layout : nullptr, 0.7);
    return g.macs();
}

}  // namespace

TEST_CASE("top-1% mean rules") {
    std::vector<double> values(200);
    for (size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(i);
    // ceil(0.01 * 200) = 2 entries: 199 and 198.
    CHECK(top_fraction_mean(values, 0.01) == doctest::Approx(198.5));
    // Fewer than 100 entries still use at least one.
    CHECK(top_fraction_mean({0.25, 0.5, 0.125}, 0.01) == doctest::Approx(0.5));
    CHECK_THROWS(top_fraction_mean({}, 0.01));
}

TEST_CASE("similarity extraction: uniform and one-hot maps") {
    const int64_t tz = 4, tp = 3, tn = 2;
    const int64_t keys = tz + tp + tn;
    AttnMap uniform;
    uniform.block = 0;
    uniform.head = 0;
    uniform.probs = Tensor::full({keys, keys}, 1.0 / static_cast<double>(keys));
    uniform.img_rows_begin = 0;
    uniform.img_rows_end = tz;
    uniform.txt_cols_begin = tz;
    uniform.txt_cols_end = tz + tp;
    uniform.lay_cols_begin = tz + tp;
    uniform.lay_cols_end = keys;

    const auto sim = diagnostics::attn_similarity({uniform});
    REQUIRE(sim.has_text);
    REQUIRE(sim.has_layout);
    CHECK(sim.img_text == doctest::Approx(1.0 / 9.0));
    CHECK(sim.img_layout == doctest::Approx(1.0 / 9.0));

    // One-hot attention onto a layout key.
    AttnMap onehot = uniform;
    onehot.probs = Tensor::zeros({keys, keys});
    for (int64_t i = 0; i < keys; ++i) onehot.probs.at(i, tz + tp) = 1.0;
    const auto sim1 = diagnostics::attn_similarity({onehot});
    CHECK(sim1.img_layout == doctest::Approx(1.0));
    CHECK(sim1.img_text == doctest::Approx(0.0));
}

TEST_CASE("absent modality is omitted, not zero") {
    AttnMap only_text;
    only_text.block = 1;
    only_text.head = 0;
    only_text.probs = Tensor::full({6, 6}, 1.0 / 6.0);
    only_text.img_rows_begin = 0;
    only_text.img_rows_end = 4;
    only_text.txt_cols_begin = 4;
    only_text.txt_cols_end = 6;
    const auto sim = diagnostics::attn_similarity({only_text});
    CHECK(sim.has_text);
    CHECK(!sim.has_layout);
}

TEST_CASE("captured maps from a real forward: rows sum to 1, scores averaged over heads then blocks") {
    const ModelConfig cfg = small_config();
    Rng rng(9);
    ModelWeights w = ModelWeights::init(cfg, Variant::M3, rng);
    for (auto& p : w.params())
        for (auto& v : p.value.data) v = rng.normal(0.0, 0.25);
    Rng zr(10);
    const Tensor z = Tensor::randn({cfg.image_tokens(), cfg.patch_dim()}, zr);
    const TokenizedLayout layout = n_entities(2);
    std::vector<AttnMap> maps;
    Graph g;
    mmdit::ForwardOptions opts;
    opts.capture = &maps;
    mmdit::forward_tokens(g, w, mmdit::Phase::Inference, z, {3, 5, 7}, &layout, 0.5, opts);
    REQUIRE(maps.size() == static_cast<size_t>(cfg.blocks * cfg.heads));
    for (const auto& map : maps)
        for (int64_t i = 0; i < map.probs.shape[0]; ++i) {
            double sum = 0.0;
            for (int64_t j = 0; j < map.probs.shape[1]; ++j) sum += map.probs.at(i, j);
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }

    const auto sim = diagnostics::attn_similarity(maps);
    REQUIRE(sim.rows.size() == maps.size());
    // Cross-check the head-then-block averaging by hand.
    double want = 0.0;
    for (int64_t b = 0; b < cfg.blocks; ++b) {
        double block_sum = 0.0;
        for (const auto& row : sim.rows)
            if (row.block == b) block_sum += row.img_layout;
        want += block_sum / static_cast<double>(cfg.heads);
    }
    want /= static_cast<double>(cfg.blocks);
    CHECK(sim.img_layout == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("MAC convention: matmul 2x3 by 3x4 costs 24") {
    Graph g;
    Rng rng(1);
    g.matmul(g.value(Tensor::randn({2, 3}, rng)), g.value(Tensor::randn({3, 4}, rng)));
    CHECK(g.macs() == 24);
}

TEST_CASE("base variant reports zero extra cost at any entity count") {
    ModelConfig cfg = small_config();
    for (int64_t n : {0, 1, 5, 10}) {
        const auto report = diagnostics::count_costs(cfg, Variant::Base, n);
        CHECK(report.extra_params == 0);
        CHECK(report.extra_macs == 0);
        CHECK(report.extra_param_ratio == 0.0);
        CHECK(report.extra_mac_ratio == 0.0);
    }
}

TEST_CASE("analytic parameter count equals the actual registry for every variant") {
    for (ModelConfig cfg : {small_config(), ModelConfig{}}) {
        if (cfg.vocab == 0) cfg.vocab = 23;  // default config needs a vocab size
        for (const Variant v : {Variant::Base, Variant::Adapter, Variant::M3, Variant::Siam,
                                Variant::SiamLora}) {
            CAPTURE(cfg.width);
            CAPTURE(mmdit::variant_name(v));
            Rng rng(2);
            const ModelWeights w = ModelWeights::init(cfg, v, rng);
            CHECK(diagnostics::analytic_param_count(cfg, v) == w.total_params());
            CHECK(diagnostics::analytic_param_count(cfg, v) -
                      diagnostics::analytic_param_count(cfg, Variant::Base) ==
                  w.layout_params());
        }
    }
}

TEST_CASE("analytic MACs equal the instrumented counter for every variant and entity count") {
    const ModelConfig cfg = small_config();
    for (const Variant v : {Variant::Base, Variant::Adapter, Variant::M3, Variant::Siam,
                            Variant::SiamLora}) {
        for (const int64_t n : {0, 1, 5, 10}) {
            CAPTURE(mmdit::variant_name(v));
            CAPTURE(n);
            CHECK(diagnostics::analytic_forward_macs(cfg, v, n) == instrumented_macs(cfg, v, n));
        }
    }
}

TEST_CASE("extra parameters are ordered: siam-lora < adapter < m3 < siam at the default width") {
    ModelConfig cfg;  // library defaults: d=64, 4 blocks
    cfg.vocab = 23;
    const auto extra = [&](Variant v) {
        return diagnostics::count_costs(cfg, v, 10).extra_params;
    };
    CHECK(extra(Variant::SiamLora) < extra(Variant::Adapter));
    CHECK(extra(Variant::Adapter) < extra(Variant::M3));
    CHECK(extra(Variant::M3) < extra(Variant::Siam));
}

TEST_CASE("siam extra MACs grow affinely in the entity count") {
    const ModelConfig cfg = small_config();
    const auto extra = [&](int64_t n) {
        return static_cast<int64_t>(diagnostics::count_costs(cfg, Variant::Siam, n).extra_macs);
    };
    // The joint image-layout attention adds an exact quadratic term with
    // coefficient 2*d*blocks on top of the linear growth; everything else
    // is affine in N. Remove it and demand exact affinity.
    const int64_t q = 2 * cfg.width * cfg.blocks;
    const auto affine_part = [&](int64_t n) { return extra(n) - q * n * n; };
    const int64_t slope = (affine_part(5) - affine_part(1)) / 4;
    CHECK(affine_part(5) - affine_part(1) == 4 * slope);
    CHECK(affine_part(10) - affine_part(5) == 5 * slope);

    // At a realistic token count the quadratic remainder is a sliver of
    // the whole, so the growth is affine for practical purposes.
    ModelConfig big;
    big.vocab = 23;
    const auto big_extra = [&](int64_t n) {
        return static_cast<int64_t>(diagnostics::count_costs(big, Variant::Siam, n).extra_macs);
    };
    const double quad_share = static_cast<double>(2 * big.width * big.blocks * 100) /
                              static_cast<double>(big_extra(10));
    CHECK(quad_share < 0.02);
}

TEST_CASE("cost report json carries the convention header") {
    ModelConfig cfg = small_config();
    const auto report = diagnostics::count_costs(cfg, Variant::Siam, 10);
    const std::string text = report.to_json();
    CHECK(text.find("mac_convention") != std::string::npos);
    CHECK(text.find("denoising step") != std::string::npos);
}
