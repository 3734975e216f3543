#include "layoutlab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace layoutlab::diagnostics {

using mmdit::ModelConfig;
using mmdit::Variant;

double top_fraction_mean(const std::vector<double>& values, double fraction) {
    if (values.empty()) throw std::invalid_argument("empty score region");
    const size_t k = std::max<size_t>(
        1, static_cast<size_t>(std::ceil(fraction * static_cast<double>(values.size()))));
    std::vector<double> copy = values;
    std::partial_sort(copy.begin(), copy.begin() + static_cast<std::ptrdiff_t>(k), copy.end(),
                      std::greater<double>());
    double sum = 0.0;
    for (size_t i = 0; i < k; ++i) sum += copy[i];
    return sum / static_cast<double>(k);
}

Similarity attn_similarity(const std::vector<mmdit::AttnMap>& maps) {
    struct Cell {
        double text = 0.0;
        double layout = 0.0;
        bool has_text = false;
        bool has_layout = false;
    };
    std::map<std::pair<int, int>, Cell> cells;

    for (const auto& map : maps) {
        auto region_mean = [&](int64_t col_begin, int64_t col_end) {
            std::vector<double> region;
            region.reserve(static_cast<size_t>((map.img_rows_end - map.img_rows_begin) *
                                               (col_end - col_begin)));
            const int64_t cols = map.probs.shape[1];
            for (int64_t i = map.img_rows_begin; i < map.img_rows_end; ++i)
                for (int64_t j = col_begin; j < col_end; ++j)
                    region.push_back(map.probs.data[static_cast<size_t>(i * cols + j)]);
            return top_fraction_mean(region, 0.01);
        };
        Cell& cell = cells[{map.block, map.head}];
        if (map.txt_cols_begin >= 0 && map.txt_cols_end > map.txt_cols_begin) {
            cell.text = region_mean(map.txt_cols_begin, map.txt_cols_end);
            cell.has_text = true;
        }
        if (map.lay_cols_begin >= 0 && map.lay_cols_end > map.lay_cols_begin) {
            cell.layout = region_mean(map.lay_cols_begin, map.lay_cols_end);
            cell.has_layout = true;
        }
    }

    Similarity out;
    std::map<int, std::pair<std::pair<double, int>, std::pair<double, int>>> per_block;
    for (const auto& [key, cell] : cells) {
        out.rows.push_back(HeadSimilarity{key.first, key.second, cell.text, cell.layout,
                                          cell.has_text, cell.has_layout});
        auto& blk = per_block[key.first];
        if (cell.has_text) {
            blk.first.first += cell.text;
            blk.first.second += 1;
        }
        if (cell.has_layout) {
            blk.second.first += cell.layout;
            blk.second.second += 1;
        }
    }
    double text_sum = 0.0, layout_sum = 0.0;
    int text_blocks = 0, layout_blocks = 0;
    for (const auto& [block, sums] : per_block) {
        if (sums.first.second > 0) {
            text_sum += sums.first.first / sums.first.second;
            ++text_blocks;
        }
        if (sums.second.second > 0) {
            layout_sum += sums.second.first / sums.second.second;
            ++layout_blocks;
        }
    }
    if (text_blocks > 0) {
        out.img_text = text_sum / text_blocks;
        out.has_text = true;
    }
    if (layout_blocks > 0) {
        out.img_layout = layout_sum / layout_blocks;
        out.has_layout = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

namespace {

// One attention modality set: AdaLN projection, two pre-norms, q/k/v/o
// with biases, and the 4d MLP.
int64_t modality_param_count(int64_t d) {
    const int64_t hid = 4 * d;
    int64_t n = 0;
    n += d * 6 * d + 6 * d;          // ada
    n += 4 * d;                      // ln1/ln2 gain+bias
    n += 4 * (d * d + d);            // wq,wk,wv,wo with biases
    n += d * hid + hid + hid * d + d;  // mlp
    return n;
}

}  // namespace

int64_t analytic_param_count(const ModelConfig& cfg, Variant variant) {
    const int64_t d = cfg.width;
    const int64_t hid = 4 * d;
    const int64_t r = cfg.lora_rank;
    const int64_t pd = cfg.patch_dim();

    int64_t n = 0;
    n += cfg.vocab * d;      // token table
    n += pd * d + d;         // patch projection
    n += cfg.blocks * 2 * modality_param_count(d);
    n += 2 * d + d * pd + pd;  // final norm + head

    if (variant == Variant::Base) return n;

    n += cfg.layout_in_dim() * d + d + d * d + d;  // layout encoder MLP

    switch (variant) {
        case Variant::Adapter:
            n += cfg.blocks * (3 * (d * d + d));  // k,v,o with biases
            break;
        case Variant::M3:
            n += cfg.blocks * modality_param_count(d);
            break;
        case Variant::Siam:
            n += cfg.blocks * (modality_param_count(d) + 3 * (d * d + d) + d * d);
            break;
        case Variant::SiamLora:
            // q/k/v wraps, the delta pair, and the first MLP layer wrap.
            n += cfg.blocks * (3 * (d * r + r * d) + (d * r + r * d) + (d * r + r * hid));
            break;
        default:
            break;
    }
    return n;
}

uint64_t analytic_forward_macs(const ModelConfig& cfg, Variant variant, int64_t entities) {
    const uint64_t d = static_cast<uint64_t>(cfg.width);
    const uint64_t hid = 4 * d;
    const uint64_t r = static_cast<uint64_t>(cfg.lora_rank);
    const uint64_t pd = static_cast<uint64_t>(cfg.patch_dim());
    const uint64_t tz = static_cast<uint64_t>(cfg.image_tokens());
    const uint64_t tp = static_cast<uint64_t>(cfg.caption_len);
    const uint64_t n = static_cast<uint64_t>(entities);
    const uint64_t blocks = static_cast<uint64_t>(cfg.blocks);

    // With no entities every variant reduces to the base path.
    const bool lay = variant != Variant::Base && n > 0;

    uint64_t macs = tz * pd * d;  // patch projection

    // Layout encoder: per entity one (d+8F)->d and one d->d product.
    if (lay) macs += n * (static_cast<uint64_t>(cfg.layout_in_dim()) * d + d * d);

    const uint64_t t_main = tz + tp + (variant == Variant::M3 && lay ? n : 0);
    for (uint64_t b = 0; b < blocks; ++b) {
        macs += 2 * (d * 6 * d);               // img + txt AdaLN
        macs += 3 * tz * d * d + tz * d * d;   // img qkv + output projection
        macs += 3 * tp * d * d + tp * d * d;   // txt qkv + output projection
        macs += 2 * t_main * t_main * d;       // joint attention scores + AV
        macs += 8 * tz * d * d + 8 * tp * d * d;  // MLPs

        if (!lay) continue;
        switch (variant) {
            case Variant::Adapter:
                macs += 2 * n * d * d;      // layout k,v
                macs += 2 * tz * n * d;     // cross attention
                macs += tz * d * d;         // zero-initialized output projection
                break;
            case Variant::M3:
                macs += d * 6 * d;          // layout AdaLN
                macs += 3 * n * d * d;      // layout qkv (joint term already counts attention)
                macs += n * d * d;          // layout output projection
                macs += 8 * n * d * d;      // layout MLP
                break;
            case Variant::Siam:
                macs += d * 6 * d;          // layout AdaLN
                macs += 3 * n * d * d + n * d * d + 8 * n * d * d;  // layout qkv/o/MLP
                macs += 3 * tz * d * d;     // primed image qkv
                macs += 2 * (tz + n) * (tz + n) * d;  // branch attention
                macs += tz * d * d;         // delta projection
                break;
            case Variant::SiamLora:
                // Text AdaLN is reused for the layout stream, so no extra
                // modulation product appears here.
                macs += 3 * n * d * d + n * d * d;         // layout qkv/o via frozen text weights
                macs += 8 * n * d * d + n * d * r + n * r * hid;  // layout MLP + w1 wrap
                macs += 3 * tz * d * d + 3 * (tz * d * r + tz * r * d);  // primed qkv wraps
                macs += 2 * (tz + n) * (tz + n) * d;       // branch attention
                macs += tz * d * r + tz * r * d;           // delta pair
                break;
            default:
                break;
        }
    }
    macs += tz * d * pd;  // output head
    return macs;
}

std::string CostReport::to_json() const {
    nlohmann::json j;
    j["variant"] = variant;
    j["entities"] = entities;
    j["mac_convention"] =
        "1 MAC per multiply-accumulate in matrix products (projections, attention scores, "
        "attention-value products, MLPs); softmax, normalization, GELU and bias adds excluded; "
        "MACs cover one layout-conditioned denoising step";
    j["base_params"] = base_params;
    j["extra_params"] = extra_params;
    j["extra_param_ratio"] = extra_param_ratio;
    j["base_macs"] = base_macs;
    j["extra_macs"] = extra_macs;
    j["extra_mac_ratio"] = extra_mac_ratio;
    return j.dump(2);
}

CostReport count_costs(const ModelConfig& cfg, Variant variant, int64_t entities) {
    cfg.validate();
    CostReport report;
    report.variant = mmdit::variant_name(variant);
    report.entities = entities;
    report.base_params = analytic_param_count(cfg, Variant::Base);
    report.extra_params = analytic_param_count(cfg, variant) - report.base_params;
    report.extra_param_ratio =
        static_cast<double>(report.extra_params) / static_cast<double>(report.base_params);
    report.base_macs = analytic_forward_macs(cfg, Variant::Base, 0);
    report.extra_macs = analytic_forward_macs(cfg, variant, entities) - report.base_macs;
    report.extra_mac_ratio =
        static_cast<double>(report.extra_macs) / static_cast<double>(report.base_macs);
    return report;
}

}  // namespace layoutlab::diagnostics
