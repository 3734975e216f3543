#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/model.hpp"

namespace layoutlab::diagnostics {

// Cross-modal attention similarity: mean of the top 1% (at least one
// entry) of the image-query x target-key region of a post-softmax map,
// averaged over heads and then blocks. A score exists only when the
// modality was present in the maps.
struct HeadSimilarity {
    int block = 0;
    int head = 0;
    double img_text = 0.0;
    double img_layout = 0.0;
    bool has_text = false;
    bool has_layout = false;
};

struct Similarity {
    std::vector<HeadSimilarity> rows;
    double img_text = 0.0;
    double img_layout = 0.0;
    bool has_text = false;
    bool has_layout = false;
};

double top_fraction_mean(const std::vector<double>& values, double fraction);

Similarity attn_similarity(const std::vector<mmdit::AttnMap>& maps);

// Analytic parameter and MAC accounting. MAC convention: one multiply-
// accumulate per matrix-product element contribution; softmax, norms,
// GELU and bias adds are excluded. MACs describe one layout-conditioned
// denoising step with a full-length caption and N entities.
int64_t analytic_param_count(const mmdit::ModelConfig& cfg, mmdit::Variant variant);
uint64_t analytic_forward_macs(const mmdit::ModelConfig& cfg, mmdit::Variant variant,
                               int64_t entities);

struct CostReport {
    std::string variant;
    int64_t entities = 0;
    int64_t base_params = 0;
    int64_t extra_params = 0;
    double extra_param_ratio = 0.0;
    uint64_t base_macs = 0;
    uint64_t extra_macs = 0;
    double extra_mac_ratio = 0.0;

    std::string to_json() const;
};

CostReport count_costs(const mmdit::ModelConfig& cfg, mmdit::Variant variant, int64_t entities);

}  // namespace layoutlab::diagnostics
