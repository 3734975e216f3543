#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/diffusion.hpp"
#include "layoutlab/model.hpp"
#include "layoutlab/scenes.hpp"

namespace layoutlab::training {

struct TrainConfig {
    int64_t steps = 5000;
    int64_t batch = 8;
    double lr = 1e-3;
    std::string optimizer = "adam";  // adam | sgd (momentum 0.9)
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double lambda_region = 2.0;
    bool bias_sampling = true;
    diffusion::MixtureSpec mixture;
    uint64_t seed = 1;

    // Attention-similarity probe on a fixed batch (0 disables).
    int64_t probe_interval = 250;
    int64_t probe_samples = 2;

    // Convergence probe: sample a few held-out scenes and score spatial
    // adherence with the pixel oracle (0 disables).
    int64_t conv_interval = 0;
    int64_t conv_scenes = 32;
    int64_t conv_sample_steps = 20;

    std::string to_json() const;
    void merge_json(const std::string& text);  // fields present in text win
};

struct StepMetrics {
    int64_t step = 0;
    double l_layout = 0.0;
    double l_region = 0.0;
    double l_total = 0.0;
};

struct ProbeRow {
    int64_t step = 0;
    int block = 0;
    int head = 0;
    double sim_text = 0.0;
    double sim_layout = 0.0;
};

struct ProbePoint {
    int64_t step = 0;
    double sim_text = 0.0;
    double sim_layout = 0.0;
};

struct ConvPoint {
    int64_t step = 0;
    double spatial = 0.0;
};

struct TrainResult {
    mmdit::ModelWeights weights;
    std::vector<StepMetrics> metrics;
    std::vector<ProbeRow> probe_rows;
    std::vector<ProbePoint> probe_points;
    std::vector<ConvPoint> conv_points;
};

// Phase one: train every base parameter on (image, caption) pairs with the
// plain denoising loss. Only the Base variant is allowed here.
TrainResult pretrain_base(const std::vector<scenes::Scene>& data,
                          const encoders::Vocabulary& vocab, const mmdit::ModelConfig& model_cfg,
                          const TrainConfig& cfg);

// Phase two: extend a pretrained base with the chosen layout variant and
// train only the new parameters; the pretrained set is never updated.
// conv_eval supplies held-out scenes for the convergence probe.
TrainResult train_layout(const mmdit::ModelWeights& base, mmdit::Variant variant,
                         const std::vector<scenes::Scene>& data,
                         const encoders::Vocabulary& vocab, const TrainConfig& cfg,
                         const std::vector<scenes::Scene>* conv_eval = nullptr);

}  // namespace layoutlab::training
