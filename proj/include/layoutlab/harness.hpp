#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layoutlab/diffusion.hpp"
#include "layoutlab/model.hpp"
#include "layoutlab/scenes.hpp"
#include "layoutlab/training.hpp"

namespace layoutlab::harness {

// Every run directory gets a manifest naming its outputs, the config
// hash, the seed and the build id; reruns with the same inputs produce
// byte-identical trees.
void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& config_json, uint64_t seed,
                    const std::vector<std::string>& outputs);

struct EvalSummary {
    double spatial = 0.0;
    double color = 0.0;
    double shape = 0.0;
    int64_t scenes = 0;
};

// Samples one image per eval scene (fixed per-scene seeds) and scores it
// with the pixel oracle against the scene layout.
EvalSummary evaluate(const mmdit::ModelWeights& weights, const std::vector<scenes::Scene>& eval_set,
                     const encoders::Vocabulary& vocab, int64_t sample_steps, uint64_t seed,
                     bool use_layout);

// Desk-scale experiment preset: sized so a full ablation stays within a
// couple of hours on one laptop core. The library defaults stay larger;
// this is the configuration the `ablate` command and the acceptance suite
// run with.
struct Preset {
    mmdit::ModelConfig model;
    scenes::SceneConfig scene;
    training::TrainConfig pretrain;
    training::TrainConfig layout;
    int64_t train_scenes = 2000;
    int64_t eval_scenes = 500;
    int64_t eval_sample_steps = 50;
    uint64_t data_seed = 9001;
    uint64_t eval_data_seed = 77001;
};

Preset desk_preset();

struct CellResult {
    std::string variant;
    uint64_t seed = 0;
    bool bias_sampling = true;
    double lambda_region = 2.0;
    EvalSummary eval;
    int64_t steps_to_threshold = -1;  // -1: threshold never reached
    std::vector<training::ProbePoint> probes;
};

struct AblateConfig {
    std::vector<mmdit::Variant> variants{mmdit::Variant::Adapter, mmdit::Variant::M3,
                                         mmdit::Variant::Siam};
    int64_t seeds = 3;
    std::string out_dir;
    int jobs = 1;
    double conv_threshold = 0.5;
    Preset preset = desk_preset();
};

struct AblateReport {
    std::vector<CellResult> variant_cells;   // per (variant, seed), strategies on
    std::vector<CellResult> strategy_cells;  // siam under the 2x2 strategy grid
    EvalSummary chance;                      // unconditioned-model baseline
};

AblateReport run_ablation(const AblateConfig& cfg);

// Median over per-seed values of a metric in matching cells.
double median(std::vector<double> values);

}  // namespace layoutlab::harness
