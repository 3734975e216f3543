#include "layoutlab/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <json.hpp>

#include "layoutlab/checkpoint.hpp"
#include "layoutlab/metrics.hpp"

namespace layoutlab::harness {

namespace fs = std::filesystem;
using mmdit::ModelWeights;
using mmdit::Variant;
using nlohmann::json;
using training::TrainConfig;
using training::TrainResult;

#ifndef LAYOUTLAB_BUILD_ID
#define LAYOUTLAB_BUILD_ID "unknown"
#endif

void write_manifest(const std::string& dir, const std::string& command,
                    const std::string& config_json, uint64_t seed,
                    const std::vector<std::string>& outputs) {
    json j;
    j["command"] = command;
    j["config_hash"] = metrics::fnv1a(config_json);
    j["seed"] = seed;
    j["build_id"] = LAYOUTLAB_BUILD_ID;
    j["outputs"] = outputs;
    fs::create_directories(dir);
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    out << j.dump(2) << "\n";
}

EvalSummary evaluate(const ModelWeights& weights, const std::vector<scenes::Scene>& eval_set,
                     const encoders::Vocabulary& vocab, int64_t sample_steps, uint64_t seed,
                     bool use_layout) {
    const auto& cfg = weights.config();
    const diffusion::Schedule schedule = diffusion::Schedule::linear();
    EvalSummary summary;
    summary.scenes = static_cast<int64_t>(eval_set.size());
    for (size_t i = 0; i < eval_set.size(); ++i) {
        const auto& scene = eval_set[i];
        const auto caption_ids = vocab.tokenize(scene.layout.caption, cfg.caption_len);
        encoders::TokenizedLayout layout = encoders::tokenize_layout(
            scene.layout, vocab, cfg.caption_len, cfg.region_len, cfg.max_entities);
        const auto sampled = diffusion::sample_image(
            weights, schedule, caption_ids, use_layout ? &layout : nullptr, sample_steps, 0.0,
            seed + 131 * static_cast<uint64_t>(i));
        const auto report = scenes::oracle_eval(sampled.image, scene.layout);
        summary.spatial += report.spatial_rate;
        summary.color += report.color_rate;
        summary.shape += report.shape_rate;
    }
    if (!eval_set.empty()) {
        summary.spatial /= static_cast<double>(eval_set.size());
        summary.color /= static_cast<double>(eval_set.size());
        summary.shape /= static_cast<double>(eval_set.size());
    }
    return summary;
}

Preset desk_preset() {
    Preset p;
    p.model.width = 24;
    p.model.blocks = 2;
    p.model.heads = 4;
    p.model.image_size = 32;
    p.model.patch = 4;
    p.model.caption_len = 16;
    p.model.region_len = 4;
    p.model.fourier = 8;
    p.model.max_entities = 10;
    p.model.lora_rank = 8;

    p.scene.image_size = 32;
    p.scene.grid = 8;
    p.scene.min_entities = 1;
    p.scene.max_entities = 4;
    p.scene.min_box_cells = 2;
    p.scene.max_box_cells = 4;

    p.pretrain.steps = 8000;
    p.pretrain.batch = 8;
    p.pretrain.lr = 1e-3;
    p.pretrain.lambda_region = 0.0;
    p.pretrain.bias_sampling = false;
    p.pretrain.probe_interval = 0;
    p.pretrain.conv_interval = 0;
    p.pretrain.seed = 41;

    p.layout.steps = 5000;
    p.layout.batch = 8;
    p.layout.lr = 1e-3;
    p.layout.lambda_region = 2.0;
    p.layout.bias_sampling = true;
    p.layout.probe_interval = 250;
    p.layout.probe_samples = 2;
    p.layout.conv_interval = 500;
    p.layout.conv_scenes = 32;
    p.layout.conv_sample_steps = 20;

    return p;
}

namespace {

std::vector<scenes::Scene> generate_scenes(const scenes::SceneConfig& cfg, uint64_t seed,
                                           int64_t count) {
    std::vector<scenes::Scene> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i)
        out.push_back(scenes::gen_scene(cfg, seed + static_cast<uint64_t>(i)));
    return out;
}

std::vector<std::vector<std::string>> metrics_rows(const TrainResult& result) {
    // Probe values appear on their own steps, blank elsewhere.
    std::vector<std::vector<std::string>> rows;
    auto probe_at = [&](int64_t step) -> const training::ProbePoint* {
        for (const auto& p : result.probe_points)
            if (p.step == step) return &p;
        return nullptr;
    };
    auto conv_at = [&](int64_t step) -> const training::ConvPoint* {
        for (const auto& c : result.conv_points)
            if (c.step == step) return &c;
        return nullptr;
    };
    for (const auto& m : result.metrics) {
        std::vector<std::string> row{std::to_string(m.step), metrics::fmt(m.l_layout),
                                     metrics::fmt(m.l_region), metrics::fmt(m.l_total)};
        const auto* p = probe_at(m.step);
        row.push_back(p ? metrics::fmt(p->sim_text) : "");
        row.push_back(p ? metrics::fmt(p->sim_layout) : "");
        const auto* c = conv_at(m.step);
        row.push_back(c ? metrics::fmt(c->spatial) : "");
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_run_outputs(const std::string& dir, const TrainResult& result,
                       const std::string& command, const std::string& config_json, uint64_t seed) {
    fs::create_directories(dir);
    checkpoint::save(dir + "/ckpt.llck", result.weights, result.metrics.empty()
                                                             ? 0
                                                             : result.metrics.back().step,
                     seed);
    metrics::write_csv(dir + "/metrics.csv",
                       {"step", "l_layout", "l_region", "l_total", "sim_text", "sim_layout",
                        "spatial"},
                       metrics_rows(result));

    std::vector<std::vector<std::string>> diag_rows;
    for (const auto& r : result.probe_rows)
        diag_rows.push_back({std::to_string(r.step), std::to_string(r.block),
                             std::to_string(r.head), metrics::fmt(r.sim_text),
                             metrics::fmt(r.sim_layout)});
    metrics::write_csv(dir + "/diagnostics.csv", {"step", "block", "head", "sim_text", "sim_layout"},
                       diag_rows);

    std::vector<std::string> outputs{"ckpt.llck", "metrics.csv", "diagnostics.csv"};
    if (!result.probe_points.empty()) {
        metrics::Series st{"image-text", {}}, sl{"image-layout", {}};
        for (const auto& p : result.probe_points) {
            st.points.emplace_back(static_cast<double>(p.step), p.sim_text);
            sl.points.emplace_back(static_cast<double>(p.step), p.sim_layout);
        }
        metrics::write_svg_chart(dir + "/similarity.svg", "attention similarity", "step",
                                 "top-1% score", {st, sl});
        outputs.push_back("similarity.svg");
    }
    write_manifest(dir, command, config_json, seed, outputs);
}

int64_t steps_to_threshold(const TrainResult& result, double threshold) {
    for (const auto& c : result.conv_points)
        if (c.spatial >= threshold) return c.step;
    return -1;
}

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of empty set");
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

AblateReport run_ablation(const AblateConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("ablation needs an output directory");
    const Preset& preset = cfg.preset;
    fs::create_directories(cfg.out_dir);

    encoders::Vocabulary vocab = encoders::Vocabulary::defaults();
    mmdit::ModelConfig model_cfg = preset.model;
    model_cfg.vocab = vocab.size();
    model_cfg.validate();
    {
        std::ofstream out(cfg.out_dir + "/vocab.json");
        out << vocab.to_json() << "\n";
    }

    // Datasets: training and evaluation scenes come from disjoint seed
    // ranges.
    const auto train_set = generate_scenes(preset.scene, preset.data_seed, preset.train_scenes);
    const auto eval_set = generate_scenes(preset.scene, preset.eval_data_seed, preset.eval_scenes);
    scenes::write_dataset(cfg.out_dir + "/data/train", train_set);
    scenes::write_dataset(cfg.out_dir + "/data/eval", eval_set);

    // Shared pretrained backbone.
    TrainResult base = training::pretrain_base(train_set, vocab, model_cfg, preset.pretrain);
    write_run_outputs(cfg.out_dir + "/base", base, "pretrain", preset.pretrain.to_json(),
                      preset.pretrain.seed);

    AblateReport report;
    report.chance = evaluate(base.weights, eval_set, vocab, preset.eval_sample_steps,
                             preset.data_seed, /*use_layout=*/false);

    struct Cell {
        Variant variant;
        uint64_t seed;
        bool bias;
        double lambda;
        std::string dir;
        bool strategy_cell;
    };
    std::vector<Cell> cells;
    for (Variant v : cfg.variants)
        for (int64_t s = 1; s <= cfg.seeds; ++s)
            cells.push_back(Cell{v, static_cast<uint64_t>(s), true, preset.layout.lambda_region,
                                 cfg.out_dir + "/" + mmdit::variant_name(v) + "/seed" +
                                     std::to_string(s),
                                 false});
    // Strategy grid on the siamese variant; the both-on cell reuses the
    // variant run above.
    const std::array<std::pair<bool, double>, 3> extra_conditions{
        std::pair<bool, double>{true, 0.0}, {false, preset.layout.lambda_region}, {false, 0.0}};
    for (const auto& [bias, lambda] : extra_conditions)
        for (int64_t s = 1; s <= cfg.seeds; ++s)
            cells.push_back(Cell{Variant::Siam, static_cast<uint64_t>(s), bias, lambda,
                                 cfg.out_dir + "/strategies/bias" + (bias ? "1" : "0") + "_lambda" +
                                     metrics::fmt(lambda) + "/seed" + std::to_string(s),
                                 true});

    std::vector<CellResult> results(cells.size());
    auto run_cell = [&](size_t idx) {
        const Cell& cell = cells[idx];
        TrainConfig tc = preset.layout;
        tc.seed = cell.seed;
        tc.bias_sampling = cell.bias;
        tc.lambda_region = cell.lambda;
        // Convergence probes feed the strategy comparison, which only runs
        // on the siamese variant.
        if (cell.variant != Variant::Siam) tc.conv_interval = 0;
        TrainResult r = training::train_layout(base.weights, cell.variant, train_set, vocab, tc,
                                               &eval_set);
        write_run_outputs(cell.dir, r, "train-layout " + mmdit::variant_name(cell.variant),
                          tc.to_json(), cell.seed);

        CellResult out;
        out.variant = mmdit::variant_name(cell.variant);
        out.seed = cell.seed;
        out.bias_sampling = cell.bias;
        out.lambda_region = cell.lambda;
        out.eval = evaluate(r.weights, eval_set, vocab, preset.eval_sample_steps, preset.data_seed,
                            /*use_layout=*/true);
        out.steps_to_threshold = steps_to_threshold(r, cfg.conv_threshold);
        out.probes = r.probe_points;

        metrics::write_csv(cell.dir + "/eval.csv", {"variant", "seed", "spatial", "color", "shape"},
                           {{out.variant, std::to_string(out.seed), metrics::fmt(out.eval.spatial),
                             metrics::fmt(out.eval.color), metrics::fmt(out.eval.shape)}});
        results[idx] = std::move(out);
    };

    if (cfg.jobs <= 1) {
        for (size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        // Cells are independent; parallel cells each run their kernels
        // serially to avoid oversubscription.
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        const int team = std::max(1u, std::thread::hardware_concurrency() /
                                          static_cast<unsigned>(cfg.jobs));
        for (int j = 0; j < cfg.jobs; ++j)
            pool.emplace_back([&, team] {
#ifdef _OPENMP
                omp_set_num_threads(team);
#endif
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= cells.size()) break;
                    run_cell(i);
                }
            });
        for (auto& t : pool) t.join();
    }

    for (size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].strategy_cell)
            report.strategy_cells.push_back(results[i]);
        else {
            report.variant_cells.push_back(results[i]);
            if (cells[i].variant == Variant::Siam)  // both-strategies-on condition
                report.strategy_cells.push_back(results[i]);
        }
    }

    // Merged tables.
    std::vector<std::vector<std::string>> rows;
    for (const auto& c : report.variant_cells)
        rows.push_back({c.variant, std::to_string(c.seed), metrics::fmt(c.eval.spatial),
                        metrics::fmt(c.eval.color), metrics::fmt(c.eval.shape)});
    rows.push_back({"chance", "0", metrics::fmt(report.chance.spatial),
                    metrics::fmt(report.chance.color), metrics::fmt(report.chance.shape)});
    metrics::write_csv(cfg.out_dir + "/ablation.csv", {"variant", "seed", "spatial", "color", "shape"},
                       rows);

    std::vector<std::vector<std::string>> conv_rows;
    for (const auto& c : report.strategy_cells)
        conv_rows.push_back({c.bias_sampling ? "1" : "0", metrics::fmt(c.lambda_region),
                             std::to_string(c.seed), std::to_string(c.steps_to_threshold)});
    metrics::write_csv(cfg.out_dir + "/convergence.csv",
                       {"bias_sampling", "lambda_region", "seed", "steps_to_threshold"}, conv_rows);

    // Ordering summary with per-variant medians.
    json summary;
    for (const auto& c : report.variant_cells)
        summary["cells"].push_back({{"variant", c.variant},
                                    {"seed", c.seed},
                                    {"spatial", c.eval.spatial},
                                    {"color", c.eval.color},
                                    {"shape", c.eval.shape}});
    for (Variant v : cfg.variants) {
        std::vector<double> spatials;
        for (const auto& c : report.variant_cells)
            if (c.variant == mmdit::variant_name(v)) spatials.push_back(c.eval.spatial);
        if (!spatials.empty()) summary["median_spatial"][mmdit::variant_name(v)] = median(spatials);
    }
    summary["chance_spatial"] = report.chance.spatial;
    {
        std::ofstream out(cfg.out_dir + "/summary.json");
        out << summary.dump(2) << "\n";
    }

    write_manifest(cfg.out_dir, "ablate",
                   preset.pretrain.to_json() + preset.layout.to_json() + model_cfg.to_json(),
                   preset.data_seed,
                   {"vocab.json", "data/train", "data/eval", "base", "ablation.csv",
                    "convergence.csv", "summary.json"});
    return report;
}

}  // namespace layoutlab::harness
