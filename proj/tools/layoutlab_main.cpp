#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "layoutlab/checkpoint.hpp"
#include "layoutlab/diagnostics.hpp"
#include "layoutlab/diffusion.hpp"
#include "layoutlab/harness.hpp"
#include "layoutlab/layoutkit.hpp"
#include "layoutlab/metrics.hpp"
#include "layoutlab/model.hpp"
#include "layoutlab/scenes.hpp"
#include "layoutlab/training.hpp"

namespace {

using namespace layoutlab;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

encoders::Vocabulary load_vocab(const std::string& data_dir) {
    const std::string path = data_dir + "/vocab.json";
    if (std::filesystem::exists(path)) return encoders::Vocabulary::from_json(read_file(path));
    return encoders::Vocabulary::defaults();
}

void add_model_flags(CLI::App* cmd, mmdit::ModelConfig& cfg) {
    cmd->add_option("--width", cfg.width, "model width")->envname("LAYOUTLAB_WIDTH");
    cmd->add_option("--blocks", cfg.blocks, "transformer blocks")->envname("LAYOUTLAB_BLOCKS");
    cmd->add_option("--heads", cfg.heads, "attention heads")->envname("LAYOUTLAB_HEADS");
    cmd->add_option("--image-size", cfg.image_size, "image side length")
        ->envname("LAYOUTLAB_IMAGE_SIZE");
    cmd->add_option("--patch", cfg.patch, "patch size")->envname("LAYOUTLAB_PATCH");
    cmd->add_option("--caption-len", cfg.caption_len, "global caption tokens")
        ->envname("LAYOUTLAB_CAPTION_LEN");
    cmd->add_option("--region-len", cfg.region_len, "region caption tokens")
        ->envname("LAYOUTLAB_REGION_LEN");
    cmd->add_option("--fourier", cfg.fourier, "fourier frequencies")->envname("LAYOUTLAB_FOURIER");
    cmd->add_option("--max-entities", cfg.max_entities, "entity cap")
        ->envname("LAYOUTLAB_MAX_ENTITIES");
    cmd->add_option("--lora-rank", cfg.lora_rank, "lora rank")->envname("LAYOUTLAB_LORA_RANK");
}

void add_train_flags(CLI::App* cmd, training::TrainConfig& cfg, std::string& config_path) {
    cmd->add_option("--steps", cfg.steps, "training steps")->envname("LAYOUTLAB_STEPS");
    cmd->add_option("--batch", cfg.batch, "batch size")->envname("LAYOUTLAB_BATCH");
    cmd->add_option("--lr", cfg.lr, "learning rate")->envname("LAYOUTLAB_LR");
    cmd->add_option("--optimizer", cfg.optimizer, "adam|sgd")->envname("LAYOUTLAB_OPTIMIZER");
    cmd->add_option("--seed", cfg.seed, "run seed")->envname("LAYOUTLAB_SEED");
    cmd->add_option("--lambda-region", cfg.lambda_region, "region loss weight")
        ->envname("LAYOUTLAB_LAMBDA_REGION");
    cmd->add_flag("--bias-sampling,!--no-bias-sampling", cfg.bias_sampling,
                  "biased timestep sampling")
        ->envname("LAYOUTLAB_BIAS_SAMPLING");
    cmd->add_option("--probe-interval", cfg.probe_interval, "attention probe cadence (0=off)")
        ->envname("LAYOUTLAB_PROBE_INTERVAL");
    cmd->add_option("--conv-interval", cfg.conv_interval, "convergence probe cadence (0=off)")
        ->envname("LAYOUTLAB_CONV_INTERVAL");
    cmd->add_option("--config", config_path, "JSON config; its fields override flags")
        ->envname("LAYOUTLAB_CONFIG");
}

void finalize_train_config(training::TrainConfig& cfg, const std::string& config_path) {
    if (!config_path.empty()) cfg.merge_json(read_file(config_path));
}

void write_run(const std::string& out_dir, const training::TrainResult& result,
               const std::string& command, const std::string& config_json, uint64_t seed) {
    std::filesystem::create_directories(out_dir);
    checkpoint::save(out_dir + "/ckpt.llck", result.weights,
                     result.metrics.empty() ? 0 : result.metrics.back().step, seed);
    std::vector<std::vector<std::string>> rows;
    for (const auto& m : result.metrics)
        rows.push_back({std::to_string(m.step), metrics::fmt(m.l_layout), metrics::fmt(m.l_region),
                        metrics::fmt(m.l_total), "", "", ""});
    for (auto& row : rows) {
        const int64_t step = std::stoll(row[0]);
        for (const auto& p : result.probe_points)
            if (p.step == step) {
                row[4] = metrics::fmt(p.sim_text);
                row[5] = metrics::fmt(p.sim_layout);
            }
        for (const auto& c : result.conv_points)
            if (c.step == step) row[6] = metrics::fmt(c.spatial);
    }
    metrics::write_csv(out_dir + "/metrics.csv",
                       {"step", "l_layout", "l_region", "l_total", "sim_text", "sim_layout",
                        "spatial"},
                       rows);
    std::vector<std::vector<std::string>> diag;
    for (const auto& r : result.probe_rows)
        diag.push_back({std::to_string(r.step), std::to_string(r.block), std::to_string(r.head),
                        metrics::fmt(r.sim_text), metrics::fmt(r.sim_layout)});
    metrics::write_csv(out_dir + "/diagnostics.csv",
                       {"step", "block", "head", "sim_text", "sim_layout"}, diag);
    harness::write_manifest(out_dir, command, config_json, seed,
                            {"ckpt.llck", "metrics.csv", "diagnostics.csv"});
}

int run(int argc, char** argv) {
    CLI::App app{"desk-scale layout-to-image laboratory for multimodal diffusion transformers"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
    std::string gen_out;
    int64_t gen_count = 100;
    uint64_t gen_seed = 9001;
    scenes::SceneConfig scene_cfg;
    gen->add_option("--out", gen_out, "output directory")->required()->envname("LAYOUTLAB_OUT");
    gen->add_option("--count", gen_count, "number of scenes")->envname("LAYOUTLAB_COUNT");
    gen->add_option("--seed", gen_seed, "base seed")->envname("LAYOUTLAB_SEED");
    gen->add_option("--image-size", scene_cfg.image_size, "image side length");
    gen->add_option("--grid", scene_cfg.grid, "box snap grid");
    gen->add_option("--min-entities", scene_cfg.min_entities, "minimum entities");
    gen->add_option("--max-entities", scene_cfg.max_entities, "maximum entities");
    gen->callback([&] {
        std::vector<scenes::Scene> set;
        for (int64_t i = 0; i < gen_count; ++i)
            set.push_back(scenes::gen_scene(scene_cfg, gen_seed + static_cast<uint64_t>(i)));
        scenes::write_dataset(gen_out, set);
        std::ofstream vout(gen_out + "/vocab.json");
        vout << encoders::Vocabulary::defaults().to_json() << "\n";
        harness::write_manifest(gen_out, "gen-data", std::to_string(gen_count), gen_seed,
                                {"manifest.json", "vocab.json"});
        std::cout << "wrote " << set.size() << " scenes to " << gen_out << "\n";
    });

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "train the base model on caption-image pairs");
    std::string pre_data, pre_out, pre_config;
    mmdit::ModelConfig pre_model;
    pre_model.width = 32;
    pre_model.blocks = 2;
    pre_model.image_size = 32;
    pre_model.patch = 4;
    training::TrainConfig pre_cfg;
    pre_cfg.steps = 8000;
    pre_cfg.bias_sampling = false;
    pre_cfg.lambda_region = 0.0;
    pre->add_option("--data", pre_data, "dataset directory")->required()->envname("LAYOUTLAB_DATA");
    pre->add_option("--out", pre_out, "output directory")->required()->envname("LAYOUTLAB_OUT");
    add_model_flags(pre, pre_model);
    add_train_flags(pre, pre_cfg, pre_config);
    pre->callback([&] {
        finalize_train_config(pre_cfg, pre_config);
        const auto data = scenes::load_dataset(pre_data);
        auto vocab = load_vocab(pre_data);
        pre_model.vocab = vocab.size();
        auto result = training::pretrain_base(data, vocab, pre_model, pre_cfg);
        write_run(pre_out, result, "pretrain", pre_cfg.to_json(), pre_cfg.seed);
        std::cout << "pretrained base -> " << pre_out << "/ckpt.llck\n";
    });

    // ---- train-layout ----
    auto* tl = app.add_subcommand("train-layout", "train a layout variant on a frozen base");
    std::string tl_base, tl_data, tl_eval_data, tl_out, tl_variant = "siam", tl_config;
    training::TrainConfig tl_cfg;
    tl->add_option("--base", tl_base, "pretrained base checkpoint")->required()
        ->envname("LAYOUTLAB_BASE");
    tl->add_option("--variant", tl_variant, "adapter|m3|siam|siam-lora")->required()
        ->envname("LAYOUTLAB_VARIANT");
    tl->add_option("--data", tl_data, "dataset directory")->required()->envname("LAYOUTLAB_DATA");
    tl->add_option("--eval-data", tl_eval_data, "held-out scenes for convergence probes")
        ->envname("LAYOUTLAB_EVAL_DATA");
    tl->add_option("--out", tl_out, "output directory")->required()->envname("LAYOUTLAB_OUT");
    add_train_flags(tl, tl_cfg, tl_config);
    tl->callback([&] {
        finalize_train_config(tl_cfg, tl_config);
        const auto variant = mmdit::variant_from_name(tl_variant);
        const auto base = checkpoint::load(tl_base);
        const auto data = scenes::load_dataset(tl_data);
        auto vocab = load_vocab(tl_data);
        std::vector<scenes::Scene> eval_set;
        if (!tl_eval_data.empty()) eval_set = scenes::load_dataset(tl_eval_data);
        auto result = training::train_layout(base.weights, variant, data, vocab, tl_cfg,
                                             eval_set.empty() ? nullptr : &eval_set);
        write_run(tl_out, result, "train-layout " + tl_variant, tl_cfg.to_json(), tl_cfg.seed);
        std::cout << "trained " << tl_variant << " -> " << tl_out << "/ckpt.llck\n";
    });

    // ---- sample ----
    auto* sm = app.add_subcommand("sample", "generate one image from a layout");
    std::string sm_ckpt, sm_layout, sm_out = "sample.ppm";
    int64_t sm_steps = 50;
    double sm_eta = 0.0;
    uint64_t sm_seed = 7;
    bool sm_no_layout = false;
    sm->add_option("--ckpt", sm_ckpt, "checkpoint")->required()->envname("LAYOUTLAB_CKPT");
    sm->add_option("--layout", sm_layout, "layout JSON file")->required()
        ->envname("LAYOUTLAB_LAYOUT");
    sm->add_option("--out", sm_out, "output image (P6 pixmap)")->envname("LAYOUTLAB_OUT");
    sm->add_option("--steps", sm_steps, "inference steps")->envname("LAYOUTLAB_STEPS");
    sm->add_option("--eta", sm_eta, "DDIM eta")->envname("LAYOUTLAB_ETA");
    sm->add_option("--seed", sm_seed, "sampler seed")->envname("LAYOUTLAB_SEED");
    sm->add_flag("--no-layout", sm_no_layout, "ignore the layout entities");
    sm->callback([&] {
        const auto loaded = checkpoint::load(sm_ckpt);
        auto vocab = encoders::Vocabulary::defaults();
        const auto layout = encoders::load_layout(sm_layout);
        const auto& cfg = loaded.weights.config();
        const auto caption_ids = vocab.tokenize(layout.caption, cfg.caption_len);
        auto tokenized = encoders::tokenize_layout(layout, vocab, cfg.caption_len, cfg.region_len,
                                                   cfg.max_entities);
        const auto result = diffusion::sample_image(
            loaded.weights, diffusion::Schedule::linear(), caption_ids,
            sm_no_layout ? nullptr : &tokenized, sm_steps, sm_eta, sm_seed);
        scenes::write_ppm(sm_out, result.image);
        int64_t active = 0;
        for (int c : result.layout_calls_per_step) active += c > 0 ? 1 : 0;
        std::cout << "wrote " << sm_out << "; layout-conditioned steps: " << active << "/"
                  << sm_steps << "\n";
    });

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "score a checkpoint on an eval dataset");
    std::string ev_ckpt, ev_data, ev_out = "eval.csv";
    int64_t ev_steps = 50;
    uint64_t ev_seed = 9001;
    bool ev_no_layout = false;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required()->envname("LAYOUTLAB_CKPT");
    ev->add_option("--data", ev_data, "eval dataset directory")->required()
        ->envname("LAYOUTLAB_DATA");
    ev->add_option("--out", ev_out, "output CSV")->envname("LAYOUTLAB_OUT");
    ev->add_option("--steps", ev_steps, "inference steps")->envname("LAYOUTLAB_STEPS");
    ev->add_option("--seed", ev_seed, "sampling seed base")->envname("LAYOUTLAB_SEED");
    ev->add_flag("--no-layout", ev_no_layout, "sample without layout conditioning");
    ev->callback([&] {
        const auto loaded = checkpoint::load(ev_ckpt);
        const auto data = scenes::load_dataset(ev_data);
        auto vocab = load_vocab(ev_data);
        const auto summary = harness::evaluate(loaded.weights, data, vocab, ev_steps, ev_seed,
                                               !ev_no_layout);
        metrics::write_csv(ev_out, {"variant", "seed", "spatial", "color", "shape"},
                           {{mmdit::variant_name(loaded.weights.variant()),
                             std::to_string(ev_seed), metrics::fmt(summary.spatial),
                             metrics::fmt(summary.color), metrics::fmt(summary.shape)}});
        std::cout << "spatial " << summary.spatial << " color " << summary.color << " shape "
                  << summary.shape << " over " << summary.scenes << " scenes\n";
    });

    // ---- diagnose ----
    auto* dg = app.add_subcommand("diagnose", "attention-similarity snapshot of a checkpoint");
    std::string dg_ckpt, dg_data, dg_out = "diagnostics";
    int64_t dg_samples = 2;
    dg->add_option("--ckpt", dg_ckpt, "checkpoint")->required()->envname("LAYOUTLAB_CKPT");
    dg->add_option("--data", dg_data, "dataset directory")->required()->envname("LAYOUTLAB_DATA");
    dg->add_option("--out", dg_out, "output directory")->envname("LAYOUTLAB_OUT");
    dg->add_option("--samples", dg_samples, "probe scenes");
    dg->callback([&] {
        const auto loaded = checkpoint::load(dg_ckpt);
        const auto data = scenes::load_dataset(dg_data);
        auto vocab = load_vocab(dg_data);
        const auto& cfg = loaded.weights.config();
        const auto schedule = diffusion::Schedule::linear();
        const int64_t t = std::llround(0.7 * static_cast<double>(schedule.steps));
        Rng rng = Rng(1).substream("diagnose");
        std::vector<mmdit::AttnMap> maps;
        for (int64_t i = 0; i < std::min<int64_t>(dg_samples, static_cast<int64_t>(data.size()));
             ++i) {
            const auto& scene = data[static_cast<size_t>(i)];
            const auto caption_ids = vocab.tokenize(scene.layout.caption, cfg.caption_len);
            auto tokenized = encoders::tokenize_layout(scene.layout, vocab, cfg.caption_len,
                                                       cfg.region_len, cfg.max_entities);
            numcore::Tensor z0(scene.image.shape);
            for (size_t j = 0; j < z0.data.size(); ++j) z0.data[j] = 2.0 * scene.image.data[j] - 1.0;
            const auto z_t = diffusion::q_sample(
                z0, t, numcore::Tensor::randn(scene.image.shape, rng), schedule);
            numcore::Graph g;
            mmdit::ForwardOptions opts;
            opts.capture = &maps;
            mmdit::forward_tokens(g, loaded.weights, mmdit::Phase::Inference,
                                  encoders::patchify(z_t, cfg.patch), caption_ids, &tokenized,
                                  static_cast<double>(t) / static_cast<double>(schedule.steps),
                                  opts);
        }
        const auto sim = diagnostics::attn_similarity(maps);
        std::filesystem::create_directories(dg_out);
        std::vector<std::vector<std::string>> rows;
        for (const auto& r : sim.rows)
            rows.push_back({"0", std::to_string(r.block), std::to_string(r.head),
                            metrics::fmt(r.img_text), metrics::fmt(r.img_layout)});
        metrics::write_csv(dg_out + "/diagnostics.csv",
                           {"step", "block", "head", "sim_text", "sim_layout"}, rows);
        harness::write_manifest(dg_out, "diagnose", dg_ckpt, 1, {"diagnostics.csv"});
        std::cout << "img-text " << (sim.has_text ? sim.img_text : 0.0) << " img-layout "
                  << (sim.has_layout ? sim.img_layout : 0.0) << "\n";
    });

    // ---- count-costs ----
    auto* cc = app.add_subcommand("count-costs", "analytic parameter and MAC report");
    std::string cc_variant = "siam", cc_out;
    int64_t cc_entities = 10;
    mmdit::ModelConfig cc_model;
    cc_model.vocab = static_cast<int64_t>(encoders::Vocabulary::defaults().size());
    cc->add_option("--variant", cc_variant, "base|adapter|m3|siam|siam-lora")
        ->envname("LAYOUTLAB_VARIANT");
    cc->add_option("--entities", cc_entities, "layout entity count")
        ->envname("LAYOUTLAB_ENTITIES");
    cc->add_option("--out", cc_out, "write the report JSON here")->envname("LAYOUTLAB_OUT");
    add_model_flags(cc, cc_model);
    cc->callback([&] {
        const auto report = diagnostics::count_costs(cc_model, mmdit::variant_from_name(cc_variant),
                                                     cc_entities);
        const std::string text = report.to_json();
        if (!cc_out.empty()) {
            std::ofstream out(cc_out);
            out << text << "\n";
        }
        std::cout << text << "\n";
    });

    // ---- layout ----
    auto* lk = app.add_subcommand("layout", "layout validation and conversion tools");
    lk->require_subcommand(1);
    auto* lv = lk->add_subcommand("validate", "check a layout file against the rules");
    std::string lv_file, lv_mode = "format";
    lv->add_option("file", lv_file, "layout JSON file")->required();
    lv->add_option("--mode", lv_mode, "format|dataset")->envname("LAYOUTLAB_MODE");
    bool lv_valid = false;
    lv->callback([&] {
        const auto layout = encoders::load_layout(lv_file);
        const auto report = layoutkit::validate(layout, layoutkit::mode_from_name(lv_mode));
        std::cout << report.to_json() << "\n";
        lv_valid = report.valid;
    });

    auto* lc = lk->add_subcommand("convert", "turn a coarse input into a layout");
    std::string lc_mask, lc_scribble, lc_point, lc_out;
    lc->add_option("--mask", lc_mask, "mask JSON file");
    lc->add_option("--scribble", lc_scribble, "scribble JSON file");
    lc->add_option("--point", lc_point, "center point JSON file");
    lc->add_option("--out", lc_out, "output layout file (stdout if omitted)")
        ->envname("LAYOUTLAB_OUT");
    lc->callback([&] {
        int given = (!lc_mask.empty()) + (!lc_scribble.empty()) + (!lc_point.empty());
        if (given != 1)
            throw CLI::ValidationError("convert", "exactly one of --mask/--scribble/--point");
        std::string path = !lc_mask.empty() ? lc_mask : !lc_scribble.empty() ? lc_scribble : lc_point;
        const std::string type =
            !lc_mask.empty() ? "mask" : !lc_scribble.empty() ? "scribble" : "point";
        const auto layout = layoutkit::convert_coarse_input(read_file(path), type);
        const std::string text = encoders::layout_to_json(layout);
        if (lc_out.empty())
            std::cout << text << "\n";
        else {
            std::ofstream out(lc_out);
            out << text << "\n";
        }
    });

    // ---- ablate ----
    auto* ab = app.add_subcommand("ablate", "full variant + strategy ablation pipeline");
    std::string ab_variants = "adapter,m3,siam", ab_out;
    harness::AblateConfig ab_cfg;
    ab->add_option("--variants", ab_variants, "comma-separated variant list")
        ->envname("LAYOUTLAB_VARIANTS");
    ab->add_option("--seeds", ab_cfg.seeds, "seeds per cell")->envname("LAYOUTLAB_SEEDS");
    ab->add_option("--out", ab_out, "output directory")->required()->envname("LAYOUTLAB_OUT");
    ab->add_option("--jobs", ab_cfg.jobs, "parallel cells")->envname("LAYOUTLAB_JOBS");
    ab->add_option("--threshold", ab_cfg.conv_threshold, "spatial threshold for convergence")
        ->envname("LAYOUTLAB_THRESHOLD");
    ab->add_option("--train-scenes", ab_cfg.preset.train_scenes, "training scenes");
    ab->add_option("--eval-scenes", ab_cfg.preset.eval_scenes, "eval scenes");
    ab->add_option("--pretrain-steps", ab_cfg.preset.pretrain.steps, "base pretraining steps");
    ab->add_option("--layout-steps", ab_cfg.preset.layout.steps, "layout phase steps");
    ab->add_option("--batch", ab_cfg.preset.pretrain.batch, "batch size (both phases)");
    ab->callback([&] {
        ab_cfg.out_dir = ab_out;
        ab_cfg.preset.layout.batch = ab_cfg.preset.pretrain.batch;
        ab_cfg.variants.clear();
        std::stringstream ss(ab_variants);
        std::string name;
        while (std::getline(ss, name, ','))
            if (!name.empty()) ab_cfg.variants.push_back(mmdit::variant_from_name(name));
        const auto report = harness::run_ablation(ab_cfg);
        std::cout << "chance spatial " << report.chance.spatial << "\n";
        for (const auto& c : report.variant_cells)
            std::cout << c.variant << " seed " << c.seed << ": spatial " << c.eval.spatial
                      << " color " << c.eval.color << " shape " << c.eval.shape << "\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    // layout validate doubles as a checker: nonzero exit when invalid.
    if (lv->parsed()) return lv_valid ? 0 : 1;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
