#include "layoutlab/training.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "layoutlab/diagnostics.hpp"
#include "layoutlab/gradcheck.hpp"

namespace layoutlab::training {

using diffusion::Schedule;
using mmdit::ModelWeights;
using mmdit::Phase;
using mmdit::Variant;
using numcore::Graph;
using numcore::Tensor;
using nlohmann::json;

std::string TrainConfig::to_json() const {
    json j{{"steps", steps},
           {"batch", batch},
           {"lr", lr},
           {"optimizer", optimizer},
           {"momentum", momentum},
           {"beta1", beta1},
           {"beta2", beta2},
           {"adam_eps", adam_eps},
           {"lambda_region", lambda_region},
           {"bias_sampling", bias_sampling},
           {"mixture_p1", mixture.p1},
           {"mixture_center1", mixture.center1_frac},
           {"mixture_center2", mixture.center2_frac},
           {"mixture_sigma", mixture.sigma_frac},
           {"mixture_literal_sigma", mixture.literal_sigma},
           {"seed", seed},
           {"probe_interval", probe_interval},
           {"probe_samples", probe_samples},
           {"conv_interval", conv_interval},
           {"conv_scenes", conv_scenes},
           {"conv_sample_steps", conv_sample_steps}};
    return j.dump();
}

void TrainConfig::merge_json(const std::string& text) {
    const json j = json::parse(text);
    auto set_i = [&](const char* k, int64_t& v) { if (j.contains(k)) v = j.at(k).get<int64_t>(); };
    auto set_d = [&](const char* k, double& v) { if (j.contains(k)) v = j.at(k).get<double>(); };
    auto set_b = [&](const char* k, bool& v) { if (j.contains(k)) v = j.at(k).get<bool>(); };
    set_i("steps", steps);
    set_i("batch", batch);
    set_d("lr", lr);
    if (j.contains("optimizer")) optimizer = j.at("optimizer").get<std::string>();
    set_d("momentum", momentum);
    set_d("beta1", beta1);
    set_d("beta2", beta2);
    set_d("adam_eps", adam_eps);
    set_d("lambda_region", lambda_region);
    set_b("bias_sampling", bias_sampling);
    set_d("mixture_p1", mixture.p1);
    set_d("mixture_center1", mixture.center1_frac);
    set_d("mixture_center2", mixture.center2_frac);
    set_d("mixture_sigma", mixture.sigma_frac);
    set_b("mixture_literal_sigma", mixture.literal_sigma);
    if (j.contains("seed")) seed = j.at("seed").get<uint64_t>();
    set_i("probe_interval", probe_interval);
    set_i("probe_samples", probe_samples);
    set_i("conv_interval", conv_interval);
    set_i("conv_scenes", conv_scenes);
    set_i("conv_sample_steps", conv_sample_steps);
}

namespace {

struct PreparedScene {
    std::vector<int64_t> caption_ids;
    encoders::TokenizedLayout layout;
    Tensor token_mask;  // [image_tokens]
    Tensor z0;          // [3,H,W] in [-1,1]
};

std::vector<PreparedScene> prepare(const std::vector<scenes::Scene>& data,
                                   const encoders::Vocabulary& vocab,
                                   const mmdit::ModelConfig& cfg) {
    std::vector<PreparedScene> out;
    out.reserve(data.size());
    for (const auto& scene : data) {
        PreparedScene p;
        p.caption_ids = vocab.tokenize(scene.layout.caption, cfg.caption_len);
        p.layout = encoders::tokenize_layout(scene.layout, vocab, cfg.caption_len, cfg.region_len,
                                             cfg.max_entities);
        std::vector<BBox> boxes;
        for (const auto& e : p.layout.entities) boxes.push_back(e.box);
        p.token_mask = diffusion::region_mask(boxes, cfg.grid(), cfg.grid());
        p.z0 = Tensor(scene.image.shape);
        for (size_t i = 0; i < p.z0.data.size(); ++i) p.z0.data[i] = 2.0 * scene.image.data[i] - 1.0;
        out.push_back(std::move(p));
    }
    return out;
}

class Optimizer {
public:
    Optimizer(const TrainConfig& cfg, const std::vector<size_t>& trainable,
              const ModelWeights& weights)
        : cfg_(cfg) {
        for (size_t idx : trainable) {
            slot1_.push_back(Tensor::zeros(weights.params()[idx].value.shape));
            if (cfg.optimizer == "adam")
                slot2_.push_back(Tensor::zeros(weights.params()[idx].value.shape));
        }
    }

    void step(ModelWeights& weights, const std::vector<size_t>& trainable,
              const std::vector<Tensor>& grads) {
        ++t_;
        for (size_t i = 0; i < trainable.size(); ++i) {
            Tensor& w = weights.params()[trainable[i]].value;
            const Tensor& g = grads[i];
            if (cfg_.optimizer == "adam") {
                Tensor& m = slot1_[i];
                Tensor& v = slot2_[i];
                const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
                const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
                for (size_t e = 0; e < w.data.size(); ++e) {
                    m.data[e] = cfg_.beta1 * m.data[e] + (1.0 - cfg_.beta1) * g.data[e];
                    v.data[e] = cfg_.beta2 * v.data[e] + (1.0 - cfg_.beta2) * g.data[e] * g.data[e];
                    const double mhat = m.data[e] / bc1;
                    const double vhat = v.data[e] / bc2;
                    w.data[e] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
                }
            } else if (cfg_.optimizer == "sgd") {
                Tensor& mom = slot1_[i];
                for (size_t e = 0; e < w.data.size(); ++e) {
                    mom.data[e] = cfg_.momentum * mom.data[e] + g.data[e];
                    w.data[e] -= cfg_.lr * mom.data[e];
                }
            } else {
                throw std::invalid_argument("unknown optimizer '" + cfg_.optimizer + "'");
            }
        }
    }

private:
    TrainConfig cfg_;
    std::vector<Tensor> slot1_, slot2_;
    int64_t t_ = 0;
};

// Attention-similarity probe on a fixed batch at a fixed noise level.
void run_probe(const ModelWeights& weights, const std::vector<PreparedScene>& probe_set,
               const std::vector<Tensor>& probe_noise, const Schedule& schedule, int64_t step,
               TrainResult& result) {
    const int64_t t = std::llround(0.7 * static_cast<double>(schedule.steps));
    std::vector<mmdit::AttnMap> maps;
    for (size_t i = 0; i < probe_set.size(); ++i) {
        const auto& p = probe_set[i];
        const Tensor z_t = diffusion::q_sample(p.z0, t, probe_noise[i], schedule);
        Graph g;
        mmdit::ForwardOptions opts;
        opts.capture = &maps;
        mmdit::forward_tokens(g, weights, Phase::Inference,
                              encoders::patchify(z_t, weights.config().patch), p.caption_ids,
                              &p.layout, static_cast<double>(t) / static_cast<double>(schedule.steps),
                              opts);
    }
    const auto sim = diagnostics::attn_similarity(maps);
    for (const auto& row : sim.rows)
        result.probe_rows.push_back(ProbeRow{step, row.block, row.head, row.img_text,
                                             row.img_layout});
    if (sim.has_text || sim.has_layout)
        result.probe_points.push_back(ProbePoint{step, sim.img_text, sim.img_layout});
}

TrainResult run_training(ModelWeights weights, Phase phase,
                         const std::vector<scenes::Scene>& data,
                         const encoders::Vocabulary& vocab, const TrainConfig& cfg,
                         const std::vector<scenes::Scene>* conv_eval) {
    if (data.empty()) throw std::invalid_argument("training needs a non-empty dataset");
    const mmdit::ModelConfig& mcfg = weights.config();
    const Schedule schedule = Schedule::linear();
    const auto prepared = prepare(data, vocab, mcfg);
    std::vector<PreparedScene> conv_prepared;
    if (conv_eval) {
        std::vector<scenes::Scene> subset(
            conv_eval->begin(),
            conv_eval->begin() + std::min<size_t>(conv_eval->size(),
                                                  static_cast<size_t>(cfg.conv_scenes)));
        conv_prepared = prepare(subset, vocab, mcfg);
    }

    std::vector<size_t> trainable;
    for (size_t i = 0; i < weights.params().size(); ++i) {
        const bool want = phase == Phase::Pretrain ? !weights.params()[i].layout_side
                                                   : weights.params()[i].layout_side;
        if (want) trainable.push_back(i);
    }
    if (trainable.empty()) throw std::logic_error("no trainable parameters in this phase");

    Optimizer opt(cfg, trainable, weights);
    Rng root(cfg.seed);
    Rng rng_data = root.substream("data");
    Rng rng_t = root.substream("timestep");
    Rng rng_noise = root.substream("noise");

    // Fixed probe inputs so trend curves are comparable across runs.
    const bool probes_on = cfg.probe_interval > 0 && weights.variant() != Variant::Base;
    std::vector<PreparedScene> probe_set;
    std::vector<Tensor> probe_noise;
    if (probes_on) {
        Rng rng_probe = root.substream("probe");
        for (int64_t i = 0; i < std::min<int64_t>(cfg.probe_samples,
                                                  static_cast<int64_t>(prepared.size()));
             ++i) {
            probe_set.push_back(prepared[static_cast<size_t>(i)]);
            probe_noise.push_back(Tensor::randn({3, mcfg.image_size, mcfg.image_size}, rng_probe));
        }
    }

    TrainResult result{std::move(weights), {}, {}, {}, {}};
    const bool conv_on = cfg.conv_interval > 0 && !conv_prepared.empty();

    auto run_conv_probe = [&](int64_t step) {
        double spatial = 0.0;
        for (size_t i = 0; i < conv_prepared.size(); ++i) {
            const auto& p = conv_prepared[i];
            const auto sampled = diffusion::sample_image(
                result.weights, schedule, p.caption_ids,
                result.weights.variant() == Variant::Base ? nullptr : &p.layout,
                cfg.conv_sample_steps, 0.0, cfg.seed * 7919 + static_cast<uint64_t>(i));
            const auto report =
                scenes::oracle_eval(sampled.image, (*conv_eval)[i].layout, scenes::OracleConfig{});
            spatial += report.spatial_rate;
        }
        result.conv_points.push_back(
            ConvPoint{step, spatial / static_cast<double>(conv_prepared.size())});
    };

    if (probes_on) run_probe(result.weights, probe_set, probe_noise, schedule, 0, result);
    if (conv_on) run_conv_probe(0);

    const int64_t tz = mcfg.image_tokens();
    const Tensor empty_mask({tz});  // all-zero: pretrain has no region term

    struct SampleJob {
        size_t scene = 0;
        int64_t t = 0;
        Tensor noise;
    };

    for (int64_t step = 1; step <= cfg.steps; ++step) {
        std::vector<SampleJob> jobs(static_cast<size_t>(cfg.batch));
        for (auto& job : jobs) {
            job.scene = static_cast<size_t>(
                rng_data.uniform_int(0, static_cast<int64_t>(prepared.size()) - 1));
            job.t = diffusion::sample_timestep(schedule, cfg.mixture, cfg.bias_sampling, rng_t).t;
            job.noise = Tensor::randn({3, mcfg.image_size, mcfg.image_size}, rng_noise);
        }

        std::vector<std::vector<Tensor>> sample_grads(jobs.size());
        std::vector<double> l_layout(jobs.size()), l_region(jobs.size()), l_total(jobs.size());

#pragma omp parallel for schedule(static)
        for (int64_t b = 0; b < static_cast<int64_t>(jobs.size()); ++b) {
            const auto& job = jobs[static_cast<size_t>(b)];
            const auto& p = prepared[job.scene];
            const Tensor z_t = diffusion::q_sample(p.z0, job.t, job.noise, schedule);
            Graph g;
            const auto fwd = mmdit::forward_tokens(
                g, result.weights, phase, encoders::patchify(z_t, mcfg.patch), p.caption_ids,
                phase == Phase::LayoutPhase ? &p.layout : nullptr,
                static_cast<double>(job.t) / static_cast<double>(schedule.steps));
            const Graph::Id target = g.value(encoders::patchify(job.noise, mcfg.patch));
            const auto losses = diffusion::build_losses(
                g, fwd.prediction, target, phase == Phase::LayoutPhase ? p.token_mask : empty_mask,
                cfg.lambda_region);
            g.backward(losses.l_total);

            l_layout[static_cast<size_t>(b)] = g.val(losses.l_layout).data[0];
            l_region[static_cast<size_t>(b)] = g.val(losses.l_region).data[0];
            l_total[static_cast<size_t>(b)] = g.val(losses.l_total).data[0];

            auto& grads = sample_grads[static_cast<size_t>(b)];
            grads.reserve(trainable.size());
            for (size_t ti = 0; ti < trainable.size(); ++ti) {
                const Graph::Id pid = fwd.param_ids[trainable[ti]];
                try {
                    grads.push_back(g.grad(pid));
                } catch (const std::logic_error&) {
                    grads.push_back(Tensor());  // parameter unused in this sample
                }
            }
        }

        // Deterministic reduction in sample-index order.
        std::vector<Tensor> grads;
        grads.reserve(trainable.size());
        for (size_t ti = 0; ti < trainable.size(); ++ti)
            grads.push_back(Tensor::zeros(result.weights.params()[trainable[ti]].value.shape));
        const double inv_batch = 1.0 / static_cast<double>(jobs.size());
        for (size_t b = 0; b < jobs.size(); ++b)
            for (size_t ti = 0; ti < trainable.size(); ++ti) {
                const Tensor& g = sample_grads[b][ti];
                if (g.data.empty()) continue;
                for (size_t e = 0; e < g.data.size(); ++e)
                    grads[ti].data[e] += g.data[e] * inv_batch;
            }

        opt.step(result.weights, trainable, grads);

        StepMetrics m;
        m.step = step;
        for (size_t b = 0; b < jobs.size(); ++b) {
            m.l_layout += l_layout[b] * inv_batch;
            m.l_region += l_region[b] * inv_batch;
            m.l_total += l_total[b] * inv_batch;
        }
        result.metrics.push_back(m);

        if (probes_on && (step % cfg.probe_interval == 0 || step == cfg.steps))
            run_probe(result.weights, probe_set, probe_noise, schedule, step, result);
        if (conv_on && (step % cfg.conv_interval == 0 || step == cfg.steps)) run_conv_probe(step);
    }

    return result;
}

}  // namespace

TrainResult pretrain_base(const std::vector<scenes::Scene>& data,
                          const encoders::Vocabulary& vocab, const mmdit::ModelConfig& model_cfg,
                          const TrainConfig& cfg) {
    Rng init = Rng(cfg.seed).substream("init");
    ModelWeights weights = ModelWeights::init(model_cfg, Variant::Base, init);
    return run_training(std::move(weights), Phase::Pretrain, data, vocab, cfg, nullptr);
}

TrainResult train_layout(const ModelWeights& base, Variant variant,
                         const std::vector<scenes::Scene>& data,
                         const encoders::Vocabulary& vocab, const TrainConfig& cfg,
                         const std::vector<scenes::Scene>* conv_eval) {
    if (variant == Variant::Base)
        throw std::invalid_argument("layout phase requires a layout variant, not base");
    Rng init = Rng(cfg.seed).substream("init");
    ModelWeights weights = ModelWeights::extend_base(base, variant, init);
    return run_training(std::move(weights), Phase::LayoutPhase, data, vocab, cfg, conv_eval);
}

}  // namespace layoutlab::training
