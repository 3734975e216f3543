#include "layoutlab/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace layoutlab::diffusion {

Schedule Schedule::linear(int64_t steps, double beta_start, double beta_end) {
    Schedule s;
    s.steps = steps;
    s.alpha_bar.resize(static_cast<size_t>(steps) + 1);
    s.alpha_bar[0] = 1.0;
    double acc = 1.0;
    for (int64_t t = 1; t <= steps; ++t) {
        const double beta =
            beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) /
                             static_cast<double>(std::max<int64_t>(steps - 1, 1));
        acc *= 1.0 - beta;
        s.alpha_bar[static_cast<size_t>(t)] = acc;
    }
    return s;
}

Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const Schedule& schedule) {
    if (t < 0 || t > schedule.steps)
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0," +
                                    std::to_string(schedule.steps) + "]");
    if (z0.shape != eps.shape)
        throw std::invalid_argument("noise shape " + numcore::shape_str(eps.shape) +
                                    " does not match signal " + numcore::shape_str(z0.shape));
    const double ab = schedule.alpha_bar[static_cast<size_t>(t)];
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    Tensor out(z0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
    return out;
}

TimestepDraw sample_timestep(const Schedule& schedule, const MixtureSpec& mix, bool biased,
                             Rng& rng) {
    const int64_t T = schedule.steps;
    if (!biased) return TimestepDraw{rng.uniform_int(1, T), 0};

    const int component = rng.uniform() < mix.p1 ? 1 : 2;
    const double center =
        (component == 1 ? mix.center1_frac : mix.center2_frac) * static_cast<double>(T);
    const double sigma = mix.sigma(T);
    for (;;) {
        const int64_t t = std::llround(rng.normal(center, sigma));
        if (t >= 1 && t <= T) return TimestepDraw{t, component};
    }
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }

}  // namespace

std::vector<double> mixture_cdf(const Schedule& schedule, const MixtureSpec& mix) {
    const int64_t T = schedule.steps;
    const double sigma = mix.sigma(T);
    auto component_cdf = [&](double center_frac) {
        const double mu = center_frac * static_cast<double>(T);
        std::vector<double> cdf(static_cast<size_t>(T));
        const double lo = normal_cdf((0.5 - mu) / sigma);
        const double hi = normal_cdf((static_cast<double>(T) + 0.5 - mu) / sigma);
        const double z = hi - lo;
        for (int64_t t = 1; t <= T; ++t)
            cdf[static_cast<size_t>(t - 1)] =
                (normal_cdf((static_cast<double>(t) + 0.5 - mu) / sigma) - lo) / z;
        return cdf;
    };
    const auto c1 = component_cdf(mix.center1_frac);
    const auto c2 = component_cdf(mix.center2_frac);
    std::vector<double> cdf(static_cast<size_t>(T));
    for (size_t i = 0; i < cdf.size(); ++i) cdf[i] = mix.p1 * c1[i] + (1.0 - mix.p1) * c2[i];
    return cdf;
}

Tensor region_mask(const std::vector<BBox>& boxes, int64_t grid_h, int64_t grid_w) {
    Tensor mask({grid_h * grid_w});
    for (int64_t gy = 0; gy < grid_h; ++gy) {
        const double cy = (static_cast<double>(gy) + 0.5) / static_cast<double>(grid_h);
        for (int64_t gx = 0; gx < grid_w; ++gx) {
            const double cx = (static_cast<double>(gx) + 0.5) / static_cast<double>(grid_w);
            for (const auto& b : boxes) {
                if (b.contains(cx, cy)) {
                    mask.data[static_cast<size_t>(gy * grid_w + gx)] = 1.0;
                    break;
                }
            }
        }
    }
    return mask;
}

LossNodes build_losses(Graph& g, Graph::Id prediction, Graph::Id target, const Tensor& token_mask,
                       double lambda_region) {
    const Tensor& pred = g.val(prediction);
    const int64_t rows = pred.shape[0], cols = pred.shape[1];
    if (token_mask.numel() != rows)
        throw std::invalid_argument("token mask length " + numcore::shape_str(token_mask.shape) +
                                    " does not match " + std::to_string(rows) + " tokens");
    const Graph::Id diff = g.sub(prediction, target);
    const Graph::Id sq = g.mul(diff, diff);
    const Graph::Id l_layout = g.mean_all(sq);

    Tensor expanded({rows, cols});
    for (int64_t i = 0; i < rows; ++i) {
        const double m = token_mask.data[static_cast<size_t>(i)];
        for (int64_t j = 0; j < cols; ++j) expanded.data[static_cast<size_t>(i * cols + j)] = m;
    }
    const Graph::Id l_region = g.mean_masked(sq, std::move(expanded));
    const Graph::Id l_total = g.add(l_layout, g.scale(l_region, lambda_region));
    return LossNodes{l_layout, l_region, l_total};
}

int64_t layout_active_steps(int64_t total_steps) {
    return (3 * total_steps + 9) / 10;  // ceil(0.3 * S) in integer arithmetic
}

SampleResult sample_image(const mmdit::ModelWeights& weights, const Schedule& schedule,
                          const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                          int64_t steps, double eta, uint64_t seed) {
    if (steps < 1) throw std::invalid_argument("sampler needs at least one step");
    const auto& cfg = weights.config();
    const int64_t T = schedule.steps;
    const int64_t active = layout_active_steps(steps);

    Rng rng = Rng(seed).substream("sampler");
    Tensor z = Tensor::randn({3, cfg.image_size, cfg.image_size}, rng, 1.0);

    SampleResult result;
    result.layout_calls_per_step.assign(static_cast<size_t>(steps), 0);

    for (int64_t i = 0; i < steps; ++i) {
        const int64_t t = std::llround(static_cast<double>(T) * static_cast<double>(steps - i) /
                                       static_cast<double>(steps));
        const int64_t t_prev = std::llround(static_cast<double>(T) *
                                            static_cast<double>(steps - i - 1) /
                                            static_cast<double>(steps));
        const double ab_t = schedule.alpha_bar[static_cast<size_t>(t)];
        const double ab_prev = schedule.alpha_bar[static_cast<size_t>(t_prev)];

        int layout_calls = 0;
        mmdit::ForwardOptions opts;
        opts.layout_active = i < active;
        opts.layout_invocations = &layout_calls;
        const Tensor eps_hat = mmdit::predict_noise(
            weights, z, caption_ids, layout, static_cast<double>(t) / static_cast<double>(T), opts);
        result.layout_calls_per_step[static_cast<size_t>(i)] = layout_calls;

        // Predicted clean signal, clipped to the data range in [-1,1].
        Tensor z0(z.shape);
        const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
        const double noise_scale = std::sqrt(1.0 - ab_t);
        for (size_t j = 0; j < z0.data.size(); ++j) {
            double v = (z.data[j] - noise_scale * eps_hat.data[j]) * inv_sqrt_ab;
            z0.data[j] = std::clamp(v, -1.0, 1.0);
        }

        const double sigma =
            eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_prev);
        const double dir_scale =
            std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        const double sig_scale = std::sqrt(ab_prev);
        for (size_t j = 0; j < z.data.size(); ++j) {
            double v = sig_scale * z0.data[j] + dir_scale * eps_hat.data[j];
            if (sigma > 0.0) v += sigma * rng.normal();
            z.data[j] = v;
        }
    }

    // Back from the [-1,1] diffusion range to pixel values.
    result.image = Tensor(z.shape);
    for (size_t j = 0; j < z.data.size(); ++j)
        result.image.data[j] = std::clamp(0.5 * (z.data[j] + 1.0), 0.0, 1.0);
    return result;
}

}  // namespace layoutlab::diffusion
