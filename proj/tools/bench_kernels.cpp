// Compares the OpenMP kernels against their serial references: verifies
// bit-identical results and reports throughput, then times one training
// step of the desk-scale model.

#include <chrono>
#include <cstring>
#include <iostream>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "layoutlab/diffusion.hpp"
#include "layoutlab/encoders.hpp"
#include "layoutlab/graph.hpp"
#include "layoutlab/harness.hpp"
#include "layoutlab/kernels.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/scenes.hpp"
#include "layoutlab/tensor.hpp"

using namespace layoutlab;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
double time_best_of(int reps, F&& f) {
    double best = 1e30;
    for (int i = 0; i < reps; ++i) {
        const auto start = Clock::now();
        f();
        best = std::min(best, seconds_since(start));
    }
    return best;
}

void bench_matmul(int64_t m, int64_t k, int64_t n) {
    Rng rng(7);
    numcore::Tensor a = numcore::Tensor::randn({m, k}, rng);
    numcore::Tensor b = numcore::Tensor::randn({k, n}, rng);
    numcore::Tensor c_serial({m, n}), c_omp({m, n});

    const double t_serial = time_best_of(3, [&] {
        kernels::matmul_serial(a.data.data(), b.data.data(), c_serial.data.data(), m, k, n);
    });
    const double t_omp = time_best_of(3, [&] {
        kernels::matmul(a.data.data(), b.data.data(), c_omp.data.data(), m, k, n);
    });
    const bool identical = std::memcmp(c_serial.data.data(), c_omp.data.data(),
                                       c_serial.data.size() * sizeof(double)) == 0;
    const double macs = static_cast<double>(m) * static_cast<double>(k) * static_cast<double>(n);
    std::cout << "matmul " << m << "x" << k << "x" << n << ": serial "
              << macs / t_serial / 1e9 << " GMAC/s, omp " << macs / t_omp / 1e9
              << " GMAC/s, speedup " << t_serial / t_omp
              << (identical ? " (bit-identical)" : " (MISMATCH)") << "\n";
}

void bench_rows(const char* name, int64_t rows, int64_t cols,
                void (*omp_fn)(const double*, double*, int64_t, int64_t),
                void (*serial_fn)(const double*, double*, int64_t, int64_t)) {
    Rng rng(11);
    numcore::Tensor x = numcore::Tensor::randn({rows, cols}, rng);
    numcore::Tensor y1({rows, cols}), y2({rows, cols});
    const double t_serial =
        time_best_of(3, [&] { serial_fn(x.data.data(), y1.data.data(), rows, cols); });
    const double t_omp = time_best_of(3, [&] { omp_fn(x.data.data(), y2.data.data(), rows, cols); });
    const bool identical =
        std::memcmp(y1.data.data(), y2.data.data(), y1.data.size() * sizeof(double)) == 0;
    std::cout << name << " " << rows << "x" << cols << ": serial " << t_serial * 1e3
              << " ms, omp " << t_omp * 1e3 << " ms, speedup " << t_serial / t_omp
              << (identical ? " (bit-identical)" : " (MISMATCH)") << "\n";
}

void bench_training_step() {
    auto preset = harness::desk_preset();
    encoders::Vocabulary vocab = encoders::Vocabulary::defaults();
    preset.model.vocab = vocab.size();

    std::vector<scenes::Scene> data;
    for (int i = 0; i < 8; ++i) data.push_back(scenes::gen_scene(preset.scene, 100 + i));

    training::TrainConfig cfg = preset.layout;
    cfg.steps = 5;
    cfg.probe_interval = 0;
    cfg.conv_interval = 0;

    Rng rng(3);
    auto base = mmdit::ModelWeights::init(preset.model, mmdit::Variant::Base, rng);

    const auto start = Clock::now();
    training::train_layout(base, mmdit::Variant::Siam, data, vocab, cfg, nullptr);
    const double per_step = seconds_since(start) / static_cast<double>(cfg.steps);
    std::cout << "desk-preset siam training: " << per_step * 1e3 << " ms/step (batch "
              << cfg.batch << "), projected " << per_step * 5000.0 / 60.0
              << " min per 5000-step run\n";
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::cout << "openmp threads: " << omp_get_max_threads() << "\n";
#else
    std::cout << "built without openmp\n";
#endif
    bench_matmul(256, 256, 256);
    bench_matmul(64, 32, 32);
    bench_rows("softmax", 4096, 256, kernels::softmax_rows, kernels::softmax_rows_serial);
    bench_rows("gelu(rows*cols)", 4096, 256,
               [](const double* x, double* y, int64_t r, int64_t c) { kernels::gelu(x, y, r * c); },
               [](const double* x, double* y, int64_t r, int64_t c) {
                   kernels::gelu_serial(x, y, r * c);
               });
    bench_training_step();
    return 0;
}
