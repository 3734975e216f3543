#pragma once

#include <cstdint>
#include <string>

#include "layoutlab/model.hpp"

namespace layoutlab::checkpoint {

// Checkpoint file: magic "LLCK", u32 version, u32 header length, JSON
// header (config, variant, step, seed, tensor names in declared order),
// then one raw TNSR record per tensor in that order.
void save(const std::string& path, const mmdit::ModelWeights& weights, int64_t step, uint64_t seed);

struct Loaded {
    mmdit::ModelWeights weights;
    int64_t step = 0;
    uint64_t seed = 0;
};

Loaded load(const std::string& path);

}  // namespace layoutlab::checkpoint
