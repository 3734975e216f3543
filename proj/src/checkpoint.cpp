#include "layoutlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace layoutlab::checkpoint {

using mmdit::ModelWeights;
using nlohmann::json;

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("truncated checkpoint");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save(const std::string& path, const ModelWeights& weights, int64_t step, uint64_t seed) {
    json header;
    header["config"] = json::parse(weights.config().to_json());
    header["variant"] = mmdit::variant_name(weights.variant());
    header["step"] = step;
    header["seed"] = seed;
    json names = json::array();
    for (const auto& p : weights.params()) names.push_back(p.name);
    header["tensors"] = names;
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write("LLCK", 4);
    put_u32(out, kVersion);
    put_u32(out, static_cast<uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& p : weights.params()) numcore::write_tnsr(out, p.value);
}

Loaded load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LLCK", 4) != 0)
        throw std::runtime_error(path + " is not a checkpoint");
    const uint32_t version = get_u32(in);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t header_len = get_u32(in);
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (!in) throw std::runtime_error("truncated checkpoint header");

    const json header = json::parse(header_text);
    const auto cfg = mmdit::ModelConfig::from_json(header.at("config").dump());
    const auto variant = mmdit::variant_from_name(header.at("variant").get<std::string>());

    // Structure comes from the config; stored tensors must match it.
    Rng scratch(0);
    ModelWeights weights = ModelWeights::init(cfg, variant, scratch);
    const auto& names = header.at("tensors");
    if (names.size() != weights.params().size())
        throw std::runtime_error("checkpoint lists " + std::to_string(names.size()) +
                                 " tensors, model expects " +
                                 std::to_string(weights.params().size()));
    for (size_t i = 0; i < weights.params().size(); ++i) {
        auto& p = weights.params()[i];
        if (names[i].get<std::string>() != p.name)
            throw std::runtime_error("checkpoint tensor order mismatch at " + p.name);
        numcore::Tensor t = numcore::read_tnsr(in);
        if (t.shape != p.value.shape)
            throw std::runtime_error("checkpoint tensor " + p.name + " has shape " +
                                     numcore::shape_str(t.shape) + ", expected " +
                                     numcore::shape_str(p.value.shape));
        p.value = std::move(t);
    }

    Loaded loaded{std::move(weights), header.at("step").get<int64_t>(),
                  header.at("seed").get<uint64_t>()};
    return loaded;
}

}  // namespace layoutlab::checkpoint
