#include <map>
#include <set>

#include "binary_io.hpp"
#include "gaproto/error.hpp"
#include "gaproto/model.hpp"
#include "json.hpp"

namespace gaproto {

namespace {

constexpr std::uint32_t kGapcVersion = 1;

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["dim"] = c.dim;
    j["num_prototypes"] = c.num_prototypes;
    j["num_heads"] = c.num_heads;
    j["head_dim"] = c.head_dim;
    j["num_classes"] = c.num_classes;
    j["threshold"] = c.threshold;
    j["seed"] = c.seed;
    j["prototype_init"] = to_string(c.prototype_init);
    return j;
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    static const std::set<std::string> known = {"dim",         "num_prototypes", "num_heads", "head_dim",
                                                "num_classes", "threshold",      "seed",      "prototype_init"};
    if (!j.is_object()) fail(ErrorKind::format, "checkpoint config must be a JSON object");
    for (const auto& key : known)
        if (!j.contains(key)) fail(ErrorKind::format, "checkpoint config is missing '" + key + "'");
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) fail(ErrorKind::format, "checkpoint config has unknown key '" + key + "'");

    ModelConfig c;
    try {
        c.dim = j.at("dim").get<std::size_t>();
        c.num_prototypes = j.at("num_prototypes").get<std::size_t>();
        c.num_heads = j.at("num_heads").get<std::size_t>();
        c.head_dim = j.at("head_dim").get<std::size_t>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.threshold = j.at("threshold").get<double>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.prototype_init = parse_prototype_init(j.at("prototype_init").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::format, std::string("checkpoint config has a mistyped field: ") + e.what());
    } catch (const Error& e) {
        fail(ErrorKind::format, e.what());
    }
    try {
        validate(c);
    } catch (const Error& e) {
        fail(ErrorKind::format, std::string("checkpoint config invalid: ") + e.what());
    }
    return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params, const ModelConfig& config) {
    validate(config);
    check_shapes(params, config);

    detail::ByteWriter w;
    w.bytes("GAPC");
    w.u32(kGapcVersion);
    const std::string cfg = config_to_json(config).dump();
    w.u32(static_cast<std::uint32_t>(cfg.size()));
    w.bytes(cfg);
    w.u32(static_cast<std::uint32_t>(2 * config.num_heads + 3));
    for_each_tensor(params, [&](const std::string& name, const std::vector<std::uint64_t>& dims,
                                std::span<const double> values) {
        w.u32(static_cast<std::uint32_t>(name.size()));
        w.bytes(name);
        w.u32(static_cast<std::uint32_t>(dims.size()));
        for (auto d : dims) w.u64(d);
        for (double v : values) w.f32(static_cast<float>(v));
    });
    return w.take();
}

std::pair<ModelParams, ModelConfig> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < 4 || r.bytes(4, "magic") != "GAPC") fail(ErrorKind::format, "not a GAPC file (bad magic)");
    const auto version = r.u32("header");
    if (version != kGapcVersion) fail(ErrorKind::format, "unsupported GAPC version " + std::to_string(version));
    const auto cfg_len = r.u32("config length");
    const ModelConfig config = config_from_json(r.bytes(cfg_len, "config"));

    ModelParams params = ModelParams::zeros(config);
    std::map<std::string, std::pair<std::vector<std::uint64_t>, std::span<double>>> slots;
    for_each_tensor(params, [&](const std::string& name, const std::vector<std::uint64_t>& dims,
                                std::span<double> values) { slots.emplace(name, std::pair{dims, values}); });

    const auto count = r.u32("tensor count");
    std::set<std::string> seen;
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto name_len = r.u32("tensor name");
        const std::string name = r.bytes(name_len, "tensor name");
        const auto it = slots.find(name);
        if (it == slots.end()) fail(ErrorKind::format, "unexpected tensor '" + name + "' in checkpoint");
        if (!seen.insert(name).second) fail(ErrorKind::format, "duplicate tensor '" + name + "' in checkpoint");
        const auto& [expected_dims, values] = it->second;

        const auto rank = r.u32("tensor rank");
        r.need(std::uint64_t{rank} * 8, "tensor dims");
        std::vector<std::uint64_t> dims(rank);
        for (auto& d : dims) d = r.u64("tensor dims");
        if (dims != expected_dims) {
            std::string got;
            for (auto d : dims) got += (got.empty() ? "" : "x") + std::to_string(d);
            std::string want;
            for (auto d : expected_dims) want += (want.empty() ? "" : "x") + std::to_string(d);
            fail(ErrorKind::format, "shape mismatch for tensor '" + name + "': file has " + got + ", config implies " + want);
        }
        r.need(std::uint64_t{values.size()} * 4, "tensor '" + name + "' data");
        for (auto& v : values) v = static_cast<double>(r.f32("tensor data"));
    }
    if (seen.size() != slots.size()) {
        for (const auto& [name, _] : slots)
            if (!seen.contains(name)) fail(ErrorKind::format, "checkpoint is missing tensor '" + name + "'");
    }
    if (r.remaining() != 0) fail(ErrorKind::format, "corrupt checkpoint: trailing bytes");
    return {std::move(params), config};
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::filesystem::path& path) {
    detail::write_file(path, encode_checkpoint(params, config));
}

std::pair<ModelParams, ModelConfig> load_checkpoint(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

}  // namespace gaproto
