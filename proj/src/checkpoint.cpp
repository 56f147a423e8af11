#include "heima/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace heima {

namespace {

constexpr char kMagic[8] = {'H', 'E', 'I', 'M', 'A', 'C', 'K', 'P'};

nlohmann::json model_to_json(const ModelConfig& m) {
    return {{"vocab_size", m.vocab_size}, {"d_model", m.d_model}, {"n_layers", m.n_layers},
            {"n_heads", m.n_heads},       {"d_ff", m.d_ff},       {"max_len", m.max_len}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.vocab_size = j.at("vocab_size").get<int>();
    m.d_model = j.at("d_model").get<int>();
    m.n_layers = j.at("n_layers").get<int>();
    m.n_heads = j.at("n_heads").get<int>();
    m.d_ff = j.at("d_ff").get<int>();
    m.max_len = j.at("max_len").get<int>();
    return m;
}

CheckpointInfo read_header(std::istream& in, const std::string& path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string_view(magic, 8) != std::string_view(kMagic, 8))
        throw Error(ErrorCode::format, "not a checkpoint file: " + path);
    auto version = le::read<std::uint32_t>(in);
    if (version != kCheckpointVersion)
        throw Error(ErrorCode::format, "unsupported checkpoint version " + std::to_string(version) + ": " + path);
    try {
        auto j = nlohmann::json::parse(le::read_string(in));
        CheckpointInfo info;
        info.model = model_from_json(j.at("model"));
        info.kind = j.at("kind").get<std::string>();
        info.phase = j.at("phase").get<std::string>();
        info.step = j.at("step").get<std::int64_t>();
        info.param_digest = j.at("param_digest").get<std::string>();
        info.vocab_digest = j.at("vocab_digest").get<std::string>();
        info.run_config_digest = j.at("run_config_digest").get<std::string>();
        return info;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::format, "bad checkpoint header in " + path + ": " + e.what());
    }
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "cannot open checkpoint " + path);
    return in;
}

}  // namespace

void save_checkpoint(const std::string& path, const Params<float>& params, CheckpointInfo info) {
    info.model = params.config();
    info.param_digest = params.digest();
    nlohmann::json header{{"model", model_to_json(info.model)},
                          {"kind", info.kind},
                          {"phase", info.phase},
                          {"step", info.step},
                          {"param_digest", info.param_digest},
                          {"vocab_digest", info.vocab_digest},
                          {"run_config_digest", info.run_config_digest},
                          {"adapter", nullptr}};
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::io, "cannot write checkpoint " + path);
        out.write(kMagic, 8);
        le::write<std::uint32_t>(out, kCheckpointVersion);
        le::write_string(out, header.dump());
        le::write<std::uint32_t>(out, static_cast<std::uint32_t>(params.tensors().size()));
        for (const auto& t : params.tensors()) {
            le::write_string(out, t.name);
            le::write<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
            for (auto s : t.shape) le::write<std::uint64_t>(out, s);
            le::write_floats(out, t.data);
        }
        if (!out) throw Error(ErrorCode::io, "failed writing checkpoint " + path);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::io, "cannot move checkpoint into place: " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    auto in = open_in(path);
    return read_header(in, path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    auto in = open_in(path);
    LoadedCheckpoint out{read_header(in, path), Params<float>()};
    out.info.model.validate();
    out.params = Params<float>(out.info.model);
    auto count = le::read<std::uint32_t>(in);
    if (count != out.params.tensors().size())
        throw Error(ErrorCode::format, "checkpoint " + path + " has " + std::to_string(count) + " tensors, expected " +
                                           std::to_string(out.params.tensors().size()));
    for (auto& t : out.params.tensors()) {
        auto name = le::read_string(in, 4096);
        if (name != t.name) throw Error(ErrorCode::format, "checkpoint tensor " + name + " where " + t.name + " expected");
        auto rank = le::read<std::uint32_t>(in);
        if (rank != t.shape.size()) throw Error(ErrorCode::format, "rank mismatch for tensor " + t.name);
        for (auto s : t.shape)
            if (le::read<std::uint64_t>(in) != s) throw Error(ErrorCode::format, "shape mismatch for tensor " + t.name);
        le::read_floats(in, t.data);
    }
    if (out.params.digest() != out.info.param_digest)
        throw Error(ErrorCode::format, "parameter digest mismatch in " + path);
    return out;
}

}  // namespace heima
