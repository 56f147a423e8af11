#include "heima/common.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>

namespace heima {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::out_of_range: return "out_of_range";
        case ErrorCode::io: return "io";
        case ErrorCode::format: return "format";
        case ErrorCode::numeric: return "numeric";
        case ErrorCode::missing_artifact: return "missing_artifact";
        case ErrorCode::config: return "config";
    }
    return "unknown";
}

std::string Digest::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
    return buf;
}

std::string digest_hex(std::string_view text) { return Digest{}.update(text).hex(); }

std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, "cannot open " + path);
    Digest d;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        d.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return d.hex();
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i > start) out.emplace_back(text.substr(start, i - start));
    }
    return out;
}

std::string join_words(std::span<const std::string> words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

namespace le {

void write_floats(std::ostream& out, std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (float v : values) write(out, v);
    }
}

void read_floats(std::istream& in, std::span<float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * sizeof(float)));
        if (!in) throw Error(ErrorCode::format, "unexpected end of float array");
    } else {
        for (float& v : values) v = read<float>(in);
    }
}

void write_string(std::ostream& out, std::string_view text) {
    write<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_string(std::istream& in, std::size_t max_size) {
    auto size = read<std::uint32_t>(in);
    if (size > max_size) throw Error(ErrorCode::format, "string field too large");
    std::string text(size, '\0');
    in.read(text.data(), size);
    if (!in) throw Error(ErrorCode::format, "truncated string field");
    return text;
}

}  // namespace le

}  // namespace heima
