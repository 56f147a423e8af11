#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace heima {

using TokenId = std::int32_t;

enum class ErrorCode {
    invalid_argument,
    out_of_range,
    io,
    format,
    numeric,
    missing_artifact,
    config,
};

const char* to_string(ErrorCode code);

/// All library failures surface as this exception; the code lets the CLI map
/// failures onto exit statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// 64-bit FNV-1a. Used for content digests of vocabularies, parameter sets,
/// configs and exported files; not a cryptographic hash.
class Digest {
public:
    Digest& update(const void* data, std::size_t size) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Digest& update(std::string_view text) { return update(text.data(), text.size()); }
    template <typename T>
    Digest& update_pod(const T& value) {
        static_assert(std::is_trivially_copyable_v<T>);
        return update(&value, sizeof(T));
    }

    std::uint64_t value() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string digest_hex(std::string_view text);

/// splitmix64 finaliser; derives independent seeds and shuffle streams.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
std::string digest_file(const std::string& path);

/// Splits on runs of ASCII whitespace.
std::vector<std::string> split_words(std::string_view text);
std::string join_words(std::span<const std::string> words);

// Little-endian binary helpers shared by the checkpoint and hidden-state formats.
namespace le {

template <typename T>
T byteswap_if_needed(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char buf[sizeof(T)];
        std::memcpy(buf, &value, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
        std::memcpy(&value, buf, sizeof(T));
    }
    return value;
}

template <typename T>
void write(std::ostream& out, T value) {
    value = byteswap_if_needed(value);
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw Error(ErrorCode::format, "unexpected end of binary stream");
    return byteswap_if_needed(value);
}

void write_floats(std::ostream& out, std::span<const float> values);
void read_floats(std::istream& in, std::span<float> values);
void write_string(std::ostream& out, std::string_view text);
std::string read_string(std::istream& in, std::size_t max_size = (1u << 28));

}  // namespace le

}  // namespace heima
