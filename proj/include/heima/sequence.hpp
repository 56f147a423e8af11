#pragma once

#include <cstdint>
#include <vector>

#include "heima/common.hpp"

namespace heima {

struct Span {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    std::size_t size() const { return end - begin; }
    bool operator==(const Span&) const = default;
};

struct ThinkingPosition {
    int stage = 0;  // zero-based stage index
    std::size_t position = 0;
    bool operator==(const ThinkingPosition&) const = default;
};

struct RegionMap {
    Span visual;
    Span question;
    std::vector<Span> stages;  // one per stage, textual (with markers) or thinking
    Span answer;               // answer markers included
    bool operator==(const RegionMap&) const = default;
};

/// Token ids with a parallel loss mask. mask[t] marks ids[t] as a prediction
/// target (predicted from position t-1), so mask[0] is always false.
struct MaskedSequence {
    std::vector<TokenId> ids;
    std::vector<std::uint8_t> loss_mask;
    std::vector<ThinkingPosition> thinking_positions;
    RegionMap regions;

    std::size_t size() const { return ids.size(); }
    std::size_t target_count() const {
        std::size_t n = 0;
        for (auto m : loss_mask) n += m ? 1 : 0;
        return n;
    }
};

}  // namespace heima
