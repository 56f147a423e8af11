#include "heima/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace heima {

namespace {

std::string upper(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool valid_symbol(std::string_view s) {
    if (s.empty()) return false;
    return std::none_of(s.begin(), s.end(),
                        [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace

std::string stage_open_symbol(std::string_view stage_name) { return "<" + upper(stage_name) + ">"; }
std::string stage_close_symbol(std::string_view stage_name) { return "</" + upper(stage_name) + ">"; }
std::string thinking_symbol(std::string_view stage_name) {
    return "<Thinking_of_" + std::string(stage_name) + ">";
}

void ThinkingTokenSpec::validate() const {
    if (stage_names.empty())
        throw Error(ErrorCode::invalid_argument, "thinking spec needs at least one stage");
    std::set<std::string> seen;
    for (const auto& n : stage_names) {
        if (!valid_symbol(n)) throw Error(ErrorCode::invalid_argument, "invalid stage name '" + n + "'");
        if (!seen.insert(n).second)
            throw Error(ErrorCode::invalid_argument, "duplicate stage name '" + n + "'");
    }
    if (tokens_per_stage < 1)
        throw Error(ErrorCode::invalid_argument, "tokens_per_stage must be >= 1");
    if (mode == ThinkingMode::retention_ratio && !(ratio > 0.0 && ratio <= 1.0))
        throw Error(ErrorCode::invalid_argument, "retention ratio must lie in (0, 1]");
}

void Vocab::append(const std::string& symbol) {
    auto id = static_cast<TokenId>(symbols_.size());
    if (!id_of_.emplace(symbol, id).second)
        throw Error(ErrorCode::invalid_argument, "duplicate symbol in grammar: " + symbol);
    symbols_.push_back(symbol);
}

Vocab Vocab::build(const TaskGrammar& grammar) {
    Vocab v;
    const std::vector<std::string>* categories[] = {&grammar.structural, &grammar.colors,
                                                    &grammar.shapes,     &grammar.objects,
                                                    &grammar.coordinates, &grammar.digits,
                                                    &grammar.words};
    std::size_t total = 0;
    for (const auto* cat : categories) total += cat->size();
    if (total == 0) throw Error(ErrorCode::invalid_argument, "no symbols");

    for (const auto* cat : categories) {
        std::vector<std::string> sorted = *cat;
        std::sort(sorted.begin(), sorted.end());
        for (const auto& s : sorted) {
            if (!valid_symbol(s))
                throw Error(ErrorCode::invalid_argument, "invalid symbol '" + s + "'");
            v.append(s);
        }
        if (cat == &grammar.structural) {
            for (std::size_t i = 0; i < v.symbols_.size(); ++i)
                v.reserved_.push_back(static_cast<TokenId>(i));
        }
    }
    return v;
}

Vocab build_vocab(const TaskGrammar& grammar) { return Vocab::build(grammar); }

bool Vocab::contains(std::string_view symbol) const { return find(symbol).has_value(); }

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
    auto it = id_of_.find(std::string(symbol));
    if (it == id_of_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocab::id(std::string_view symbol) const {
    auto found = find(symbol);
    if (!found) throw Error(ErrorCode::out_of_range, "unknown symbol '" + std::string(symbol) + "'");
    return *found;
}

const std::string& Vocab::symbol(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
        throw Error(ErrorCode::out_of_range, "token id " + std::to_string(id) + " out of range");
    return symbols_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocab::encode(std::span<const std::string> symbols) const {
    std::vector<TokenId> ids;
    ids.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        auto found = find(symbols[i]);
        if (!found)
            throw Error(ErrorCode::out_of_range, "unknown symbol '" + symbols[i] + "' at position " +
                                                     std::to_string(i));
        ids.push_back(*found);
    }
    return ids;
}

std::vector<std::string> Vocab::decode(std::span<const TokenId> ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= symbols_.size())
            throw Error(ErrorCode::out_of_range, "token id " + std::to_string(ids[i]) +
                                                     " out of range at position " + std::to_string(i));
        out.push_back(symbols_[static_cast<std::size_t>(ids[i])]);
    }
    return out;
}

bool Vocab::is_reserved(TokenId id) const {
    return std::find(reserved_.begin(), reserved_.end(), id) != reserved_.end();
}

std::optional<int> Vocab::thinking_stage(TokenId id) const {
    for (std::size_t k = 0; k < thinking_ids_.size(); ++k)
        if (thinking_ids_[k] == id) return static_cast<int>(k);
    return std::nullopt;
}

Vocab register_thinking_tokens(const Vocab& base, const ThinkingTokenSpec& spec) {
    spec.validate();
    if (base.has_thinking_tokens())
        throw Error(ErrorCode::invalid_argument, "thinking tokens already registered");
    Vocab v = base;
    for (const auto& name : spec.stage_names) {
        auto sym = thinking_symbol(name);
        if (v.contains(sym))
            throw Error(ErrorCode::invalid_argument,
                        "thinking token for stage '" + name + "' collides with symbol " + sym);
        v.append(sym);
        v.thinking_ids_.push_back(static_cast<TokenId>(v.size() - 1));
    }
    return v;
}

std::string Vocab::digest() const {
    Digest d;
    d.update_pod(static_cast<std::uint64_t>(reserved_.size()));
    d.update_pod(static_cast<std::uint64_t>(thinking_ids_.size()));
    for (const auto& s : symbols_) {
        d.update(s);
        d.update("\n");
    }
    return d.hex();
}

// Format: one header line, then one symbol per line (line i+1 holds id i).
// Structural symbols occupy the first `structural` ids, thinking tokens the last `thinking`.
std::string Vocab::to_text() const {
    std::ostringstream out;
    out << "#heima-vocab v1 size=" << symbols_.size() << " structural=" << reserved_.size()
        << " thinking=" << thinking_ids_.size() << " digest=" << digest() << "\n";
    for (const auto& s : symbols_) out << s << "\n";
    return out.str();
}

Vocab Vocab::from_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string header;
    if (!std::getline(in, header) || header.rfind("#heima-vocab v1 ", 0) != 0)
        throw Error(ErrorCode::format, "missing vocab header");
    std::size_t size = 0, structural = 0, thinking = 0;
    std::string digest;
    for (const auto& field : split_words(header)) {
        auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        auto key = field.substr(0, eq);
        auto val = field.substr(eq + 1);
        if (key == "size") size = std::stoull(val);
        else if (key == "structural") structural = std::stoull(val);
        else if (key == "thinking") thinking = std::stoull(val);
        else if (key == "digest") digest = val;
    }
    Vocab v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        v.append(line);
    }
    if (v.size() != size || structural + thinking > size)
        throw Error(ErrorCode::format, "vocab size does not match header");
    for (std::size_t i = 0; i < structural; ++i) v.reserved_.push_back(static_cast<TokenId>(i));
    for (std::size_t i = size - thinking; i < size; ++i) v.thinking_ids_.push_back(static_cast<TokenId>(i));
    if (v.digest() != digest) throw Error(ErrorCode::format, "vocab digest mismatch");
    return v;
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write " + path);
    out << to_text();
    if (!out) throw Error(ErrorCode::io, "failed writing " + path);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "no vocabulary at " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_text(buf.str());
}

}  // namespace heima
