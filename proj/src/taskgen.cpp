#include "heima/taskgen.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace heima {

using nlohmann::json;

namespace {

struct KindName {
    QuestionKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {QuestionKind::count_color, "count-color"},
    {QuestionKind::count_shape, "count-shape"},
    {QuestionKind::count_pair, "count-pair"},
    {QuestionKind::exists, "exists"},
    {QuestionKind::attribute_of_unique, "attribute-of-unique"},
    {QuestionKind::compare_counts, "compare-counts"},
};

// Template vocabulary shared by questions and stage texts.
const std::vector<std::string> kTemplateWords = {
    "how", "many",   "objects", "are",     "there",     "?",     "shapes",   "is",
    "a",   "what",   "color",   "the",     "only",      "more",  "than",     "question",
    "asks", "for",   "number",  "of",      "in",        "grid",  ".",        "whether",
    "appears", "outnumber", "contains", ":", "relevant", "Count", "=",       "Color",
    ",",   "empty",  "yes",     "no",
};

// Small self-contained generator so datasets do not depend on the standard
// library's distribution implementations.
class SampleRng {
public:
    explicit SampleRng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next() { return state_ = splitmix64(state_); }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(next() % n); }

private:
    std::uint64_t state_;
};

std::vector<std::string> words(std::string_view text) { return split_words(text); }

void append(std::vector<std::string>& out, std::string_view text) {
    for (auto& w : split_words(text)) out.push_back(std::move(w));
}

std::vector<std::string> render_question(const SampleMeta& m) {
    switch (m.kind) {
        case QuestionKind::count_color: return words("how many " + m.color + " objects are there ?");
        case QuestionKind::count_shape: return words("how many " + m.shape + " shapes are there ?");
        case QuestionKind::count_pair:
            return words("how many " + m.color + " " + m.shape + " objects are there ?");
        case QuestionKind::exists: return words("is there a " + m.color + " " + m.shape + " ?");
        case QuestionKind::attribute_of_unique: return words("what color is the only " + m.shape + " ?");
        case QuestionKind::compare_counts:
            return words("are there more " + m.color + " objects than " + m.color_b + " objects ?");
    }
    return {};
}

std::vector<std::string> render_summary(const SampleMeta& m) {
    switch (m.kind) {
        case QuestionKind::count_color:
            return words("the question asks for the number of " + m.color + " objects in the grid .");
        case QuestionKind::count_shape:
            return words("the question asks for the number of " + m.shape + " shapes in the grid .");
        case QuestionKind::count_pair:
            return words("the question asks for the number of " + m.color + " " + m.shape +
                         " objects in the grid .");
        case QuestionKind::exists:
            return words("the question asks whether a " + m.color + " " + m.shape +
                         " appears in the grid .");
        case QuestionKind::attribute_of_unique:
            return words("the question asks for the color of the only " + m.shape + " in the grid .");
        case QuestionKind::compare_counts:
            return words("the question asks whether " + m.color + " objects outnumber " + m.color_b +
                         " objects in the grid .");
    }
    return {};
}

std::vector<std::string> render_caption(const SampleMeta& m) {
    std::vector<std::string> out;
    std::size_t filled = 0;
    for (const auto& c : m.grid) filled += c.empty() ? 0 : 1;
    append(out, "the grid contains " + std::to_string(filled) + " objects :");
    for (std::size_t i = 0; i < m.grid.size(); ++i) {
        if (m.grid[i].empty()) continue;
        out.push_back(coordinate_symbol(static_cast<int>(i) / m.grid_size, static_cast<int>(i) % m.grid_size));
        out.push_back(m.grid[i].object());
    }
    out.push_back(".");
    return out;
}

struct Derivation {
    std::vector<std::string> tail;
    std::vector<std::string> answer;
};

Derivation derive(const SampleMeta& m, const std::vector<std::size_t>& cells) {
    auto count = cells.size();
    switch (m.kind) {
        case QuestionKind::count_color:
        case QuestionKind::count_shape:
        case QuestionKind::count_pair:
            return {words("Count = " + std::to_string(count)), {std::to_string(count)}};
        case QuestionKind::exists:
            return {words("Count = " + std::to_string(count)), {count > 0 ? "yes" : "no"}};
        case QuestionKind::attribute_of_unique: {
            const auto& color = m.grid[cells.front()].color;
            return {words("Color = " + color), {color}};
        }
        case QuestionKind::compare_counts: {
            std::size_t a = 0, b = 0;
            for (auto i : cells) (m.grid[i].color == m.color ? a : b) += 1;
            return {words(m.color + " = " + std::to_string(a) + " , " + m.color_b + " = " + std::to_string(b)),
                    {a > b ? "yes" : "no"}};
        }
    }
    return {};
}

}  // namespace

std::string_view to_string(QuestionKind kind) {
    for (const auto& kn : kKindNames)
        if (kn.kind == kind) return kn.name;
    return "unknown";
}

QuestionKind question_kind_from_string(std::string_view name) {
    for (const auto& kn : kKindNames)
        if (kn.name == name) return kn.kind;
    throw Error(ErrorCode::invalid_argument, "unknown question kind '" + std::string(name) + "'");
}

std::vector<QuestionKind> all_question_kinds() {
    std::vector<QuestionKind> out;
    for (const auto& kn : kKindNames) out.push_back(kn.kind);
    return out;
}

void GenConfig::validate() const {
    if (grid_size < 2) throw Error(ErrorCode::invalid_argument, "grid_size must be >= 2");
    if (question_kinds.empty()) throw Error(ErrorCode::invalid_argument, "no question kinds enabled");
    if (colors.size() < 2) throw Error(ErrorCode::invalid_argument, "need at least two colors");
    if (shapes.empty()) throw Error(ErrorCode::invalid_argument, "need at least one shape");
    if (!(fill_probability >= 0.0 && fill_probability <= 1.0))
        throw Error(ErrorCode::invalid_argument, "fill_probability must lie in [0, 1]");
    if (stage_names.empty() || stage_names.size() > 3)
        throw Error(ErrorCode::invalid_argument, "generator renders between 1 and 3 stages");
}

std::string GenConfig::digest() const {
    json j;
    j["grid_size"] = grid_size;
    j["colors"] = colors;
    j["shapes"] = shapes;
    std::vector<std::string> kinds;
    for (auto k : question_kinds) kinds.emplace_back(to_string(k));
    j["question_kinds"] = kinds;
    j["fill_probability"] = fill_probability;
    j["seed"] = seed;
    j["stage_names"] = stage_names;
    return digest_hex(j.dump());
}

std::string Cell::object() const { return empty() ? "empty" : color + "_" + shape; }

std::size_t Sample::cot_length() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.size();
    return n;
}

std::string coordinate_symbol(int row, int col) {
    return "r" + std::to_string(row + 1) + "c" + std::to_string(col + 1);
}

std::vector<std::size_t> relevant_cells(const SampleMeta& m) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < m.grid.size(); ++i) {
        const auto& c = m.grid[i];
        if (c.empty()) continue;
        bool hit = false;
        switch (m.kind) {
            case QuestionKind::count_color: hit = c.color == m.color; break;
            case QuestionKind::count_shape:
            case QuestionKind::attribute_of_unique: hit = c.shape == m.shape; break;
            case QuestionKind::count_pair:
            case QuestionKind::exists: hit = c.color == m.color && c.shape == m.shape; break;
            case QuestionKind::compare_counts: hit = c.color == m.color || c.color == m.color_b; break;
        }
        if (hit) out.push_back(i);
    }
    return out;
}

Sample render_sample(std::int64_t id, const SampleMeta& meta, std::size_t stage_count) {
    if (meta.grid.size() != static_cast<std::size_t>(meta.grid_size * meta.grid_size))
        throw Error(ErrorCode::invalid_argument, "grid does not match grid_size");
    Sample s;
    s.id = id;
    s.meta = meta;
    s.visual.emplace_back(kImgOpen);
    for (const auto& c : meta.grid) s.visual.push_back(c.object());
    s.visual.emplace_back(kImgClose);
    s.question = render_question(meta);

    auto cells = relevant_cells(meta);
    if (meta.kind == QuestionKind::attribute_of_unique && cells.size() != 1)
        throw Error(ErrorCode::invalid_argument, "attribute question needs exactly one matching cell");
    auto derivation = derive(meta, cells);

    std::vector<std::string> reasoning;
    append(reasoning, "relevant objects :");
    for (auto i : cells) {
        reasoning.push_back(coordinate_symbol(static_cast<int>(i) / meta.grid_size,
                                              static_cast<int>(i) % meta.grid_size));
        reasoning.push_back(meta.grid[i].object());
    }
    reasoning.push_back(".");
    reasoning.insert(reasoning.end(), derivation.tail.begin(), derivation.tail.end());

    std::vector<std::vector<std::string>> all{render_summary(meta), render_caption(meta), reasoning};
    stage_count = std::min<std::size_t>(stage_count, all.size());
    s.stages.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(stage_count));
    s.answer = derivation.answer;
    return s;
}

std::vector<std::string> answer_oracle(const SampleMeta& m) {
    auto count_if = [&](auto pred) {
        int n = 0;
        for (const auto& c : m.grid)
            if (!c.empty() && pred(c)) ++n;
        return n;
    };
    switch (m.kind) {
        case QuestionKind::count_color:
            return {std::to_string(count_if([&](const Cell& c) { return c.color == m.color; }))};
        case QuestionKind::count_shape:
            return {std::to_string(count_if([&](const Cell& c) { return c.shape == m.shape; }))};
        case QuestionKind::count_pair:
            return {std::to_string(
                count_if([&](const Cell& c) { return c.color == m.color && c.shape == m.shape; }))};
        case QuestionKind::exists:
            return {count_if([&](const Cell& c) { return c.color == m.color && c.shape == m.shape; }) > 0
                        ? "yes"
                        : "no"};
        case QuestionKind::attribute_of_unique:
            for (const auto& c : m.grid)
                if (!c.empty() && c.shape == m.shape) return {c.color};
            return {};
        case QuestionKind::compare_counts: {
            // "more X than Y" is strict: ties answer no.
            int a = count_if([&](const Cell& c) { return c.color == m.color; });
            int b = count_if([&](const Cell& c) { return c.color == m.color_b; });
            return {a > b ? "yes" : "no"};
        }
    }
    return {};
}

Sample gen_sample(const GenConfig& cfg, std::int64_t index) {
    cfg.validate();
    SampleRng rng(splitmix64(cfg.seed) ^ splitmix64(static_cast<std::uint64_t>(index) + 0x51ed27ULL));
    SampleMeta m;
    m.grid_size = cfg.grid_size;
    m.seed = cfg.seed;
    auto cells = static_cast<std::size_t>(cfg.grid_size * cfg.grid_size);
    m.grid.resize(cells);
    for (auto& c : m.grid) {
        if (rng.uniform() < cfg.fill_probability) {
            c.color = cfg.colors[rng.below(cfg.colors.size())];
            c.shape = cfg.shapes[rng.below(cfg.shapes.size())];
        }
    }
    m.kind = cfg.question_kinds[rng.below(cfg.question_kinds.size())];
    switch (m.kind) {
        case QuestionKind::count_color: m.color = cfg.colors[rng.below(cfg.colors.size())]; break;
        case QuestionKind::count_shape: m.shape = cfg.shapes[rng.below(cfg.shapes.size())]; break;
        case QuestionKind::count_pair:
        case QuestionKind::exists:
            m.color = cfg.colors[rng.below(cfg.colors.size())];
            m.shape = cfg.shapes[rng.below(cfg.shapes.size())];
            break;
        case QuestionKind::attribute_of_unique: {
            // Make the chosen shape unique: keep its first occurrence (or place one) and
            // clear the rest.
            m.shape = cfg.shapes[rng.below(cfg.shapes.size())];
            bool kept = false;
            for (auto& c : m.grid) {
                if (c.empty() || c.shape != m.shape) continue;
                if (kept) c = Cell{};
                kept = true;
            }
            if (!kept) {
                auto& c = m.grid[rng.below(cells)];
                c.color = cfg.colors[rng.below(cfg.colors.size())];
                c.shape = m.shape;
            }
            break;
        }
        case QuestionKind::compare_counts: {
            auto a = rng.below(cfg.colors.size());
            auto b = rng.below(cfg.colors.size() - 1);
            if (b >= a) ++b;
            m.color = cfg.colors[a];
            m.color_b = cfg.colors[b];
            break;
        }
    }
    return render_sample(index, m, cfg.stage_names.size());
}

TaskGrammar make_grammar(const GenConfig& cfg, std::span<const std::string> extra_words) {
    cfg.validate();
    TaskGrammar g;
    g.structural = {std::string(kBos), std::string(kEos), std::string(kImgOpen), std::string(kImgClose),
                    std::string(kAnswerOpen), std::string(kAnswerClose)};
    for (const auto& name : cfg.stage_names) {
        g.structural.push_back(stage_open_symbol(name));
        g.structural.push_back(stage_close_symbol(name));
    }
    g.colors = cfg.colors;
    g.shapes = cfg.shapes;
    for (const auto& c : cfg.colors)
        for (const auto& s : cfg.shapes) g.objects.push_back(c + "_" + s);
    for (int r = 0; r < cfg.grid_size; ++r)
        for (int c = 0; c < cfg.grid_size; ++c) g.coordinates.push_back(coordinate_symbol(r, c));
    for (int d = 0; d <= cfg.grid_size * cfg.grid_size; ++d) g.digits.push_back(std::to_string(d));

    std::set<std::string> taken;
    for (const auto* cat : {&g.structural, &g.colors, &g.shapes, &g.objects, &g.coordinates, &g.digits})
        taken.insert(cat->begin(), cat->end());
    std::set<std::string> word_set(kTemplateWords.begin(), kTemplateWords.end());
    word_set.insert(extra_words.begin(), extra_words.end());
    for (const auto& w : word_set)
        if (!taken.count(w)) g.words.push_back(w);
    return g;
}

std::vector<Sample> gen_samples(const GenConfig& cfg, std::size_t n, Split split) {
    std::vector<Sample> out;
    out.reserve(n);
    std::int64_t base = split == Split::train ? 0 : kTestIdOffset;
    for (std::size_t i = 0; i < n; ++i) out.push_back(gen_sample(cfg, base + static_cast<std::int64_t>(i)));
    return out;
}

void gen_dataset(const GenConfig& cfg, std::size_t n, Split split, const std::string& path) {
    if (n < 1) throw Error(ErrorCode::invalid_argument, "dataset needs at least one sample");
    auto samples = gen_samples(cfg, n, split);
    write_dataset(path, samples, split == Split::train ? "train" : "test", cfg.digest());
}

std::string sample_to_json_line(const Sample& s) {
    json j;
    j["schema"] = "heima.sample.v1";
    j["id"] = s.id;
    j["visual"] = join_words(s.visual);
    j["question"] = join_words(s.question);
    json stages = json::array();
    for (const auto& st : s.stages) stages.push_back(join_words(st));
    j["stages"] = stages;
    j["answer"] = join_words(s.answer);
    json meta;
    meta["grid_size"] = s.meta.grid_size;
    std::vector<std::string> grid;
    for (const auto& c : s.meta.grid) grid.push_back(c.object());
    meta["grid"] = grid;
    meta["kind"] = std::string(to_string(s.meta.kind));
    meta["color"] = s.meta.color;
    meta["shape"] = s.meta.shape;
    meta["color_b"] = s.meta.color_b;
    meta["seed"] = s.meta.seed;
    j["meta"] = meta;
    return j.dump();
}

Sample sample_from_json_line(std::string_view line) {
    json j;
    try {
        j = json::parse(line);
        Sample s;
        if (j.at("schema").get<std::string>() != "heima.sample.v1")
            throw Error(ErrorCode::format, "unsupported sample schema");
        s.id = j.at("id").get<std::int64_t>();
        s.visual = split_words(j.at("visual").get<std::string>());
        s.question = split_words(j.at("question").get<std::string>());
        for (const auto& st : j.at("stages")) s.stages.push_back(split_words(st.get<std::string>()));
        s.answer = split_words(j.at("answer").get<std::string>());
        const auto& meta = j.at("meta");
        s.meta.grid_size = meta.at("grid_size").get<int>();
        for (const auto& obj : meta.at("grid")) {
            auto o = obj.get<std::string>();
            Cell c;
            if (o != "empty") {
                auto us = o.find('_');
                if (us == std::string::npos) throw Error(ErrorCode::format, "bad grid object '" + o + "'");
                c.color = o.substr(0, us);
                c.shape = o.substr(us + 1);
            }
            s.meta.grid.push_back(c);
        }
        s.meta.kind = question_kind_from_string(meta.at("kind").get<std::string>());
        s.meta.color = meta.at("color").get<std::string>();
        s.meta.shape = meta.at("shape").get<std::string>();
        s.meta.color_b = meta.at("color_b").get<std::string>();
        s.meta.seed = meta.at("seed").get<std::uint64_t>();
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, std::string("malformed sample record: ") + e.what());
    }
}

// File layout: a header line {"schema":"heima.dataset.v1", split, count, gen_config_digest}
// followed by one sample record per line.
void write_dataset(const std::string& path, std::span<const Sample> samples, std::string_view split,
                   std::string_view config_digest) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write dataset " + path);
    json header;
    header["schema"] = "heima.dataset.v1";
    header["split"] = std::string(split);
    header["count"] = samples.size();
    header["gen_config_digest"] = std::string(config_digest);
    out << header.dump() << "\n";
    for (const auto& s : samples) out << sample_to_json_line(s) << "\n";
    if (!out) throw Error(ErrorCode::io, "failed writing dataset " + path);
}

std::vector<Sample> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::missing_artifact, "no dataset at " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::format, "empty dataset file " + path);
    std::size_t count = 0;
    try {
        auto header = json::parse(line);
        if (header.at("schema").get<std::string>() != "heima.dataset.v1")
            throw Error(ErrorCode::format, "unsupported dataset schema in " + path);
        count = header.at("count").get<std::size_t>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::format, "malformed dataset header in " + path + ": " + e.what());
    }
    std::vector<Sample> out;
    out.reserve(count);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(sample_from_json_line(line));
    }
    if (out.size() != count) throw Error(ErrorCode::format, "dataset record count mismatch in " + path);
    return out;
}

}  // namespace heima
