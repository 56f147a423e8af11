#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "heima/taskgen.hpp"
#include "../support/temp_dir.hpp"

using namespace heima;

namespace {

std::string read_all(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SampleMeta blank(int n) {
    SampleMeta m;
    m.grid_size = n;
    m.grid.assign(static_cast<std::size_t>(n * n), Cell{});
    return m;
}

// Independent predicate over raw grid contents, used to check stage-3 faithfulness.
bool matches(const SampleMeta& m, const Cell& c) {
    if (c.empty()) return false;
    switch (m.kind) {
        case QuestionKind::count_color: return c.color == m.color;
        case QuestionKind::count_shape: return c.shape == m.shape;
        case QuestionKind::attribute_of_unique: return c.shape == m.shape;
        case QuestionKind::count_pair:
        case QuestionKind::exists: return c.color == m.color && c.shape == m.shape;
        case QuestionKind::compare_counts: return c.color == m.color || c.color == m.color_b;
    }
    return false;
}

// Cells listed in a stage text as (coordinate, object) pairs.
std::vector<std::pair<std::string, std::string>> listed_cells(const std::vector<std::string>& text) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i + 1 < text.size(); ++i) {
        const auto& w = text[i];
        if (w.size() >= 4 && w[0] == 'r' && w.find('c') != std::string::npos && std::isdigit(static_cast<unsigned char>(w[1])))
            out.emplace_back(w, text[i + 1]);
    }
    return out;
}

}  // namespace

TEST_CASE("empty grid count question") {
    auto m = blank(4);
    m.kind = QuestionKind::count_pair;
    m.color = "red";
    m.shape = "circle";
    auto s = render_sample(0, m);
    REQUIRE(s.stages.size() == 3);
    auto& r = s.stages[2];
    REQUIRE(r.size() >= 3);
    CHECK(r[r.size() - 3] == "Count");
    CHECK(r[r.size() - 2] == "=");
    CHECK(r.back() == "0");
    CHECK(s.answer == std::vector<std::string>{"0"});

    GenConfig cfg;
    cfg.fill_probability = 0.0;
    cfg.question_kinds = {QuestionKind::count_pair};
    auto g = gen_sample(cfg, 3);
    CHECK(g.answer == std::vector<std::string>{"0"});
    CHECK(g.stages[2].back() == "0");
}

TEST_CASE("fixed 2x2 grid with two red circles") {
    auto m = blank(2);
    m.grid[0] = Cell{"red", "circle"};
    m.grid[3] = Cell{"red", "circle"};
    m.kind = QuestionKind::count_pair;
    m.color = "red";
    m.shape = "circle";
    auto s = render_sample(0, m);
    CHECK(s.answer == std::vector<std::string>{"2"});
    auto caption = listed_cells(s.stages[1]);
    REQUIRE(caption.size() == 2);
    CHECK(caption[0] == std::pair<std::string, std::string>{"r1c1", "red_circle"});
    CHECK(caption[1] == std::pair<std::string, std::string>{"r2c2", "red_circle"});
    CHECK(s.visual == std::vector<std::string>{"<IMG>", "red_circle", "empty", "empty", "red_circle", "</IMG>"});
}

TEST_CASE("answer oracle edge cases") {
    SUBCASE("compare counts tie answers no") {
        auto m = blank(2);
        m.grid[0] = Cell{"red", "star"};
        m.grid[1] = Cell{"blue", "star"};
        m.kind = QuestionKind::compare_counts;
        m.color = "red";
        m.color_b = "blue";
        CHECK(answer_oracle(m) == std::vector<std::string>{"no"});
        CHECK(render_sample(0, m).answer == std::vector<std::string>{"no"});
    }
    SUBCASE("saturated grid counts 16") {
        auto m = blank(4);
        for (auto& c : m.grid) c = Cell{"green", "square"};
        m.kind = QuestionKind::count_pair;
        m.color = "green";
        m.shape = "square";
        CHECK(answer_oracle(m) == std::vector<std::string>{"16"});
    }
    SUBCASE("attribute question needs a unique shape") {
        auto m = blank(2);
        m.grid[0] = Cell{"red", "star"};
        m.grid[1] = Cell{"blue", "star"};
        m.kind = QuestionKind::attribute_of_unique;
        m.shape = "star";
        CHECK_THROWS_AS(render_sample(0, m), Error);
    }
}

TEST_CASE("generation is deterministic") {
    GenConfig cfg;
    CHECK(gen_sample(cfg, 42) == gen_sample(cfg, 42));
    CHECK(sample_to_json_line(gen_sample(cfg, 42)) == sample_to_json_line(gen_sample(cfg, 42)));
    CHECK_FALSE(gen_sample(cfg, 42) == gen_sample(cfg, 43));
    GenConfig other;
    other.seed = 8;
    CHECK_FALSE(gen_sample(cfg, 42) == gen_sample(other, 42));
}

TEST_CASE("1000 samples: oracle agreement, stage-3 faithfulness, caption completeness") {
    GenConfig cfg;
    auto samples = gen_samples(cfg, 1000, Split::train);
    std::set<QuestionKind> kinds;
    double cot = 0;
    for (const auto& s : samples) {
        kinds.insert(s.meta.kind);
        cot += static_cast<double>(s.cot_length());
        CHECK(answer_oracle(s.meta) == s.answer);
        REQUIRE(s.stages.size() == 3);
        for (const auto& st : s.stages) CHECK_FALSE(st.empty());

        std::vector<std::pair<std::string, std::string>> want_all, want_rel;
        for (int i = 0; i < s.meta.grid_size * s.meta.grid_size; ++i) {
            const auto& c = s.meta.grid[static_cast<std::size_t>(i)];
            if (c.empty()) continue;
            auto coord = "r" + std::to_string(i / s.meta.grid_size + 1) + "c" + std::to_string(i % s.meta.grid_size + 1);
            auto object = c.color + "_" + c.shape;
            want_all.emplace_back(coord, object);
            if (matches(s.meta, c)) want_rel.emplace_back(coord, object);
        }
        CHECK(listed_cells(s.stages[1]) == want_all);
        CHECK(listed_cells(s.stages[2]) == want_rel);
    }
    CHECK(kinds.size() == 6);
    CHECK(cot / 1000.0 >= 40.0);
}

TEST_CASE("stage count follows the configured stage names") {
    GenConfig cfg;
    cfg.stage_names = {"Summary"};
    CHECK(gen_sample(cfg, 0).stages.size() == 1);
    cfg.stage_names = {};
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("config validation") {
    GenConfig cfg;
    cfg.grid_size = 1;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = GenConfig{};
    cfg.question_kinds.clear();
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = GenConfig{};
    cfg.fill_probability = 1.5;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("dataset files") {
    heima::testing::TempDir dir;
    GenConfig cfg;

    SUBCASE("five records with ids 0..4") {
        gen_dataset(cfg, 5, Split::train, dir.file("d.jsonl"));
        auto back = read_dataset(dir.file("d.jsonl"));
        REQUIRE(back.size() == 5);
        for (int i = 0; i < 5; ++i) {
            CHECK(back[static_cast<std::size_t>(i)].id == i);
            CHECK(back[static_cast<std::size_t>(i)] == gen_sample(cfg, i));
        }
    }
    SUBCASE("train and test ids are disjoint") {
        auto train = gen_samples(cfg, 100, Split::train);
        auto test = gen_samples(cfg, 100, Split::test);
        std::set<std::int64_t> ids;
        for (const auto& s : train) ids.insert(s.id);
        for (const auto& s : test) CHECK(ids.count(s.id) == 0);
    }
    SUBCASE("regeneration is byte identical") {
        gen_dataset(cfg, 20, Split::test, dir.file("a.jsonl"));
        gen_dataset(cfg, 20, Split::test, dir.file("b.jsonl"));
        CHECK(read_all(dir.file("a.jsonl")) == read_all(dir.file("b.jsonl")));
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(gen_dataset(cfg, 0, Split::train, dir.file("z.jsonl")), Error);
        try {
            gen_dataset(cfg, 2, Split::train, dir.file("missing/dir/x.jsonl"));
            FAIL("expected io error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::io);
        }
        std::ofstream(dir.file("bad.jsonl")) << "{not json\n";
        CHECK_THROWS_AS(read_dataset(dir.file("bad.jsonl")), Error);
    }
}
