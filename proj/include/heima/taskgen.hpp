#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "heima/vocab.hpp"

namespace heima {

enum class QuestionKind { count_color, count_shape, count_pair, exists, attribute_of_unique, compare_counts };

std::string_view to_string(QuestionKind kind);
QuestionKind question_kind_from_string(std::string_view name);
std::vector<QuestionKind> all_question_kinds();

struct GenConfig {
    int grid_size = 4;
    std::vector<std::string> colors{"blue", "green", "red", "yellow"};
    std::vector<std::string> shapes{"circle", "square", "star", "triangle"};
    std::vector<QuestionKind> question_kinds = all_question_kinds();
    double fill_probability = 0.6;
    std::uint64_t seed = 7;
    // Stage texts are rendered from the first K of (summary, caption, reasoning); K <= 3.
    std::vector<std::string> stage_names{"Summary", "Caption", "Reasoning"};

    void validate() const;
    std::string digest() const;
};

struct Cell {
    std::string color;  // empty string marks an empty cell
    std::string shape;

    bool empty() const { return color.empty(); }
    std::string object() const;  // "red_circle" or "empty"
    bool operator==(const Cell&) const = default;
};

/// Ground truth behind a sample: enough to recompute the answer without the renderer.
struct SampleMeta {
    int grid_size = 0;
    std::vector<Cell> grid;  // row-major
    QuestionKind kind = QuestionKind::count_color;
    std::string color;    // question color (or first color of a comparison)
    std::string shape;    // question shape
    std::string color_b;  // second color of a comparison
    std::uint64_t seed = 0;
    bool operator==(const SampleMeta&) const = default;
};

struct Sample {
    std::int64_t id = 0;
    std::vector<std::string> visual;
    std::vector<std::string> question;
    std::vector<std::vector<std::string>> stages;
    std::vector<std::string> answer;
    SampleMeta meta;

    std::size_t cot_length() const;
    bool operator==(const Sample&) const = default;
};

enum class Split { train, test };
/// Test-split ids start here, keeping the two splits disjoint.
inline constexpr std::int64_t kTestIdOffset = 1'000'000'000;

Sample gen_sample(const GenConfig& cfg, std::int64_t index);

/// Renders question, stage texts and answer from ground truth. Used by gen_sample and
/// by tests that need hand-built grids.
Sample render_sample(std::int64_t id, const SampleMeta& meta, std::size_t stage_count = 3);

/// Recomputes the answer by direct enumeration over the grid.
std::vector<std::string> answer_oracle(const SampleMeta& meta);

/// Grid cells that satisfy the question predicate, as row-major indices.
std::vector<std::size_t> relevant_cells(const SampleMeta& meta);

std::string coordinate_symbol(int row, int col);  // 0-based in, "r1c1" out

/// Every symbol the generator (and the given extra prompt words) can emit.
TaskGrammar make_grammar(const GenConfig& cfg, std::span<const std::string> extra_words = {});

std::vector<Sample> gen_samples(const GenConfig& cfg, std::size_t n, Split split);
void gen_dataset(const GenConfig& cfg, std::size_t n, Split split, const std::string& path);

void write_dataset(const std::string& path, std::span<const Sample> samples, std::string_view split,
                   std::string_view config_digest);
std::vector<Sample> read_dataset(const std::string& path);

std::string sample_to_json_line(const Sample& sample);
Sample sample_from_json_line(std::string_view line);

}  // namespace heima
