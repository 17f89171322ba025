#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lgs/loss.hpp"
#include "lgs/model.hpp"
#include "lgs/rng.hpp"

namespace lgs {

// ---------------------------------------------------------------------------
// Scenes

/// Quadrant anchors in the fixed order used for prompt text.
enum class Anchor : std::uint8_t { LeftUpper = 0, LeftLower = 1, RightUpper = 2, RightLower = 3 };

inline constexpr std::array<Anchor, 4> kAllAnchors{Anchor::LeftUpper, Anchor::LeftLower, Anchor::RightUpper,
                                                   Anchor::RightLower};

/// "left upper lung", ...
std::string anchor_name(Anchor a);
bool is_left(Anchor a);

struct SceneConfig {
    std::int64_t side = 64;
    int min_blobs = 2;
    int max_blobs = 4;
    int min_infected = 1;
    int max_infected = 3;
    float min_radius = 4.0f;
    float max_radius = 9.0f;
    float jitter = 3.0f;

    void validate() const;  // throws ConfigError
};

struct Blob {
    Anchor anchor = Anchor::LeftUpper;
    float cx = 0.0f, cy = 0.0f;  // pixel coordinates (x = column)
    float rx = 0.0f, ry = 0.0f;
    bool infected = false;

    bool contains(std::int64_t row, std::int64_t col) const;
};

struct SceneSpec {
    std::int64_t side = 64;
    std::vector<Blob> blobs;  // sorted by anchor, anchors distinct
    std::uint64_t noise_seed = 0;

    std::vector<Anchor> infected_anchors() const;
};

SceneSpec gen_scene(Rng& rng, const SceneConfig& config);

struct RenderedSample {
    std::vector<float> image;  // side*side, row-major, in [0, 1]
    BinaryMask mask;           // union of infected blobs
};

/// Every blob gets the same bright radial profile plus noise, so infected and
/// distractor regions are indistinguishable from pixels alone.
RenderedSample render_sample(const SceneSpec& scene);

/// Three-part prompt: laterality, count, then exact locations.
PromptStages gen_prompt(const SceneSpec& scene);

/// Every word gen_prompt can emit, in a fixed order.
const std::vector<std::string>& grammar_words();
Vocab grammar_vocab();

// ---------------------------------------------------------------------------
// PGM

struct PgmImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<float> values;  // byte / 255
};

/// Binary "P5" with maxval 255; values quantized by round(v * 255).
std::string write_pgm(std::span<const float> values, std::int64_t width, std::int64_t height);
/// Throws FormatError naming the byte offset of the defect.
PgmImage read_pgm(std::string_view bytes);

// ---------------------------------------------------------------------------
// Dataset

enum class Split : std::uint8_t { Train, Val, Test };
std::string to_string(Split s);
Split parse_split(const std::string& text);

struct SampleRecord {
    std::string id;
    std::int64_t side = 64;
    std::vector<float> image;
    BinaryMask mask;
    PromptStages prompt;
    Split split = Split::Train;
};

struct Dataset {
    std::vector<SampleRecord> records;

    std::vector<const SampleRecord*> subset(Split s) const;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Deterministic 80/20 train/val partition of every non-test record; test
/// records keep their assignment.
SplitIndices split_dataset(const std::vector<SampleRecord>& records, std::uint64_t seed);

/// Train pool of `n_train` scenes (split 80/20) plus `n_test` test scenes.
/// Every sample is a pure function of (seed, pool, index).
Dataset generate_dataset(std::int64_t n_train, std::int64_t n_test, std::uint64_t seed,
                         const SceneConfig& config = {});

/// images/<id>.pgm, masks/<id>.pgm and manifest.jsonl under `dir`.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Augmentation

/// Nearest-neighbour zoom about the image centre; pixels that map outside the
/// source become 0. Mask stays binary.
void zoom_sample(std::vector<float>& image, BinaryMask& mask, std::int64_t side, float factor);

/// With probability p, zoom by a factor drawn uniformly from [0.9, 1.1].
/// Always consumes two draws from `rng`.
void random_zoom(std::vector<float>& image, BinaryMask& mask, std::int64_t side, Rng& rng, float p = 0.1f);

}  // namespace lgs
