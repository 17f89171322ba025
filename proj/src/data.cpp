#include "lgs/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lgs/errors.hpp"

namespace lgs {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::uint64_t kTestStream = 0x7e57'0000'0000'0001ULL;
constexpr std::uint64_t kSplitStream = 0x5b17'0000'0000'0002ULL;

std::string count_word(std::size_t n) {
    static const char* words[] = {"one", "two", "three", "four"};
    if (n < 1 || n > 4) throw ContractError("prompt: unsupported region count " + std::to_string(n));
    return words[n - 1];
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

SampleRecord make_record(std::string id, std::uint64_t seed, const SceneConfig& config, Split split) {
    Rng rng(seed);
    const SceneSpec scene = gen_scene(rng, config);
    RenderedSample rendered = render_sample(scene);
    SampleRecord r;
    r.id = std::move(id);
    r.side = scene.side;
    r.image = std::move(rendered.image);
    r.mask = std::move(rendered.mask);
    r.prompt = gen_prompt(scene);
    r.split = split;
    return r;
}

std::string make_id(const char* prefix, std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%05lld", prefix, static_cast<long long>(i));
    return buf;
}

}  // namespace

std::string anchor_name(Anchor a) {
    switch (a) {
        case Anchor::LeftUpper: return "left upper lung";
        case Anchor::LeftLower: return "left lower lung";
        case Anchor::RightUpper: return "right upper lung";
        case Anchor::RightLower: return "right lower lung";
    }
    return {};
}

bool is_left(Anchor a) { return a == Anchor::LeftUpper || a == Anchor::LeftLower; }

void SceneConfig::validate() const {
    if (min_blobs < 1 || max_blobs > 4 || min_blobs > max_blobs) {
        throw ConfigError("scene: blob count bounds must satisfy 1 <= min <= max <= 4");
    }
    if (min_infected < 1 || min_infected > max_infected || max_infected > 4) {
        throw ConfigError("scene: infected count bounds must satisfy 1 <= min <= max <= 4");
    }
    if (min_infected > max_blobs) throw ConfigError("scene: infected minimum exceeds the blob maximum");
    if (side < 16 || side % 2 != 0) throw ConfigError("scene: side must be an even number >= 16");
    if (!(min_radius > 0.0f) || min_radius > max_radius) throw ConfigError("scene: invalid radius bounds");
    if (static_cast<float>(side) / 4.0f - jitter - max_radius < 0.0f) {
        throw ConfigError("scene: blobs would leave their quadrant");
    }
}

bool Blob::contains(std::int64_t row, std::int64_t col) const {
    const float dx = (static_cast<float>(col) + 0.5f - cx) / rx;
    const float dy = (static_cast<float>(row) + 0.5f - cy) / ry;
    return dx * dx + dy * dy <= 1.0f;
}

std::vector<Anchor> SceneSpec::infected_anchors() const {
    std::vector<Anchor> out;
    for (const auto& b : blobs)
        if (b.infected) out.push_back(b.anchor);
    return out;
}

SceneSpec gen_scene(Rng& rng, const SceneConfig& config) {
    config.validate();
    SceneSpec scene;
    scene.side = config.side;
    const auto n_blobs = static_cast<std::size_t>(rng.uniform_int(config.min_blobs, config.max_blobs));
    const int infected_hi = std::min<int>(config.max_infected, static_cast<int>(n_blobs));
    const int infected_lo = std::min(config.min_infected, infected_hi);
    const auto n_infected = static_cast<std::size_t>(rng.uniform_int(infected_lo, infected_hi));

    std::vector<Anchor> anchors(kAllAnchors.begin(), kAllAnchors.end());
    rng.shuffle(anchors);
    anchors.resize(n_blobs);
    std::sort(anchors.begin(), anchors.end());

    std::vector<std::size_t> order(n_blobs);
    for (std::size_t i = 0; i < n_blobs; ++i) order[i] = i;
    rng.shuffle(order);

    const float quarter = static_cast<float>(config.side) / 4.0f;
    for (std::size_t i = 0; i < n_blobs; ++i) {
        Blob b;
        b.anchor = anchors[i];
        const float base_x = is_left(b.anchor) ? quarter : 3.0f * quarter;
        const bool upper = b.anchor == Anchor::LeftUpper || b.anchor == Anchor::RightUpper;
        const float base_y = upper ? quarter : 3.0f * quarter;
        b.cx = base_x + rng.uniform(-config.jitter, config.jitter);
        b.cy = base_y + rng.uniform(-config.jitter, config.jitter);
        b.rx = rng.uniform(config.min_radius, config.max_radius);
        b.ry = rng.uniform(config.min_radius, config.max_radius);
        scene.blobs.push_back(b);
    }
    for (std::size_t i = 0; i < n_infected; ++i) scene.blobs[order[i]].infected = true;
    scene.noise_seed = rng.next_u64();
    return scene;
}

RenderedSample render_sample(const SceneSpec& scene) {
    const auto side = scene.side;
    RenderedSample out;
    out.image.assign(static_cast<std::size_t>(side * side), 0.0f);
    out.mask.assign(static_cast<std::size_t>(side * side), 0);
    Rng noise(scene.noise_seed);
    for (std::int64_t r = 0; r < side; ++r) {
        for (std::int64_t c = 0; c < side; ++c) {
            const auto idx = static_cast<std::size_t>(r * side + c);
            float v = 0.15f + noise.uniform(-0.05f, 0.05f);
            for (const auto& b : scene.blobs) {
                if (!b.contains(r, c)) continue;
                const float dx = (static_cast<float>(c) + 0.5f - b.cx) / b.rx;
                const float dy = (static_cast<float>(r) + 0.5f - b.cy) / b.ry;
                v = 0.55f + 0.3f * (1.0f - (dx * dx + dy * dy)) + noise.uniform(-0.05f, 0.05f);
                if (b.infected) out.mask[idx] = 1;
            }
            out.image[idx] = std::clamp(v, 0.0f, 1.0f);
        }
    }
    return out;
}

PromptStages gen_prompt(const SceneSpec& scene) {
    const auto infected = scene.infected_anchors();
    if (infected.empty()) throw ContractError("gen_prompt: scene has no infected region");
    const bool any_left = std::any_of(infected.begin(), infected.end(), is_left);
    const bool any_right = std::any_of(infected.begin(), infected.end(), [](Anchor a) { return !is_left(a); });
    PromptStages p;
    p.stage1 = std::string(any_left && any_right ? "bilateral" : "unilateral") + " pulmonary infection";
    p.stage2 = count_word(infected.size()) + " infected areas";
    p.stage3 = "located at ";
    for (std::size_t i = 0; i < infected.size(); ++i) {
        if (i) p.stage3 += ", ";
        p.stage3 += anchor_name(infected[i]);
    }
    return p;
}

const std::vector<std::string>& grammar_words() {
    static const std::vector<std::string> words{
        "bilateral", "unilateral", "pulmonary", "infection", "one",   "two",   "three", "four",  "infected",
        "areas",     "located",    "at",        "left",      "right", "upper", "lower", "lung"};
    return words;
}

Vocab grammar_vocab() { return Vocab::build(grammar_words()); }

std::string write_pgm(std::span<const float> values, std::int64_t width, std::int64_t height) {
    if (width < 1 || height < 1 || static_cast<std::int64_t>(values.size()) != width * height) {
        throw DimensionError("write_pgm: " + std::to_string(values.size()) + " values for " + std::to_string(width) +
                             "x" + std::to_string(height));
    }
    std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    out.reserve(out.size() + values.size());
    for (float v : values) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("write_pgm: value outside [0, 1]");
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
    return out;
}

PgmImage read_pgm(std::string_view bytes) {
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) -> FormatError {
        return FormatError("pgm: " + what + " at byte offset " + std::to_string(pos));
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw fail("bad magic (expected P5)");
    pos = 2;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* field) -> std::int64_t {
        skip_space();
        if (pos >= bytes.size()) throw fail(std::string("truncated header, missing ") + field);
        if (bytes[pos] < '0' || bytes[pos] > '9') throw fail(std::string("malformed ") + field);
        std::int64_t v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > (1LL << 30)) throw fail(std::string("oversized ") + field);
            ++pos;
        }
        return v;
    };
    PgmImage img;
    img.width = read_int("width");
    img.height = read_int("height");
    const auto maxval = read_int("maxval");
    if (img.width < 1 || img.height < 1) throw fail("zero image dimension");
    if (maxval != 255) throw fail("unsupported maxval " + std::to_string(maxval));
    if (pos >= bytes.size()) throw fail("truncated header");
    const char sep = bytes[pos];
    if (sep != ' ' && sep != '\t' && sep != '\n' && sep != '\r') throw fail("missing whitespace after maxval");
    ++pos;
    const auto n = static_cast<std::size_t>(img.width * img.height);
    if (bytes.size() - pos < n) {
        pos = bytes.size();
        throw fail("truncated payload (" + std::to_string(n) + " bytes expected)");
    }
    img.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        img.values[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
    }
    return img;
}

std::string to_string(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    throw InputError("unknown split '" + text + "'");
}

std::vector<const SampleRecord*> Dataset::subset(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
        if (r.split == s) out.push_back(&r);
    return out;
}

SplitIndices split_dataset(const std::vector<SampleRecord>& records, std::uint64_t seed) {
    SplitIndices out;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == Split::Test) out.test.push_back(i);
        else pool.push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(pool);
    const auto n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(pool.size())));
    out.train.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_train), pool.end());
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
}

Dataset generate_dataset(std::int64_t n_train, std::int64_t n_test, std::uint64_t seed, const SceneConfig& config) {
    if (n_train < 1) throw InputError("generate_dataset: train pool must be non-empty");
    if (n_test < 0) throw InputError("generate_dataset: negative test count");
    config.validate();
    Dataset data;
    for (std::int64_t i = 0; i < n_train; ++i) {
        data.records.push_back(
            make_record(make_id("tr", i), derive_seed(seed, static_cast<std::uint64_t>(i)), config, Split::Train));
    }
    for (std::int64_t i = 0; i < n_test; ++i) {
        data.records.push_back(make_record(make_id("te", i), derive_seed(seed ^ kTestStream, static_cast<std::uint64_t>(i)),
                                           config, Split::Test));
    }
    const SplitIndices split = split_dataset(data.records, derive_seed(seed, kSplitStream));
    for (auto i : split.val) data.records[i].split = Split::Val;
    return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    if (!ec) std::filesystem::create_directories(dir / "masks", ec);
    if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    std::string manifest;
    for (const auto& r : data.records) {
        const std::string image_rel = "images/" + r.id + ".pgm";
        const std::string mask_rel = "masks/" + r.id + ".pgm";
        write_file(dir / image_rel, write_pgm(r.image, r.side, r.side));
        std::vector<float> mask_values(r.mask.begin(), r.mask.end());
        write_file(dir / mask_rel, write_pgm(mask_values, r.side, r.side));
        ordered_json line;
        line["id"] = r.id;
        line["image"] = image_rel;
        line["mask"] = mask_rel;
        line["stage1"] = r.prompt.stage1;
        line["stage2"] = r.prompt.stage2;
        line["stage3"] = r.prompt.stage3;
        line["split"] = to_string(r.split);
        manifest += line.dump() + "\n";
    }
    write_file(dir / "manifest.jsonl", manifest);
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.jsonl";
    if (!std::filesystem::exists(manifest_path)) throw IoError("dataset manifest not found: " + manifest_path.string());
    std::istringstream lines(read_file(manifest_path));
    Dataset data;
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> seen;
    while (std::getline(lines, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        SampleRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.prompt.stage1 = j.at("stage1").get<std::string>();
            r.prompt.stage2 = j.at("stage2").get<std::string>();
            r.prompt.stage3 = j.at("stage3").get<std::string>();
            r.split = j.contains("split") ? parse_split(j.at("split").get<std::string>()) : Split::Train;
            const auto image = read_pgm(read_file(dir / j.at("image").get<std::string>()));
            const auto mask = read_pgm(read_file(dir / j.at("mask").get<std::string>()));
            if (image.width != image.height || mask.width != image.width || mask.height != image.height) {
                throw FormatError("manifest line " + std::to_string(line_no) + ": image/mask size mismatch");
            }
            r.side = image.width;
            r.image = image.values;
            r.mask.resize(mask.values.size());
            for (std::size_t i = 0; i < mask.values.size(); ++i) {
                const float v = mask.values[i];
                if (v != 0.0f && v != 1.0f) throw FormatError("mask " + r.id + " is not binary");
                r.mask[i] = v == 1.0f ? 1 : 0;
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (std::find(seen.begin(), seen.end(), r.id) != seen.end()) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": duplicate id " + r.id);
        }
        seen.push_back(r.id);
        data.records.push_back(std::move(r));
    }
    if (data.records.empty()) throw InputError("dataset " + dir.string() + " is empty");
    return data;
}

void zoom_sample(std::vector<float>& image, BinaryMask& mask, std::int64_t side, float factor) {
    const auto n = static_cast<std::size_t>(side * side);
    if (image.size() != n || mask.size() != n) throw DimensionError("zoom: buffers do not match side");
    if (!(factor > 0.0f)) throw ContractError("zoom: factor must be positive");
    std::vector<float> out_image(n, 0.0f);
    BinaryMask out_mask(n, 0);
    const double centre = static_cast<double>(side) / 2.0;
    for (std::int64_t r = 0; r < side; ++r) {
        const auto sr = static_cast<std::int64_t>(std::floor((r + 0.5 - centre) / factor + centre));
        if (sr < 0 || sr >= side) continue;
        for (std::int64_t c = 0; c < side; ++c) {
            const auto sc = static_cast<std::int64_t>(std::floor((c + 0.5 - centre) / factor + centre));
            if (sc < 0 || sc >= side) continue;
            out_image[static_cast<std::size_t>(r * side + c)] = image[static_cast<std::size_t>(sr * side + sc)];
            out_mask[static_cast<std::size_t>(r * side + c)] = mask[static_cast<std::size_t>(sr * side + sc)];
        }
    }
    image = std::move(out_image);
    mask = std::move(out_mask);
}

void random_zoom(std::vector<float>& image, BinaryMask& mask, std::int64_t side, Rng& rng, float p) {
    if (p < 0.0f || p > 1.0f) throw ContractError("random_zoom: probability outside [0, 1]");
    const bool apply = rng.uniform() < p;
    const float factor = rng.uniform(0.9f, 1.1f);
    if (apply) zoom_sample(image, mask, side, factor);
}

}  // namespace lgs
