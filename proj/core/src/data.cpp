#include "ustep/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "ustep/errors.hpp"

namespace ustep {

std::string to_string(Variant variant) {
    switch (variant) {
    case Variant::plain:
        return "plain";
    case Variant::dynamic_speed:
        return "dynamic-speed";
    case Variant::cluttered_background:
        return "cluttered-background";
    }
    throw ConfigError("variant: unknown value");
}

Variant variant_from_string(const std::string& name) {
    if (name == "plain") {
        return Variant::plain;
    }
    if (name == "dynamic-speed") {
        return Variant::dynamic_speed;
    }
    if (name == "cluttered-background") {
        return Variant::cluttered_background;
    }
    throw ConfigError("variant: unknown value '" + name + "'");
}

void GenConfig::validate() const {
    if (num_sequences < 1) {
        throw ConfigError("gen: num_sequences must be at least 1");
    }
    if (observed < 1 || horizon < 1) {
        throw ConfigError("gen: observed and horizon must be at least 1");
    }
    if (height < 1 || width < 1 || channels < 1) {
        throw ConfigError("gen: frame geometry must be positive");
    }
    if (num_objects < 1) {
        throw ConfigError("gen: num_objects must be at least 1");
    }
    if (object_size < 1 || object_size >= std::min(height, width)) {
        throw ConfigError("gen: object_size must be positive and smaller than the frame");
    }
    if (!std::isfinite(speed_min) || !std::isfinite(speed_max) || speed_min < 0.0 ||
        speed_max < speed_min) {
        throw ConfigError("gen: speed range must be finite with 0 <= min <= max");
    }
    if (sigma_v < 0.0 || !std::isfinite(sigma_v)) {
        throw ConfigError("gen: sigma_v must be non-negative");
    }
    if (noise_amplitude < 0.0 || noise_amplitude >= 1.0) {
        throw ConfigError("gen: noise_amplitude must lie in [0, 1)");
    }
}

FrameSequence Dataset::sequence(int64_t index) const {
    if (index < 0 || index >= num_sequences) {
        throw ShapeError("dataset: sequence index out of range");
    }
    const int64_t n = sequence_elems();
    std::vector<double> frames(static_cast<size_t>(n));
    const float* src = values.data() + index * n;
    for (int64_t i = 0; i < n; ++i) {
        frames[static_cast<size_t>(i)] = static_cast<double>(src[i]);
    }
    return FrameSequence::from_values(geometry, std::move(frames));
}

ObjectState advance_object(ObjectState s, int64_t object_size, int64_t height, int64_t width) {
    const double max_y = static_cast<double>(height - object_size);
    const double max_x = static_cast<double>(width - object_size);
    s.y += s.vy;
    s.x += s.vx;
    // Elastic reflection; repeated for moves that overshoot more than once.
    while (s.y < 0.0 || s.y > max_y) {
        if (s.y < 0.0) {
            s.y = -s.y;
            s.vy = -s.vy;
        } else {
            s.y = 2.0 * max_y - s.y;
            s.vy = -s.vy;
        }
    }
    while (s.x < 0.0 || s.x > max_x) {
        if (s.x < 0.0) {
            s.x = -s.x;
            s.vx = -s.vx;
        } else {
            s.x = 2.0 * max_x - s.x;
            s.vx = -s.vx;
        }
    }
    return s;
}

namespace {

constexpr double kPi = 3.14159265358979323846;

void rasterize(std::vector<double>& frame, const ObjectState& s, const GenConfig& cfg) {
    // Sub-pixel positions floor to the nearest pixel.
    const int64_t y0 = static_cast<int64_t>(std::floor(s.y));
    const int64_t x0 = static_cast<int64_t>(std::floor(s.x));
    for (int64_t c = 0; c < cfg.channels; ++c) {
        double* plane = frame.data() + c * cfg.height * cfg.width;
        for (int64_t y = y0; y < y0 + cfg.object_size; ++y) {
            for (int64_t x = x0; x < x0 + cfg.object_size; ++x) {
                plane[y * cfg.width + x] = std::min(1.0, plane[y * cfg.width + x] + 1.0);
            }
        }
    }
}

void generate_sequence(const GenConfig& cfg, int64_t index, float* out) {
    Xoshiro256 rng = Xoshiro256::stream(cfg.seed, static_cast<uint64_t>(index));

    // Draw order is pinned: background noise first, then per object
    // (y, x, angle, speed), then per frame per object the velocity noise.
    const int64_t plane = cfg.height * cfg.width;
    std::vector<double> background;
    if (cfg.variant == Variant::cluttered_background && cfg.noise_amplitude > 0.0) {
        background.resize(static_cast<size_t>(plane));
        for (double& v : background) {
            v = cfg.noise_amplitude * rng.uniform();
        }
    }

    std::vector<ObjectState> objects(static_cast<size_t>(cfg.num_objects));
    const double max_y = static_cast<double>(cfg.height - cfg.object_size);
    const double max_x = static_cast<double>(cfg.width - cfg.object_size);
    for (auto& obj : objects) {
        obj.y = rng.uniform(0.0, max_y);
        obj.x = rng.uniform(0.0, max_x);
        const double angle = rng.uniform(0.0, 2.0 * kPi);
        const double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        obj.vy = speed * std::sin(angle);
        obj.vx = speed * std::cos(angle);
    }

    const int64_t frame_elems = cfg.geometry().frame_elems();
    std::vector<double> frame(static_cast<size_t>(frame_elems));
    const int64_t length = cfg.sequence_length();
    for (int64_t t = 0; t < length; ++t) {
        if (t > 0) {
            for (auto& obj : objects) {
                if (cfg.variant == Variant::dynamic_speed && cfg.sigma_v > 0.0) {
                    obj.vy += cfg.sigma_v * rng.gaussian();
                    obj.vx += cfg.sigma_v * rng.gaussian();
                }
                obj = advance_object(obj, cfg.object_size, cfg.height, cfg.width);
            }
        }
        if (background.empty()) {
            std::fill(frame.begin(), frame.end(), 0.0);
        } else {
            for (int64_t c = 0; c < cfg.channels; ++c) {
                std::copy(background.begin(), background.end(),
                          frame.begin() + c * plane);
            }
        }
        for (const auto& obj : objects) {
            rasterize(frame, obj, cfg);
        }
        float* dst = out + t * frame_elems;
        for (int64_t i = 0; i < frame_elems; ++i) {
            dst[i] = static_cast<float>(frame[static_cast<size_t>(i)]);
        }
    }
}

} // namespace

Dataset generate(const GenConfig& config) {
    config.validate();
    Dataset ds;
    ds.num_sequences = config.num_sequences;
    ds.seq_length = config.sequence_length();
    ds.geometry = config.geometry();
    ds.provenance = config;
    ds.values.assign(static_cast<size_t>(ds.num_sequences * ds.sequence_elems()), 0.0f);
    for (int64_t i = 0; i < ds.num_sequences; ++i) {
        generate_sequence(config, i, ds.values.data() + i * ds.sequence_elems());
    }
    return ds;
}

namespace {

constexpr char kMagic[5] = {'U', 'S', 'T', 'P', '1'};
constexpr uint8_t kVersion = 1;

void write_u32(std::ofstream& out, uint32_t v) {
    unsigned char bytes[4] = {static_cast<unsigned char>(v & 0xFF),
                              static_cast<unsigned char>((v >> 8) & 0xFF),
                              static_cast<unsigned char>((v >> 16) & 0xFF),
                              static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path, int64_t offset) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw DataError("dataset '" + path.string() + "': truncated header at byte offset " +
                        std::to_string(offset));
    }
    return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
           (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}

uint32_t checked_u32(int64_t v, const char* what) {
    if (v < 0 || v > static_cast<int64_t>(std::numeric_limits<uint32_t>::max())) {
        throw DataError(std::string("dataset: ") + what + " does not fit the file format");
    }
    return static_cast<uint32_t>(v);
}

} // namespace

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("dataset: cannot open '" + path.string() + "' for writing");
    }
    out.write(kMagic, sizeof(kMagic));
    out.put(static_cast<char>(kVersion));
    write_u32(out, checked_u32(dataset.num_sequences, "sequence count"));
    write_u32(out, checked_u32(dataset.seq_length, "sequence length"));
    write_u32(out, checked_u32(dataset.geometry.channels, "channel count"));
    write_u32(out, checked_u32(dataset.geometry.height, "height"));
    write_u32(out, checked_u32(dataset.geometry.width, "width"));
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(dataset.values.data()),
              static_cast<std::streamsize>(dataset.values.size() * sizeof(float)));
    if (!out) {
        throw IoError("dataset: write to '" + path.string() + "' failed");
    }
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("dataset: cannot open '" + path.string() + "' for reading");
    }
    char magic[5];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("dataset '" + path.string() +
                        "': bad magic at byte offset 0, expected \"USTP1\"");
    }
    const int version = in.get();
    if (version != kVersion) {
        throw DataError("dataset '" + path.string() + "': unsupported version " +
                        std::to_string(version) + " at byte offset 5");
    }

    Dataset ds;
    ds.num_sequences = read_u32(in, path, 6);
    ds.seq_length = read_u32(in, path, 10);
    ds.geometry.channels = read_u32(in, path, 14);
    ds.geometry.height = read_u32(in, path, 18);
    ds.geometry.width = read_u32(in, path, 22);
    if (ds.num_sequences < 1 || ds.seq_length < 1 || ds.geometry.channels < 1 ||
        ds.geometry.height < 1 || ds.geometry.width < 1) {
        throw DataError("dataset '" + path.string() + "': zero dimension in header");
    }

    // Overflow-checked element count.
    uint64_t total = 1;
    for (uint64_t d : {static_cast<uint64_t>(ds.num_sequences),
                       static_cast<uint64_t>(ds.seq_length),
                       static_cast<uint64_t>(ds.geometry.channels),
                       static_cast<uint64_t>(ds.geometry.height),
                       static_cast<uint64_t>(ds.geometry.width)}) {
        if (d != 0 && total > std::numeric_limits<uint64_t>::max() / d / sizeof(float)) {
            throw DataError("dataset '" + path.string() + "': header dimensions overflow");
        }
        total *= d;
    }

    ds.values.resize(total);
    if (!in.read(reinterpret_cast<char*>(ds.values.data()),
                 static_cast<std::streamsize>(total * sizeof(float)))) {
        const auto got = in.gcount();
        throw DataError("dataset '" + path.string() + "': truncated at byte offset " +
                        std::to_string(26 + got) + ", expected " +
                        std::to_string(total * sizeof(float)) + " payload bytes");
    }
    return ds;
}

std::string dataset_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("dataset: cannot open '" + path.string() + "' for hashing");
    }
    uint64_t hash = 0xCBF29CE484222325ULL;
    char buffer[4096];
    while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            hash ^= static_cast<unsigned char>(buffer[i]);
            hash *= 0x100000001B3ULL;
        }
        if (n < static_cast<std::streamsize>(sizeof(buffer))) {
            break;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
    return std::string(hex);
}

} // namespace ustep
