#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "diffmix/errors.hpp"
#include "diffmix/grid.hpp"
#include "diffmix/segmentation.hpp"
#include "diffmix/videofeat.hpp"

#include "json.hpp"

namespace diffmix {

// All artifact writes go through a temp file plus rename so parallel
// workers never expose partial files.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot open '" + tmp.string() + "' for writing");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ConfigError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::uint8_t to_byte(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

// Binary PPM (P6) for 3-channel grids, binary PGM (P5) for 1-channel.
// Values are clamped to [0,1] and scaled to 0..255.
inline std::string encode_image(const Grid& img) {
    if (img.channels() != 3 && img.channels() != 1) {
        throw ShapeError("image export needs 1 or 3 channels, got " +
                         std::to_string(img.channels()));
    }
    std::string bytes;
    bytes += img.channels() == 3 ? "P6\n" : "P5\n";
    bytes += std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    for (int r = 0; r < img.height(); ++r)
        for (int c = 0; c < img.width(); ++c)
            for (int ch = 0; ch < img.channels(); ++ch)
                bytes.push_back(static_cast<char>(to_byte(img.at(r, c, ch))));
    return bytes;
}

inline void write_image(const std::filesystem::path& path, const Grid& img) {
    atomic_write_file(path, encode_image(img));
}

inline std::string encode_mask(const PixelMask& mask) {
    std::string bytes = "P5\n" + std::to_string(mask.width) + " " +
                        std::to_string(mask.height) + "\n255\n";
    for (auto v : mask.on) bytes.push_back(static_cast<char>(v ? 255 : 0));
    return bytes;
}

inline void write_mask(const std::filesystem::path& path, const PixelMask& mask) {
    atomic_write_file(path, encode_mask(mask));
}

inline Grid decode_image(const std::string& bytes, const std::string& name = "<image>") {
    std::istringstream in(bytes);
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    in >> magic >> width >> height >> maxval;
    if ((magic != "P6" && magic != "P5") || width <= 0 || height <= 0 || maxval != 255) {
        throw ConfigError("'" + name + "' is not an 8-bit P5/P6 image");
    }
    in.get(); // single whitespace after the header
    const int channels = magic == "P6" ? 3 : 1;
    Grid img(height, width, channels);
    std::vector<char> raw(img.size());
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
        throw ConfigError("'" + name + "' is truncated");
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        img[i] = static_cast<double>(static_cast<std::uint8_t>(raw[i])) / 255.0;
    }
    return img;
}

inline Grid read_image(const std::filesystem::path& path) {
    return decode_image(read_file(path), path.string());
}

inline std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Feature bundles: a JSON header (layer ids and shapes) followed by flat
// little-endian float64 arrays, frame-major per layer.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'D', 'M', 'F', 'E', 'A', 'T', '0', '1'};

inline std::string encode_feature_bundle(const std::vector<FrameFeatures>& bundle) {
    nlohmann::json header;
    header["dtype"] = "f64le";
    header["layers"] = nlohmann::json::array();
    for (const auto& layer : bundle) {
        layer.validate();
        const GridShape& s = layer.frames.empty() ? GridShape{} : layer.frames.front().shape();
        header["layers"].push_back({{"id", layer.layer_id},
                                    {"frames", layer.num_frames()},
                                    {"height", s.height},
                                    {"width", s.width},
                                    {"channels", s.channels}});
    }
    const std::string head = header.dump();

    std::string bytes(kFeatureMagic, sizeof(kFeatureMagic));
    const std::uint32_t head_len = static_cast<std::uint32_t>(head.size());
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((head_len >> (8 * i)) & 0xff));
    bytes += head;
    for (const auto& layer : bundle) {
        for (const Grid& frame : layer.frames) {
            for (std::size_t i = 0; i < frame.size(); ++i) {
                const double v = frame[i];
                std::uint64_t bits;
                std::memcpy(&bits, &v, sizeof(bits));
                for (int b = 0; b < 8; ++b)
                    bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
            }
        }
    }
    return bytes;
}

inline void write_feature_bundle(const std::filesystem::path& path,
                                 const std::vector<FrameFeatures>& bundle) {
    atomic_write_file(path, encode_feature_bundle(bundle));
}

inline std::vector<FrameFeatures> decode_feature_bundle(const std::string& bytes,
                                                        const std::string& name = "<bundle>") {
    if (bytes.size() < sizeof(kFeatureMagic) + 4 ||
        std::memcmp(bytes.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0) {
        throw ConfigError("'" + name + "' is not a feature bundle");
    }
    std::size_t pos = sizeof(kFeatureMagic);
    std::uint32_t head_len = 0;
    for (int i = 0; i < 4; ++i)
        head_len |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    if (pos + head_len > bytes.size()) throw ConfigError("'" + name + "' header is truncated");
    const nlohmann::json header = nlohmann::json::parse(bytes.substr(pos, head_len));
    pos += head_len;

    std::vector<FrameFeatures> bundle;
    for (const auto& layer : header.at("layers")) {
        FrameFeatures f;
        f.layer_id = layer.at("id").get<std::string>();
        const int frames = layer.at("frames").get<int>();
        const GridShape shape{layer.at("height").get<int>(), layer.at("width").get<int>(),
                              layer.at("channels").get<int>()};
        for (int i = 0; i < frames; ++i) {
            Grid g(shape);
            for (std::size_t j = 0; j < g.size(); ++j) {
                if (pos + 8 > bytes.size()) throw ConfigError("'" + name + "' data is truncated");
                std::uint64_t bits = 0;
                for (int b = 0; b < 8; ++b)
                    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++]))
                            << (8 * b);
                double v;
                std::memcpy(&v, &bits, sizeof(v));
                g[j] = v;
            }
            f.frames.push_back(std::move(g));
        }
        bundle.push_back(std::move(f));
    }
    return bundle;
}

inline std::vector<FrameFeatures> read_feature_bundle(const std::filesystem::path& path) {
    return decode_feature_bundle(read_file(path), path.string());
}

} // namespace diffmix
