#pragma once

// Intensity windowing, [-1, 1] normalization and 512x512 spatial
// standardization. The composite pipeline clips first, crops/pads in HU space,
// then normalizes, so padding takes the window floor unless literal zero-HU
// padding is requested.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "renalct/error.hpp"
#include "renalct/grid.hpp"
#include "renalct/ingest.hpp"
#include "renalct/png_io.hpp"

namespace renalct {

struct WindowSpec {
    double level = 50.0;
    double width = 400.0;

    double lo() const { return level - width / 2.0; }
    double hi() const { return level + width / 2.0; }

    void validate() const {
        if (!(std::isfinite(level) && std::isfinite(width) && width > 0.0))
            fail(ErrorKind::config, "window width must be positive and finite (level=" +
                                        std::to_string(level) +
                                        ", width=" + std::to_string(width) + ")");
    }

    bool operator==(const WindowSpec &) const = default;
};

enum class SpatialOp { none, center_crop, zero_pad, crop_and_pad };

inline std::string_view to_string(SpatialOp op) {
    switch (op) {
    case SpatialOp::none: return "none";
    case SpatialOp::center_crop: return "center_crop";
    case SpatialOp::zero_pad: return "zero_pad";
    case SpatialOp::crop_and_pad: return "crop_and_pad";
    }
    return "none";
}

enum class PadMode {
    window_floor,   // pad with the window lower bound (normalizes to -1)
    literal_zero_hu // pad with 0 HU
};

inline constexpr std::size_t kTargetSize = 512;

struct SliceImage {
    Grid<double> grid;
    WindowSpec window;
    SpatialOp spatial_op = SpatialOp::none;
    SliceRef ref;
};

inline Grid<double> window_clip(const Grid<double> &hu, const WindowSpec &w) {
    w.validate();
    Grid<double> out(hu.rows(), hu.cols());
    for (std::size_t r = 0; r < hu.rows(); ++r)
        for (std::size_t c = 0; c < hu.cols(); ++c) {
            const double v = hu(r, c);
            if (std::isnan(v))
                fail(ErrorKind::data, "NaN HU value at pixel (" + std::to_string(r) + ", " +
                                          std::to_string(c) + ")");
            out(r, c) = std::clamp(v, w.lo(), w.hi());
        }
    return out;
}

/// x -> 2 (x - lo) / (hi - lo) - 1. Inputs must already lie in the window.
inline Grid<double> normalize(const Grid<double> &clipped, const WindowSpec &w) {
    w.validate();
    const double lo = w.lo();
    const double hi = w.hi();
    Grid<double> out(clipped.rows(), clipped.cols());
    for (std::size_t r = 0; r < clipped.rows(); ++r)
        for (std::size_t c = 0; c < clipped.cols(); ++c) {
            const double v = clipped(r, c);
            if (!(v >= lo && v <= hi))
                fail(ErrorKind::data, "value " + std::to_string(v) + " at pixel (" +
                                          std::to_string(r) + ", " + std::to_string(c) +
                                          ") lies outside the window; clip first");
            out(r, c) = 2.0 * (v - lo) / (hi - lo) - 1.0;
        }
    return out;
}

inline Grid<double> denormalize(const Grid<double> &normalized, const WindowSpec &w) {
    const double lo = w.lo();
    const double hi = w.hi();
    return normalized.map([&](double v) { return (v + 1.0) * (hi - lo) / 2.0 + lo; });
}

struct SpatialResult {
    Grid<double> grid;
    SpatialOp op = SpatialOp::none;
    // Per-axis offsets: rows/cols dropped from the top/left (crop) or inserted
    // at the top/left (pad). The remainder goes to the bottom/right.
    std::size_t crop_top = 0, crop_left = 0, pad_top = 0, pad_left = 0;
};

inline SpatialResult spatial_standardize(const Grid<double> &grid, std::size_t target,
                                         double pad_value) {
    if (grid.rows() == 0 || grid.cols() == 0)
        fail(ErrorKind::data, "cannot standardize an empty grid");
    SpatialResult out;
    const bool crop_rows = grid.rows() > target;
    const bool crop_cols = grid.cols() > target;
    const bool pad_rows = grid.rows() < target;
    const bool pad_cols = grid.cols() < target;
    out.crop_top = crop_rows ? (grid.rows() - target) / 2 : 0;
    out.crop_left = crop_cols ? (grid.cols() - target) / 2 : 0;
    out.pad_top = pad_rows ? (target - grid.rows()) / 2 : 0;
    out.pad_left = pad_cols ? (target - grid.cols()) / 2 : 0;
    const bool crops = crop_rows || crop_cols;
    const bool pads = pad_rows || pad_cols;
    out.op = crops && pads ? SpatialOp::crop_and_pad
             : crops       ? SpatialOp::center_crop
             : pads        ? SpatialOp::zero_pad
                           : SpatialOp::none;

    out.grid = Grid<double>(target, target, pad_value);
    for (std::size_t r = 0; r < target; ++r) {
        // Output row r maps to source row r + crop_top - pad_top.
        const long long sr = static_cast<long long>(r) + static_cast<long long>(out.crop_top) -
                             static_cast<long long>(out.pad_top);
        if (sr < 0 || sr >= static_cast<long long>(grid.rows()))
            continue;
        for (std::size_t c = 0; c < target; ++c) {
            const long long sc = static_cast<long long>(c) + static_cast<long long>(out.crop_left) -
                                 static_cast<long long>(out.pad_left);
            if (sc < 0 || sc >= static_cast<long long>(grid.cols()))
                continue;
            out.grid(r, c) = grid(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
        }
    }
    return out;
}

struct PreprocessOptions {
    std::size_t target = kTargetSize;
    PadMode pad_mode = PadMode::window_floor;
};

inline double pad_value_for(const WindowSpec &w, PadMode mode) {
    // Zero HU is inside the default window; a custom window may exclude it.
    return mode == PadMode::window_floor ? w.lo() : std::clamp(0.0, w.lo(), w.hi());
}

inline SliceImage preprocess_slice(const RawSlice &raw, const WindowSpec &w,
                                   const PreprocessOptions &options = {}) {
    const auto clipped = window_clip(raw.hu, w);
    auto spatial = spatial_standardize(clipped, options.target, pad_value_for(w, options.pad_mode));
    SliceImage out;
    out.grid = normalize(spatial.grid, w);
    out.window = w;
    out.spatial_op = spatial.op;
    out.ref = raw.ref;
    return out;
}

/// [-1, 1] -> [0, 255] for PNG export and prompt attachments.
inline Grid<std::uint8_t> to_gray8(const Grid<double> &normalized) {
    return normalized.map([](double v) {
        const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
        return static_cast<std::uint8_t>(scaled);
    });
}

// ---------------------------------------------------------------------------
// Tensor export: row-major little-endian float32 plus a JSON sidecar
// {rows, cols, window, annotation_id}.

struct TensorFile {
    Grid<double> grid;
    WindowSpec window;
    std::string annotation_id;
};

inline void write_tensor(const std::filesystem::path &stem, const SliceImage &image,
                         const std::string &annotation_id) {
    if (stem.has_parent_path())
        std::filesystem::create_directories(stem.parent_path());
    std::vector<unsigned char> bytes(image.grid.size() * 4);
    for (std::size_t i = 0; i < image.grid.size(); ++i) {
        const float f = static_cast<float>(image.grid.values()[i]);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int b = 0; b < 4; ++b)
            bytes[4 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
    {
        std::ofstream out(stem.string() + ".f32", std::ios::binary | std::ios::trunc);
        if (!out)
            fail(ErrorKind::data, "cannot write tensor " + stem.string() + ".f32");
        out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    nlohmann::ordered_json sidecar;
    sidecar["rows"] = image.grid.rows();
    sidecar["cols"] = image.grid.cols();
    sidecar["window"] = {{"level", image.window.level}, {"width", image.window.width}};
    sidecar["annotation_id"] = annotation_id;
    std::ofstream out(stem.string() + ".json", std::ios::binary | std::ios::trunc);
    out << sidecar.dump(2) << '\n';
}

inline TensorFile read_tensor(const std::filesystem::path &stem) {
    std::ifstream meta(stem.string() + ".json", std::ios::binary);
    if (!meta)
        fail(ErrorKind::data, "missing tensor sidecar " + stem.string() + ".json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::data, stem.string() + ".json: " + e.what());
    }
    TensorFile out;
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    out.window.level = j.at("window").at("level").get<double>();
    out.window.width = j.at("window").at("width").get<double>();
    out.annotation_id = j.at("annotation_id").get<std::string>();
    std::ifstream in(stem.string() + ".f32", std::ios::binary);
    std::vector<unsigned char> bytes(rows * cols * 4);
    in.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in)
        fail(ErrorKind::data, "truncated tensor " + stem.string() + ".f32");
    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
            bits |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = f;
    }
    out.grid = Grid<double>(rows, cols, std::move(values));
    return out;
}

} // namespace renalct
