#pragma once

// Series loading and slice-reference resolution.
//
// Slices are ordered by SliceLocation (ascending unless the reference asks for
// descending), ties broken by InstanceNumber and then file name. A report's
// "image N" is the 1-based position in that order, not the InstanceNumber.
// Stored pixel values are kept raw in the volume; the rescale to Hounsfield
// Units is applied once, in resolve_slice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "renalct/dicom_io.hpp"
#include "renalct/error.hpp"
#include "renalct/grid.hpp"
#include "renalct/png_io.hpp"
#include "renalct/schema.hpp"

namespace renalct {

struct CtSlice {
    Grid<std::int32_t> stored;
    double slice_location = 0.0;
    int instance_number = 0;
    double rescale_slope = 1.0;
    double rescale_intercept = 0.0;
    std::optional<std::pair<double, double>> pixel_spacing;
    std::string source; // file name or synthetic label

    std::size_t rows() const { return stored.rows(); }
    std::size_t cols() const { return stored.cols(); }
};

struct CtVolume {
    std::vector<CtSlice> slices;
    int series_number = 0;
    SortOrder order = SortOrder::ascending;

    std::size_t size() const { return slices.size(); }
    std::size_t rows() const { return slices.empty() ? 0 : slices.front().rows(); }
    std::size_t cols() const { return slices.empty() ? 0 : slices.front().cols(); }
};

struct RawSlice {
    Grid<double> hu;
    SliceRef ref;
    std::size_t sorted_position = 0; // 1-based
    std::size_t volume_size = 0;
    double slice_location = 0.0;
    int instance_number = 0;
    std::optional<std::pair<double, double>> pixel_spacing;
    std::string source;
};

inline void sort_slices(std::vector<CtSlice> &slices, SortOrder order) {
    std::stable_sort(slices.begin(), slices.end(), [order](const CtSlice &a, const CtSlice &b) {
        if (a.slice_location != b.slice_location)
            return order == SortOrder::ascending ? a.slice_location < b.slice_location
                                                 : a.slice_location > b.slice_location;
        if (a.instance_number != b.instance_number)
            return a.instance_number < b.instance_number;
        return a.source < b.source;
    });
}

/// Validates shared dimensions and sorts; the building block for load_series.
inline CtVolume make_volume(std::vector<CtSlice> slices, SortOrder order = SortOrder::ascending,
                            int series_number = 0) {
    if (slices.empty())
        fail(ErrorKind::data, "volume has no slices");
    const auto rows = slices.front().rows();
    const auto cols = slices.front().cols();
    for (const auto &s : slices)
        if (s.rows() != rows || s.cols() != cols)
            fail(ErrorKind::data, "inconsistent grid dimensions: " + s.source + " is " +
                                      std::to_string(s.rows()) + "x" + std::to_string(s.cols()) +
                                      ", expected " + std::to_string(rows) + "x" +
                                      std::to_string(cols));
    sort_slices(slices, order);
    return CtVolume{std::move(slices), series_number, order};
}

inline bool looks_like_dicom(const std::filesystem::path &p) {
    const auto ext = p.extension().string();
    if (ext == ".dcm" || ext == ".DCM" || ext == ".dicom")
        return true;
    if (!ext.empty())
        return false;
    std::ifstream in(p, std::ios::binary);
    char magic[4] = {};
    in.seekg(128);
    in.read(magic, 4);
    return in && std::string_view(magic, 4) == "DICM";
}

inline CtVolume load_series(const std::filesystem::path &directory,
                            SortOrder order = SortOrder::ascending) {
    if (!std::filesystem::is_directory(directory))
        fail(ErrorKind::data, "series directory not found: " + directory.string());
    std::vector<std::filesystem::path> files;
    for (const auto &entry : std::filesystem::directory_iterator(directory))
        if (entry.is_regular_file() && looks_like_dicom(entry.path()))
            files.push_back(entry.path());
    if (files.empty())
        fail(ErrorKind::data, "no DICOM files in " + directory.string());
    std::sort(files.begin(), files.end());

    std::vector<CtSlice> slices;
    slices.reserve(files.size());
    int series_number = 0;
    for (const auto &f : files) {
        auto file = dicom::read_slice(f);
        series_number = file.series_number;
        slices.push_back(CtSlice{std::move(file.stored), file.slice_location, file.instance_number,
                                 file.rescale_slope, file.rescale_intercept, file.pixel_spacing,
                                 f.filename().string()});
    }
    return make_volume(std::move(slices), order, series_number);
}

/// Sorted headers of a series; pixels are decoded on demand. Uses the same
/// ordering as load_series.
struct SeriesIndex {
    std::vector<dicom::SliceHeader> slices;
    int series_number = 0;
    SortOrder order = SortOrder::ascending;

    std::size_t size() const { return slices.size(); }
};

inline SeriesIndex index_series(const std::filesystem::path &directory, SortOrder order = SortOrder::ascending) {
    if (!std::filesystem::is_directory(directory))
        fail(ErrorKind::data, "series directory not found: " + directory.string());
    std::vector<std::filesystem::path> files;
    for (const auto &entry : std::filesystem::directory_iterator(directory))
        if (entry.is_regular_file() && looks_like_dicom(entry.path()))
            files.push_back(entry.path());
    if (files.empty())
        fail(ErrorKind::data, "no DICOM files in " + directory.string());
    std::sort(files.begin(), files.end());
    SeriesIndex index;
    index.order = order;
    for (const auto &f : files) {
        auto h = dicom::read_header(f);
        index.series_number = h.series_number;
        if (!index.slices.empty() && (h.rows != index.slices.front().rows || h.cols != index.slices.front().cols))
            fail(ErrorKind::data, "inconsistent grid dimensions: " + f.filename().string() + " is " +
                                      std::to_string(h.rows) + "x" + std::to_string(h.cols) + ", expected " +
                                      std::to_string(index.slices.front().rows) + "x" +
                                      std::to_string(index.slices.front().cols));
        index.slices.push_back(std::move(h));
    }
    std::stable_sort(index.slices.begin(), index.slices.end(),
                     [order](const dicom::SliceHeader &a, const dicom::SliceHeader &b) {
                         if (a.slice_location != b.slice_location)
                             return order == SortOrder::ascending ? a.slice_location < b.slice_location
                                                                  : a.slice_location > b.slice_location;
                         if (a.instance_number != b.instance_number)
                             return a.instance_number < b.instance_number;
                         return a.path.filename().string() < b.path.filename().string();
                     });
    return index;
}

inline RawSlice resolve_slice(const CtVolume &volume, const SliceRef &ref, int index_base = 1) {
    const long long position = static_cast<long long>(ref.image_number) - index_base + 1;
    if (position < 1 || position > static_cast<long long>(volume.size()))
        fail(ErrorKind::data, "image number " + std::to_string(ref.image_number) +
                                  " out of range for volume of " + std::to_string(volume.size()) +
                                  " slices");
    const CtSlice &s = volume.slices[static_cast<std::size_t>(position - 1)];
    RawSlice out;
    out.hu = s.stored.map([&](std::int32_t v) {
        return s.rescale_slope * static_cast<double>(v) + s.rescale_intercept;
    });
    out.ref = ref;
    out.sorted_position = static_cast<std::size_t>(position);
    out.volume_size = volume.size();
    out.slice_location = s.slice_location;
    out.instance_number = s.instance_number;
    out.pixel_spacing = s.pixel_spacing;
    out.source = s.source;
    return out;
}

/// Decodes only the referenced slice of an indexed series.
inline RawSlice resolve_slice(const SeriesIndex &index, const SliceRef &ref, int index_base = 1) {
    const long long position = static_cast<long long>(ref.image_number) - index_base + 1;
    if (position < 1 || position > static_cast<long long>(index.size()))
        fail(ErrorKind::data, "image number " + std::to_string(ref.image_number) +
                                  " out of range for volume of " + std::to_string(index.size()) +
                                  " slices");
    const auto &h = index.slices[static_cast<std::size_t>(position - 1)];
    auto file = dicom::read_slice(h.path);
    RawSlice out;
    out.hu = file.stored.map([&](std::int32_t v) {
        return file.rescale_slope * static_cast<double>(v) + file.rescale_intercept;
    });
    out.ref = ref;
    out.sorted_position = static_cast<std::size_t>(position);
    out.volume_size = index.size();
    out.slice_location = file.slice_location;
    out.instance_number = file.instance_number;
    out.pixel_spacing = file.pixel_spacing;
    out.source = h.path.filename().string();
    return out;
}

/// index + d for d in offsets and 0, ascending. Out-of-range positions are
/// dropped rather than clamped. Works on CtVolume and SeriesIndex.
template <class Volume>
std::vector<int> adjacent_indices(const Volume &volume, int index, std::span<const int> offsets) {
    const int n = static_cast<int>(volume.size());
    if (index < 1 || index > n)
        fail(ErrorKind::data, "index " + std::to_string(index) + " out of range for volume of " +
                                  std::to_string(n) + " slices");
    std::vector<int> deltas(offsets.begin(), offsets.end());
    deltas.push_back(0);
    std::sort(deltas.begin(), deltas.end());
    deltas.erase(std::unique(deltas.begin(), deltas.end()), deltas.end());
    std::vector<int> out;
    for (int d : deltas)
        if (index + d >= 1 && index + d <= n)
            out.push_back(index + d);
    return out;
}

template <class Volume> std::vector<int> adjacent_indices(const Volume &volume, int index) {
    static constexpr int kDefaultOffsets[] = {-1, 1};
    return adjacent_indices(volume, index, std::span<const int>(kDefaultOffsets));
}

/// Series directory convention: <dicom_root>/<report_id>/<series_number>/.
inline std::filesystem::path series_directory(const std::filesystem::path &dicom_root,
                                              const Annotation &a) {
    return dicom_root / a.report_id / std::to_string(a.slice.series_number);
}

inline std::string slice_png_name(const Annotation &a) {
    return a.report_id + "_" + std::to_string(a.slice.series_number) + "_" +
           std::to_string(a.slice.image_number) + ".png";
}

/// 16-bit inspection export: sample = HU + 1024, clamped to [0, 65535].
inline std::vector<unsigned char> raw_slice_png(const RawSlice &slice) {
    auto samples = slice.hu.map([](double hu) {
        const double v = std::clamp(std::round(hu + 1024.0), 0.0, 65535.0);
        return static_cast<std::uint16_t>(v);
    });
    return png::encode_gray16(samples);
}

} // namespace renalct
