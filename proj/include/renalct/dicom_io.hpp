#pragma once

// Minimal single-frame CT DICOM reading and writing on top of GDCM.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <gdcmAttribute.h>
#include <gdcmDataSet.h>
#include <gdcmImageChangeTransferSyntax.h>
#include <gdcmImageReader.h>
#include <gdcmImageWriter.h>
#include <gdcmTrace.h>
#include <gdcmUIDGenerator.h>

#include "renalct/error.hpp"
#include "renalct/grid.hpp"

namespace renalct::dicom {

namespace tags {
inline const gdcm::Tag rows{0x0028, 0x0010};
inline const gdcm::Tag columns{0x0028, 0x0011};
inline const gdcm::Tag pixel_data{0x7fe0, 0x0010};
inline const gdcm::Tag rescale_slope{0x0028, 0x1053};
inline const gdcm::Tag rescale_intercept{0x0028, 0x1052};
inline const gdcm::Tag slice_location{0x0020, 0x1041};
inline const gdcm::Tag instance_number{0x0020, 0x0013};
inline const gdcm::Tag series_number{0x0020, 0x0011};
inline const gdcm::Tag pixel_spacing{0x0028, 0x0030};
} // namespace tags

/// One decoded CT slice; pixel values are the stored (pre-rescale) integers.
struct SliceFile {
    Grid<std::int32_t> stored;
    double slice_location = 0.0;
    int instance_number = 0;
    int series_number = 0;
    double rescale_slope = 1.0;
    double rescale_intercept = 0.0;
    std::optional<std::pair<double, double>> pixel_spacing; // (row_mm, col_mm)
};

enum class Compression { none, rle };

struct WriteOptions {
    Compression compression = Compression::none;
    // Attributes left out on purpose, for exercising reader error paths.
    bool omit_slice_location = false;
    bool omit_rescale = false;
    std::string study_uid;
    std::string series_uid;
};

inline void quiet_gdcm() {
    gdcm::Trace::SetWarning(false);
    gdcm::Trace::SetDebug(false);
}

inline SliceFile read_slice(const std::filesystem::path &path) {
    quiet_gdcm();
    gdcm::ImageReader reader;
    reader.SetFileName(path.string().c_str());
    if (!reader.Read())
        fail(ErrorKind::data, path.string() + ": not a readable DICOM image");
    const gdcm::DataSet &ds = reader.GetFile().GetDataSet();

    const std::pair<const gdcm::Tag *, const char *> required[] = {
        {&tags::slice_location, "SliceLocation"},
        {&tags::rows, "Rows"},
        {&tags::columns, "Columns"},
        {&tags::pixel_data, "PixelData"},
        {&tags::rescale_slope, "RescaleSlope"},
        {&tags::rescale_intercept, "RescaleIntercept"},
    };
    for (const auto &[tag, name] : required)
        if (!ds.FindDataElement(*tag) || ds.GetDataElement(*tag).IsEmpty())
            fail(ErrorKind::data, path.string() + ": missing required attribute " + name);

    SliceFile out;
    {
        gdcm::Attribute<0x0020, 0x1041> a;
        a.SetFromDataSet(ds);
        out.slice_location = a.GetValue();
    }
    {
        gdcm::Attribute<0x0028, 0x1053> a;
        a.SetFromDataSet(ds);
        out.rescale_slope = a.GetValue();
    }
    {
        gdcm::Attribute<0x0028, 0x1052> a;
        a.SetFromDataSet(ds);
        out.rescale_intercept = a.GetValue();
    }
    if (ds.FindDataElement(tags::instance_number)) {
        gdcm::Attribute<0x0020, 0x0013> a;
        a.SetFromDataSet(ds);
        out.instance_number = a.GetValue();
    }
    if (ds.FindDataElement(tags::series_number)) {
        gdcm::Attribute<0x0020, 0x0011> a;
        a.SetFromDataSet(ds);
        out.series_number = a.GetValue();
    }
    if (ds.FindDataElement(tags::pixel_spacing) && !ds.GetDataElement(tags::pixel_spacing).IsEmpty()) {
        gdcm::Attribute<0x0028, 0x0030> a;
        a.SetFromDataSet(ds);
        out.pixel_spacing = std::make_pair(a.GetValue(0), a.GetValue(1));
    }

    const gdcm::Image &image = reader.GetImage();
    const unsigned *dims = image.GetDimensions();
    const std::size_t cols = dims[0];
    const std::size_t rows = dims[1];
    const gdcm::PixelFormat pf = image.GetPixelFormat();
    if (pf.GetSamplesPerPixel() != 1)
        fail(ErrorKind::data, path.string() + ": only single-sample grayscale images are supported");
    std::vector<char> buffer(image.GetBufferLength());
    if (!image.GetBuffer(buffer.data()))
        fail(ErrorKind::data, path.string() + ": cannot decode PixelData");

    std::vector<std::int32_t> values(rows * cols);
    const std::size_t n = rows * cols;
    switch (pf.GetScalarType()) {
    case gdcm::PixelFormat::INT16:
        for (std::size_t i = 0; i < n; ++i) {
            std::int16_t v;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            values[i] = v;
        }
        break;
    case gdcm::PixelFormat::UINT16:
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, buffer.data() + 2 * i, 2);
            values[i] = v;
        }
        break;
    case gdcm::PixelFormat::UINT8:
        for (std::size_t i = 0; i < n; ++i)
            values[i] = static_cast<unsigned char>(buffer[i]);
        break;
    case gdcm::PixelFormat::INT8:
        for (std::size_t i = 0; i < n; ++i)
            values[i] = static_cast<signed char>(buffer[i]);
        break;
    default:
        fail(ErrorKind::data, path.string() + ": unsupported pixel format " +
                                  std::string(pf.GetScalarTypeAsString()));
    }
    out.stored = Grid<std::int32_t>(rows, cols, std::move(values));
    return out;
}

/// Ordering attributes of a slice, read without touching PixelData.
struct SliceHeader {
    std::filesystem::path path;
    double slice_location = 0.0;
    int instance_number = 0;
    int series_number = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

inline SliceHeader read_header(const std::filesystem::path &path) {
    quiet_gdcm();
    gdcm::Reader reader;
    reader.SetFileName(path.string().c_str());
    const std::set<gdcm::Tag> skip{tags::pixel_data};
    if (!reader.ReadUpToTag(tags::pixel_data, skip))
        fail(ErrorKind::data, path.string() + ": not a readable DICOM file");
    const gdcm::DataSet &ds = reader.GetFile().GetDataSet();
    const std::pair<const gdcm::Tag *, const char *> required[] = {
        {&tags::slice_location, "SliceLocation"},
        {&tags::rows, "Rows"},
        {&tags::columns, "Columns"},
    };
    for (const auto &[tag, name] : required)
        if (!ds.FindDataElement(*tag) || ds.GetDataElement(*tag).IsEmpty())
            fail(ErrorKind::data, path.string() + ": missing required attribute " + name);
    SliceHeader out;
    out.path = path;
    {
        gdcm::Attribute<0x0020, 0x1041> a;
        a.SetFromDataSet(ds);
        out.slice_location = a.GetValue();
    }
    {
        gdcm::Attribute<0x0028, 0x0010> a;
        a.SetFromDataSet(ds);
        out.rows = a.GetValue();
    }
    {
        gdcm::Attribute<0x0028, 0x0011> a;
        a.SetFromDataSet(ds);
        out.cols = a.GetValue();
    }
    if (ds.FindDataElement(tags::instance_number) && !ds.GetDataElement(tags::instance_number).IsEmpty()) {
        gdcm::Attribute<0x0020, 0x0013> a;
        a.SetFromDataSet(ds);
        out.instance_number = a.GetValue();
    }
    if (ds.FindDataElement(tags::series_number) && !ds.GetDataElement(tags::series_number).IsEmpty()) {
        gdcm::Attribute<0x0020, 0x0011> a;
        a.SetFromDataSet(ds);
        out.series_number = a.GetValue();
    }
    return out;
}

/// Writes a signed 16-bit CT slice. Stored values must fit in int16.
inline void write_slice(const std::filesystem::path &path, const SliceFile &slice,
                        const WriteOptions &options = {}) {
    quiet_gdcm();
    const std::size_t rows = slice.stored.rows();
    const std::size_t cols = slice.stored.cols();
    std::vector<std::int16_t> pixels(rows * cols);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto v = slice.stored.values()[i];
        if (v < INT16_MIN || v > INT16_MAX)
            fail(ErrorKind::data, "stored value out of int16 range while writing " + path.string());
        pixels[i] = static_cast<std::int16_t>(v);
    }

    gdcm::ImageWriter writer;
    gdcm::Image &image = writer.GetImage();
    image.SetNumberOfDimensions(2);
    const unsigned dims[2] = {static_cast<unsigned>(cols), static_cast<unsigned>(rows)};
    image.SetDimensions(dims);
    image.SetPixelFormat(gdcm::PixelFormat::INT16);
    image.SetPhotometricInterpretation(gdcm::PhotometricInterpretation::MONOCHROME2);
    if (slice.pixel_spacing) {
        image.SetSpacing(0, slice.pixel_spacing->second);
        image.SetSpacing(1, slice.pixel_spacing->first);
    }
    gdcm::DataElement pixel_data(tags::pixel_data);
    pixel_data.SetByteValue(reinterpret_cast<const char *>(pixels.data()),
                            static_cast<std::uint32_t>(pixels.size() * sizeof(std::int16_t)));
    image.SetDataElement(pixel_data);
    image.SetTransferSyntax(gdcm::TransferSyntax::ExplicitVRLittleEndian);

    if (options.compression == Compression::rle) {
        gdcm::ImageChangeTransferSyntax change;
        change.SetTransferSyntax(gdcm::TransferSyntax::RLELossless);
        change.SetInput(image);
        if (!change.Change())
            fail(ErrorKind::data, "RLE encoding failed for " + path.string());
        writer.SetImage(change.GetOutput());
    }

    gdcm::DataSet &ds = writer.GetFile().GetDataSet();
    gdcm::UIDGenerator uid;
    {
        gdcm::Attribute<0x0008, 0x0060> modality{"CT"};
        ds.Replace(modality.GetAsDataElement());
    }
    {
        gdcm::Attribute<0x0008, 0x0016> sop_class{gdcm::MediaStorage::GetMSString(gdcm::MediaStorage::CTImageStorage)};
        ds.Replace(sop_class.GetAsDataElement());
    }
    {
        gdcm::Attribute<0x0020, 0x000d> study{options.study_uid.empty() ? uid.Generate() : options.study_uid.c_str()};
        ds.Replace(study.GetAsDataElement());
    }
    {
        gdcm::Attribute<0x0020, 0x000e> series{options.series_uid.empty() ? uid.Generate() : options.series_uid.c_str()};
        ds.Replace(series.GetAsDataElement());
    }
    {
        gdcm::Attribute<0x0020, 0x0011> a{slice.series_number};
        ds.Replace(a.GetAsDataElement());
    }
    {
        gdcm::Attribute<0x0020, 0x0013> a{slice.instance_number};
        ds.Replace(a.GetAsDataElement());
    }
    if (!options.omit_slice_location) {
        gdcm::Attribute<0x0020, 0x1041> a{slice.slice_location};
        ds.Replace(a.GetAsDataElement());
    }
    if (options.omit_rescale) {
        image.SetIntercept(0.0);
        image.SetSlope(1.0);
    } else {
        writer.GetImage().SetIntercept(slice.rescale_intercept);
        writer.GetImage().SetSlope(slice.rescale_slope);
    }

    writer.SetFileName(path.string().c_str());
    if (!writer.Write())
        fail(ErrorKind::data, "cannot write DICOM file " + path.string());

    if (options.omit_rescale) {
        // GDCM always emits rescale for CT storage; strip it afterwards.
        gdcm::Reader reader;
        reader.SetFileName(path.string().c_str());
        if (!reader.Read())
            fail(ErrorKind::data, "cannot re-read " + path.string());
        reader.GetFile().GetDataSet().Remove(tags::rescale_slope);
        reader.GetFile().GetDataSet().Remove(tags::rescale_intercept);
        gdcm::Writer rewriter;
        rewriter.SetFile(reader.GetFile());
        rewriter.SetFileName(path.string().c_str());
        if (!rewriter.Write())
            fail(ErrorKind::data, "cannot rewrite " + path.string());
    }
}

} // namespace renalct::dicom
