#pragma once

// Clinical feature schema: the eight-feature lesion record, slice references,
// annotations and the JSON Lines cohort manifest.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "renalct/error.hpp"

namespace renalct {

enum class Position { left, right, unknown };
enum class GrowthPattern { exophytic, endophytic, unknown };
enum class Attenuation { hypoattenuating, hyperattenuating, isoattenuating, unknown };
enum class Enhancement { enhancement, non_enhancement, unknown };
enum class Plane { coronal, axial, sagittal, unknown };
enum class SortOrder { ascending, descending };

template <class E> struct EnumTokens;

template <> struct EnumTokens<Position> {
    static constexpr std::string_view name = "position";
    static constexpr std::array<std::pair<Position, std::string_view>, 3> values{{
        {Position::left, "left"},
        {Position::right, "right"},
        {Position::unknown, "unknown"},
    }};
};

template <> struct EnumTokens<GrowthPattern> {
    static constexpr std::string_view name = "exophytic";
    static constexpr std::array<std::pair<GrowthPattern, std::string_view>, 3> values{{
        {GrowthPattern::exophytic, "exophytic"},
        {GrowthPattern::endophytic, "endophytic"},
        {GrowthPattern::unknown, "unknown"},
    }};
};

template <> struct EnumTokens<Attenuation> {
    static constexpr std::string_view name = "attenuation";
    static constexpr std::array<std::pair<Attenuation, std::string_view>, 4> values{{
        {Attenuation::hypoattenuating, "hypoattenuating"},
        {Attenuation::hyperattenuating, "hyperattenuating"},
        {Attenuation::isoattenuating, "isoattenuating"},
        {Attenuation::unknown, "unknown"},
    }};
};

template <> struct EnumTokens<Enhancement> {
    static constexpr std::string_view name = "enhancement";
    static constexpr std::array<std::pair<Enhancement, std::string_view>, 3> values{{
        {Enhancement::enhancement, "enhancement"},
        {Enhancement::non_enhancement, "non_enhancement"},
        {Enhancement::unknown, "unknown"},
    }};
};

template <> struct EnumTokens<Plane> {
    static constexpr std::string_view name = "plane";
    static constexpr std::array<std::pair<Plane, std::string_view>, 4> values{{
        {Plane::coronal, "coronal"},
        {Plane::axial, "axial"},
        {Plane::sagittal, "sagittal"},
        {Plane::unknown, "unknown"},
    }};
};

template <> struct EnumTokens<SortOrder> {
    static constexpr std::string_view name = "sort_order";
    static constexpr std::array<std::pair<SortOrder, std::string_view>, 2> values{{
        {SortOrder::ascending, "ascending"},
        {SortOrder::descending, "descending"},
    }};
};

template <class E> std::string_view to_token(E value) {
    for (const auto &[v, token] : EnumTokens<E>::values)
        if (v == value)
            return token;
    return "unknown";
}

template <class E> std::optional<E> try_parse_token(std::string_view token) {
    for (const auto &[v, t] : EnumTokens<E>::values)
        if (t == token)
            return v;
    return std::nullopt;
}

template <class E> E parse_token(std::string_view token) {
    if (auto v = try_parse_token<E>(token))
        return *v;
    fail(ErrorKind::data, "unknown " + std::string(EnumTokens<E>::name) + " token '" +
                              std::string(token) + "'");
}

struct FeatureSet {
    Position position = Position::unknown;
    std::optional<std::string> raw_size;
    std::optional<double> size_cm;
    // Set when raw_size was present but could not be standardized.
    bool size_unparseable = false;
    GrowthPattern exophytic = GrowthPattern::unknown;
    Attenuation attenuation = Attenuation::unknown;
    Enhancement enhancement = Enhancement::unknown;
    bool cyst = false;
    bool mass = false;
    bool tumor = false;

    bool operator==(const FeatureSet &) const = default;
};

struct SliceRef {
    int series_number = 1;
    int image_number = 1;
    Plane plane = Plane::coronal;
    // Per-series override for scanners that report descending SliceLocation.
    SortOrder sort_order = SortOrder::ascending;

    bool operator==(const SliceRef &) const = default;
};

struct Annotation {
    std::string annotation_id;
    std::string patient_id;
    std::string report_id;
    std::string sentence;
    SliceRef slice;
    FeatureSet features;
    std::optional<int> split_fold;

    bool operator==(const Annotation &) const = default;
};

inline constexpr int kManifestSchemaVersion = 1;

struct CohortManifest {
    int schema_version = kManifestSchemaVersion;
    std::string provenance = "real"; // "real" or "phantom"
    std::vector<Annotation> annotations;

    bool operator==(const CohortManifest &) const = default;

    const Annotation *find(std::string_view id) const {
        for (const auto &a : annotations)
            if (a.annotation_id == id)
                return &a;
        return nullptr;
    }
};

// ---------------------------------------------------------------------------
// Feature enumeration shared by splitting, prompting and metrics.

enum class Feature { position, size, exophytic, attenuation, enhancement, cyst, mass, tumor };

inline constexpr std::array<Feature, 8> kAllFeatures{
    Feature::position, Feature::size, Feature::exophytic, Feature::attenuation,
    Feature::enhancement, Feature::cyst, Feature::mass, Feature::tumor};

inline constexpr std::array<Feature, 7> kCategoricalFeatures{
    Feature::position, Feature::exophytic, Feature::attenuation, Feature::enhancement,
    Feature::cyst, Feature::mass, Feature::tumor};

/// Key used in files and configs.
inline std::string_view feature_key(Feature f) {
    switch (f) {
    case Feature::position: return "position";
    case Feature::size: return "size_cm";
    case Feature::exophytic: return "exophytic";
    case Feature::attenuation: return "attenuation";
    case Feature::enhancement: return "enhancement";
    case Feature::cyst: return "cyst";
    case Feature::mass: return "mass";
    case Feature::tumor: return "tumor";
    }
    return "";
}

/// Row label used in metric tables.
inline std::string_view feature_display_name(Feature f) {
    switch (f) {
    case Feature::position: return "Position";
    case Feature::size: return "Size";
    case Feature::exophytic: return "Exophytic";
    case Feature::attenuation: return "Attenuation";
    case Feature::enhancement: return "Enhancement";
    case Feature::cyst: return "Cyst";
    case Feature::mass: return "Mass";
    case Feature::tumor: return "Tumor";
    }
    return "";
}

inline Feature parse_feature(std::string_view key) {
    for (Feature f : kAllFeatures)
        if (feature_key(f) == key || (f == Feature::size && key == "size"))
            return f;
    fail(ErrorKind::config, "unknown feature name '" + std::string(key) + "'");
}

inline constexpr std::string_view kUnknownToken = "unknown";

/// Known (non-unknown) classes of a categorical feature, in declaration order.
inline std::span<const std::string_view> known_classes(Feature f) {
    static constexpr std::array<std::string_view, 2> position{"left", "right"};
    static constexpr std::array<std::string_view, 2> growth{"exophytic", "endophytic"};
    static constexpr std::array<std::string_view, 3> attenuation{
        "hypoattenuating", "hyperattenuating", "isoattenuating"};
    static constexpr std::array<std::string_view, 2> enhancement{"enhancement",
                                                                 "non_enhancement"};
    static constexpr std::array<std::string_view, 2> boolean{"true", "false"};
    switch (f) {
    case Feature::position: return position;
    case Feature::exophytic: return growth;
    case Feature::attenuation: return attenuation;
    case Feature::enhancement: return enhancement;
    case Feature::cyst:
    case Feature::mass:
    case Feature::tumor: return boolean;
    case Feature::size: break;
    }
    return {};
}

/// Positive class for binary AUC; empty for multi-class or regression features.
inline std::optional<std::string_view> positive_class(Feature f) {
    switch (f) {
    case Feature::position: return "left";
    case Feature::exophytic: return "exophytic";
    case Feature::enhancement: return "enhancement";
    case Feature::cyst:
    case Feature::mass:
    case Feature::tumor: return "true";
    default: return std::nullopt;
    }
}

inline bool feature_has_unknown_state(Feature f) {
    return f == Feature::position || f == Feature::size || f == Feature::exophytic ||
           f == Feature::attenuation || f == Feature::enhancement;
}

inline std::string categorical_value(const FeatureSet &fs, Feature f) {
    switch (f) {
    case Feature::position: return std::string(to_token(fs.position));
    case Feature::exophytic: return std::string(to_token(fs.exophytic));
    case Feature::attenuation: return std::string(to_token(fs.attenuation));
    case Feature::enhancement: return std::string(to_token(fs.enhancement));
    case Feature::cyst: return fs.cyst ? "true" : "false";
    case Feature::mass: return fs.mass ? "true" : "false";
    case Feature::tumor: return fs.tumor ? "true" : "false";
    case Feature::size: break;
    }
    fail(ErrorKind::config, "size is not a categorical feature");
}

inline void set_categorical_value(FeatureSet &fs, Feature f, std::string_view token) {
    switch (f) {
    case Feature::position: fs.position = parse_token<Position>(token); return;
    case Feature::exophytic: fs.exophytic = parse_token<GrowthPattern>(token); return;
    case Feature::attenuation: fs.attenuation = parse_token<Attenuation>(token); return;
    case Feature::enhancement: fs.enhancement = parse_token<Enhancement>(token); return;
    case Feature::cyst:
    case Feature::mass:
    case Feature::tumor: {
        if (token != "true" && token != "false")
            fail(ErrorKind::data, "unknown boolean token '" + std::string(token) + "'");
        const bool v = token == "true";
        (f == Feature::cyst ? fs.cyst : f == Feature::mass ? fs.mass : fs.tumor) = v;
        return;
    }
    case Feature::size: break;
    }
    fail(ErrorKind::config, "size is not a categorical feature");
}

// ---------------------------------------------------------------------------
// Validation

struct Violation {
    std::string field;
    std::string rule;

    bool operator==(const Violation &) const = default;
};

inline std::vector<Violation> validate_feature_set(const FeatureSet &f) {
    std::vector<Violation> out;
    if (f.size_cm && !(std::isfinite(*f.size_cm) && *f.size_cm > 0.0))
        out.push_back({"size_cm", "must be strictly positive and finite"});
    if (f.raw_size && !f.size_cm && !f.size_unparseable)
        out.push_back({"raw_size", "present without size_cm or an unparseable marker"});
    if (f.size_unparseable && !f.raw_size)
        out.push_back({"size_unparseable", "set without raw_size"});
    if (f.size_unparseable && f.size_cm)
        out.push_back({"size_unparseable", "set while size_cm is present"});
    // Enum fields cannot hold undeclared values once constructed through the
    // token parsers, but a cast integer could; catch that too.
    if (static_cast<unsigned>(f.position) > static_cast<unsigned>(Position::unknown))
        out.push_back({"position", "undeclared value"});
    if (static_cast<unsigned>(f.exophytic) > static_cast<unsigned>(GrowthPattern::unknown))
        out.push_back({"exophytic", "undeclared value"});
    if (static_cast<unsigned>(f.attenuation) > static_cast<unsigned>(Attenuation::unknown))
        out.push_back({"attenuation", "undeclared value"});
    if (static_cast<unsigned>(f.enhancement) > static_cast<unsigned>(Enhancement::unknown))
        out.push_back({"enhancement", "undeclared value"});
    return out;
}

inline std::vector<Violation> validate_annotation(const Annotation &a) {
    std::vector<Violation> out;
    if (a.annotation_id.empty())
        out.push_back({"annotation_id", "must be non-empty"});
    if (a.sentence.empty())
        out.push_back({"sentence", "must be non-empty"});
    if (a.slice.image_number < 1)
        out.push_back({"slice.image_number", "must be >= 1"});
    if (a.slice.series_number < 1)
        out.push_back({"slice.series_number", "must be >= 1"});
    if (a.split_fold && *a.split_fold < 0)
        out.push_back({"split_fold", "must be >= 0"});
    for (auto v : validate_feature_set(a.features))
        out.push_back({"features." + v.field, v.rule});
    return out;
}

/// Curation rule: only coronal slice references are kept.
inline bool excluded_by_plane(const SliceRef &ref) { return ref.plane != Plane::coronal; }

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

struct FieldError {
    std::string field;
    std::string message;
};

template <class T>
T required(const nlohmann::json &j, const char *key, const std::string &prefix) {
    const auto it = j.find(key);
    if (it == j.end())
        throw FieldError{prefix + key, "missing required field"};
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception &) {
        throw FieldError{prefix + key, "wrong type"};
    }
}

template <class E>
E enum_field(const nlohmann::json &j, const char *key, const std::string &prefix,
             std::optional<E> fallback = std::nullopt) {
    const auto it = j.find(key);
    if (it == j.end()) {
        if (fallback)
            return *fallback;
        throw FieldError{prefix + key, "missing required field"};
    }
    if (!it->is_string())
        throw FieldError{prefix + key, "wrong type"};
    const auto token = it->get<std::string>();
    if (auto v = try_parse_token<E>(token))
        return *v;
    throw FieldError{prefix + key, "unknown enum token '" + token + "'"};
}

inline bool bool_field(const nlohmann::json &j, const char *key, const std::string &prefix) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null())
        return false;
    if (!it->is_boolean())
        throw FieldError{prefix + key, "wrong type"};
    return it->get<bool>();
}

} // namespace detail

inline nlohmann::ordered_json feature_set_to_json(const FeatureSet &f) {
    nlohmann::ordered_json j;
    j["position"] = to_token(f.position);
    if (f.raw_size)
        j["raw_size"] = *f.raw_size;
    if (f.size_cm)
        j["size_cm"] = *f.size_cm;
    if (f.size_unparseable)
        j["size_unparseable"] = true;
    j["exophytic"] = to_token(f.exophytic);
    j["attenuation"] = to_token(f.attenuation);
    j["enhancement"] = to_token(f.enhancement);
    j["cyst"] = f.cyst;
    j["mass"] = f.mass;
    j["tumor"] = f.tumor;
    return j;
}

inline FeatureSet feature_set_from_json(const nlohmann::json &j, const std::string &prefix = "") {
    using detail::FieldError;
    if (!j.is_object())
        throw FieldError{prefix.empty() ? "features" : prefix, "expected an object"};
    FeatureSet f;
    f.position = detail::enum_field<Position>(j, "position", prefix);
    if (auto it = j.find("raw_size"); it != j.end() && !it->is_null()) {
        if (!it->is_string())
            throw FieldError{prefix + "raw_size", "wrong type"};
        f.raw_size = it->get<std::string>();
    }
    if (auto it = j.find("size_cm"); it != j.end() && !it->is_null()) {
        if (!it->is_number())
            throw FieldError{prefix + "size_cm", "wrong type"};
        f.size_cm = it->get<double>();
    }
    f.size_unparseable = detail::bool_field(j, "size_unparseable", prefix);
    f.exophytic = detail::enum_field<GrowthPattern>(j, "exophytic", prefix);
    f.attenuation = detail::enum_field<Attenuation>(j, "attenuation", prefix);
    f.enhancement = detail::enum_field<Enhancement>(j, "enhancement", prefix);
    f.cyst = detail::bool_field(j, "cyst", prefix);
    f.mass = detail::bool_field(j, "mass", prefix);
    f.tumor = detail::bool_field(j, "tumor", prefix);
    return f;
}

inline nlohmann::ordered_json annotation_to_json(const Annotation &a) {
    nlohmann::ordered_json j;
    j["annotation_id"] = a.annotation_id;
    j["patient_id"] = a.patient_id;
    j["report_id"] = a.report_id;
    j["sentence"] = a.sentence;
    nlohmann::ordered_json slice;
    slice["series_number"] = a.slice.series_number;
    slice["image_number"] = a.slice.image_number;
    slice["plane"] = to_token(a.slice.plane);
    if (a.slice.sort_order != SortOrder::ascending)
        slice["sort_order"] = to_token(a.slice.sort_order);
    j["slice"] = std::move(slice);
    j["features"] = feature_set_to_json(a.features);
    if (a.split_fold)
        j["split_fold"] = *a.split_fold;
    return j;
}

inline Annotation annotation_from_json(const nlohmann::json &j) {
    using detail::FieldError;
    if (!j.is_object())
        throw FieldError{"<record>", "expected a JSON object"};
    Annotation a;
    a.annotation_id = detail::required<std::string>(j, "annotation_id", "");
    a.patient_id = detail::required<std::string>(j, "patient_id", "");
    a.report_id = detail::required<std::string>(j, "report_id", "");
    a.sentence = detail::required<std::string>(j, "sentence", "");
    const auto slice_it = j.find("slice");
    if (slice_it == j.end() || !slice_it->is_object())
        throw FieldError{"slice", "missing required object"};
    a.slice.series_number = detail::required<int>(*slice_it, "series_number", "slice.");
    a.slice.image_number = detail::required<int>(*slice_it, "image_number", "slice.");
    a.slice.plane = detail::enum_field<Plane>(*slice_it, "plane", "slice.", Plane::unknown);
    a.slice.sort_order = detail::enum_field<SortOrder>(*slice_it, "sort_order", "slice.",
                                                       SortOrder::ascending);
    const auto feat_it = j.find("features");
    if (feat_it == j.end())
        throw FieldError{"features", "missing required object"};
    a.features = feature_set_from_json(*feat_it, "features.");
    if (auto it = j.find("split_fold"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer())
            throw FieldError{"split_fold", "wrong type"};
        a.split_fold = it->get<int>();
    }
    return a;
}

// ---------------------------------------------------------------------------
// Manifest I/O. One Annotation object per line; an optional first line carrying
// {"schema_version", "provenance"} describes the cohort.

inline CohortManifest parse_manifest(std::istream &in, const std::string &source = "<stream>") {
    CohortManifest m;
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    bool header_allowed = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos)
            continue;
        const auto where = source + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error &e) {
            fail(ErrorKind::data, where + ": malformed JSON record: " + e.what());
        }
        if (header_allowed && j.is_object() && j.contains("schema_version") &&
            !j.contains("annotation_id")) {
            header_allowed = false;
            if (!j["schema_version"].is_number_integer())
                fail(ErrorKind::data, where + ": field 'schema_version': wrong type");
            m.schema_version = j["schema_version"].get<int>();
            if (m.schema_version != kManifestSchemaVersion)
                fail(ErrorKind::data, where + ": unsupported schema_version " +
                                          std::to_string(m.schema_version));
            if (auto it = j.find("provenance"); it != j.end()) {
                if (!it->is_string() || (*it != "real" && *it != "phantom"))
                    fail(ErrorKind::data, where + ": field 'provenance': expected real|phantom");
                m.provenance = it->get<std::string>();
            }
            continue;
        }
        header_allowed = false;
        Annotation a;
        try {
            a = annotation_from_json(j);
        } catch (const detail::FieldError &e) {
            fail(ErrorKind::data, where + ": field '" + e.field + "': " + e.message);
        }
        if (const auto violations = validate_annotation(a); !violations.empty())
            fail(ErrorKind::data, where + ": field '" + violations.front().field +
                                      "': " + violations.front().rule);
        if (!seen.insert(a.annotation_id).second)
            fail(ErrorKind::data, where + ": field 'annotation_id': duplicate id '" +
                                      a.annotation_id + "'");
        m.annotations.push_back(std::move(a));
    }
    return m;
}

inline CohortManifest load_manifest(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail(ErrorKind::data, "cannot open manifest " + path.string());
    return parse_manifest(in, path.string());
}

inline std::string serialize_manifest(const CohortManifest &m) {
    std::ostringstream out;
    nlohmann::ordered_json header;
    header["schema_version"] = m.schema_version;
    header["provenance"] = m.provenance;
    out << header.dump() << '\n';
    for (const auto &a : m.annotations)
        out << annotation_to_json(a).dump() << '\n';
    return out.str();
}

inline void save_manifest(const CohortManifest &m, const std::filesystem::path &path) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail(ErrorKind::data, "cannot write manifest " + path.string());
    out << serialize_manifest(m);
}

} // namespace renalct
