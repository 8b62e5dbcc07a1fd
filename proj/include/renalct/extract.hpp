#pragma once

// Feature recovery from generated report text: the rule-based parser (see
// rule_parser.hpp) and the model-backed path driven by the feature-extraction
// prompt.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "renalct/backend.hpp"
#include "renalct/error.hpp"
#include "renalct/prompt.hpp"
#include "renalct/rule_parser.hpp"
#include "renalct/schema.hpp"

namespace renalct {

inline constexpr int kExtractionRepairRetries = 2;

namespace detail {

/// Cuts the first balanced {...} object out of a reply (ignoring braces inside
/// strings) and drops trailing commas, which models copy from the example.
inline std::optional<std::string> extract_json_object(std::string_view reply) {
    const auto start = reply.find('{');
    if (start == std::string_view::npos)
        return std::nullopt;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < reply.size(); ++i) {
        const char c = reply[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) {
            end = i;
            break;
        }
    }
    if (end == std::string_view::npos)
        return std::nullopt;
    const auto object = reply.substr(start, end - start + 1);
    std::string out;
    in_string = false;
    escaped = false;
    for (std::size_t i = 0; i < object.size(); ++i) {
        const char c = object[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            out += c;
            continue;
        }
        if (c == '"') in_string = true;
        if (c == ',') {
            auto j = i + 1;
            while (j < object.size() && std::isspace(static_cast<unsigned char>(object[j])))
                ++j;
            if (j < object.size() && (object[j] == '}' || object[j] == ']'))
                continue;
        }
        out += c;
    }
    return out;
}

inline std::string normalize_token(std::string s) {
    for (auto &c : s) {
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (c == '-' || c == ' ')
            c = '_';
    }
    return s;
}

inline bool is_unknown_value(const nlohmann::json &v) {
    return v.is_null() || (v.is_string() && normalize_token(v.get<std::string>()) == "unknown");
}

/// Maps one Abnormality_Info entry to a FeatureSet, collecting every bad field.
inline FeatureSet features_from_info(const nlohmann::json &info, std::vector<std::string> &bad) {
    FeatureSet f;
    auto text_field = [&](const char *key) -> std::optional<std::string> {
        if (!info.contains(key) || is_unknown_value(info[key]))
            return std::nullopt;
        if (!info[key].is_string()) {
            bad.push_back(std::string(key) + ": expected a string");
            return std::nullopt;
        }
        return normalize_token(info[key].get<std::string>());
    };
    auto enum_field = [&]<class E>(const char *key, E &out) {
        if (auto v = text_field(key)) {
            std::string token = *v;
            if constexpr (std::is_same_v<E, Enhancement>)
                if (token == "non_enhancing" || token == "nonenhancing" || token == "no_enhancement")
                    token = "non_enhancement";
            if (auto e = try_parse_token<E>(token))
                out = *e;
            else
                bad.push_back(std::string(key) + ": unknown token '" + *v + "'");
        }
    };
    auto bool_field = [&](const char *key, bool &out) {
        if (!info.contains(key) || is_unknown_value(info[key]))
            return;
        const auto &v = info[key];
        if (v.is_boolean())
            out = v.get<bool>();
        else if (v.is_string() && normalize_token(v.get<std::string>()) == "true")
            out = true;
        else if (v.is_string() && normalize_token(v.get<std::string>()) == "false")
            out = false;
        else
            bad.push_back(std::string(key) + ": expected a boolean");
    };

    enum_field("Position", f.position);
    enum_field("Exophytic", f.exophytic);
    enum_field("Attenuation", f.attenuation);
    enum_field("Enhancement", f.enhancement);
    bool_field("Cyst", f.cyst);
    bool_field("Mass", f.mass);
    bool_field("Tumor", f.tumor);

    if (info.contains("Raw_Size") && !is_unknown_value(info["Raw_Size"])) {
        if (info["Raw_Size"].is_string())
            f.raw_size = info["Raw_Size"].get<std::string>();
        else
            bad.push_back("Raw_Size: expected a string");
    }
    if (info.contains("Size_cm") && !is_unknown_value(info["Size_cm"])) {
        const auto &v = info["Size_cm"];
        if (v.is_number()) {
            f.size_cm = v.get<double>();
        } else if (v.is_string()) {
            f.size_cm = standardize_size(v.get<std::string>() + " cm");
            if (!f.size_cm)
                bad.push_back("Size_cm: not a number");
        } else {
            bad.push_back("Size_cm: expected a number");
        }
    }
    if (!f.size_cm && f.raw_size) {
        f.size_cm = standardize_size(*f.raw_size);
        f.size_unparseable = !f.size_cm;
    }
    for (const auto &v : validate_feature_set(f))
        bad.push_back(v.field + ": " + v.rule);
    return f;
}

} // namespace detail

/// Parses a model reply; nullopt means the reply needs a repair round.
inline std::optional<ExtractionResult> interpret_extraction_reply(std::string_view reply) {
    const auto object = detail::extract_json_object(reply);
    if (!object)
        return std::nullopt;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(*object);
    } catch (const nlohmann::json::exception &) {
        return std::nullopt;
    }
    if (!j.is_object() || !j.contains("Abnormality"))
        return std::nullopt;
    const auto &flag = j["Abnormality"];
    bool abnormal = false;
    if (flag.is_boolean())
        abnormal = flag.get<bool>();
    else if (flag.is_string() && detail::normalize_token(flag.get<std::string>()) == "true")
        abnormal = true;
    else if (!(flag.is_string() && detail::normalize_token(flag.get<std::string>()) == "false"))
        return std::nullopt;

    ExtractionResult result;
    result.method = ExtractionMethod::llm;
    result.raw_model_json = std::string(reply);
    if (!abnormal)
        return result;
    if (!j.contains("Abnormality_Info") || !j["Abnormality_Info"].is_array() ||
        j["Abnormality_Info"].empty() || !j["Abnormality_Info"][0].is_object()) {
        result.notes.push_back("Abnormality true without Abnormality_Info; fields left unknown");
        return result;
    }
    if (j["Abnormality_Info"].size() > 1)
        result.notes.push_back("took the first of " + std::to_string(j["Abnormality_Info"].size()) +
                               " abnormality entries");
    std::vector<std::string> bad;
    result.features = detail::features_from_info(j["Abnormality_Info"][0], bad);
    if (!bad.empty()) {
        std::string msg = "extraction reply violates the schema:";
        for (const auto &b : bad)
            msg += " [" + b + "]";
        fail(ErrorKind::data, msg);
    }
    return result;
}

inline ExtractionResult parse_report_llm(std::string_view text, Backend &backend) {
    if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
        ExtractionResult empty;
        empty.method = ExtractionMethod::llm;
        empty.raw_model_json = "";
        empty.notes.push_back("empty report; nothing sent to the backend");
        return empty;
    }
    RenderedPrompt prompt = render_feature_extraction_prompt(text);
    const std::string base_user_text = prompt.user_text;
    std::string last_reply;
    for (int attempt = 0; attempt <= kExtractionRepairRetries; ++attempt) {
        if (attempt > 0)
            prompt.user_text = base_user_text + "\n" + std::string(templates::kJsonRepairInstruction) + "\n";
        last_reply = backend.complete(prompt).text;
        if (auto result = interpret_extraction_reply(last_reply)) {
            if (attempt > 0)
                result->notes.push_back("parsed after " + std::to_string(attempt) + " repair round(s)");
            return *result;
        }
    }
    fail(ErrorKind::backend, "no valid extraction JSON after " +
                                 std::to_string(kExtractionRepairRetries + 1) +
                                 " attempts; last reply: " + last_reply);
}

inline nlohmann::ordered_json extraction_result_to_json(const std::string &annotation_id,
                                                        const ExtractionResult &r) {
    nlohmann::ordered_json j;
    j["annotation_id"] = annotation_id;
    j["method"] = to_string(r.method);
    j["features"] = feature_set_to_json(r.features);
    j["notes"] = r.notes;
    j["unparsed_spans"] = r.unparsed_spans;
    if (r.raw_model_json)
        j["raw_model_json"] = *r.raw_model_json;
    return j;
}

inline std::pair<std::string, ExtractionResult> extraction_result_from_json(const nlohmann::json &j) {
    ExtractionResult r;
    std::string id;
    try {
        id = j.at("annotation_id").get<std::string>();
        r.method = j.value("method", std::string("rule")) == "llm" ? ExtractionMethod::llm
                                                                   : ExtractionMethod::rule;
        r.features = feature_set_from_json(j.at("features"), "features.");
        r.notes = j.value("notes", std::vector<std::string>{});
        r.unparsed_spans = j.value("unparsed_spans", std::vector<std::string>{});
        if (j.contains("raw_model_json"))
            r.raw_model_json = j["raw_model_json"].get<std::string>();
    } catch (const nlohmann::json::exception &e) {
        fail(ErrorKind::data, std::string("extraction record: ") + e.what());
    } catch (const detail::FieldError &e) {
        fail(ErrorKind::data, "extraction record: field '" + e.field + "': " + e.message);
    }
    return {id, r};
}

} // namespace renalct
