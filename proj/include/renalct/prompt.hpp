#pragma once

// Prompt rendering for sentence extraction, feature extraction and report
// generation. Template text is fixed; any edit must bump kTemplateVersion and
// regenerate the golden files under templates/.

#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "renalct/error.hpp"
#include "renalct/preprocess.hpp"
#include "renalct/png_io.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"

namespace renalct {

inline constexpr std::string_view kTemplateVersion = "v1";

enum class PromptKind { sentence_extraction, feature_extraction, report_generation };

inline std::string_view to_string(PromptKind kind) {
    switch (kind) {
    case PromptKind::sentence_extraction: return "sentence_extraction";
    case PromptKind::feature_extraction: return "feature_extraction";
    case PromptKind::report_generation: return "report_generation";
    }
    return "";
}

enum class Modality { feature_only, image_only, both };

template <> struct EnumTokens<Modality> {
    static constexpr std::string_view name = "modality";
    static constexpr std::array<std::pair<Modality, std::string_view>, 3> values{{
        {Modality::feature_only, "feature_only"},
        {Modality::image_only, "image_only"},
        {Modality::both, "both"},
    }};
};

struct RenderedPrompt {
    PromptKind kind = PromptKind::report_generation;
    std::string system_text;
    std::string user_text;
    std::optional<std::string> image_attachment; // data URI
    std::string template_version{kTemplateVersion};

    bool operator==(const RenderedPrompt &) const = default;
};

namespace templates {

inline constexpr std::string_view kSentenceExtraction =
    R"(Task: Identify and extract kidney/renal-related text snippets from a radiology CT report while excluding adrenal-related content.

1. Analyze the Report Structure:
Common sections include:
- HISTORY
- EXAM
- PRIOR STUDY
- FINDINGS
- (Other possible sections)

2. Identify Renal-Relevant Terms:
- Include: kidney, renal, nephro-, ureter, cyst, calculi, stone, hydronephrosis, parenchyma, cortex, medulla, atrophy, mass, tumor, lesion
- Exclude: adrenal-related terms (e.g., adrenal, suprarenal)

3. Extract and Format Results:
For each section, output:
- Direct quotes of renal-relevant snippets, or
- "none" if no renal terms are found

Output Template:
{
  "renal_extracts": {
    "HISTORY": extracted snippet or "none",
    "EXAM": extracted snippet or "none",
    "PRIOR STUDY": extracted snippet or "none",
    "FINDINGS": extracted snippet or "none"
  }
}
)";

inline constexpr std::string_view kFeatureExtraction =
    R"(Task: Identify and extract kidney/renal-related abnormality information from a radiology CT report. Focus on lesions, masses, cysts, and tumors; exclude kidney stones and hydronephrosis.

Instructions:
- Detect all relevant abnormalities (lesion, mass, cyst, tumor).
- If no abnormality is found, return {"Abnormality": false}.
- Otherwise, return {"Abnormality": true} with extracted fields.

Fields to Extract:
- Location: Position (left/right)
- Size: Raw size string and standardized size in cm
- Characteristics: Exophytic, attenuation, enhancement
- Classification: Boolean flags for Lesion, Cyst, Mass, Tumor
- Raw Fields: Verbatim report text (prefixed with Raw_)

Missing Values: Use "unknown" for any unspecified field.

Example Output Format:
{
 "Abnormality": true,
 "Abnormality_Info": [
   {
     "Position": "left",
     "Raw_Size": "3.2 * 2.8 cm",
     "Size_cm": 3.2,
     "Exophytic": "exophytic",
     "Attenuation": "Hyperattenuating",
     "Enhancement": "enhancement",
     "Lesion": true,
     "Cyst": true,
     "Mass": true,
     "Tumor": false,
   },
 ]
}

Classification Rules:
Use domain-informed heuristics such as:
- "denser than water" -> Hyperattenuating
- "complex cystic mass" -> Cyst: true, Mass: true
- Any mention suggestive of RCC (e.g., “suspicious for RCC”) -> Tumor: true
)";

inline constexpr std::string_view kGenerationSystem =
    "This system generates CT radiology reports specifically for the diagnosis of renal "
    "abnormalities (lesion, cyst, mass, tumor).";

inline constexpr std::string_view kGenerationIntroBoth =
    "You will be provided with a renal CT slice image and a set of imaging features. Analyze "
    "the image based on the given features and generate a comprehensive radiology report.";

inline constexpr std::string_view kGenerationIntroFeatures =
    "You will be provided with a set of imaging features from a renal CT slice. Based on the "
    "given features, generate a comprehensive radiology report.";

inline constexpr std::string_view kGenerationIntroImage =
    "You will be provided with a renal CT slice image. Analyze the image and generate a "
    "comprehensive radiology report.";

inline constexpr std::string_view kImagePlaceholder = "<image>";

/// Prefix of the line carrying the JSON-quoted input text in extraction prompts.
inline constexpr std::string_view kReportLinePrefix = "Report: ";

inline constexpr std::string_view kJsonRepairInstruction =
    "Your previous reply could not be parsed. Return only the JSON object described in the "
    "Example Output Format, with no other text.";

} // namespace templates

/// Field labels in rendering order.
inline constexpr std::array<std::pair<Feature, std::string_view>, 8> kFeatureLabels{{
    {Feature::position, "Position:"},
    {Feature::size, "Largest size for the lesion (cm):"},
    {Feature::exophytic, "Exophytic:"},
    {Feature::attenuation, "Attenuation:"},
    {Feature::enhancement, "Enhancement:"},
    {Feature::cyst, "Cyst:"},
    {Feature::mass, "Mass:"},
    {Feature::tumor, "Tumor:"},
}};

/// Up to two decimals, trailing zeros trimmed: 1.78, 1.5, 2.
inline std::string format_size_cm(double cm) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", cm);
    std::string s(buf);
    while (!s.empty() && s.back() == '0')
        s.pop_back();
    if (!s.empty() && s.back() == '.')
        s.pop_back();
    return s;
}

inline std::string render_feature_block(const FeatureSet &f) {
    std::string out = "Features:\n";
    for (const auto &[feature, label] : kFeatureLabels) {
        std::string value;
        if (feature == Feature::size)
            value = f.size_cm ? format_size_cm(*f.size_cm) : std::string(kUnknownToken);
        else
            value = categorical_value(f, feature);
        out += "- ";
        out += label;
        out += ' ';
        out += value;
        out += '\n';
    }
    return out;
}

/// Inverse of render_feature_block, used by the local stub backend.
inline std::optional<FeatureSet> parse_feature_block(std::string_view text) {
    const auto start = text.find("Features:\n");
    if (start == std::string_view::npos)
        return std::nullopt;
    FeatureSet f;
    std::size_t pos = start + 10;
    for (const auto &[feature, label] : kFeatureLabels) {
        const std::string prefix = "- " + std::string(label) + " ";
        if (text.compare(pos, prefix.size(), prefix) != 0)
            return std::nullopt;
        pos += prefix.size();
        const auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos)
            return std::nullopt;
        const std::string value(text.substr(pos, eol - pos));
        pos = eol + 1;
        try {
            if (feature == Feature::size) {
                if (value != kUnknownToken)
                    f.size_cm = std::stod(value);
            } else {
                set_categorical_value(f, feature, value);
            }
        } catch (const std::exception &) {
            return std::nullopt;
        }
    }
    return f;
}

/// 8-bit grayscale PNG of the normalized grid, as a base64 data URI.
inline std::string image_data_uri(const SliceImage &image) {
    return "data:image/png;base64," + png::base64_encode(png::encode_gray8(to_gray8(image.grid)));
}

inline RenderedPrompt render_generation_prompt(const std::optional<FeatureSet> &features,
                                               const SliceImage *image, Modality modality) {
    const bool wants_features = modality != Modality::image_only;
    const bool wants_image = modality != Modality::feature_only;
    if (wants_features && !features)
        fail(ErrorKind::data, std::string("modality ") + std::string(to_token(modality)) +
                                  " requires a feature set");
    if (wants_image && !image)
        fail(ErrorKind::data, std::string("modality ") + std::string(to_token(modality)) +
                                  " requires a slice image");

    RenderedPrompt p;
    p.kind = PromptKind::report_generation;
    p.system_text = std::string(templates::kGenerationSystem);
    std::string user;
    switch (modality) {
    case Modality::both: user = std::string(templates::kGenerationIntroBoth); break;
    case Modality::feature_only: user = std::string(templates::kGenerationIntroFeatures); break;
    case Modality::image_only: user = std::string(templates::kGenerationIntroImage); break;
    }
    user += "\n";
    if (wants_features) {
        user += "\n";
        user += render_feature_block(*features);
    }
    if (wants_image) {
        user += "\nImage (CT scan slice): ";
        user += templates::kImagePlaceholder;
        user += "\n";
        p.image_attachment = image_data_uri(*image);
    }
    p.user_text = std::move(user);
    return p;
}

namespace detail {

inline std::string quoted_input(std::string_view text) {
    return std::string(templates::kReportLinePrefix) + nlohmann::json(std::string(text)).dump() + "\n";
}

} // namespace detail

inline RenderedPrompt render_feature_extraction_prompt(std::string_view sentence) {
    if (sentence.find_first_not_of(" \t\r\n") == std::string_view::npos)
        fail(ErrorKind::data, "feature extraction needs a non-empty sentence");
    RenderedPrompt p;
    p.kind = PromptKind::feature_extraction;
    p.user_text = std::string(templates::kFeatureExtraction) + "\n" + detail::quoted_input(sentence);
    return p;
}

inline RenderedPrompt render_sentence_extraction_prompt(std::string_view report_text) {
    RenderedPrompt p;
    p.kind = PromptKind::sentence_extraction;
    p.user_text = std::string(templates::kSentenceExtraction) + "\n" + detail::quoted_input(report_text);
    return p;
}

/// Recovers the input text embedded by the extraction prompts.
inline std::optional<std::string> embedded_input(std::string_view user_text) {
    const auto pos = user_text.rfind(templates::kReportLinePrefix);
    if (pos == std::string_view::npos)
        return std::nullopt;
    auto line = user_text.substr(pos + templates::kReportLinePrefix.size());
    if (const auto eol = line.find('\n'); eol != std::string_view::npos)
        line = line.substr(0, eol);
    try {
        const auto j = nlohmann::json::parse(line);
        if (j.is_string())
            return j.get<std::string>();
    } catch (const nlohmann::json::exception &) {
    }
    return std::nullopt;
}

/// Stable fingerprint of every template constant, echoed into run directories.
inline nlohmann::ordered_json template_manifest() {
    auto hash = [](std::string_view s) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
        return std::string(buf);
    };
    std::string labels;
    for (const auto &[f, label] : kFeatureLabels)
        labels += std::string(label) + "\n";
    nlohmann::ordered_json j;
    j["template_version"] = kTemplateVersion;
    j["sentence_extraction"] = hash(templates::kSentenceExtraction);
    j["feature_extraction"] = hash(templates::kFeatureExtraction);
    j["generation_system"] = hash(templates::kGenerationSystem);
    j["generation_intro_both"] = hash(templates::kGenerationIntroBoth);
    j["generation_intro_features"] = hash(templates::kGenerationIntroFeatures);
    j["generation_intro_image"] = hash(templates::kGenerationIntroImage);
    j["feature_labels"] = hash(labels);
    j["json_repair"] = hash(templates::kJsonRepairInstruction);
    return j;
}

} // namespace renalct
