#pragma once

// Rule-based recovery of a FeatureSet from free report text: a hand-written
// tokenizer, sentence/clause segmentation, a fixed vocabulary and clause-scoped
// negation. Only the first abnormality block is read.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "renalct/schema.hpp"

namespace renalct {

enum class ExtractionMethod { rule, llm };

inline std::string_view to_string(ExtractionMethod m) { return m == ExtractionMethod::rule ? "rule" : "llm"; }

struct ExtractionResult {
    FeatureSet features;
    ExtractionMethod method = ExtractionMethod::rule;
    std::vector<std::string> notes;
    std::vector<std::string> unparsed_spans;
    std::optional<std::string> raw_model_json; // llm only
};

namespace lex {

enum class TokenKind { word, number, symbol };

struct Token {
    TokenKind kind;
    std::string text; // lowercase
    std::size_t begin; // byte offsets into the source
    std::size_t end;
};

/// Words are letter runs, numbers are digit runs with at most one inner '.',
/// everything else is a one-character symbol. Letter/digit boundaries always
/// split ("3.2cm" -> 3.2, cm). The multiplication sign is mapped to 'x'.
inline std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    auto is_alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
    auto is_digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
    std::size_t i = 0;
    while (i < s.size()) {
        const char c = s[i];
        if (is_alpha(c)) {
            std::size_t j = i;
            std::string w;
            while (j < s.size() && is_alpha(s[j]))
                w += static_cast<char>(std::tolower(static_cast<unsigned char>(s[j++])));
            out.push_back({TokenKind::word, std::move(w), i, j});
            i = j;
        } else if (is_digit(c)) {
            std::size_t j = i;
            while (j < s.size() && is_digit(s[j]))
                ++j;
            if (j + 1 < s.size() && s[j] == '.' && is_digit(s[j + 1])) {
                ++j;
                while (j < s.size() && is_digit(s[j]))
                    ++j;
            }
            out.push_back({TokenKind::number, std::string(s.substr(i, j - i)), i, j});
            i = j;
        } else if (static_cast<unsigned char>(c) == 0xC3 && i + 1 < s.size() &&
                   static_cast<unsigned char>(s[i + 1]) == 0x97) {
            out.push_back({TokenKind::word, "x", i, i + 2});
            i += 2;
        } else if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else {
            out.push_back({TokenKind::symbol, std::string(1, c), i, i + 1});
            ++i;
        }
    }
    return out;
}

inline bool is_sentence_end(const Token &t) {
    return t.kind == TokenKind::symbol && (t.text == "." || t.text == "!" || t.text == "?");
}

inline bool is_clause_break(const Token &t) {
    return t.kind == TokenKind::symbol && (t.text == "," || t.text == ";" || t.text == ":");
}

using Span = std::vector<Token>;

inline std::vector<Span> split_sentences(const std::vector<Token> &tokens) {
    std::vector<Span> out(1);
    for (const auto &t : tokens) {
        if (is_sentence_end(t)) {
            if (!out.back().empty())
                out.emplace_back();
            continue;
        }
        out.back().push_back(t);
    }
    if (out.back().empty())
        out.pop_back();
    return out;
}

inline std::vector<Span> split_clauses(const Span &sentence) {
    std::vector<Span> out(1);
    for (const auto &t : sentence) {
        if (is_clause_break(t)) {
            if (!out.back().empty())
                out.emplace_back();
            continue;
        }
        out.back().push_back(t);
    }
    if (out.back().empty())
        out.pop_back();
    return out;
}

inline bool is_negation_cue(std::string_view w) {
    return w == "no" || w == "not" || w == "without" || w == "non" || w == "absent" ||
           w == "negative" || w == "neither" || w == "nor";
}

} // namespace lex

namespace detail {

inline bool is_unit(std::string_view w) { return w == "cm" || w == "mm"; }

inline bool is_dimension_separator(const lex::Token &t) {
    return (t.kind == lex::TokenKind::word && (t.text == "x" || t.text == "by")) ||
           (t.kind == lex::TokenKind::symbol && t.text == "*");
}

/// Moves the decimal point one place left, so "14" -> "1.4" exactly.
inline std::string shift_decimal_left(std::string digits) {
    auto dot = digits.find('.');
    if (dot == std::string::npos) {
        digits += ".0";
        dot = digits.size() - 2;
    }
    std::string whole = digits.substr(0, dot);
    std::string frac = digits.substr(dot + 1);
    if (whole.size() <= 1)
        whole.insert(0, 2 - whole.size(), '0');
    frac.insert(frac.begin(), whole.back());
    whole.pop_back();
    return whole + "." + frac;
}

} // namespace detail

/// Largest value of a size string in cm; mm converted, "subcentimeter" -> 0.5.
/// Returns nullopt when nothing parses.
inline std::optional<double> standardize_size(std::string_view raw) {
    const auto tokens = lex::tokenize(raw);
    for (const auto &t : tokens)
        if (t.kind == lex::TokenKind::word && (t.text == "subcentimeter" || t.text == "subcentimetre"))
            return 0.5;
    // Sub-centimeter written as two words ("sub centimeter", "sub-centimeter").
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i)
        if (tokens[i].text == "sub" &&
            (tokens[i + 1].text == "centimeter" || tokens[i + 1].text == "centimetre" ||
             (tokens[i + 1].text == "-" && i + 2 < tokens.size() &&
              tokens[i + 2].text.starts_with("centimet"))))
            return 0.5;

    std::optional<double> best;
    std::vector<std::string> group;
    auto flush = [&](std::string_view unit) {
        for (const auto &n : group) {
            const std::string text = unit == "mm" ? detail::shift_decimal_left(n) : n;
            const double v = std::stod(text);
            if (v > 0.0 && (!best || v > *best))
                best = v;
        }
        group.clear();
    };
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto &t = tokens[i];
        if (t.kind == lex::TokenKind::number) {
            group.push_back(t.text);
        } else if (t.kind == lex::TokenKind::word && detail::is_unit(t.text)) {
            if (!group.empty())
                flush(t.text);
        } else if (!detail::is_dimension_separator(t)) {
            group.clear();
        }
    }
    return best;
}

namespace detail {

struct SizeSpan {
    std::size_t begin, end; // byte range in the source text
    std::size_t first_token; // index within the sentence
    bool largest_cue = false;
};

/// Finds "N [x N]* unit" and "subcentimeter" spans in a sentence.
inline std::vector<SizeSpan> find_size_spans(const lex::Span &s) {
    std::vector<SizeSpan> out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i].kind == lex::TokenKind::word &&
            (s[i].text == "subcentimeter" || s[i].text == "subcentimetre")) {
            out.push_back({s[i].begin, s[i].end, i});
            continue;
        }
        if (s[i].kind != lex::TokenKind::number)
            continue;
        std::size_t j = i + 1;
        while (j + 1 < s.size() && is_dimension_separator(s[j]) && s[j + 1].kind == lex::TokenKind::number)
            j += 2;
        if (j < s.size() && s[j].kind == lex::TokenKind::word && is_unit(s[j].text)) {
            out.push_back({s[i].begin, s[j].end, i});
            i = j;
        }
    }
    for (auto &span : out) {
        // "measuring up to", "largest/maximal/maximum diameter" within the
        // four tokens before the span mark an explicit largest diameter.
        const std::size_t lo = span.first_token >= 4 ? span.first_token - 4 : 0;
        for (std::size_t k = lo; k < span.first_token; ++k) {
            const auto &w = s[k].text;
            if (w == "largest" || w == "maximal" || w == "maximum" || w == "greatest" ||
                (w == "up" && k + 1 < span.first_token && s[k + 1].text == "to"))
                span.largest_cue = true;
        }
    }
    return out;
}

enum class Keyword {
    none, left, right, kidney, exophytic, endophytic, hypo, hyper, iso, enhancement,
    non_enhancement, cyst, mass, tumor, lesion
};

inline Keyword classify_word(const lex::Span &clause, std::size_t i) {
    const auto &w = clause[i].text;
    auto next_is = [&](std::string_view a) { return i + 1 < clause.size() && clause[i + 1].text == a; };
    auto next2_is = [&](std::string_view a) {
        return i + 2 < clause.size() && clause[i + 1].text == "-" && clause[i + 2].text == a;
    };
    if (w == "left") return Keyword::left;
    if (w == "right") return Keyword::right;
    if (w == "kidney" || w == "kidneys" || w == "renal") return Keyword::kidney;
    if (w == "exophytic") return Keyword::exophytic;
    if (w == "endophytic") return Keyword::endophytic;
    if (w == "hypoattenuating" || w == "hypoattenuation" || w == "hypodense" || w == "hypodensity")
        return Keyword::hypo;
    if (w == "hyperattenuating" || w == "hyperattenuation" || w == "hyperdense" || w == "hyperdensity")
        return Keyword::hyper;
    if (w == "isoattenuating" || w == "isoattenuation" || w == "isodense") return Keyword::iso;
    if (w == "hypo" && (next_is("attenuating") || next2_is("attenuating") || next2_is("dense")))
        return Keyword::hypo;
    if (w == "hyper" && (next_is("attenuating") || next2_is("attenuating") || next2_is("dense")))
        return Keyword::hyper;
    if (w == "iso" && (next_is("attenuating") || next2_is("attenuating") || next2_is("dense")))
        return Keyword::iso;
    // "denser than water" reads as hyperattenuating.
    if (w == "denser" && next_is("than") && i + 2 < clause.size() && clause[i + 2].text == "water")
        return Keyword::hyper;
    if (w == "nonenhancing" || w == "unenhancing") return Keyword::non_enhancement;
    if (w == "enhancement" || w == "enhancing" || w == "enhances" || w == "enhance" || w == "enhanced")
        return Keyword::enhancement;
    if (w == "cyst" || w == "cysts" || w == "cystic") return Keyword::cyst;
    if (w == "mass" || w == "masses") return Keyword::mass;
    if (w == "tumor" || w == "tumors" || w == "tumour" || w == "tumours" || w == "rcc" ||
        w == "neoplasm" || w == "neoplasms" || w == "carcinoma" || w == "malignancy" ||
        w == "malignant")
        return Keyword::tumor;
    if (w == "lesion" || w == "lesions") return Keyword::lesion;
    return Keyword::none;
}

inline bool is_finding(Keyword k) {
    return k == Keyword::cyst || k == Keyword::mass || k == Keyword::tumor || k == Keyword::lesion ||
           k == Keyword::exophytic || k == Keyword::endophytic || k == Keyword::hypo ||
           k == Keyword::hyper || k == Keyword::iso;
}

inline bool sentence_has_finding(const lex::Span &s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i].kind == lex::TokenKind::word && is_finding(classify_word(s, i)))
            return true;
    return !find_size_spans(s).empty();
}

} // namespace detail

inline ExtractionResult parse_report_rule_based(std::string_view text) {
    ExtractionResult result;
    result.method = ExtractionMethod::rule;
    FeatureSet &f = result.features;

    const auto sentences = lex::split_sentences(lex::tokenize(text));

    // The first abnormality block starts at the first sentence carrying a
    // finding and ends before a later sentence that introduces a second
    // measurement (a new lesion).
    std::size_t first = sentences.size();
    for (std::size_t i = 0; i < sentences.size(); ++i)
        if (detail::sentence_has_finding(sentences[i])) {
            first = i;
            break;
        }
    if (first == sentences.size())
        return result;
    std::size_t last = first + 1;
    bool have_measure = !detail::find_size_spans(sentences[first]).empty();
    for (; last < sentences.size(); ++last) {
        const bool measures = !detail::find_size_spans(sentences[last]).empty();
        if (measures && have_measure)
            break;
        have_measure = have_measure || measures;
    }
    if (last < sentences.size())
        result.notes.push_back("ignored " + std::to_string(sentences.size() - last) +
                               " sentence(s) after the first abnormality block");

    // Position may sit in a preceding heading such as "Left kidney:", so the
    // sentence that opens the block is searched from its start.
    std::optional<detail::SizeSpan> size;
    bool cyst_pos = false, mass_pos = false, tumor_pos = false;
    for (std::size_t si = first; si < last; ++si) {
        const auto &sentence = sentences[si];
        for (const auto &span : detail::find_size_spans(sentence))
            if (!size || (span.largest_cue && !size->largest_cue))
                size = span;

        for (const auto &clause : lex::split_clauses(sentence)) {
            bool negated = false;
            for (std::size_t i = 0; i < clause.size(); ++i) {
                if (clause[i].kind != lex::TokenKind::word)
                    continue;
                if (lex::is_negation_cue(clause[i].text)) {
                    negated = true;
                    continue;
                }
                using detail::Keyword;
                const Keyword k = detail::classify_word(clause, i);
                switch (k) {
                case Keyword::left:
                case Keyword::right: {
                    const bool kidney_follows = i + 1 < clause.size() &&
                                                detail::classify_word(clause, i + 1) == Keyword::kidney;
                    if (kidney_follows && f.position == Position::unknown)
                        f.position = k == Keyword::left ? Position::left : Position::right;
                    break;
                }
                case Keyword::exophytic:
                    if (f.exophytic == GrowthPattern::unknown)
                        f.exophytic = GrowthPattern::exophytic;
                    break;
                case Keyword::endophytic:
                    if (f.exophytic == GrowthPattern::unknown)
                        f.exophytic = GrowthPattern::endophytic;
                    break;
                case Keyword::hypo:
                case Keyword::hyper:
                case Keyword::iso:
                    if (f.attenuation == Attenuation::unknown)
                        f.attenuation = k == Keyword::hypo    ? Attenuation::hypoattenuating
                                        : k == Keyword::hyper ? Attenuation::hyperattenuating
                                                              : Attenuation::isoattenuating;
                    break;
                case Keyword::enhancement:
                case Keyword::non_enhancement:
                    if (f.enhancement == Enhancement::unknown)
                        f.enhancement = (k == Keyword::non_enhancement || negated)
                                            ? Enhancement::non_enhancement
                                            : Enhancement::enhancement;
                    break;
                case Keyword::cyst: cyst_pos = cyst_pos || !negated; break;
                case Keyword::mass: mass_pos = mass_pos || !negated; break;
                case Keyword::tumor: tumor_pos = tumor_pos || !negated; break;
                default: break;
                }
            }
        }
    }
    f.cyst = cyst_pos;
    f.mass = mass_pos;
    f.tumor = tumor_pos;

    if (size) {
        f.raw_size = std::string(text.substr(size->begin, size->end - size->begin));
        f.size_cm = standardize_size(*f.raw_size);
        if (!f.size_cm) {
            f.size_unparseable = true;
            result.unparsed_spans.push_back(*f.raw_size);
        }
    }
    return result;
}

/// Prompt-2 style JSON for a feature set, the shape an extraction model returns.
inline nlohmann::ordered_json feature_set_to_extraction_json(const FeatureSet &f) {
    const bool abnormal = !(f.position == Position::unknown && !f.size_cm && !f.raw_size &&
                            f.exophytic == GrowthPattern::unknown &&
                            f.attenuation == Attenuation::unknown &&
                            f.enhancement == Enhancement::unknown && !f.cyst && !f.mass && !f.tumor);
    nlohmann::ordered_json j;
    j["Abnormality"] = abnormal;
    if (!abnormal)
        return j;
    nlohmann::ordered_json info;
    info["Position"] = to_token(f.position);
    info["Raw_Size"] = f.raw_size ? nlohmann::ordered_json(*f.raw_size) : nlohmann::ordered_json("unknown");
    info["Size_cm"] = f.size_cm ? nlohmann::ordered_json(*f.size_cm) : nlohmann::ordered_json("unknown");
    info["Exophytic"] = to_token(f.exophytic);
    info["Attenuation"] = to_token(f.attenuation);
    info["Enhancement"] = to_token(f.enhancement);
    info["Lesion"] = true;
    info["Cyst"] = f.cyst;
    info["Mass"] = f.mass;
    info["Tumor"] = f.tumor;
    j["Abnormality_Info"] = nlohmann::ordered_json::array({info});
    return j;
}

} // namespace renalct
