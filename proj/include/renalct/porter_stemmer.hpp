#pragma once

// The original Porter (1980) suffix-stripping stemmer, without later
// extensions. Rule tables are applied first-match: once a suffix matches, its
// condition decides and no shorter suffix in the same step is tried.

#include <string>
#include <string_view>
#include <vector>

namespace renalct::porter {

namespace detail {

inline bool is_vowel_letter(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

/// 'y' is a consonant at the start of a word or after a vowel.
inline std::vector<bool> consonant_flags(std::string_view w) {
    std::vector<bool> flags(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (is_vowel_letter(w[i]))
            flags[i] = false;
        else if (w[i] == 'y')
            flags[i] = i == 0 ? true : !flags[i - 1];
        else
            flags[i] = true;
    }
    return flags;
}

/// m in [C](VC)^m[V].
inline int measure(std::string_view stem) {
    const auto flags = consonant_flags(stem);
    int m = 0;
    for (std::size_t i = 1; i < flags.size(); ++i)
        if (!flags[i - 1] && flags[i])
            ++m;
    return m;
}

inline bool contains_vowel(std::string_view stem) {
    for (bool c : consonant_flags(stem))
        if (!c)
            return true;
    return false;
}

inline bool ends_double_consonant(std::string_view w) {
    return w.size() >= 2 && w[w.size() - 1] == w[w.size() - 2] && consonant_flags(w).back();
}

/// *o: ends consonant-vowel-consonant, the last not w, x or y.
inline bool ends_cvc(std::string_view w) {
    if (w.size() < 3)
        return false;
    const auto f = consonant_flags(w);
    const auto n = w.size();
    const char last = w[n - 1];
    return f[n - 3] && !f[n - 2] && f[n - 1] && last != 'w' && last != 'x' && last != 'y';
}

enum class Cond { none, m_gt_0, m_gt_1, m_gt_1_st };

struct Rule {
    std::string_view suffix;
    std::string_view replacement;
    Cond cond;
};

inline bool holds(Cond c, std::string_view stem) {
    switch (c) {
    case Cond::none: return true;
    case Cond::m_gt_0: return measure(stem) > 0;
    case Cond::m_gt_1: return measure(stem) > 1;
    case Cond::m_gt_1_st:
        return measure(stem) > 1 && !stem.empty() && (stem.back() == 's' || stem.back() == 't');
    }
    return false;
}

template <std::size_t N> std::string apply_rules(const std::string &word, const Rule (&rules)[N]) {
    for (const auto &r : rules) {
        if (word.size() >= r.suffix.size() &&
            std::string_view(word).substr(word.size() - r.suffix.size()) == r.suffix) {
            const std::string stem = word.substr(0, word.size() - r.suffix.size());
            return holds(r.cond, stem) ? stem + std::string(r.replacement) : word;
        }
    }
    return word;
}

inline bool ends_with(std::string_view w, std::string_view s) {
    return w.size() >= s.size() && w.substr(w.size() - s.size()) == s;
}

inline std::string step1a(const std::string &w) {
    static constexpr Rule rules[] = {
        {"sses", "ss", Cond::none}, {"ies", "i", Cond::none}, {"ss", "ss", Cond::none}, {"s", "", Cond::none}};
    return apply_rules(w, rules);
}

inline std::string step1b(const std::string &w) {
    if (ends_with(w, "eed")) {
        const std::string stem = w.substr(0, w.size() - 3);
        return measure(stem) > 0 ? stem + "ee" : w;
    }
    std::string stem;
    bool removed = false;
    for (std::string_view suffix : {std::string_view("ed"), std::string_view("ing")}) {
        if (ends_with(w, suffix)) {
            stem = w.substr(0, w.size() - suffix.size());
            if (contains_vowel(stem)) {
                removed = true;
                break;
            }
        }
    }
    if (!removed)
        return w;
    if (ends_with(stem, "at")) return stem + "e";
    if (ends_with(stem, "bl")) return stem + "e";
    if (ends_with(stem, "iz")) return stem + "e";
    if (ends_double_consonant(stem)) {
        const char last = stem.back();
        if (last != 'l' && last != 's' && last != 'z')
            stem.pop_back();
        return stem;
    }
    if (measure(stem) == 1 && ends_cvc(stem))
        return stem + "e";
    return stem;
}

inline std::string step1c(const std::string &w) {
    if (ends_with(w, "y")) {
        const std::string stem = w.substr(0, w.size() - 1);
        return contains_vowel(stem) ? stem + "i" : w;
    }
    return w;
}

inline std::string step2(const std::string &w) {
    static constexpr Rule rules[] = {
        {"ational", "ate", Cond::m_gt_0}, {"tional", "tion", Cond::m_gt_0},
        {"enci", "ence", Cond::m_gt_0},   {"anci", "ance", Cond::m_gt_0},
        {"izer", "ize", Cond::m_gt_0},    {"abli", "able", Cond::m_gt_0},
        {"alli", "al", Cond::m_gt_0},     {"entli", "ent", Cond::m_gt_0},
        {"eli", "e", Cond::m_gt_0},       {"ousli", "ous", Cond::m_gt_0},
        {"ization", "ize", Cond::m_gt_0}, {"ation", "ate", Cond::m_gt_0},
        {"ator", "ate", Cond::m_gt_0},    {"alism", "al", Cond::m_gt_0},
        {"iveness", "ive", Cond::m_gt_0}, {"fulness", "ful", Cond::m_gt_0},
        {"ousness", "ous", Cond::m_gt_0}, {"aliti", "al", Cond::m_gt_0},
        {"iviti", "ive", Cond::m_gt_0},   {"biliti", "ble", Cond::m_gt_0},
    };
    return apply_rules(w, rules);
}

inline std::string step3(const std::string &w) {
    static constexpr Rule rules[] = {
        {"icate", "ic", Cond::m_gt_0}, {"ative", "", Cond::m_gt_0}, {"alize", "al", Cond::m_gt_0},
        {"iciti", "ic", Cond::m_gt_0}, {"ical", "ic", Cond::m_gt_0}, {"ful", "", Cond::m_gt_0},
        {"ness", "", Cond::m_gt_0},
    };
    return apply_rules(w, rules);
}

inline std::string step4(const std::string &w) {
    static constexpr Rule rules[] = {
        {"al", "", Cond::m_gt_1},    {"ance", "", Cond::m_gt_1}, {"ence", "", Cond::m_gt_1},
        {"er", "", Cond::m_gt_1},    {"ic", "", Cond::m_gt_1},   {"able", "", Cond::m_gt_1},
        {"ible", "", Cond::m_gt_1},  {"ant", "", Cond::m_gt_1},  {"ement", "", Cond::m_gt_1},
        {"ment", "", Cond::m_gt_1},  {"ent", "", Cond::m_gt_1},  {"ion", "", Cond::m_gt_1_st},
        {"ou", "", Cond::m_gt_1},    {"ism", "", Cond::m_gt_1},  {"ate", "", Cond::m_gt_1},
        {"iti", "", Cond::m_gt_1},   {"ous", "", Cond::m_gt_1},  {"ive", "", Cond::m_gt_1},
        {"ize", "", Cond::m_gt_1},
    };
    return apply_rules(w, rules);
}

inline std::string step5a(const std::string &w) {
    if (ends_with(w, "e")) {
        const std::string stem = w.substr(0, w.size() - 1);
        const int m = measure(stem);
        if (m > 1 || (m == 1 && !ends_cvc(stem)))
            return stem;
    }
    return w;
}

inline std::string step5b(const std::string &w) {
    if (ends_with(w, "ll") && measure(std::string_view(w).substr(0, w.size() - 1)) > 1)
        return w.substr(0, w.size() - 1);
    return w;
}

} // namespace detail

/// Stems a lowercase alphabetic word.
inline std::string stem(std::string_view word) {
    std::string w(word);
    w = detail::step1a(w);
    w = detail::step1b(w);
    w = detail::step1c(w);
    w = detail::step2(w);
    w = detail::step3(w);
    w = detail::step4(w);
    w = detail::step5a(w);
    w = detail::step5b(w);
    return w;
}

} // namespace renalct::porter
