#pragma once

// Deterministic report text for the local stub backend. The grammar is fixed
// so the rule-based parser can invert it exactly:
//
//   There is a {size} cm {exophytic} {attenuation} lesion in the {position}
//   kidney demonstrating {enhancement}, consistent with a {vocabulary}.
//
// Unknown fields drop their clause; an empty record gets a fixed sentence.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <span>
#include <vector>

#include "renalct/prompt.hpp"
#include "renalct/rng.hpp"
#include "renalct/schema.hpp"

namespace renalct {

inline constexpr std::string_view kNoFindingsSentence = "No renal abnormality features specified.";

namespace detail {

inline std::string_view attenuation_word(Attenuation a) {
    switch (a) {
    case Attenuation::hypoattenuating: return "hypoattenuating";
    case Attenuation::hyperattenuating: return "hyperattenuating";
    case Attenuation::isoattenuating: return "isoattenuating";
    case Attenuation::unknown: break;
    }
    return "";
}

inline std::string_view finding_vocabulary(bool cyst, bool mass, bool tumor) {
    if (cyst && mass && tumor) return "complex cystic mass suspicious for tumor";
    if (cyst && mass) return "complex cystic mass";
    if (cyst && tumor) return "cystic tumor";
    if (mass && tumor) return "mass suspicious for tumor";
    if (cyst) return "cyst";
    if (mass) return "mass";
    if (tumor) return "tumor";
    return "";
}

inline bool starts_with_vowel(std::string_view word) {
    return !word.empty() && std::string_view("aeiou").find(word.front()) != std::string_view::npos;
}

} // namespace detail

inline std::string stub_generate(const FeatureSet &f) {
    const bool empty = f.position == Position::unknown && !f.size_cm &&
                       f.exophytic == GrowthPattern::unknown &&
                       f.attenuation == Attenuation::unknown &&
                       f.enhancement == Enhancement::unknown && !f.cyst && !f.mass && !f.tumor;
    if (empty)
        return std::string(kNoFindingsSentence);

    std::string noun_phrase;
    auto add = [&](std::string_view word) {
        if (!noun_phrase.empty())
            noun_phrase += ' ';
        noun_phrase += word;
    };
    if (f.size_cm)
        add(format_size_cm(*f.size_cm) + " cm");
    if (f.exophytic != GrowthPattern::unknown)
        add(to_token(f.exophytic));
    if (f.attenuation != Attenuation::unknown)
        add(detail::attenuation_word(f.attenuation));
    add("lesion");

    std::string text = "There is ";
    text += detail::starts_with_vowel(noun_phrase) ? "an " : "a ";
    text += noun_phrase;
    if (f.position != Position::unknown) {
        text += " in the ";
        text += to_token(f.position);
        text += " kidney";
    }
    if (f.enhancement == Enhancement::enhancement)
        text += " demonstrating enhancement";
    else if (f.enhancement == Enhancement::non_enhancement)
        text += " demonstrating no enhancement";
    const auto vocab = detail::finding_vocabulary(f.cyst, f.mass, f.tumor);
    if (!vocab.empty()) {
        text += ", consistent with ";
        text += detail::starts_with_vowel(vocab) ? "an " : "a ";
        text += vocab;
    }
    text += '.';
    return text;
}

/// Corrupts each of the eight fields independently with probability
/// noise_rate, then renders with stub_generate. Every field consumes the same
/// draws whatever the rate, so for a fixed seed the corrupted set only grows
/// as noise_rate increases. A corrupted known value is flipped to another value
/// or dropped; a corrupted unknown/false value gets a value injected.
inline std::string noisy_stub_generate(const FeatureSet &f, double noise_rate, std::uint64_t seed) {
    Rng rng(seed);
    struct Draw {
        double gate;
        double choice;
        double value;
    };
    std::array<Draw, 8> draws{};
    for (auto &d : draws)
        d = {rng.uniform(), rng.uniform(), rng.uniform()};

    auto hit = [&](std::size_t i) { return draws[i].gate < noise_rate; };
    auto pick = [](double u, std::size_t n) {
        return std::min(static_cast<std::size_t>(u * static_cast<double>(n)), n - 1);
    };

    // Replaces a known enum value by a different known one, or by unknown.
    auto corrupt_enum = [&]<class E>(E value, E unknown, std::span<const E> known, const Draw &d) {
        if (value == unknown)
            return known[pick(d.value, known.size())];
        if (d.choice < 0.5)
            return unknown;
        std::vector<E> others;
        for (E k : known)
            if (k != value)
                others.push_back(k);
        return others[pick(d.value, others.size())];
    };

    FeatureSet g = f;
    if (hit(0)) {
        static constexpr std::array<Position, 2> known{Position::left, Position::right};
        g.position = corrupt_enum(f.position, Position::unknown, std::span<const Position>(known), draws[0]);
    }
    if (hit(1)) {
        if (f.size_cm && draws[1].choice < 0.5) {
            g.size_cm.reset();
        } else {
            // A different value on the 0.01 cm grid.
            const double base = f.size_cm.value_or(0.0);
            double v = std::round((0.5 + 4.5 * draws[1].value) * 100.0) / 100.0;
            if (std::abs(v - base) < 0.005)
                v = std::round((v + 0.37) * 100.0) / 100.0;
            g.size_cm = v;
        }
        g.raw_size = g.size_cm ? std::optional<std::string>(format_size_cm(*g.size_cm) + " cm")
                               : std::nullopt;
        g.size_unparseable = false;
    }
    if (hit(2)) {
        static constexpr std::array<GrowthPattern, 2> known{GrowthPattern::exophytic,
                                                            GrowthPattern::endophytic};
        g.exophytic = corrupt_enum(f.exophytic, GrowthPattern::unknown,
                                   std::span<const GrowthPattern>(known), draws[2]);
    }
    if (hit(3)) {
        static constexpr std::array<Attenuation, 3> known{
            Attenuation::hypoattenuating, Attenuation::hyperattenuating, Attenuation::isoattenuating};
        g.attenuation = corrupt_enum(f.attenuation, Attenuation::unknown,
                                     std::span<const Attenuation>(known), draws[3]);
    }
    if (hit(4)) {
        static constexpr std::array<Enhancement, 2> known{Enhancement::enhancement,
                                                          Enhancement::non_enhancement};
        g.enhancement = corrupt_enum(f.enhancement, Enhancement::unknown,
                                     std::span<const Enhancement>(known), draws[4]);
    }
    if (hit(5))
        g.cyst = !f.cyst;
    if (hit(6))
        g.mass = !f.mass;
    if (hit(7))
        g.tumor = !f.tumor;
    return stub_generate(g);
}

} // namespace renalct
