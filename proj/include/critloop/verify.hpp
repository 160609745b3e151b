#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace critloop::verify {

enum class AnswerKind { Rational, Decimal, Symbolic };

// Normal form of an extracted answer. Rationals are exact (lowest terms,
// positive denominator); Decimal holds values only reachable through
// scientific notation; everything else stays Symbolic with whitespace
// collapsed. normalized_text is always populated.
struct CanonicalAnswer {
    AnswerKind kind = AnswerKind::Symbolic;
    std::int64_t num = 0;
    std::int64_t den = 1;
    double decimal = 0.0;
    std::string normalized_text;
};

// Applies, in order: trim; strip $, \left, \right, \, and \!; rewrite
// \frac{a}{b} / \dfrac{a}{b} to a/b; then parse integers, fractions, and
// finite decimals into exact rationals. Unparseable math degrades to
// Symbolic, never fails. Integer literals too wide for 64-bit stay Symbolic
// so near-miss huge values cannot compare equal.
CanonicalAnswer normalize_answer(std::string_view raw);

enum class Verdict { CorrectAnswer, WrongAnswer, Unverifiable };

// Rational vs Rational compares exactly; any pairing involving a Decimal
// compares numerically within relative tolerance; Symbolic compares by
// normalized text. Mixed Rational/Symbolic pairings are WrongAnswer.
Verdict answers_equivalent(const CanonicalAnswer& candidate, const CanonicalAnswer& truth,
                           double rel_tol = 1e-6);

// Scoring entry point for extracted answers: a missing candidate (no boxed
// answer upstream) or empty ground truth is Unverifiable.
Verdict score_answer(const std::optional<std::string>& candidate, std::string_view ground_truth,
                     double rel_tol = 1e-6);

const char* verdict_name(Verdict v);

}  // namespace critloop::verify
