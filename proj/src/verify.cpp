#include "critloop/verify.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <vector>

namespace critloop::verify {

namespace {

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// Removes every occurrence of a token. Tokens here are cosmetic LaTeX that
// never changes the value.
void strip_all(std::string& s, std::string_view token) {
    size_t pos = 0;
    while ((pos = s.find(token, pos)) != std::string::npos) s.erase(pos, token.size());
}

// Finds the brace-balanced argument starting at s[open] == '{'. Returns the
// index one past the matching close brace, or npos.
size_t match_brace(const std::string& s, size_t open) {
    int depth = 0;
    for (size_t i = open; i < s.size(); ++i) {
        if (s[i] == '{')
            ++depth;
        else if (s[i] == '}') {
            --depth;
            if (depth == 0) return i + 1;
        }
    }
    return std::string::npos;
}

// Rewrites \frac{a}{b} and \dfrac{a}{b} to a/b, innermost-first via repeated
// passes until no command remains or a pass makes no progress.
void rewrite_fractions(std::string& s) {
    for (;;) {
        size_t pos = s.find("\\frac");
        size_t dpos = s.find("\\dfrac");
        size_t cmd_len = 5;
        if (dpos != std::string::npos && (pos == std::string::npos || dpos < pos)) {
            pos = dpos;
            cmd_len = 6;
        }
        if (pos == std::string::npos) return;
        size_t a_open = pos + cmd_len;
        if (a_open >= s.size() || s[a_open] != '{') return;
        size_t a_end = match_brace(s, a_open);
        if (a_end == std::string::npos || a_end >= s.size() || s[a_end] != '{') return;
        size_t b_end = match_brace(s, a_end);
        if (b_end == std::string::npos) return;
        std::string a = s.substr(a_open + 1, a_end - a_open - 2);
        std::string b = s.substr(a_end + 1, b_end - a_end - 2);
        s.replace(pos, b_end - pos, a + "/" + b);
    }
}

std::string collapse_ws(const std::string& s) {
    std::string out;
    bool in_ws = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_ws = true;
            continue;
        }
        if (in_ws && !out.empty()) out.push_back(' ');
        in_ws = false;
        out.push_back(c);
    }
    return out;
}

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

// Parses a decimal integer with optional sign into 64 bits. Leading zeros
// are accepted and ignored. Returns nullopt on overflow or junk.
std::optional<std::int64_t> parse_int(std::string_view s) {
    bool neg = false;
    if (!s.empty() && (s[0] == '+' || s[0] == '-')) {
        neg = s[0] == '-';
        s.remove_prefix(1);
    }
    if (!all_digits(s)) return std::nullopt;
    size_t k = 0;
    while (k + 1 < s.size() && s[k] == '0') ++k;
    s.remove_prefix(k);
    std::int64_t v = 0;
    for (char c : s) {
        int d = c - '0';
        if (v > (INT64_MAX - d) / 10) return std::nullopt;
        v = v * 10 + d;
    }
    return neg ? -v : v;
}

void reduce(std::int64_t& num, std::int64_t& den) {
    if (den < 0) {
        num = -num;
        den = -den;
    }
    std::int64_t g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
        num /= g;
        den /= g;
    }
}

std::optional<CanonicalAnswer> make_rational(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    reduce(num, den);
    CanonicalAnswer a;
    a.kind = AnswerKind::Rational;
    a.num = num;
    a.den = den;
    a.decimal = static_cast<double>(num) / static_cast<double>(den);
    a.normalized_text =
        den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
    return a;
}

// a.b as an exact rational: 3.25 -> 13/4. Fails on overflow, which sends
// the value to Symbolic rather than a rounded double.
std::optional<CanonicalAnswer> parse_decimal_exact(std::string_view s) {
    size_t dot = s.find('.');
    if (dot == std::string_view::npos) return std::nullopt;
    std::string_view ip = s.substr(0, dot);
    std::string_view fp = s.substr(dot + 1);
    bool neg = false;
    if (!ip.empty() && (ip[0] == '+' || ip[0] == '-')) {
        neg = ip[0] == '-';
        ip.remove_prefix(1);
    }
    if (fp.empty() || !all_digits(fp)) return std::nullopt;
    if (!ip.empty() && !all_digits(ip)) return std::nullopt;
    std::string digits = std::string(ip) + std::string(fp);
    auto num = parse_int(digits);
    if (!num) return std::nullopt;
    std::int64_t den = 1;
    for (size_t i = 0; i < fp.size(); ++i) {
        if (den > INT64_MAX / 10) return std::nullopt;
        den *= 10;
    }
    return make_rational(neg ? -*num : *num, den);
}

// 1.6e-5 and friends. Only reachable through an explicit exponent marker;
// plain decimals stay exact rationals.
std::optional<CanonicalAnswer> parse_scientific(const std::string& s) {
    size_t epos = s.find_first_of("eE");
    if (epos == std::string::npos || epos == 0 || epos + 1 >= s.size()) return std::nullopt;
    auto digits_ok = [](std::string_view part, bool allow_dot) {
        bool seen_dot = false, seen_digit = false;
        size_t i = 0;
        if (i < part.size() && (part[i] == '+' || part[i] == '-')) ++i;
        for (; i < part.size(); ++i) {
            if (part[i] == '.' && allow_dot && !seen_dot) {
                seen_dot = true;
                continue;
            }
            if (!std::isdigit(static_cast<unsigned char>(part[i]))) return false;
            seen_digit = true;
        }
        return seen_digit;
    };
    if (!digits_ok(std::string_view(s).substr(0, epos), true)) return std::nullopt;
    if (!digits_ok(std::string_view(s).substr(epos + 1), false)) return std::nullopt;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
    CanonicalAnswer a;
    a.kind = AnswerKind::Decimal;
    a.decimal = v;
    a.normalized_text = s;
    return a;
}

}  // namespace

CanonicalAnswer normalize_answer(std::string_view raw) {
    std::string s = trim(raw);
    strip_all(s, "$");
    strip_all(s, "\\left");
    strip_all(s, "\\right");
    strip_all(s, "\\,");
    strip_all(s, "\\!");
    rewrite_fractions(s);
    s = trim(s);

    if (auto v = parse_int(s)) {
        return *make_rational(*v, 1);
    }
    size_t slash = s.find('/');
    if (slash != std::string::npos && slash == s.rfind('/')) {
        auto n = parse_int(trim(s.substr(0, slash)));
        auto d = parse_int(trim(s.substr(slash + 1)));
        if (n && d && *d != 0) {
            if (auto r = make_rational(*n, *d)) return *r;
        }
    }
    if (auto r = parse_decimal_exact(s)) return *r;
    if (auto d = parse_scientific(s)) return *d;

    CanonicalAnswer a;
    a.kind = AnswerKind::Symbolic;
    a.normalized_text = collapse_ws(s);
    return a;
}

Verdict answers_equivalent(const CanonicalAnswer& candidate, const CanonicalAnswer& truth,
                           double rel_tol) {
    const bool cand_sym = candidate.kind == AnswerKind::Symbolic;
    const bool truth_sym = truth.kind == AnswerKind::Symbolic;
    if (cand_sym != truth_sym) return Verdict::WrongAnswer;
    if (cand_sym) {
        return candidate.normalized_text == truth.normalized_text ? Verdict::CorrectAnswer
                                                                  : Verdict::WrongAnswer;
    }
    if (candidate.kind == AnswerKind::Rational && truth.kind == AnswerKind::Rational) {
        return candidate.num == truth.num && candidate.den == truth.den ? Verdict::CorrectAnswer
                                                                        : Verdict::WrongAnswer;
    }
    double a = candidate.decimal, b = truth.decimal;
    double scale = std::max(std::fabs(a), std::fabs(b));
    if (scale == 0.0) return Verdict::CorrectAnswer;
    return std::fabs(a - b) <= rel_tol * scale ? Verdict::CorrectAnswer : Verdict::WrongAnswer;
}

Verdict score_answer(const std::optional<std::string>& candidate, std::string_view ground_truth,
                     double rel_tol) {
    if (!candidate) return Verdict::Unverifiable;
    if (trim(ground_truth).empty()) return Verdict::Unverifiable;
    return answers_equivalent(normalize_answer(*candidate), normalize_answer(ground_truth), rel_tol);
}

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::CorrectAnswer: return "correct";
        case Verdict::WrongAnswer: return "wrong";
        case Verdict::Unverifiable: return "unverifiable";
    }
    return "unverifiable";
}

}  // namespace critloop::verify
