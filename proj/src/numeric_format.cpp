#include "tabshot/numeric_format.hpp"

#include <charconv>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>

namespace tabshot {

std::optional<std::string> format_decimal(std::string_view text, int fractional_digits,
                                          bool keep_point) {
    std::size_t pos = 0;
    bool negative = false;
    if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
        negative = text[pos] == '-';
        ++pos;
    }
    std::string int_digits;
    std::string frac_digits;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        int_digits.push_back(text[pos++]);
    }
    if (pos < text.size() && text[pos] == '.') {
        ++pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            frac_digits.push_back(text[pos++]);
        }
    }
    if (int_digits.empty() && frac_digits.empty()) return std::nullopt;
    long exponent = 0;
    if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
        ++pos;
        bool exp_negative = false;
        if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
            exp_negative = text[pos] == '-';
            ++pos;
        }
        if (pos >= text.size()) return std::nullopt;
        std::string exp_digits;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
            exp_digits.push_back(text[pos++]);
        }
        if (exp_digits.empty() || exp_digits.size() > 6) return std::nullopt;
        exponent = std::strtol(exp_digits.c_str(), nullptr, 10);
        if (exp_negative) exponent = -exponent;
    }
    if (pos != text.size()) return std::nullopt;

    // digits * 10^(point_shift): all digits with the decimal point after
    // `point` digits.
    std::string digits = int_digits + frac_digits;
    long point = static_cast<long>(int_digits.size()) + exponent;
    if (point < 0) {
        digits.insert(0, static_cast<std::size_t>(-point), '0');
        point = 0;
    }
    if (point > static_cast<long>(digits.size())) {
        digits.append(static_cast<std::size_t>(point) - digits.size(), '0');
    }
    std::string ipart = digits.substr(0, static_cast<std::size_t>(point));
    std::string fpart = digits.substr(static_cast<std::size_t>(point));

    if (static_cast<int>(fpart.size()) > fractional_digits) {
        const bool round_up = fpart[static_cast<std::size_t>(fractional_digits)] >= '5';
        fpart.resize(static_cast<std::size_t>(fractional_digits));
        if (round_up) {
            std::string all = ipart + fpart;
            int i = static_cast<int>(all.size()) - 1;
            while (i >= 0 && all[static_cast<std::size_t>(i)] == '9') {
                all[static_cast<std::size_t>(i)] = '0';
                --i;
            }
            if (i >= 0) {
                ++all[static_cast<std::size_t>(i)];
            } else {
                all.insert(all.begin(), '1');
            }
            ipart = all.substr(0, all.size() - fpart.size());
            fpart = all.substr(all.size() - fpart.size());
        }
    }
    while (!fpart.empty() && fpart.back() == '0') fpart.pop_back();
    const auto nz = ipart.find_first_not_of('0');
    ipart = nz == std::string::npos ? "0" : ipart.substr(nz);

    const bool is_zero = ipart == "0" && fpart.empty();
    std::string out;
    if (negative && !is_zero) out.push_back('-');
    out += ipart;
    if (!fpart.empty()) {
        out.push_back('.');
        out += fpart;
    } else if (keep_point) {
        out += ".0";
    }
    return out;
}

std::string shortest_decimal(double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("shortest_decimal: non-finite value");
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc{}) throw std::runtime_error("shortest_decimal: to_chars failed");
    return std::string(buf, end);
}

}  // namespace tabshot
