#include "tabshot/numeric_format.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <random>

using tabshot::format_decimal;
using tabshot::shortest_decimal;

TEST(FormatDecimal, TrimsTrailingZerosAndKeepsOneDigitWhenAsked) {
    EXPECT_EQ(format_decimal("1201.0", 4, true), "1201.0");
    EXPECT_EQ(format_decimal("1201.0", 4, false), "1201");
    EXPECT_EQ(format_decimal("1201", 4, true), "1201.0");
    EXPECT_EQ(format_decimal("3541.20000", 4, true), "3541.2");
}

TEST(FormatDecimal, RoundsHalfAwayFromZeroOnTheDigits) {
    EXPECT_EQ(format_decimal("980.33333", 4, true), "980.3333");
    EXPECT_EQ(format_decimal("0.12345", 4, true), "0.1235");
    EXPECT_EQ(format_decimal("-0.12345", 4, true), "-0.1235");
    // 2.00005 is not exactly representable in binary; rounding the text avoids
    // the double landing just below the tie.
    EXPECT_EQ(format_decimal("2.00005", 4, true), "2.0001");
}

TEST(FormatDecimal, CarriesIntoTheIntegerPart) {
    EXPECT_EQ(format_decimal("1299.99995", 4, true), "1300.0");
    EXPECT_EQ(format_decimal("9.99999", 4, false), "10");
    EXPECT_EQ(format_decimal("-99.99999", 4, true), "-100.0");
}

TEST(FormatDecimal, NegativeZeroCollapses) {
    EXPECT_EQ(format_decimal("-0.00001", 4, true), "0.0");
    EXPECT_EQ(format_decimal("-0", 4, false), "0");
}

TEST(FormatDecimal, HandlesSignsAndExponents) {
    EXPECT_EQ(format_decimal("+1.5", 4, true), "1.5");
    EXPECT_EQ(format_decimal("1.5e3", 4, true), "1500.0");
    EXPECT_EQ(format_decimal("12345e-7", 4, true), "0.0012");
    EXPECT_EQ(format_decimal(".5", 4, true), "0.5");
}

TEST(FormatDecimal, RejectsNonDecimalText) {
    EXPECT_FALSE(format_decimal("", 4, true));
    EXPECT_FALSE(format_decimal("abc", 4, true));
    EXPECT_FALSE(format_decimal("1.2.3", 4, true));
    EXPECT_FALSE(format_decimal("inf", 4, true));
    EXPECT_FALSE(format_decimal("nan", 4, true));
    EXPECT_FALSE(format_decimal("1e", 4, true));
}

// Oracle: for values whose 6-digit text has no exact tie at the 5th digit, the
// result must equal printf rounding to 4 places, trimmed.
TEST(FormatDecimal, AgreesWithPrintfAwayFromTies) {
    std::mt19937_64 gen(5);
    std::uniform_real_distribution<double> dist(-5000.0, 5000.0);
    for (int i = 0; i < 2000; ++i) {
        char text[64];
        std::snprintf(text, sizeof text, "%.6f", dist(gen));
        const double v = std::strtod(text, nullptr);
        const double scaled = std::abs(v) * 1e4;
        if (std::abs(scaled - std::floor(scaled) - 0.5) < 1e-3) continue;
        char expect[64];
        std::snprintf(expect, sizeof expect, "%.4f", v);
        std::string e(expect);
        while (e.back() == '0') e.pop_back();
        if (e.back() == '.') e += '0';
        if (e == "-0.0") e = "0.0";
        ASSERT_EQ(format_decimal(text, 4, true), e) << text;
    }
}

TEST(ShortestDecimal, RoundTrips) {
    for (double v : {0.1, 1.0 / 3.0, 1e-12, 12345.678, -2.5}) {
        EXPECT_EQ(std::strtod(shortest_decimal(v).c_str(), nullptr), v);
    }
    EXPECT_EQ(shortest_decimal(0.5), "0.5");
}
