#include <gtest/gtest.h>

#include <clocale>
#include <locale>
#include <string>

#include "prockd/metrics.hpp"

using namespace prockd::harness;

TEST(Metrics, HeaderAndEmptyValAcc) {
  MetricsRow a{1, 0, 1.5, 0.25, 0.5, 0.75, 0.5, std::nullopt, 0.0};
  MetricsRow b{2, 0, 1.25, 0.0, 0.0, 1.25, 0.625, 0.6, 0.0};
  const std::string csv = metrics_csv({a, b});
  EXPECT_EQ(csv, std::string(kMetricsHeader) + "\n1,0,1.5,0.25,0.5,0.75,0.5,\n2,0,1.25,0,0,1.25,0.625,0.6\n");
}

TEST(Metrics, ShortestRoundTripFormatting) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5}) EXPECT_EQ(std::stod(format_double(v)), v);
  EXPECT_EQ(format_double(0.1), "0.1");
}

TEST(Metrics, LocaleIndependent) {
  const std::string before = format_double(1.5);
  const char* set = std::setlocale(LC_ALL, "de_DE.UTF-8");
  try {
    std::locale::global(std::locale("de_DE.UTF-8"));
  } catch (const std::exception&) {
  }
  EXPECT_EQ(format_double(1.5), before);
  EXPECT_EQ(format_double(1.5), "1.5");
  std::setlocale(LC_ALL, "C");
  std::locale::global(std::locale::classic());
  (void)set;
}
