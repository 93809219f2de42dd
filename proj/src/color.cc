#include "modcodec/color.h"

#include <cmath>

#include "modcodec/common.h"

namespace modcodec {
namespace {

constexpr double kBias = 0.00379307325527544933;

constexpr double kMix[3][3] = {
    {0.3, 0.622, 0.078},
    {0.23, 0.692, 0.078},
    {0.2434227, 0.2047674, 0.5518099},
};

struct Mat3 {
  double m[3][3];
};

constexpr Mat3 invert(const double a[3][3]) {
  double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
               a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
               a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  Mat3 inv{};
  inv.m[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
  inv.m[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
  inv.m[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
  inv.m[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
  inv.m[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
  inv.m[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
  inv.m[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
  inv.m[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
  inv.m[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
  return inv;
}

constexpr Mat3 kUnmix = invert(kMix);

void check_finite(double a, double b, double c) {
  check(std::isfinite(a) && std::isfinite(b) && std::isfinite(c),
        "non-finite color value");
}

}  // namespace

void rgb_to_xyb(double r, double g, double b, double* x, double* y,
                double* b_prime) {
  check_finite(r, g, b);
  const double cbrt_bias = std::cbrt(kBias);
  double lms[3];
  for (int i = 0; i < 3; i++) {
    double m = kMix[i][0] * r + kMix[i][1] * g + kMix[i][2] * b + kBias;
    lms[i] = std::cbrt(m) - cbrt_bias;
  }
  *x = (lms[0] - lms[1]) * 0.5;
  *y = (lms[0] + lms[1]) * 0.5;
  *b_prime = lms[2] - *y;
}

void xyb_to_rgb(double x, double y, double b_prime, double* r, double* g,
                double* b) {
  check_finite(x, y, b_prime);
  const double cbrt_bias = std::cbrt(kBias);
  double lms[3] = {y + x, y - x, b_prime + y};
  for (double& v : lms) {
    double c = v + cbrt_bias;
    v = c * c * c - kBias;
  }
  *r = kUnmix.m[0][0] * lms[0] + kUnmix.m[0][1] * lms[1] + kUnmix.m[0][2] * lms[2];
  *g = kUnmix.m[1][0] * lms[0] + kUnmix.m[1][1] * lms[1] + kUnmix.m[1][2] * lms[2];
  *b = kUnmix.m[2][0] * lms[0] + kUnmix.m[2][1] * lms[1] + kUnmix.m[2][2] * lms[2];
}

double srgb_to_linear(double v) {
  if (v < 0) return -srgb_to_linear(-v);
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
  if (v < 0) return -linear_to_srgb(-v);
  return v <= 0.0031308 ? v * 12.92 : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

}  // namespace modcodec
