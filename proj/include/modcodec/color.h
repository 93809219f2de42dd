// XYB opponent color space.
//
// Forward: linear-light sRGB-primary RGB is mixed into an LMS-like cone
// space with a bias b added to every component, gamma compressed with
// cbrt(v) - cbrt(b), and mapped to opponent axes
//   X = (L - M) / 2,  Y = (L + M) / 2,  B' = S - Y.
// The bias makes the curve well-behaved near black; subtracting cbrt(b)
// keeps (0,0,0) at the origin. Grayscale inputs give X = B' = 0 because
// the three mix rows each sum to 1.
//
// The inverse undoes the opponent map, cubes, and applies the inverted
// mix matrix. It is algebraic, so it works for out-of-gamut values too.
#ifndef MODCODEC_COLOR_H_
#define MODCODEC_COLOR_H_

namespace modcodec {

void rgb_to_xyb(double r, double g, double b, double* x, double* y,
                double* b_prime);
void xyb_to_rgb(double x, double y, double b_prime, double* r, double* g,
                double* b);

// IEC 61966-2-1 piecewise sRGB transfer function, extended to negative
// inputs by odd symmetry.
double srgb_to_linear(double v);
double linear_to_srgb(double v);

}  // namespace modcodec

#endif  // MODCODEC_COLOR_H_
