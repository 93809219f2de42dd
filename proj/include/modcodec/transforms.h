#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "modcodec/bitio.h"
#include "modcodec/image.h"

namespace modcodec {

// ---------------------------------------------------------------------------
// Reversible color transforms
//
// 42 = 6 x 7: rct_type / 7 permutes the inputs (0:RGB 1:GBR 2:BRG 3:RBG
// 4:GRB 5:BGR), rct_type % 7 picks the transform applied to the permuted
// triple (A,B,C):
//   0  none
//   1  C -= A
//   2  B -= A
//   3  B -= A, C -= A
//   4  B -= floor((A+C)/2)
//   5  B -= floor((A+C)/2), C -= A
//   6  YCoCg-R
// Type 10 (GBR then 3) is SubtractGreen.

inline constexpr uint32_t kNumRctTypes = 42;

void rct_forward(Channel& c0, Channel& c1, Channel& c2, uint32_t rct_type);
void rct_inverse(Channel& c0, Channel& c1, Channel& c2, uint32_t rct_type);

// ---------------------------------------------------------------------------
// Palette

inline constexpr uint32_t kMaxPaletteColors = 70911;
inline constexpr uint32_t kImplicitColors = 189;
inline constexpr uint32_t kImplicitDeltas = 143;

// Component of predefined color j in [0,189): a 4x4x4 cube at values
// round((2i+1)*maxval/8) followed by a 5x5x5 cube at round(i*maxval/4), the
// first component varying slowest. Components past the third are zero.
int64_t implicit_palette_color(uint32_t j, uint32_t component,
                               uint32_t bit_depth);

// Component of predefined delta j in [0,143): entry 0 is (0,0,0); entries
// 2k+1 / 2k+2 are +-v_k over the base vectors below.
int64_t implicit_delta_value(uint32_t j, uint32_t component);

// The base vectors: all sign-canonical nonzero vectors (first nonzero
// component positive) with components in [-16,16], ordered by squared norm
// then lexicographically, truncated to 71.
const std::array<std::array<int32_t, 3>, 71>& implicit_delta_bases();

// ---------------------------------------------------------------------------
// Squeeze

// Average that rounds up iff a > b, so the pair recovers as
// A = avg + trunc((A-B)/2), B = A - (A-B).
int64_t squeeze_avg(int64_t a, int64_t b);

// Estimate of the difference A-B for the pair averaging to b, given the
// previous reconstructed sample a and the next average c. Zero unless a,b,c
// is weakly monotone; otherwise (4a-3c-b)/12 rounded half away from zero,
// then clamped so the reconstructed pair stays within [min(a,c), max(a,c)].
int64_t tendency(int64_t a, int64_t b, int64_t c);

struct SqueezeStep {
  bool horizontal = true;
  bool in_place = true;
  uint32_t begin_c = 0;
  uint32_t num_c = 1;
};

// Each step halves every channel in [begin_c, begin_c+num_c) along one axis
// and inserts the residual channels right after the range (in_place) or at
// the end of the channel list.
void squeeze_step_forward(Image& image, const SqueezeStep& step);
void squeeze_step_inverse(Image& image, const SqueezeStep& step);

// The schedule an empty step list stands for: alternating halvings of the
// whole non-meta block, larger-dimension first (ties horizontal), until the
// leading channel is at most 8x8.
std::vector<SqueezeStep> default_squeeze_order(const Image& image);

// ---------------------------------------------------------------------------
// Transform chain

enum class TransformKind : uint32_t { kRct = 0, kPalette = 1, kSqueeze = 2 };

struct TransformSpec {
  TransformKind kind = TransformKind::kRct;
  uint32_t begin_c = 0;    // rct, palette
  uint32_t rct_type = 6;   // rct
  uint32_t num_c = 3;      // palette
  uint32_t num_colors = 0; // palette; filled in by apply_transform
  uint32_t num_deltas = 0; // palette
  uint32_t predictor = 0;  // palette delta reconstruction
  std::vector<SqueezeStep> steps; // squeeze; empty means the default order
};

// Forward application, mutating pixels and channel layout. A palette spec
// builds the palette from the pixels and fills in num_colors; it fails if
// the channels hold more than kMaxPaletteColors distinct tuples.
void apply_transform(Image& image, TransformSpec& spec);
void apply_chain(Image& image, std::vector<TransformSpec>& specs);

// Layout-only application: rewrites channel dimensions, shifts and the meta
// count the way apply_transform would, without touching samples, and
// validates the spec against the evolving layout. Returns the chain with
// default squeeze orders expanded, which is what undo_chain needs (the
// default order is derived from the pre-squeeze layout, which is no longer
// available after decoding).
std::vector<TransformSpec> meta_apply_chain(
    Image& image, const std::vector<TransformSpec>& specs);

void undo_transform(Image& image, const TransformSpec& spec);
void undo_chain(Image& image, const std::vector<TransformSpec>& specs);

void write_transform_chain(BitWriter& bw,
                           const std::vector<TransformSpec>& specs);
std::vector<TransformSpec> read_transform_chain(BitReader& br);

}  // namespace modcodec
