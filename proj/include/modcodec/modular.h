#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "modcodec/bitio.h"
#include "modcodec/entropy.h"
#include "modcodec/image.h"

namespace modcodec {

inline constexpr uint32_t kNumPredictors = 14;
inline constexpr uint32_t kMaxTreeNodes = 1u << 16;

enum Predictor : uint32_t {
  kPredZero = 0,
  kPredW = 1,
  kPredN = 2,
  kPredAvgWN = 3,
  kPredSelect = 4,
  kPredGradient = 5,
  kPredWeighted = 6,
  kPredNE = 7,
  kPredNW = 8,
  kPredWW = 9,
  kPredAvgWNW = 10,
  kPredAvgNNW = 11,
  kPredAvgNNE = 12,
  kPredAvgAll = 13,
};

struct Neighbors {
  int64_t W, N, NW, NE, NN, WW, NEE;
};

// Already-coded neighborhood with border substitution: the very first sample
// sees all zeros; a missing W becomes N; missing N, NW or WW become W;
// missing NE or NN become N; a missing NEE becomes NE.
Neighbors gather_neighbors(const Channel& ch, uint32_t x, uint32_t y);

inline int64_t clamp_gradient(int64_t w, int64_t n, int64_t nw) {
  return std::min(std::max(w + n - nw, std::min(w, n)), std::max(w, n));
}

// Predictors other than Weighted; division rounds toward zero.
int64_t predict_static(uint32_t predictor, const Neighbors& nb);

// ---------------------------------------------------------------------------
// Self-correcting predictor

struct WpParams {
  uint32_t weights[7] = {16, 10, 7, 7, 7, 0, 0};  // 5-bit each
  uint32_t multipliers[4] = {13, 12, 12, 12};     // 4-bit each
};

void write_wp_params(BitWriter& bw, const WpParams& p);
WpParams read_wp_params(BitReader& br);

// Blends four sub-predictors, weighting each by the inverse of its recent
// absolute error. All internal state uses 3 extra precision bits. Call
// predict() then commit() exactly once per position, in scanline order.
class WeightedPredictor {
 public:
  WeightedPredictor(uint32_t width, const WpParams& p);

  // Returns the sample-scale prediction and the larger of the final
  // prediction errors at N and W (still at the x8 scale).
  int64_t predict(uint32_t x, uint32_t y, const Neighbors& nb,
                  int64_t* max_error);
  void commit(uint32_t x, uint32_t y, int64_t value);

 private:
  uint32_t width_;
  WpParams p_;
  std::vector<int64_t> err_cur_, err_prev_;     // final-prediction errors
  std::vector<uint32_t> abs_cur_, abs_prev_;    // 4 sub-predictor errors each
  int64_t pend_p_ = 0;
  int64_t pend_s_[4] = {0, 0, 0, 0};
};

// ---------------------------------------------------------------------------
// MA trees

struct MaTreeNode {
  int32_t property = -1;  // decision node when >= 0; leaf otherwise
  int64_t threshold = 0;
  uint32_t left = 0;  // "yes" branch; the "no" branch is left + 1

  uint32_t predictor = kPredGradient;
  uint32_t multiplier = 1;
  int64_t offset = 0;
  uint32_t context = 0;  // leaf order, assigned by finalize()

  bool is_leaf() const { return property < 0; }
};

// Complete binary decision tree in breadth-first layout: both children of a
// decision node are adjacent and follow all earlier nodes.
struct MaTree {
  std::vector<MaTreeNode> nodes;
  uint32_t num_leaves = 0;
  uint32_t max_property = 0;
  bool uses_weighted = false;

  // Validates the layout, numbers the leaves and fills the summary fields.
  void finalize();

  const MaTreeNode& lookup(const std::vector<int64_t>& props) const {
    const MaTreeNode* node = &nodes[0];
    while (!node->is_leaf()) {
      bool yes = props[node->property] > node->threshold;
      node = &nodes[yes ? node->left : node->left + 1];
    }
    return *node;
  }

  static MaTree single_leaf(uint32_t predictor, uint32_t multiplier = 1,
                            int64_t offset = 0);
};

void write_tree(BitWriter& bw, const MaTree& tree);
MaTree read_tree(BitReader& br);

// ---------------------------------------------------------------------------
// Channel coding

// Walks one channel in scanline order producing the property vector and
// predictions. prev holds earlier channels of the stream, most recent first;
// only those with matching dimensions contribute properties.
class ChannelScan {
 public:
  ChannelScan(const Channel& ch, uint32_t chan_index, uint32_t stream_index,
              const std::vector<const Channel*>& prev, size_t num_props,
              bool enable_wp, const WpParams& wp);

  void begin(uint32_t x, uint32_t y);
  const std::vector<int64_t>& props() const { return props_; }
  const Neighbors& neighbors() const { return nb_; }
  int64_t predict(uint32_t predictor) const {
    return predictor == kPredWeighted ? wp_pred_
                                      : predict_static(predictor, nb_);
  }
  // Pass the reconstructed value; advances the per-row state.
  void commit(int64_t value);

 private:
  const Channel& ch_;
  std::vector<const Channel*> prev_;
  std::vector<int64_t> props_;
  std::unique_ptr<WeightedPredictor> wp_;
  Neighbors nb_{};
  int64_t wp_pred_ = 0;
  int64_t prev9_ = 0;
  int64_t prop9_cur_ = 0;
  uint32_t x_ = 0, y_ = 0;
};

struct ModularEncodeOptions {
  const MaTree* global_tree = nullptr;  // when set, no local tree is signaled
  MaTree local_tree;
  WpParams wp;
  EntropyEncodeOptions entropy;
  bool lossless = true;  // multiplier misfits fail instead of quantizing
};

// Row width used to anchor the 2D match distances of a multi-channel stream.
uint32_t modular_lz77_width(const std::vector<Channel*>& channels);

// Stream layout: [1 bit global-tree flag][predictor weights][local tree if
// any][one entropy stream holding every channel's residuals]. In lossy mode
// (multiplier > 1 without exact fit) the encoder rewrites the channel with
// the values a decoder will see.
void encode_modular_stream(BitWriter& bw,
                           const std::vector<Channel*>& channels,
                           uint32_t stream_index,
                           const ModularEncodeOptions& opts);

void decode_modular_stream(BitReader& br,
                           const std::vector<Channel*>& channels,
                           uint32_t stream_index, const MaTree* global_tree);

}  // namespace modcodec
