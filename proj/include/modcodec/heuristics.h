#pragma once

#include <cstdint>
#include <vector>

#include "modcodec/image.h"
#include "modcodec/modular.h"
#include "modcodec/transforms.h"

namespace modcodec {

// Greedy bottom-up histogram clustering: starts with one cluster per context
// and merges the pair with the best total-bits saving (coded bits under the
// merged distribution plus a signaling estimate) until no merge helps.
// Returns the context map; never produces more than max_clusters clusters.
std::vector<uint8_t> cluster_histograms(
    const std::vector<std::vector<uint64_t>>& histograms,
    uint32_t max_clusters);

// ---------------------------------------------------------------------------
// Effort ladder. Levels 1-3 use fixed trees (a lone Gradient leaf, then a
// 16-context sign tree); levels 4+ learn a tree from the image, widening the
// predictor pool, the property set and the transform search as effort grows.

struct EffortConfig {
  uint32_t effort = 3;
  bool learn_trees = false;
  std::vector<uint32_t> tree_predictors;  // learned-leaf candidates
  bool wp_property = false;         // splits on the weighted-error property
  size_t prev_channel_props = 0;    // earlier same-size channels feeding props
  std::vector<uint32_t> rct_candidates;
  uint32_t palette_threshold = 0;   // max distinct colors; 0 disables palette
  bool lz77 = false;
  size_t max_tree_samples = size_t(1) << 17;

  size_t num_props() const { return 16 + 4 * prev_channel_props; }
};

EffortConfig effort_config(uint32_t effort);

// 31-node tree splitting on the signs of the four local gradients
// (properties 10..13); every leaf predicts Gradient.
MaTree fixed_context_tree();

// ---------------------------------------------------------------------------
// Tree learning.

// Training set: property vectors plus each candidate predictor's residual
// token, sampled with a deterministic stride so at most max_samples positions
// are kept. Streams must be added in the same order and with the same
// channel lists the encoder will use.
class TreeSamples {
 public:
  TreeSamples(std::vector<uint32_t> predictors, size_t num_props,
              bool use_weighted, uint64_t total_positions,
              size_t max_samples = size_t(1) << 17);

  void add_stream(const std::vector<const Channel*>& channels,
                  uint32_t stream_index, const WpParams& wp);

  size_t size() const { return count_; }
  size_t num_props() const { return num_props_; }
  const std::vector<uint32_t>& predictors() const { return predictors_; }
  int64_t prop(size_t sample, size_t p) const {
    return props_[sample * num_props_ + p];
  }
  uint8_t token(size_t sample, size_t pred) const {
    return tokens_[sample * predictors_.size() + pred];
  }

 private:
  std::vector<uint32_t> predictors_;
  size_t num_props_;
  bool use_weighted_;
  uint64_t stride_ = 1;
  uint64_t clock_ = 0;
  size_t count_ = 0;
  std::vector<int64_t> props_;
  std::vector<uint8_t> tokens_;
};

// Greedy top-down tree construction. Each node picks the (property,
// threshold, per-side predictor) split with the largest estimated saving in
// residual-token bits; it stops when the saving no longer pays for the two
// extra nodes or a size floor is hit. Deterministic for a given sample set.
// node_cost_bits prices one extra node: tree signaling plus a share of the
// new context's distribution, and enough slack that chance fluctuations in
// the sampled histograms do not keep splitting forever.
MaTree learn_tree(const TreeSamples& samples, double node_cost_bits = 20.0,
                  uint32_t max_nodes = 1u << 12);

// ---------------------------------------------------------------------------
// Transform selection.

struct TransformPolicy {
  EffortConfig effort;
  uint32_t num_color_channels = 3;
  uint32_t bit_depth = 8;
  bool progressive = false;
  bool lossy = false;  // channels hold quantized XYB; palette and RCT are off
};

// Scores RCT candidates by the order-0 entropy of Gradient residuals on a
// subsample and returns the winner (lowest type on ties).
uint32_t choose_rct(const Image& image, size_t begin_c,
                    const std::vector<uint32_t>& candidates);

// Palette when the distinct-color count is small, otherwise an RCT searched
// over the effort's candidate set; Squeeze when progressive or lossy.
std::vector<TransformSpec> choose_transforms(const Image& image,
                                             const TransformPolicy& policy);

}  // namespace modcodec
