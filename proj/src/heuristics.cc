#include "modcodec/heuristics.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <unordered_set>

#include "modcodec/entropy.h"

namespace modcodec {

namespace {

double shannon_bits(const std::vector<uint64_t>& h, uint64_t total) {
  if (total == 0) return 0.0;
  double bits = 0.0;
  for (uint64_t c : h)
    if (c) bits += double(c) * std::log2(double(total) / double(c));
  return bits;
}

struct Cluster {
  std::vector<uint64_t> hist;
  uint64_t total = 0;
  double bits = 0.0;
  std::vector<uint32_t> members;
  bool alive = true;
};

double merged_bits(const Cluster& a, const Cluster& b) {
  size_t m = std::max(a.hist.size(), b.hist.size());
  uint64_t total = a.total + b.total;
  double bits = 0.0;
  for (size_t i = 0; i < m; i++) {
    uint64_t c = (i < a.hist.size() ? a.hist[i] : 0) +
                 (i < b.hist.size() ? b.hist[i] : 0);
    if (c) bits += double(c) * std::log2(double(total) / double(c));
  }
  return bits;
}

void merge_into(Cluster& a, Cluster& b) {
  if (a.hist.size() < b.hist.size()) a.hist.resize(b.hist.size(), 0);
  for (size_t i = 0; i < b.hist.size(); i++) a.hist[i] += b.hist[i];
  a.total += b.total;
  a.bits = shannon_bits(a.hist, a.total);
  a.members.insert(a.members.end(), b.members.begin(), b.members.end());
  b.alive = false;
}

// Rough price of signaling one extra distribution in the stream header.
constexpr double kDistributionCost = 56.0;

// Bound on the quadratic merge search; beyond it the lightest histograms are
// pooled into a single cluster first.
constexpr size_t kMaxPairwise = 192;

}  // namespace

std::vector<uint8_t> cluster_histograms(
    const std::vector<std::vector<uint64_t>>& histograms,
    uint32_t max_clusters) {
  size_t n = histograms.size();
  std::vector<uint8_t> map(n, 0);  // empty contexts land in cluster 0
  if (n == 0 || max_clusters == 0) return map;

  std::vector<Cluster> cls;
  cls.reserve(n);
  for (size_t i = 0; i < n; i++) {
    uint64_t total = 0;
    for (uint64_t c : histograms[i]) total += c;
    if (total == 0) continue;
    Cluster c;
    c.hist = histograms[i];
    c.total = total;
    c.bits = shannon_bits(c.hist, total);
    c.members = {uint32_t(i)};
    cls.push_back(std::move(c));
  }
  if (cls.empty()) return map;

  if (cls.size() > kMaxPairwise) {
    std::vector<size_t> order(cls.size());
    for (size_t i = 0; i < order.size(); i++) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (cls[a].total != cls[b].total) return cls[a].total > cls[b].total;
      return a < b;
    });
    Cluster& pool = cls[order[kMaxPairwise - 1]];
    for (size_t k = kMaxPairwise; k < order.size(); k++)
      merge_into(pool, cls[order[k]]);
  }

  std::vector<size_t> act;
  for (size_t i = 0; i < cls.size(); i++)
    if (cls[i].alive) act.push_back(i);

  size_t k = act.size();
  // delta[i][j]: coded-bit increase from merging act[i] and act[j]
  std::vector<std::vector<double>> delta(k, std::vector<double>(k, 0.0));
  for (size_t i = 0; i < k; i++)
    for (size_t j = i + 1; j < k; j++)
      delta[i][j] =
          merged_bits(cls[act[i]], cls[act[j]]) - cls[act[i]].bits -
          cls[act[j]].bits;

  size_t alive = k;
  std::vector<bool> act_alive(k, true);
  while (alive > 1) {
    double best = std::numeric_limits<double>::infinity();
    size_t bi = 0, bj = 0;
    for (size_t i = 0; i < k; i++) {
      if (!act_alive[i]) continue;
      for (size_t j = i + 1; j < k; j++) {
        if (!act_alive[j]) continue;
        if (delta[i][j] < best) {
          best = delta[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    bool force = alive > max_clusters;
    if (!force && best >= kDistributionCost) break;
    merge_into(cls[act[bi]], cls[act[bj]]);
    act_alive[bj] = false;
    alive--;
    for (size_t j = 0; j < k; j++) {
      if (!act_alive[j] || j == bi) continue;
      size_t lo = std::min(bi, j), hi = std::max(bi, j);
      delta[lo][hi] = merged_bits(cls[act[bi]], cls[act[j]]) -
                      cls[act[bi]].bits - cls[act[j]].bits;
    }
  }

  std::vector<Cluster*> final_cls;
  for (auto& c : cls)
    if (c.alive) final_cls.push_back(&c);
  std::sort(final_cls.begin(), final_cls.end(), [](Cluster* a, Cluster* b) {
    return *std::min_element(a->members.begin(), a->members.end()) <
           *std::min_element(b->members.begin(), b->members.end());
  });
  for (size_t id = 0; id < final_cls.size(); id++)
    for (uint32_t m : final_cls[id]->members) map[m] = uint8_t(id);
  return map;
}

// ---------------------------------------------------------------------------
// Effort ladder

EffortConfig effort_config(uint32_t effort) {
  check(effort >= 1 && effort <= 9, "effort must be between 1 and 9");
  EffortConfig c;
  c.effort = effort;
  c.lz77 = effort >= 2;
  if (effort >= 2) c.rct_candidates = {6};
  if (effort >= 3) {
    c.rct_candidates = {0, 6, 10};
    c.palette_threshold = 256;
  }
  if (effort >= 4) {
    c.learn_trees = true;
    c.tree_predictors = {kPredGradient, kPredW, kPredN};
  }
  if (effort >= 5) {
    c.tree_predictors.push_back(kPredSelect);
    c.tree_predictors.push_back(kPredAvgWN);
    c.palette_threshold = 512;
  }
  if (effort >= 6) {
    c.tree_predictors.push_back(kPredWeighted);
    c.wp_property = true;
  }
  if (effort >= 7) c.prev_channel_props = 3;
  if (effort >= 8) {
    c.tree_predictors.clear();
    for (uint32_t p = 0; p < kNumPredictors; p++)
      c.tree_predictors.push_back(p);
    c.rct_candidates.clear();
    for (uint32_t t = 0; t < kNumRctTypes; t++) c.rct_candidates.push_back(t);
  }
  if (effort >= 9) c.palette_threshold = 1024;
  return c;
}

MaTree fixed_context_tree() {
  MaTree t;
  // A complete tree in array order keeps children adjacent: node i's left
  // child sits at 2i+1. Four levels over properties 10..13, thresholds 0.
  for (uint32_t level = 0, idx = 0; level < 4; level++) {
    for (uint32_t i = 0; i < (1u << level); i++, idx++) {
      MaTreeNode n;
      n.property = int32_t(10 + level);
      n.threshold = 0;
      n.left = 2 * idx + 1;
      t.nodes.push_back(n);
    }
  }
  t.nodes.resize(t.nodes.size() + 16);  // leaves; defaults predict Gradient
  t.finalize();
  return t;
}

// ---------------------------------------------------------------------------
// Tree learning

namespace {

constexpr HybridUintConfig kResidualTokenConfig{4, 1, 0};
constexpr uint32_t kResidualTokens = 72;  // top token of a 32-bit value + 1

uint8_t residual_token(int64_t r) {
  r = clamp_val(r, -(int64_t(1) << 31), (int64_t(1) << 31) - 1);
  uint32_t token, nbits, bits;
  kResidualTokenConfig.split(pack_signed(r), &token, &nbits, &bits);
  return uint8_t(token);
}

struct TokenRawBits {
  uint8_t n[kResidualTokens];
  TokenRawBits() {
    for (uint32_t t = 0; t < kResidualTokens; t++)
      n[t] = uint8_t(kResidualTokenConfig.raw_bits_for_token(t));
  }
};
const TokenRawBits kTokenRawBits;

// Shannon bits of the token histogram plus the raw bits the tokens imply.
double residual_cost(const uint32_t* hist, uint32_t n) {
  if (n == 0) return 0.0;
  double cost = 0.0;
  double logn = std::log2(double(n));
  for (uint32_t t = 0; t < kResidualTokens; t++) {
    uint32_t c = hist[t];
    if (c) cost += double(c) * (logn - std::log2(double(c)) + kTokenRawBits.n[t]);
  }
  return cost;
}

}  // namespace

TreeSamples::TreeSamples(std::vector<uint32_t> predictors, size_t num_props,
                         bool use_weighted, uint64_t total_positions,
                         size_t max_samples)
    : predictors_(std::move(predictors)),
      num_props_(std::max<size_t>(num_props, 16)),
      use_weighted_(use_weighted) {
  check(!predictors_.empty(), "no candidate predictors");
  for (uint32_t p : predictors_) {
    check(p < kNumPredictors, "bad predictor");
    if (p == kPredWeighted) use_weighted_ = true;
  }
  check(max_samples > 0, "sample budget must be positive");
  stride_ = std::max<uint64_t>(
      1, (total_positions + max_samples - 1) / max_samples);
}

void TreeSamples::add_stream(const std::vector<const Channel*>& channels,
                             uint32_t stream_index, const WpParams& wp) {
  std::vector<const Channel*> coded;
  for (size_t ci = 0; ci < channels.size(); ci++) {
    const Channel& ch = *channels[ci];
    ChannelScan scan(ch, uint32_t(ci), stream_index, coded, num_props_,
                     use_weighted_, wp);
    for (uint32_t y = 0; y < ch.height; y++) {
      for (uint32_t x = 0; x < ch.width; x++) {
        scan.begin(x, y);
        if (clock_++ % stride_ == 0) {
          const std::vector<int64_t>& p = scan.props();
          props_.insert(props_.end(), p.begin(), p.begin() + num_props_);
          for (uint32_t pred : predictors_)
            tokens_.push_back(
                residual_token(int64_t(ch.at(x, y)) - scan.predict(pred)));
          count_++;
        }
        scan.commit(ch.at(x, y));
      }
    }
    coded.insert(coded.begin(), &ch);
  }
}

MaTree learn_tree(const TreeSamples& s, double node_cost_bits,
                  uint32_t max_nodes) {
  check(s.size() >= 1, "no training samples");
  const size_t P = s.predictors().size();
  const size_t NP = s.num_props();
  constexpr size_t kMinLeafSamples = 16;
  constexpr size_t kMaxThresholds = 64;

  MaTree tree;
  tree.nodes.emplace_back();
  std::deque<std::pair<uint32_t, std::vector<uint32_t>>> queue;
  {
    std::vector<uint32_t> all(s.size());
    for (size_t i = 0; i < all.size(); i++) all[i] = uint32_t(i);
    queue.emplace_back(0, std::move(all));
  }

  std::vector<uint32_t> total_hist(P * kResidualTokens);
  std::vector<uint32_t> left_hist(P * kResidualTokens);
  std::vector<uint32_t> bucket_hist;
  std::vector<uint32_t> bucket_count;
  std::vector<int64_t> vals, thrs;

  while (!queue.empty()) {
    auto [node_id, ids] = std::move(queue.front());
    queue.pop_front();
    uint32_t n = uint32_t(ids.size());

    std::fill(total_hist.begin(), total_hist.end(), 0);
    for (uint32_t id : ids)
      for (size_t k = 0; k < P; k++)
        total_hist[k * kResidualTokens + s.token(id, k)]++;

    double best_leaf = std::numeric_limits<double>::infinity();
    size_t best_leaf_pred = 0;
    for (size_t k = 0; k < P; k++) {
      double c = residual_cost(&total_hist[k * kResidualTokens], n);
      if (c < best_leaf) {
        best_leaf = c;
        best_leaf_pred = k;
      }
    }
    tree.nodes[node_id].predictor = s.predictors()[best_leaf_pred];

    if (n < 2 * kMinLeafSamples || tree.nodes.size() + 2 > max_nodes) continue;

    double best_split = std::numeric_limits<double>::infinity();
    size_t best_prop = 0;
    int64_t best_thr = 0;
    for (size_t p = 0; p < NP; p++) {
      vals.clear();
      for (uint32_t id : ids) vals.push_back(s.prop(id, p));
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      if (vals.size() < 2) continue;

      size_t cand = vals.size() - 1;  // splitting above the max is pointless
      thrs.clear();
      if (cand <= kMaxThresholds) {
        thrs.assign(vals.begin(), vals.begin() + cand);
      } else {
        for (size_t k = 0; k < kMaxThresholds; k++)
          thrs.push_back(vals[k * cand / kMaxThresholds]);
        if (vals.front() <= 0 && vals.back() > 0) thrs.push_back(0);
        std::sort(thrs.begin(), thrs.end());
        thrs.erase(std::unique(thrs.begin(), thrs.end()), thrs.end());
      }

      size_t B = thrs.size();
      bucket_count.assign(B + 1, 0);
      bucket_hist.assign((B + 1) * P * kResidualTokens, 0);
      for (uint32_t id : ids) {
        // bucket j holds values in (thrs[j-1], thrs[j]]: accumulating
        // buckets 0..j yields exactly the v <= thrs[j] side
        size_t b = std::lower_bound(thrs.begin(), thrs.end(), s.prop(id, p)) -
                   thrs.begin();
        bucket_count[b]++;
        uint32_t* h = &bucket_hist[b * P * kResidualTokens];
        for (size_t k = 0; k < P; k++)
          h[k * kResidualTokens + s.token(id, k)]++;
      }

      std::fill(left_hist.begin(), left_hist.end(), 0);
      uint32_t left_n = 0;
      for (size_t j = 0; j < B; j++) {
        left_n += bucket_count[j];
        const uint32_t* bh = &bucket_hist[j * P * kResidualTokens];
        for (size_t z = 0; z < P * kResidualTokens; z++) left_hist[z] += bh[z];
        uint32_t right_n = n - left_n;
        if (left_n < kMinLeafSamples || right_n < kMinLeafSamples) continue;

        double cl = std::numeric_limits<double>::infinity();
        double cr = std::numeric_limits<double>::infinity();
        for (size_t k = 0; k < P; k++) {
          cl = std::min(cl, residual_cost(&left_hist[k * kResidualTokens],
                                          left_n));
          uint32_t rh[kResidualTokens];
          for (uint32_t t = 0; t < kResidualTokens; t++)
            rh[t] = total_hist[k * kResidualTokens + t] -
                    left_hist[k * kResidualTokens + t];
          cr = std::min(cr, residual_cost(rh, right_n));
        }
        if (cl + cr < best_split) {
          best_split = cl + cr;
          best_prop = p;
          best_thr = thrs[j];
        }
      }
    }

    if (best_split + 2 * node_cost_bits >= best_leaf) continue;

    std::vector<uint32_t> yes, no;
    for (uint32_t id : ids)
      (s.prop(id, best_prop) > best_thr ? yes : no).push_back(id);
    uint32_t left_index = uint32_t(tree.nodes.size());
    tree.nodes[node_id] = MaTreeNode();  // drop the scratch leaf predictor
    tree.nodes[node_id].property = int32_t(best_prop);
    tree.nodes[node_id].threshold = best_thr;
    tree.nodes[node_id].left = left_index;
    tree.nodes.emplace_back();
    tree.nodes.emplace_back();
    queue.emplace_back(left_index, std::move(yes));
    queue.emplace_back(left_index + 1, std::move(no));
  }

  tree.finalize();
  return tree;
}

// ---------------------------------------------------------------------------
// Transform selection

uint32_t choose_rct(const Image& image, size_t begin_c,
                    const std::vector<uint32_t>& candidates) {
  check(!candidates.empty(), "no rct candidates");
  check(begin_c + 3 <= image.channels.size(), "rct needs three channels");
  const Channel* src[3];
  for (int i = 0; i < 3; i++) src[i] = &image.channels[begin_c + i];
  for (int i = 1; i < 3; i++)
    check(src[i]->width == src[0]->width && src[i]->height == src[0]->height,
          "rct channels must match");
  for (uint32_t t : candidates) check(t < kNumRctTypes, "bad rct type");
  if (candidates.size() == 1) return candidates[0];
  if (src[0]->width < 2 || src[0]->height < 2) return candidates[0];

  // Sampled interior positions plus their W/N/NW neighbors, one row per role.
  uint64_t interior = uint64_t(src[0]->width - 1) * (src[0]->height - 1);
  uint64_t stride = std::max<uint64_t>(1, interior >> 14);
  std::vector<int32_t> roles[4][3];
  uint64_t clock = 0;
  for (uint32_t y = 1; y < src[0]->height; y++) {
    for (uint32_t x = 1; x < src[0]->width; x++) {
      if (clock++ % stride) continue;
      for (int comp = 0; comp < 3; comp++) {
        roles[0][comp].push_back(src[comp]->at(x, y));
        roles[1][comp].push_back(src[comp]->at(x - 1, y));
        roles[2][comp].push_back(src[comp]->at(x, y - 1));
        roles[3][comp].push_back(src[comp]->at(x - 1, y - 1));
      }
    }
  }
  uint32_t n = uint32_t(roles[0][0].size());

  double best_cost = std::numeric_limits<double>::infinity();
  uint32_t best_type = candidates[0];
  for (uint32_t type : candidates) {
    Channel t[4][3] = {{Channel(n, 1), Channel(n, 1), Channel(n, 1)},
                       {Channel(n, 1), Channel(n, 1), Channel(n, 1)},
                       {Channel(n, 1), Channel(n, 1), Channel(n, 1)},
                       {Channel(n, 1), Channel(n, 1), Channel(n, 1)}};
    for (int role = 0; role < 4; role++) {
      for (int comp = 0; comp < 3; comp++) t[role][comp].samples = roles[role][comp];
      rct_forward(t[role][0], t[role][1], t[role][2], type);
    }
    double cost = 0.0;
    for (int comp = 0; comp < 3; comp++) {
      uint32_t hist[kResidualTokens] = {0};
      for (uint32_t i = 0; i < n; i++) {
        int64_t grad = clamp_gradient(t[1][comp].samples[i],
                                      t[2][comp].samples[i],
                                      t[3][comp].samples[i]);
        hist[residual_token(t[0][comp].samples[i] - grad)]++;
      }
      cost += residual_cost(hist, n);
    }
    if (cost < best_cost) {
      best_cost = cost;
      best_type = type;
    }
  }
  return best_type;
}

std::vector<TransformSpec> choose_transforms(const Image& image,
                                             const TransformPolicy& policy) {
  std::vector<TransformSpec> specs;
  const EffortConfig& e = policy.effort;
  uint32_t nc = policy.num_color_channels;

  bool palette = false;
  if (!policy.lossy && e.palette_threshold > 0 && (nc == 1 || nc == 3) &&
      image.channels.size() >= nc) {
    uint64_t area =
        uint64_t(image.channels[0].width) * image.channels[0].height;
    uint64_t limit = std::min<uint64_t>(e.palette_threshold, area / 4);
    if (limit >= 1) {
      std::unordered_set<uint64_t> seen;
      bool small = true;
      for (size_t i = 0; i < area && small; i++) {
        uint64_t key = 1469598103934665603ull;
        for (uint32_t c = 0; c < nc; c++) {
          key ^= uint32_t(image.channels[c].samples[i]);
          key *= 1099511628211ull;
        }
        seen.insert(key);
        if (seen.size() > limit) small = false;
      }
      if (small) {
        TransformSpec p;
        p.kind = TransformKind::kPalette;
        p.begin_c = 0;
        p.num_c = nc;
        specs.push_back(p);
        palette = true;
      }
    }
  }

  if (!palette && !policy.lossy && nc == 3 && !e.rct_candidates.empty() &&
      policy.bit_depth <= 27) {
    uint32_t type = choose_rct(image, 0, e.rct_candidates);
    if (type != 0) {
      TransformSpec r;
      r.kind = TransformKind::kRct;
      r.begin_c = 0;
      r.rct_type = type;
      specs.push_back(r);
    }
  }

  if ((policy.progressive || policy.lossy) && policy.bit_depth <= 26) {
    TransformSpec s;
    s.kind = TransformKind::kSqueeze;  // empty step list = default order
    specs.push_back(s);
  }
  return specs;
}

}  // namespace modcodec
