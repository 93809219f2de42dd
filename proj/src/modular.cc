#include "modcodec/modular.h"

#include <algorithm>
#include <cstdlib>

namespace modcodec {

Neighbors gather_neighbors(const Channel& ch, uint32_t x, uint32_t y) {
  Neighbors nb{};
  if (x == 0 && y == 0) return nb;
  const int32_t* row = ch.row(y);
  const int32_t* up = y > 0 ? ch.row(y - 1) : nullptr;
  if (x > 0) {
    nb.W = row[x - 1];
    if (up) {
      nb.N = up[x];
      nb.NW = up[x - 1];
    } else {
      nb.N = nb.NW = nb.W;
    }
  } else {
    nb.N = up[x];
    nb.W = nb.NW = nb.N;
  }
  nb.WW = x > 1 ? row[x - 2] : nb.W;
  if (up) {
    nb.NE = x + 1 < ch.width ? up[x + 1] : nb.N;
    nb.NEE = x + 2 < ch.width ? up[x + 2] : nb.NE;
    nb.NN = y > 1 ? ch.row(y - 2)[x] : nb.N;
  } else {
    nb.NE = nb.NN = nb.N;
    nb.NEE = nb.NE;
  }
  return nb;
}

int64_t predict_static(uint32_t predictor, const Neighbors& nb) {
  switch (predictor) {
    case kPredZero:
      return 0;
    case kPredW:
      return nb.W;
    case kPredN:
      return nb.N;
    case kPredAvgWN:
      return (nb.W + nb.N) / 2;
    case kPredSelect:
      return std::abs(nb.N - nb.NW) < std::abs(nb.W - nb.NW) ? nb.W : nb.N;
    case kPredGradient:
      return clamp_gradient(nb.W, nb.N, nb.NW);
    case kPredNE:
      return nb.NE;
    case kPredNW:
      return nb.NW;
    case kPredWW:
      return nb.WW;
    case kPredAvgWNW:
      return (nb.W + nb.NW) / 2;
    case kPredAvgNNW:
      return (nb.N + nb.NW) / 2;
    case kPredAvgNNE:
      return (nb.N + nb.NE) / 2;
    case kPredAvgAll:
      return (6 * nb.N - 2 * nb.NN + 7 * nb.W + nb.WW + nb.NEE + 3 * nb.NE +
              8) /
             16;
    default:
      fail("bad predictor");
  }
}

// ---------------------------------------------------------------------------
// Self-correcting predictor

static bool wp_is_default(const WpParams& p) {
  const WpParams d;
  for (int i = 0; i < 7; i++)
    if (p.weights[i] != d.weights[i]) return false;
  for (int i = 0; i < 4; i++)
    if (p.multipliers[i] != d.multipliers[i]) return false;
  return true;
}

void write_wp_params(BitWriter& bw, const WpParams& p) {
  if (wp_is_default(p)) {
    bw.write_bit(true);
    return;
  }
  bw.write_bit(false);
  for (int i = 0; i < 7; i++) bw.write(5, p.weights[i]);
  for (int i = 0; i < 4; i++) bw.write(4, p.multipliers[i]);
}

WpParams read_wp_params(BitReader& br) {
  WpParams p;
  if (br.read_bit()) return p;
  for (int i = 0; i < 7; i++) p.weights[i] = br.read(5);
  for (int i = 0; i < 4; i++) p.multipliers[i] = br.read(4);
  return p;
}

namespace {

// Caps keeping every later product inside int64.
constexpr uint32_t kWpAbsCap = 1u << 24;
constexpr int64_t kWpSignedCap = int64_t(1) << 30;
constexpr int64_t kWpDeltaCap = int64_t(1) << 32;

// ~ floor(2^13 / (v + 1)) from a 64-entry table on the top bits
uint32_t recip13(uint32_t v) {
  static const uint16_t lut[64] = {
      8192, 4096, 2730, 2048, 1638, 1365, 1170, 1024, 910, 819, 744, 682, 630,
      585,  546,  512,  481,  455,  431,  409,  390,  372, 356, 341, 327, 315,
      303,  292,  282,  273,  264,  256,  248,  240,  234, 227, 221, 215, 210,
      204,  199,  195,  190,  186,  182,  178,  174,  170, 167, 163, 160, 157,
      154,  151,  148,  146,  143,  141,  138,  136,  134, 132, 130, 128};
  if (v < 64) return lut[v];
  uint32_t shift = floor_log2(v) - 5;
  uint32_t r = lut[v >> shift] >> shift;
  return r ? r : 1;
}

}  // namespace

WeightedPredictor::WeightedPredictor(uint32_t width, const WpParams& p)
    : width_(width),
      p_(p),
      err_cur_(width, 0),
      err_prev_(width, 0),
      abs_cur_(size_t(width) * 4, 0),
      abs_prev_(size_t(width) * 4, 0) {}

int64_t WeightedPredictor::predict(uint32_t x, uint32_t y, const Neighbors& nb,
                                   int64_t* max_error) {
  const int64_t Wp = nb.W * 8, Np = nb.N * 8, NWp = nb.NW * 8, NEp = nb.NE * 8,
                NNp = nb.NN * 8;
  const int64_t eW = x > 0 ? err_cur_[x - 1] : 0;
  const int64_t eN = y > 0 ? err_prev_[x] : 0;
  const int64_t eNE =
      y > 0 ? err_prev_[x + 1 < width_ ? x + 1 : width_ - 1] : 0;
  const int64_t eNW = (x > 0 && y > 0) ? err_prev_[x - 1] : 0;
  const auto& w = p_.weights;

  int64_t s[4];
  s[0] = Wp + NEp - Np;
  s[1] = Np - ((int64_t(w[0]) * (eW + eN + eNE)) >> 5);
  s[2] = Wp - ((int64_t(w[1]) * (eW + eN + eNW)) >> 5);
  s[3] = Np - ((int64_t(w[2]) * eNW + int64_t(w[3]) * eN +
                int64_t(w[4]) * eNE + int64_t(w[5]) * (NNp - Np) +
                int64_t(w[6]) * (NWp - Wp)) >>
               5);

  uint32_t alpha[4];
  uint64_t total = 0;
  for (int i = 0; i < 4; i++) {
    uint32_t sum = 0;
    if (x > 0) sum += abs_cur_[(x - 1) * 4 + i];
    if (x > 1) sum += abs_cur_[(x - 2) * 4 + i];
    if (y > 0) {
      if (x > 0) sum += abs_prev_[(x - 1) * 4 + i];
      sum += abs_prev_[x * 4 + i];
      sum += abs_prev_[(x + 1 < width_ ? x + 1 : width_ - 1) * 4 + i];
    }
    uint32_t a = (p_.multipliers[i] * recip13(sum)) >> 4;
    alpha[i] = a ? a : 1;
    total += alpha[i];
  }

  // Weighted sum relative to N, so the reciprocal approximation only touches
  // the sub-predictor corrections, never the base magnitude.
  int64_t num = int64_t(total >> 1);
  for (int i = 0; i < 4; i++) {
    int64_t d = std::clamp(s[i] - Np, -kWpDeltaCap, kWpDeltaCap);
    num += int64_t(alpha[i]) * d;
  }
  int64_t p = Np + ((num * recip13(uint32_t(total - 1))) >> 13);
  int64_t lo = std::min(Wp, std::min(Np, NEp));
  int64_t hi = std::max(Wp, std::max(Np, NEp));
  p = std::clamp(p, lo, hi);

  pend_p_ = p;
  for (int i = 0; i < 4; i++) pend_s_[i] = s[i];
  *max_error = std::max(std::abs(eN), std::abs(eW));
  return (p + 3) >> 3;
}

void WeightedPredictor::commit(uint32_t x, uint32_t y, int64_t value) {
  (void)y;
  const int64_t truth = value * 8;
  err_cur_[x] = std::clamp(pend_p_ - truth, -kWpSignedCap, kWpSignedCap);
  for (int i = 0; i < 4; i++) {
    uint64_t d = uint64_t(std::abs(pend_s_[i] - truth));
    abs_cur_[x * 4 + i] = uint32_t(std::min<uint64_t>(d, kWpAbsCap));
  }
  if (x == width_ - 1) {
    std::swap(err_cur_, err_prev_);
    std::swap(abs_cur_, abs_prev_);
  }
}

// ---------------------------------------------------------------------------
// MA trees

void MaTree::finalize() {
  check(!nodes.empty() && nodes.size() <= kMaxTreeNodes, "bad tree size");
  num_leaves = 0;
  max_property = 0;
  uses_weighted = false;
  size_t next = 1;
  for (size_t i = 0; i < nodes.size(); i++) {
    MaTreeNode& n = nodes[i];
    if (n.is_leaf()) {
      check(n.predictor < kNumPredictors, "bad predictor");
      check(n.multiplier >= 1, "zero multiplier");
      n.context = num_leaves++;
      if (n.predictor == kPredWeighted) uses_weighted = true;
    } else {
      check(n.left == next && next + 2 <= nodes.size(),
            "tree not in breadth-first layout");
      check(uint32_t(n.property) < (1u << 16), "property out of range");
      next += 2;
      max_property = std::max(max_property, uint32_t(n.property));
      if (n.property == 15) uses_weighted = true;
    }
  }
  check(next == nodes.size(), "dangling tree branches");
}

MaTree MaTree::single_leaf(uint32_t predictor, uint32_t multiplier,
                           int64_t offset) {
  MaTree t;
  MaTreeNode n;
  n.predictor = predictor;
  n.multiplier = multiplier;
  n.offset = offset;
  t.nodes.push_back(n);
  t.finalize();
  return t;
}

// Six fixed contexts: node flag, property, threshold, predictor,
// multiplier, offset.
void write_tree(BitWriter& bw, const MaTree& tree) {
  check(tree.num_leaves > 0, "tree not finalized");
  EntropyEncoder enc(6);
  for (const MaTreeNode& n : tree.nodes) {
    if (n.is_leaf()) {
      enc.put(0, 0);
      enc.put(3, n.predictor);
      enc.put(4, n.multiplier - 1);
      enc.put(5, pack_signed(n.offset));
    } else {
      enc.put(0, 1);
      enc.put(1, uint32_t(n.property));
      enc.put(2, pack_signed(n.threshold));
    }
  }
  EntropyEncodeOptions opts;
  enc.finish(bw, opts);
}

MaTree read_tree(BitReader& br) {
  MaTree t;
  EntropyDecoder dec(br, 6, 1);
  t.nodes.emplace_back();
  for (size_t i = 0; i < t.nodes.size(); i++) {
    uint32_t flag = dec.read(0);
    check_corrupt(flag <= 1, "bad tree node flag");
    MaTreeNode& n = t.nodes[i];
    if (flag) {
      uint32_t prop = dec.read(1);
      check_corrupt(prop < (1u << 16), "property out of range");
      n.property = int32_t(prop);
      n.threshold = unpack_signed(dec.read(2));
      n.left = uint32_t(t.nodes.size());
      check_corrupt(t.nodes.size() + 2 <= kMaxTreeNodes, "tree too large");
      t.nodes.emplace_back();
      t.nodes.emplace_back();
    } else {
      n.property = -1;
      n.predictor = dec.read(3);
      check_corrupt(n.predictor < kNumPredictors, "bad leaf predictor");
      uint32_t m = dec.read(4);
      check_corrupt(m < (1u << 24), "multiplier too large");
      n.multiplier = m + 1;
      n.offset = unpack_signed(dec.read(5));
    }
  }
  dec.finalize();
  t.finalize();
  return t;
}

// ---------------------------------------------------------------------------
// Channel coding

ChannelScan::ChannelScan(const Channel& ch, uint32_t chan_index,
                         uint32_t stream_index,
                         const std::vector<const Channel*>& prev,
                         size_t num_props, bool enable_wp, const WpParams& wp)
    : ch_(ch), props_(std::max<size_t>(num_props, 16), 0) {
  for (const Channel* p : prev)
    if (p->width == ch.width && p->height == ch.height) prev_.push_back(p);
  size_t usable = (props_.size() - 16 + 3) / 4;
  if (prev_.size() > usable) prev_.resize(usable);
  props_[0] = chan_index;
  props_[1] = stream_index;
  if (enable_wp) wp_ = std::make_unique<WeightedPredictor>(ch.width, wp);
}

void ChannelScan::begin(uint32_t x, uint32_t y) {
  x_ = x;
  y_ = y;
  if (x == 0) prev9_ = 0;
  nb_ = gather_neighbors(ch_, x, y);
  int64_t max_error = 0;
  if (wp_) wp_pred_ = wp_->predict(x, y, nb_, &max_error);
  props_[2] = y;
  props_[3] = x;
  props_[4] = std::abs(nb_.N);
  props_[5] = std::abs(nb_.W);
  props_[6] = nb_.N;
  props_[7] = nb_.W;
  prop9_cur_ = nb_.W + nb_.N - nb_.NW;
  props_[8] = nb_.W - prev9_;
  props_[9] = prop9_cur_;
  props_[10] = nb_.W - nb_.NW;
  props_[11] = nb_.NW - nb_.N;
  props_[12] = nb_.N - nb_.NE;
  props_[13] = nb_.N - nb_.NN;
  props_[14] = nb_.W - nb_.WW;
  props_[15] = max_error;
  for (size_t k = 0; k < prev_.size(); k++) {
    size_t base = 16 + 4 * k;
    if (base >= props_.size()) break;
    int64_t pv = prev_[k]->at(x, y);
    Neighbors pn = gather_neighbors(*prev_[k], x, y);
    int64_t perr = pv - clamp_gradient(pn.W, pn.N, pn.NW);
    props_[base] = std::abs(pv);
    if (base + 1 < props_.size()) props_[base + 1] = pv;
    if (base + 2 < props_.size()) props_[base + 2] = std::abs(perr);
    if (base + 3 < props_.size()) props_[base + 3] = perr;
  }
}

void ChannelScan::commit(int64_t value) {
  prev9_ = prop9_cur_;
  if (wp_) wp_->commit(x_, y_, value);
}

uint32_t modular_lz77_width(const std::vector<Channel*>& channels) {
  uint64_t best_area = 0;
  uint32_t w = 1;
  for (const Channel* c : channels) {
    uint64_t area = uint64_t(c->width) * c->height;
    if (area > best_area) {
      best_area = area;
      w = c->width;
    }
  }
  return std::max<uint32_t>(w, 1);
}

void encode_modular_stream(BitWriter& bw,
                           const std::vector<Channel*>& channels,
                           uint32_t stream_index,
                           const ModularEncodeOptions& opts) {
  const MaTree& tree = opts.global_tree ? *opts.global_tree : opts.local_tree;
  check(tree.num_leaves > 0, "tree not finalized");
  bw.write_bit(opts.global_tree != nullptr);
  write_wp_params(bw, opts.wp);
  if (!opts.global_tree) write_tree(bw, opts.local_tree);

  EntropyEncoder enc(tree.num_leaves);
  size_t num_props = size_t(tree.max_property) + 1;
  std::vector<const Channel*> coded;
  for (size_t ci = 0; ci < channels.size(); ci++) {
    Channel& ch = *channels[ci];
    check(ch.width > 0 && ch.height > 0, "empty channel");
    ChannelScan scan(ch, uint32_t(ci), stream_index, coded, num_props,
                     tree.uses_weighted, opts.wp);
    for (uint32_t y = 0; y < ch.height; y++) {
      for (uint32_t x = 0; x < ch.width; x++) {
        scan.begin(x, y);
        const MaTreeNode& leaf = tree.lookup(scan.props());
        int64_t guess = scan.predict(leaf.predictor);
        int64_t r = int64_t(ch.at(x, y)) - guess - leaf.offset;
        int64_t q = r;
        if (leaf.multiplier != 1) {
          q = r / int64_t(leaf.multiplier);
          if (q * int64_t(leaf.multiplier) != r)
            check(!opts.lossless, "residual not a multiplier multiple");
        }
        enc.put(leaf.context, pack_signed(q));
        int64_t recon = guess + q * int64_t(leaf.multiplier) + leaf.offset;
        check(recon >= INT32_MIN && recon <= INT32_MAX, "sample overflow");
        ch.at(x, y) = int32_t(recon);
        scan.commit(recon);
      }
    }
    coded.insert(coded.begin(), &ch);
  }
  EntropyEncodeOptions eopts = opts.entropy;
  eopts.channel_width = modular_lz77_width(channels);
  enc.finish(bw, eopts);
}

void decode_modular_stream(BitReader& br,
                           const std::vector<Channel*>& channels,
                           uint32_t stream_index, const MaTree* global_tree) {
  bool use_global = br.read_bit();
  check_corrupt(!use_global || global_tree != nullptr,
                "stream needs a global tree");
  WpParams wp = read_wp_params(br);
  MaTree local;
  if (!use_global) local = read_tree(br);
  const MaTree& tree = use_global ? *global_tree : local;

  EntropyDecoder dec(br, tree.num_leaves, modular_lz77_width(channels));
  size_t num_props = size_t(tree.max_property) + 1;
  std::vector<const Channel*> coded;
  for (size_t ci = 0; ci < channels.size(); ci++) {
    Channel& ch = *channels[ci];
    check_corrupt(ch.width > 0 && ch.height > 0, "empty channel");
    ChannelScan scan(ch, uint32_t(ci), stream_index, coded, num_props,
                     tree.uses_weighted, wp);
    for (uint32_t y = 0; y < ch.height; y++) {
      for (uint32_t x = 0; x < ch.width; x++) {
        scan.begin(x, y);
        const MaTreeNode& leaf = tree.lookup(scan.props());
        int64_t guess = scan.predict(leaf.predictor);
        int64_t diff = unpack_signed(dec.read(leaf.context));
        int64_t v = guess + diff * int64_t(leaf.multiplier) + leaf.offset;
        check_corrupt(v >= INT32_MIN && v <= INT32_MAX, "sample overflow");
        ch.at(x, y) = int32_t(v);
        scan.commit(v);
      }
    }
    coded.insert(coded.begin(), &ch);
  }
  dec.finalize();
}

}  // namespace modcodec
