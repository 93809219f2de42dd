#include "modcodec/heuristics.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "doctest.h"
#include "modcodec/modular.h"
#include "modcodec/transforms.h"

using namespace modcodec;

namespace {

Channel make_channel(uint32_t w, uint32_t h,
                     const std::function<int32_t(uint32_t, uint32_t)>& f) {
  Channel ch(w, h);
  for (uint32_t y = 0; y < h; y++)
    for (uint32_t x = 0; x < w; x++) ch.at(x, y) = f(x, y);
  return ch;
}

Image make_image(std::vector<Channel> chans, uint32_t bit_depth = 8) {
  Image img;
  img.width = chans[0].width;
  img.height = chans[0].height;
  img.bit_depth = bit_depth;
  img.channels = std::move(chans);
  return img;
}

// Smooth waves plus mild noise; stands in for a photographic crop.
Channel photo_channel(uint32_t w, uint32_t h, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_int_distribution<int> noise(-4, 4);
  Channel ch(w, h);
  for (uint32_t y = 0; y < h; y++) {
    for (uint32_t x = 0; x < w; x++) {
      double v = 128.0 + 50.0 * std::sin(x / 9.0) * std::sin(y / 7.0) +
                 30.0 * std::sin((x + double(y)) / 23.0);
      int s = int(std::lround(v)) + noise(rng);
      ch.at(x, y) = std::clamp(s, 0, 255);
    }
  }
  return ch;
}

// Shared luma with small independent per-channel noise: strongly correlated
// planes where a color rotation should clearly pay off.
Image photo_rgb(uint32_t w, uint32_t h, uint32_t seed) {
  Channel base = photo_channel(w, h, seed);
  std::mt19937 rng(seed * 77 + 1);
  std::uniform_int_distribution<int> noise(-3, 3);
  std::vector<Channel> chans;
  for (int c = 0; c < 3; c++) {
    Channel ch(w, h);
    for (size_t i = 0; i < ch.samples.size(); i++)
      ch.samples[i] = std::clamp(base.samples[i] + noise(rng), 0, 255);
    chans.push_back(std::move(ch));
  }
  return make_image(std::move(chans));
}

TreeSamples gather_samples(const std::vector<const Channel*>& chans,
                           std::vector<uint32_t> predictors,
                           size_t num_props = 16) {
  uint64_t total = 0;
  for (const Channel* ch : chans) total += uint64_t(ch->width) * ch->height;
  TreeSamples ts(std::move(predictors), num_props, false, total);
  ts.add_stream(chans, 0, WpParams{});
  return ts;
}

size_t stream_bits(std::vector<Channel> chans, const MaTree& tree) {
  std::vector<Channel*> ptrs;
  for (auto& c : chans) ptrs.push_back(&c);
  ModularEncodeOptions opts;
  opts.local_tree = tree;
  BitWriter bw;
  encode_modular_stream(bw, ptrs, 0, opts);
  return bw.bits_written();
}

void roundtrip_stream(std::vector<Channel> chans, const MaTree& tree) {
  std::vector<Channel> orig = chans;
  std::vector<Channel*> ptrs;
  for (auto& c : chans) ptrs.push_back(&c);
  ModularEncodeOptions opts;
  opts.local_tree = tree;
  BitWriter bw;
  encode_modular_stream(bw, ptrs, 0, opts);

  std::vector<Channel> out;
  for (auto& c : orig) out.emplace_back(c.width, c.height, c.hshift, c.vshift);
  std::vector<Channel*> optrs;
  for (auto& c : out) optrs.push_back(&c);
  BitReader br(bw.bytes());
  decode_modular_stream(br, optrs, 0, nullptr);
  br.align_to_byte();
  REQUIRE(br.bits_remaining() == 0);
  for (size_t i = 0; i < orig.size(); i++)
    REQUIRE(out[i].samples == orig[i].samples);
}

bool trees_equal(const MaTree& a, const MaTree& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  for (size_t i = 0; i < a.nodes.size(); i++) {
    const MaTreeNode &x = a.nodes[i], &y = b.nodes[i];
    if (x.property != y.property || x.threshold != y.threshold ||
        x.left != y.left || x.predictor != y.predictor ||
        x.multiplier != y.multiplier || x.offset != y.offset)
      return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Effort ladder

TEST_CASE("effort ladder grows monotonically") {
  CHECK_THROWS_AS(effort_config(0), Error);
  CHECK_THROWS_AS(effort_config(10), Error);

  EffortConfig e1 = effort_config(1);
  CHECK(!e1.lz77);
  CHECK(!e1.learn_trees);
  CHECK(!e1.wp_property);
  CHECK(e1.rct_candidates.empty());
  CHECK(e1.palette_threshold == 0);
  CHECK(e1.prev_channel_props == 0);
  CHECK(e1.num_props() == 16);

  EffortConfig e2 = effort_config(2);
  CHECK(e2.lz77);
  CHECK(e2.rct_candidates == std::vector<uint32_t>{6});
  CHECK(!e2.learn_trees);

  EffortConfig e3 = effort_config(3);
  CHECK(e3.rct_candidates == std::vector<uint32_t>({0, 6, 10}));
  CHECK(e3.palette_threshold == 256);

  EffortConfig e4 = effort_config(4);
  CHECK(e4.learn_trees);
  CHECK(e4.tree_predictors ==
        std::vector<uint32_t>({kPredGradient, kPredW, kPredN}));

  EffortConfig e5 = effort_config(5);
  CHECK(std::count(e5.tree_predictors.begin(), e5.tree_predictors.end(),
                   kPredSelect) == 1);
  CHECK(std::count(e5.tree_predictors.begin(), e5.tree_predictors.end(),
                   kPredAvgWN) == 1);
  CHECK(e5.palette_threshold == 512);

  EffortConfig e6 = effort_config(6);
  CHECK(std::count(e6.tree_predictors.begin(), e6.tree_predictors.end(),
                   kPredWeighted) == 1);
  CHECK(e6.wp_property);

  EffortConfig e7 = effort_config(7);
  CHECK(e7.prev_channel_props == 3);
  CHECK(e7.num_props() == 28);

  EffortConfig e8 = effort_config(8);
  CHECK(e8.tree_predictors.size() == kNumPredictors);
  CHECK(e8.rct_candidates.size() == kNumRctTypes);

  EffortConfig e9 = effort_config(9);
  CHECK(e9.palette_threshold == 1024);

  for (uint32_t e = 2; e <= 9; e++) {
    EffortConfig lo = effort_config(e - 1), hi = effort_config(e);
    CHECK(hi.tree_predictors.size() >= lo.tree_predictors.size());
    CHECK(hi.rct_candidates.size() >= lo.rct_candidates.size());
    CHECK(hi.palette_threshold >= lo.palette_threshold);
    CHECK(hi.lz77 >= lo.lz77);
  }
}

// ---------------------------------------------------------------------------
// Fixed tree

TEST_CASE("fixed context tree has sixteen distinct gradient leaves") {
  MaTree t = fixed_context_tree();
  REQUIRE(t.nodes.size() == 31);
  CHECK(t.num_leaves == 16);
  CHECK(t.max_property == 13);
  CHECK(!t.uses_weighted);
  CHECK(t.nodes[0].property == 10);
  CHECK(t.nodes[0].threshold == 0);

  // every sign pattern of properties 10..13 reaches its own leaf
  std::set<uint32_t> contexts;
  std::vector<int64_t> props(16, 0);
  for (int mask = 0; mask < 16; mask++) {
    for (int b = 0; b < 4; b++) props[10 + b] = (mask >> b & 1) ? 1 : -1;
    const MaTreeNode& leaf = t.lookup(props);
    CHECK(leaf.predictor == kPredGradient);
    contexts.insert(leaf.context);
  }
  CHECK(contexts.size() == 16);
}

// ---------------------------------------------------------------------------
// Sample collection

TEST_CASE("tree samples record positions and residual tokens") {
  Channel ch = make_channel(3, 2, [](uint32_t x, uint32_t y) {
    return int32_t(y + 2 * x);  // rows 0,2,4 / 1,3,5
  });
  TreeSamples ts = gather_samples({&ch}, {kPredW});
  REQUIRE(ts.size() == 6);
  CHECK(ts.num_props() == 16);
  for (uint32_t y = 0; y < 2; y++) {
    for (uint32_t x = 0; x < 3; x++) {
      size_t i = y * 3 + x;
      CHECK(ts.prop(i, 2) == y);
      CHECK(ts.prop(i, 3) == x);
    }
  }
  // W residual is 2 except at x = 0, where the substituted W is N above
  CHECK(ts.token(0, 0) == 0);                   // 0 - 0
  CHECK(ts.token(1, 0) == pack_signed(2));
  CHECK(ts.token(3, 0) == pack_signed(1));      // 1 - 0
  CHECK(ts.token(4, 0) == pack_signed(2));
}

TEST_CASE("tree samples honor the sampling budget") {
  Channel ch = make_channel(100, 10, [](uint32_t x, uint32_t y) {
    return int32_t(x + y);
  });
  TreeSamples ts({kPredZero}, 16, false, 1000, 100);
  ts.add_stream({&ch}, 0, WpParams{});
  CHECK(ts.size() == 100);
}

TEST_CASE("tree samples survive extreme sample values") {
  Channel ch = make_channel(16, 16, [](uint32_t x, uint32_t y) {
    return ((x + y) & 1) ? INT32_MAX : INT32_MIN;
  });
  std::vector<uint32_t> all;
  for (uint32_t p = 0; p < kNumPredictors; p++) all.push_back(p);
  TreeSamples ts(all, 16, true, 256);
  ts.add_stream({&ch}, 0, WpParams{});
  MaTree t = learn_tree(ts);
  CHECK(t.num_leaves >= 1);
}

// ---------------------------------------------------------------------------
// Tree learning

TEST_CASE("constant data learns a single leaf") {
  Channel ch = make_channel(32, 32, [](uint32_t, uint32_t) { return 7; });
  TreeSamples ts = gather_samples({&ch}, {kPredGradient, kPredW, kPredN});
  MaTree t = learn_tree(ts);
  REQUIRE(t.nodes.size() == 1);
  CHECK(t.nodes[0].is_leaf());
  CHECK(t.num_leaves == 1);
}

TEST_CASE("two-population data splits on the x coordinate") {
  // left half quiet, right half loud: the x property separates them cleanly
  std::mt19937 rng(99);
  Channel ch = make_channel(64, 32, [&](uint32_t x, uint32_t) {
    if (x < 32) return int32_t(rng() % 2);
    return ((rng() & 1) ? 1000 : -1000) + int32_t(rng() % 2);
  });
  TreeSamples ts = gather_samples({&ch}, {kPredZero});
  MaTree t = learn_tree(ts);
  REQUIRE(t.nodes.size() > 1);
  CHECK(t.nodes[0].property == 3);
  CHECK(t.nodes[0].threshold == 31);
}

TEST_CASE("learned trees re-serialize and drive a stream") {
  Channel ch = photo_channel(96, 64, 5);
  TreeSamples ts = gather_samples({&ch}, {kPredGradient, kPredW, kPredN});
  MaTree t = learn_tree(ts);
  CHECK(t.nodes.size() >= 3);

  BitWriter bw;
  write_tree(bw, t);
  BitReader br(bw.bytes());
  MaTree back = read_tree(br);
  CHECK(trees_equal(t, back));

  roundtrip_stream({ch}, t);
}

TEST_CASE("learning beats the fixed tree on smooth noisy data") {
  Channel ch = photo_channel(128, 128, 17);
  TreeSamples ts = gather_samples({&ch}, {kPredGradient, kPredW, kPredN});
  MaTree learned = learn_tree(ts);
  size_t lb = stream_bits({ch}, learned);
  size_t fb = stream_bits({ch}, fixed_context_tree());
  CHECK(lb <= fb);
}

TEST_CASE("tree learning is deterministic") {
  Channel ch = photo_channel(80, 80, 23);
  TreeSamples a = gather_samples({&ch}, {kPredGradient, kPredW, kPredN});
  TreeSamples b = gather_samples({&ch}, {kPredGradient, kPredW, kPredN});
  CHECK(trees_equal(learn_tree(a), learn_tree(b)));
}

TEST_CASE("node budget caps tree growth") {
  Channel ch = photo_channel(128, 128, 31);
  TreeSamples ts = gather_samples({&ch}, {kPredGradient});
  MaTree t = learn_tree(ts, 0.0, 9);  // at most four splits
  CHECK(t.nodes.size() <= 9);
  CHECK(t.nodes.size() > 1);
}

// ---------------------------------------------------------------------------
// Color rotation choice

TEST_CASE("correlated planes pick a non-identity rotation") {
  Image img = photo_rgb(96, 96, 3);
  uint32_t type = choose_rct(img, 0, {0, 6, 10});
  CHECK(type != 0);
}

TEST_CASE("independent planes keep the identity") {
  std::mt19937 rng(7);
  std::vector<Channel> chans;
  for (int c = 0; c < 3; c++)
    chans.push_back(make_channel(
        64, 64, [&](uint32_t, uint32_t) { return int32_t(rng() % 256); }));
  Image img = make_image(std::move(chans));
  CHECK(choose_rct(img, 0, {0, 6, 10}) == 0);
}

TEST_CASE("rotation search degenerates gracefully") {
  Image img = photo_rgb(1, 1, 4);
  CHECK(choose_rct(img, 0, {0, 6, 10}) == 0);  // too small to sample
  CHECK(choose_rct(img, 0, {17}) == 17);
  CHECK_THROWS_AS(choose_rct(img, 0, {}), Error);
  CHECK_THROWS_AS(choose_rct(img, 0, {42}), Error);
  CHECK_THROWS_AS(choose_rct(img, 1, {0}), Error);
}

TEST_CASE("photographic planes rotate at least nine times in ten") {
  int rotated = 0;
  for (uint32_t i = 0; i < 10; i++) {
    Image img = photo_rgb(64, 64, 100 + i);
    if (choose_rct(img, 0, {0, 6, 10}) != 0) rotated++;
  }
  CHECK(rotated >= 9);
}

TEST_CASE("rotation choice is deterministic") {
  Image img = photo_rgb(64, 64, 55);
  uint32_t a = choose_rct(img, 0, {0, 6, 10});
  uint32_t b = choose_rct(img, 0, {0, 6, 10});
  CHECK(a == b);
}

// ---------------------------------------------------------------------------
// Transform policy

TEST_CASE("few-color art goes through a palette") {
  const int32_t colors[4][3] = {
      {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 255}};
  std::vector<Channel> chans;
  for (int c = 0; c < 3; c++)
    chans.push_back(make_channel(64, 64, [&](uint32_t x, uint32_t y) {
      return colors[(x / 16 + y / 16) % 4][c];
    }));
  Image img = make_image(std::move(chans));

  TransformPolicy pol;
  pol.effort = effort_config(3);
  REQUIRE(choose_transforms(img, pol).size() == 1);
  TransformSpec spec = choose_transforms(img, pol)[0];
  CHECK(spec.kind == TransformKind::kPalette);
  CHECK(spec.begin_c == 0);
  CHECK(spec.num_c == 3);
}

TEST_CASE("grayscale never picks a color rotation") {
  Channel noise = make_channel(128, 128, [](uint32_t x, uint32_t y) {
    return int32_t((x * 7919 + y * 104729) % 65536);
  });
  Image img = make_image({noise}, 16);
  TransformPolicy pol;
  pol.effort = effort_config(3);
  pol.num_color_channels = 1;
  pol.bit_depth = 16;
  CHECK(choose_transforms(img, pol).empty());
}

TEST_CASE("photographic color picks a rotation, not a palette") {
  Image img = photo_rgb(96, 96, 9);
  TransformPolicy pol;
  pol.effort = effort_config(3);
  std::vector<TransformSpec> specs = choose_transforms(img, pol);
  REQUIRE(specs.size() == 1);
  CHECK(specs[0].kind == TransformKind::kRct);
  CHECK(specs[0].rct_type != 0);
}

TEST_CASE("progressive requests append a default squeeze") {
  Image img = photo_rgb(96, 96, 9);
  TransformPolicy pol;
  pol.effort = effort_config(3);
  pol.progressive = true;
  std::vector<TransformSpec> specs = choose_transforms(img, pol);
  REQUIRE(!specs.empty());
  CHECK(specs.back().kind == TransformKind::kSqueeze);
  CHECK(specs.back().steps.empty());
}

TEST_CASE("lossy coding squeezes and skips reversible rewrites") {
  const int32_t colors[2][3] = {{0, 0, 0}, {9000, 9000, 9000}};
  std::vector<Channel> chans;
  for (int c = 0; c < 3; c++)
    chans.push_back(make_channel(32, 32, [&](uint32_t x, uint32_t y) {
      return colors[(x + y) & 1][c];
    }));
  Image img = make_image(std::move(chans), 14);
  TransformPolicy pol;
  pol.effort = effort_config(3);
  pol.bit_depth = 14;
  pol.lossy = true;
  std::vector<TransformSpec> specs = choose_transforms(img, pol);
  REQUIRE(specs.size() == 1);
  CHECK(specs[0].kind == TransformKind::kSqueeze);
}

TEST_CASE("deep samples disable overflow-prone rewrites") {
  std::mt19937 rng(13);
  std::vector<Channel> chans;
  for (int c = 0; c < 3; c++)
    chans.push_back(make_channel(64, 64, [&](uint32_t, uint32_t) {
      return int32_t(rng() % (1u << 28));
    }));
  Image img = make_image(std::move(chans), 28);
  TransformPolicy pol;
  pol.effort = effort_config(3);
  pol.bit_depth = 28;
  pol.progressive = true;
  CHECK(choose_transforms(img, pol).empty());
}
