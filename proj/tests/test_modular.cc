#include "modcodec/modular.h"

#include <functional>
#include <random>
#include <vector>

#include "doctest.h"

using namespace modcodec;

namespace {

Channel make_channel(uint32_t w, uint32_t h,
                     const std::function<int32_t(uint32_t, uint32_t)>& f) {
  Channel ch(w, h);
  for (uint32_t y = 0; y < h; y++)
    for (uint32_t x = 0; x < w; x++) ch.at(x, y) = f(x, y);
  return ch;
}

void roundtrip_stream(std::vector<Channel> chans,
                      const ModularEncodeOptions& opts,
                      uint32_t stream_index = 0) {
  std::vector<Channel> orig = chans;
  std::vector<Channel*> ptrs;
  for (auto& c : chans) ptrs.push_back(&c);
  BitWriter bw;
  encode_modular_stream(bw, ptrs, stream_index, opts);

  std::vector<Channel> out;
  for (auto& c : orig) out.emplace_back(c.width, c.height, c.hshift, c.vshift);
  std::vector<Channel*> optrs;
  for (auto& c : out) optrs.push_back(&c);
  BitReader br(bw.bytes());
  decode_modular_stream(br, optrs, stream_index, opts.global_tree);
  br.align_to_byte();
  REQUIRE(br.bits_remaining() == 0);
  for (size_t i = 0; i < orig.size(); i++)
    REQUIRE(out[i].samples == orig[i].samples);
}

MaTree random_tree(std::mt19937& rng, uint32_t num_props) {
  MaTree t;
  t.nodes.emplace_back();
  for (size_t i = 0; i < t.nodes.size(); i++) {
    if (t.nodes.size() + 2 <= 48 && rng() % 100 < 45) {
      MaTreeNode& n = t.nodes[i];
      n.property = int32_t(rng() % num_props);
      n.threshold = int64_t(rng() % 512) - 256;
      n.left = uint32_t(t.nodes.size());
      t.nodes.emplace_back();
      t.nodes.emplace_back();
    } else {
      MaTreeNode& n = t.nodes[i];
      n.property = -1;
      n.predictor = rng() % kNumPredictors;
      n.multiplier = 1;
      n.offset = int64_t(rng() % 21) - 10;
    }
  }
  t.finalize();
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Neighborhood

TEST_CASE("border samples substitute missing neighbors") {
  Channel ch = make_channel(4, 3, [](uint32_t x, uint32_t y) {
    return int32_t(10 * y + x);  // row y: 10y .. 10y+3
  });
  // very first sample: everything zero
  Neighbors nb = gather_neighbors(ch, 0, 0);
  CHECK(nb.W == 0);
  CHECK(nb.N == 0);
  CHECK(nb.NW == 0);
  CHECK(nb.NE == 0);
  CHECK(nb.NN == 0);
  CHECK(nb.WW == 0);
  CHECK(nb.NEE == 0);

  // top row: N and company collapse into W
  nb = gather_neighbors(ch, 2, 0);
  CHECK(nb.W == 1);
  CHECK(nb.N == 1);
  CHECK(nb.NW == 1);
  CHECK(nb.NE == 1);
  CHECK(nb.NN == 1);
  CHECK(nb.NEE == 1);
  CHECK(nb.WW == 0);

  // left column: W becomes N
  nb = gather_neighbors(ch, 0, 1);
  CHECK(nb.N == 0);
  CHECK(nb.W == 0);
  CHECK(nb.NW == 0);
  CHECK(nb.WW == 0);
  CHECK(nb.NE == 1);
  CHECK(nb.NEE == 2);

  // interior
  nb = gather_neighbors(ch, 1, 2);
  CHECK(nb.W == 20);
  CHECK(nb.N == 11);
  CHECK(nb.NW == 10);
  CHECK(nb.NE == 12);
  CHECK(nb.NN == 1);
  CHECK(nb.WW == 20);  // x == 1, so WW falls back to W
  CHECK(nb.NEE == 13);

  // right edge: NE and NEE fall back
  nb = gather_neighbors(ch, 3, 1);
  CHECK(nb.NE == 3);   // == N
  CHECK(nb.NEE == 3);
  nb = gather_neighbors(ch, 2, 1);
  CHECK(nb.NE == 3);
  CHECK(nb.NEE == 3);  // x+2 out of range, falls back to NE
}

// ---------------------------------------------------------------------------
// Predictors

TEST_CASE("predictor formulas match their definitions") {
  Neighbors nb{};
  nb.W = 10;
  nb.N = 20;
  nb.NW = 5;
  CHECK(predict_static(kPredZero, nb) == 0);
  CHECK(predict_static(kPredW, nb) == 10);
  CHECK(predict_static(kPredN, nb) == 20);
  CHECK(predict_static(kPredAvgWN, nb) == 15);
  // unclamped gradient 25 exceeds max(W, N)
  CHECK(predict_static(kPredGradient, nb) == 20);

  // Select resolves ties toward N
  nb.N = 5;
  nb.W = 3;
  nb.NW = 4;
  CHECK(predict_static(kPredSelect, nb) == 5);
  nb.NW = 5;  // |N-NW| = 0 < |W-NW| = 2
  CHECK(predict_static(kPredSelect, nb) == 3);

  // a constant nonnegative neighborhood passes through AvgAll
  for (int64_t v : {0, 1, 7, 200, 100000}) {
    Neighbors c{v, v, v, v, v, v, v};
    CHECK(predict_static(kPredAvgAll, c) == v);
  }

  // averages truncate toward zero
  nb.W = -3;
  nb.N = 2;
  CHECK(predict_static(kPredAvgWN, nb) == 0);
  nb.N = -2;
  nb.NW = -7;
  CHECK(predict_static(kPredAvgWNW, nb) == -5);
}

TEST_CASE("gradient stays inside the W..N range") {
  std::mt19937 rng(9);
  for (int i = 0; i < 20000; i++) {
    Neighbors nb{};
    nb.W = int64_t(rng() % 2001) - 1000;
    nb.N = int64_t(rng() % 2001) - 1000;
    nb.NW = int64_t(rng() % 2001) - 1000;
    int64_t g = predict_static(kPredGradient, nb);
    CHECK(g >= std::min(nb.W, nb.N));
    CHECK(g <= std::max(nb.W, nb.N));
  }
}

// ---------------------------------------------------------------------------
// Trees

TEST_CASE("tree lookup follows strict greater-than") {
  MaTree t;
  MaTreeNode root;
  root.property = 0;
  root.threshold = 0;
  root.left = 1;
  t.nodes.push_back(root);
  MaTreeNode a, b;
  a.property = -1;
  a.predictor = kPredW;
  b.property = -1;
  b.predictor = kPredN;
  t.nodes.push_back(a);
  t.nodes.push_back(b);
  t.finalize();
  CHECK(t.num_leaves == 2);

  std::vector<int64_t> props(16, 0);
  CHECK(t.lookup(props).predictor == uint32_t(kPredN));  // 0 > 0 is false
  props[0] = 1;
  CHECK(t.lookup(props).predictor == uint32_t(kPredW));
  props[0] = -1;
  CHECK(t.lookup(props).predictor == uint32_t(kPredN));

  MaTree leaf = MaTree::single_leaf(kPredGradient);
  CHECK(leaf.num_leaves == 1);
  CHECK(leaf.lookup(props).predictor == uint32_t(kPredGradient));
}

TEST_CASE("finalize rejects malformed trees") {
  MaTree t;
  MaTreeNode root;
  root.property = 0;
  root.left = 1;
  t.nodes.push_back(root);
  t.nodes.emplace_back();  // only one child
  CHECK_THROWS_AS(t.finalize(), Error);

  MaTree t2;
  t2.nodes.emplace_back();
  t2.nodes.emplace_back();  // unreachable trailing node
  CHECK_THROWS_AS(t2.finalize(), Error);
}

static void check_tree_equal(const MaTree& a, const MaTree& b) {
  REQUIRE(a.nodes.size() == b.nodes.size());
  for (size_t i = 0; i < a.nodes.size(); i++) {
    const MaTreeNode& x = a.nodes[i];
    const MaTreeNode& y = b.nodes[i];
    CHECK(x.property == y.property);
    if (x.is_leaf()) {
      CHECK(x.predictor == y.predictor);
      CHECK(x.multiplier == y.multiplier);
      CHECK(x.offset == y.offset);
      CHECK(x.context == y.context);
    } else {
      CHECK(x.threshold == y.threshold);
      CHECK(x.left == y.left);
    }
  }
}

TEST_CASE("trees round-trip through their wire format") {
  auto rt = [](const MaTree& t) {
    BitWriter bw;
    write_tree(bw, t);
    BitReader br(bw.bytes());
    MaTree got = read_tree(br);
    check_tree_equal(t, got);
  };

  rt(MaTree::single_leaf(kPredGradient));
  rt(MaTree::single_leaf(kPredWeighted, 3, -17));

  {
    // five nodes: two decisions, three leaves
    MaTree t;
    MaTreeNode root;
    root.property = 9;
    root.threshold = 0;
    root.left = 1;
    t.nodes.push_back(root);
    MaTreeNode d;
    d.property = 15;
    d.threshold = 7;
    d.left = 3;
    t.nodes.push_back(d);
    MaTreeNode l1, l2, l3;
    l1.property = l2.property = l3.property = -1;
    l1.predictor = kPredW;
    l2.predictor = kPredWeighted;
    l3.predictor = kPredGradient;
    l3.offset = 4;
    t.nodes.push_back(l1);
    t.nodes.push_back(l2);
    t.nodes.push_back(l3);
    t.finalize();
    CHECK(t.num_leaves == 3);
    CHECK(t.uses_weighted);
    CHECK(t.max_property == 15);
    rt(t);
  }

  {
    // a 16-deep comb: decision nodes all the way down one side
    MaTree t;
    for (int d = 0; d < 16; d++) {
      MaTreeNode n;
      n.property = d % 16;
      n.threshold = d * 3 - 20;
      n.left = uint32_t(t.nodes.size() + 1);
      t.nodes.push_back(n);
      MaTreeNode leaf;
      leaf.property = -1;
      leaf.predictor = d % kNumPredictors;
      t.nodes.push_back(leaf);
    }
    MaTreeNode last;
    last.property = -1;
    last.predictor = kPredNE;
    t.nodes.push_back(last);
    t.finalize();
    CHECK(t.num_leaves == 17);
    rt(t);
  }

  {
    std::mt19937 rng(12);
    for (int i = 0; i < 50; i++) rt(random_tree(rng, 20));
  }
}

// ---------------------------------------------------------------------------
// Weighted predictor

TEST_CASE("weighted predictor nails constant channels after the first sample") {
  for (int32_t v : {0, 1, -37, 255, -100000, 1 << 29, -(1 << 29)}) {
    Channel ch = make_channel(17, 9, [&](uint32_t, uint32_t) { return v; });
    WeightedPredictor wp(ch.width, WpParams{});
    for (uint32_t y = 0; y < ch.height; y++) {
      for (uint32_t x = 0; x < ch.width; x++) {
        Neighbors nb = gather_neighbors(ch, x, y);
        int64_t max_error = 0;
        int64_t p = wp.predict(x, y, nb, &max_error);
        if (x == 0 && y == 0) {
          CHECK(p == 0);
        } else {
          CHECK(p == v);
        }
        wp.commit(x, y, ch.at(x, y));
      }
    }
  }
}

TEST_CASE("weighted predictor is deterministic") {
  Channel ch = make_channel(23, 11, [](uint32_t x, uint32_t y) {
    return int32_t((x * 7919 + y * 104729) % 257) - 128;
  });
  std::vector<int64_t> preds[2], errs[2];
  for (int run = 0; run < 2; run++) {
    WeightedPredictor wp(ch.width, WpParams{});
    for (uint32_t y = 0; y < ch.height; y++)
      for (uint32_t x = 0; x < ch.width; x++) {
        Neighbors nb = gather_neighbors(ch, x, y);
        int64_t max_error = 0;
        preds[run].push_back(wp.predict(x, y, nb, &max_error));
        errs[run].push_back(max_error);
        wp.commit(x, y, ch.at(x, y));
      }
  }
  CHECK(preds[0] == preds[1]);
  CHECK(errs[0] == errs[1]);
}

TEST_CASE("weighted predictor residuals on a horizontal ramp are frozen") {
  Channel ch = make_channel(16, 16, [](uint32_t x, uint32_t) {
    return int32_t(x);
  });
  WeightedPredictor wp(ch.width, WpParams{});
  int nonzero = 0;
  for (uint32_t y = 0; y < 16; y++) {
    for (uint32_t x = 0; x < 16; x++) {
      Neighbors nb = gather_neighbors(ch, x, y);
      int64_t max_error = 0;
      int64_t r = ch.at(x, y) - wp.predict(x, y, nb, &max_error);
      // the only misses are the ramp steps of the very first row
      if (y == 0 && x > 0) {
        CHECK(r == 1);
        nonzero++;
      } else {
        CHECK(r == 0);
      }
      wp.commit(x, y, ch.at(x, y));
    }
  }
  CHECK(nonzero == 15);
}

TEST_CASE("predictor weights round-trip on the wire") {
  BitWriter bw;
  write_wp_params(bw, WpParams{});
  CHECK(bw.bits_written() == 1);
  BitReader br(bw.bytes());
  WpParams d = read_wp_params(br);
  CHECK(d.weights[0] == 16);
  CHECK(d.weights[2] == 7);
  CHECK(d.multipliers[0] == 13);

  WpParams p;
  p.weights[0] = 31;
  p.weights[6] = 1;
  p.multipliers[3] = 5;
  BitWriter bw2;
  write_wp_params(bw2, p);
  CHECK(bw2.bits_written() == 1 + 7 * 5 + 4 * 4);
  BitReader br2(bw2.bytes());
  WpParams q = read_wp_params(br2);
  for (int i = 0; i < 7; i++) CHECK(q.weights[i] == p.weights[i]);
  for (int i = 0; i < 4; i++) CHECK(q.multipliers[i] == p.multipliers[i]);
}

// ---------------------------------------------------------------------------
// Channel streams

TEST_CASE("streams round-trip under every predictor") {
  std::mt19937 rng(21);
  for (uint32_t pred = 0; pred < kNumPredictors; pred++) {
    std::vector<Channel> chans;
    chans.push_back(make_channel(19, 13, [&](uint32_t, uint32_t) {
      return int32_t(rng() % 511) - 255;
    }));
    ModularEncodeOptions opts;
    opts.local_tree = MaTree::single_leaf(pred);
    roundtrip_stream(std::move(chans), opts);
  }
}

TEST_CASE("streams round-trip under random trees") {
  std::mt19937 rng(22);
  for (int iter = 0; iter < 1000; iter++) {
    uint32_t w = 1 + rng() % 16;
    uint32_t h = 1 + rng() % 16;
    int32_t amp = 1 << (rng() % 12);
    std::vector<Channel> chans;
    uint32_t nchan = 1 + rng() % 3;
    for (uint32_t c = 0; c < nchan; c++)
      chans.push_back(make_channel(w, h, [&](uint32_t, uint32_t) {
        return int32_t(rng() % (2 * amp + 1)) - amp;
      }));
    ModularEncodeOptions opts;
    opts.local_tree = random_tree(rng, 16 + 4 * nchan);
    opts.entropy.try_lz77 = rng() % 2 == 0;
    opts.entropy.use_prefix_code = rng() % 4 == 0;
    roundtrip_stream(std::move(chans), opts, rng() % 5);
  }
}

TEST_CASE("streams round-trip for every tiny ternary channel") {
  std::mt19937 rng(23);
  MaTree tree = random_tree(rng, 16);
  ModularEncodeOptions opts;
  opts.local_tree = tree;
  for (uint32_t code = 0; code < 19683; code++) {  // 3^9 channels
    Channel ch(3, 3);
    uint32_t c = code;
    for (int i = 0; i < 9; i++) {
      ch.samples[i] = int32_t(c % 3) - 1;
      c /= 3;
    }
    std::vector<Channel> chans{ch};
    roundtrip_stream(std::move(chans), opts);
  }
}

TEST_CASE("streams round-trip at the extremes of the sample range") {
  std::mt19937 rng(24);
  std::vector<Channel> chans;
  chans.push_back(make_channel(24, 15, [&](uint32_t, uint32_t) {
    int64_t v = int64_t(rng() % (1u << 31)) - (int64_t(1) << 30);
    return int32_t(v);  // [-2^30, 2^30)
  }));
  for (uint32_t pred : {kPredZero, kPredGradient, kPredWeighted, kPredAvgAll}) {
    ModularEncodeOptions opts;
    opts.local_tree = MaTree::single_leaf(pred);
    roundtrip_stream(chans, opts);
  }
}

TEST_CASE("a global tree replaces the local one on the wire") {
  MaTree global = MaTree::single_leaf(kPredGradient);
  std::mt19937 rng(25);
  std::vector<Channel> chans;
  chans.push_back(make_channel(9, 9, [&](uint32_t x, uint32_t y) {
    return int32_t(x + y + rng() % 3);
  }));
  ModularEncodeOptions opts;
  opts.global_tree = &global;
  roundtrip_stream(chans, opts, 3);

  // the same stream must fail to decode without the tree
  std::vector<Channel*> ptrs;
  for (auto& c : chans) ptrs.push_back(&c);
  BitWriter bw;
  encode_modular_stream(bw, ptrs, 3, opts);
  Channel out(9, 9);
  std::vector<Channel*> optrs{&out};
  BitReader br(bw.bytes());
  CHECK_THROWS_AS(decode_modular_stream(br, optrs, 3, nullptr), CorruptError);
}

TEST_CASE("previous channels feed the property vector") {
  // root decides on property 17 (previous channel value)
  MaTree t;
  MaTreeNode root;
  root.property = 17;
  root.threshold = 50;
  root.left = 1;
  t.nodes.push_back(root);
  MaTreeNode a, b;
  a.property = b.property = -1;
  a.predictor = kPredN;
  b.predictor = kPredW;
  t.nodes.push_back(a);
  t.nodes.push_back(b);
  t.finalize();

  std::mt19937 rng(26);
  std::vector<Channel> chans;
  for (int c = 0; c < 3; c++)
    chans.push_back(make_channel(14, 10, [&](uint32_t, uint32_t) {
      return int32_t(rng() % 100);
    }));
  ModularEncodeOptions opts;
  opts.local_tree = t;
  roundtrip_stream(std::move(chans), opts);

  // mixed dimensions: only matching channels qualify
  std::vector<Channel> mixed;
  mixed.push_back(make_channel(8, 8, [&](uint32_t, uint32_t) {
    return int32_t(rng() % 100);
  }));
  mixed.push_back(make_channel(14, 10, [&](uint32_t, uint32_t) {
    return int32_t(rng() % 100);
  }));
  mixed.push_back(make_channel(14, 10, [&](uint32_t, uint32_t) {
    return int32_t(rng() % 100);
  }));
  roundtrip_stream(std::move(mixed), opts);
}

TEST_CASE("multipliers scale residuals exactly when they divide") {
  // all samples multiples of 3, Zero predictor, multiplier 3
  std::mt19937 rng(27);
  std::vector<Channel> chans;
  chans.push_back(make_channel(11, 7, [&](uint32_t, uint32_t) {
    return 3 * (int32_t(rng() % 201) - 100);
  }));
  ModularEncodeOptions opts;
  opts.local_tree = MaTree::single_leaf(kPredZero, 3);
  roundtrip_stream(chans, opts);

  // a residual that is not a multiple must fail in lossless mode
  chans[0].at(4, 4) = 7;
  std::vector<Channel*> ptrs{&chans[0]};
  BitWriter bw;
  CHECK_THROWS_AS(encode_modular_stream(bw, ptrs, 0, opts), Error);

  // and quantize toward zero in lossy mode
  ModularEncodeOptions lossy = opts;
  lossy.lossless = false;
  Channel work = chans[0];
  std::vector<Channel*> wptrs{&work};
  BitWriter bw2;
  encode_modular_stream(bw2, wptrs, 0, lossy);
  CHECK(work.at(4, 4) == 6);  // 7 -> floor toward zero at multiplier 3
  Channel out(11, 7);
  std::vector<Channel*> optrs{&out};
  BitReader br(bw2.bytes());
  decode_modular_stream(br, optrs, 0, nullptr);
  CHECK(out.samples == work.samples);
}

TEST_CASE("offsets shift the residual domain without losing anything") {
  std::vector<Channel> chans;
  chans.push_back(make_channel(9, 5, [](uint32_t x, uint32_t y) {
    return int32_t(100 + x + y);
  }));
  ModularEncodeOptions opts;
  opts.local_tree = MaTree::single_leaf(kPredZero, 1, 100);
  roundtrip_stream(std::move(chans), opts);
}

TEST_CASE("truncated channel streams fail loudly") {
  std::mt19937 rng(28);
  std::vector<Channel> chans;
  chans.push_back(make_channel(32, 32, [&](uint32_t, uint32_t) {
    return int32_t(rng() % 4096);
  }));
  std::vector<Channel*> ptrs{&chans[0]};
  ModularEncodeOptions opts;
  opts.local_tree = MaTree::single_leaf(kPredGradient);
  BitWriter bw;
  encode_modular_stream(bw, ptrs, 0, opts);
  auto bytes = bw.take();
  bytes.resize(bytes.size() / 3);
  Channel out(32, 32);
  std::vector<Channel*> optrs{&out};
  BitReader br(bytes);
  CHECK_THROWS_AS(decode_modular_stream(br, optrs, 0, nullptr), CorruptError);
}
