#include "modcodec/container.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <thread>

#include "modcodec/color.h"
#include "modcodec/entropy.h"
#include "modcodec/heuristics.h"
#include "modcodec/modular.h"

namespace modcodec {

namespace {

constexpr U32Spec kDimSpec =
    u32spec(u32bits(1, 9), u32bits(1, 13), u32bits(1, 18), u32bits(1, 30));
constexpr U32Spec kBitDepthSpec =
    u32spec(u32val(8), u32val(10), u32val(12), u32bits(1, 5));
constexpr U32Spec kNumExtraSpec =
    u32spec(u32val(0), u32val(1), u32bits(2, 4), u32bits(1, 12));
constexpr U32Spec kScaleSpec =
    u32spec(u32val(4096), u32val(1024), u32bits(1, 12), u32bits(1, 16));
constexpr U32Spec kTocEntrySpec = u32spec(
    u32bits(0, 10), u32bits(1024, 14), u32bits(17408, 22), u32bits(4211712, 30));

struct Ratio {
  uint32_t num, den;  // width : height
};
constexpr Ratio kRatios[8] = {{0, 0}, {1, 1},  {6, 5}, {4, 3},
                              {3, 2}, {16, 9}, {5, 4}, {2, 1}};

constexpr uint32_t kMaxGroups = 1u << 20;

void write_size(BitWriter& bw, uint32_t w, uint32_t h) {
  uint32_t ratio = 0;
  for (uint32_t r = 1; r < 8; r++) {
    if (uint64_t(w) * kRatios[r].den == uint64_t(h) * kRatios[r].num) {
      ratio = r;
      break;
    }
  }
  bool small = h % 8 == 0 && h <= 256 &&
               (ratio != 0 || (w % 8 == 0 && w <= 256));
  bw.write_bit(small);
  if (small) {
    bw.write(5, h / 8 - 1);
  } else {
    write_u32(bw, kDimSpec, h);
  }
  bw.write(3, ratio);
  if (ratio == 0) {
    if (small) {
      bw.write(5, w / 8 - 1);
    } else {
      write_u32(bw, kDimSpec, w);
    }
  }
}

void read_size(BitReader& br, uint32_t* w, uint32_t* h) {
  bool small = br.read_bit();
  *h = small ? (br.read(5) + 1) * 8 : read_u32(br, kDimSpec);
  uint32_t ratio = br.read(3);
  if (ratio != 0) {
    uint64_t num = uint64_t(*h) * kRatios[ratio].num;
    check_corrupt(num % kRatios[ratio].den == 0,
                  "aspect ratio does not divide the height");
    uint64_t ww = num / kRatios[ratio].den;
    check_corrupt(ww >= 1 && ww <= kMaxImageDim, "width out of range");
    *w = uint32_t(ww);
  } else {
    *w = small ? (br.read(5) + 1) * 8 : read_u32(br, kDimSpec);
  }
}

// Shifted floor division that tolerates oversized shifts from hostile chains.
uint64_t shift_down(uint64_t v, int s) { return s >= 63 ? 0 : v >> s; }

struct Rect {
  uint32_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  uint32_t w() const { return x1 - x0; }
  uint32_t h() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};

struct Layout {
  uint32_t gdim = 0;
  uint32_t gx_count = 0, gy_count = 0;
  uint32_t num_groups = 0;
  bool collapsed = false;  // single group: every channel codes globally
  uint32_t num_sections = 0;
};

Layout compute_layout(uint32_t w, uint32_t h, uint32_t gdim) {
  Layout l;
  l.gdim = gdim;
  uint64_t gx = (uint64_t(w) + gdim - 1) / gdim;
  uint64_t gy = (uint64_t(h) + gdim - 1) / gdim;
  check_corrupt(gx * gy <= kMaxGroups, "too many groups");
  l.gx_count = uint32_t(gx);
  l.gy_count = uint32_t(gy);
  l.num_groups = uint32_t(gx * gy);
  l.collapsed = l.num_groups == 1;
  l.num_sections = l.collapsed ? 1 : 1 + l.num_groups;
  return l;
}

std::vector<char> global_flags(const Image& img, const Layout& lay) {
  std::vector<char> global(img.channels.size(), 0);
  for (size_t c = 0; c < img.channels.size(); c++) {
    const Channel& ch = img.channels[c];
    global[c] = lay.collapsed || c < img.nb_meta_channels ||
                (ch.width <= lay.gdim && ch.height <= lay.gdim);
  }
  return global;
}

Rect channel_group_rect(const Channel& ch, const Layout& lay, uint32_t g) {
  uint64_t gx0 = uint64_t(g % lay.gx_count) * lay.gdim;
  uint64_t gy0 = uint64_t(g / lay.gx_count) * lay.gdim;
  Rect r;
  r.x0 = uint32_t(std::min<uint64_t>(shift_down(gx0, ch.hshift), ch.width));
  r.x1 = uint32_t(
      std::min<uint64_t>(shift_down(gx0 + lay.gdim, ch.hshift), ch.width));
  r.y0 = uint32_t(std::min<uint64_t>(shift_down(gy0, ch.vshift), ch.height));
  r.y1 = uint32_t(
      std::min<uint64_t>(shift_down(gy0 + lay.gdim, ch.vshift), ch.height));
  return r;
}

void run_parallel(uint32_t num_threads, size_t count,
                  const std::function<void(size_t)>& fn) {
  if (num_threads <= 1 || count <= 1) {
    for (size_t i = 0; i < count; i++) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex mu;
  std::exception_ptr err;
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  size_t n = std::min<size_t>(num_threads, count);
  std::vector<std::thread> threads;
  for (size_t t = 0; t < n; t++) threads.emplace_back(worker);
  for (std::thread& t : threads) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Quantized opponent color

void rgb_to_xyb_ints(Image& img, uint32_t bit_depth, const FrameHeader& fh) {
  double maxv = double((uint64_t(1) << bit_depth) - 1);
  Channel& c0 = img.channels[0];
  Channel& c1 = img.channels[1];
  Channel& c2 = img.channels[2];
  for (size_t i = 0; i < c0.samples.size(); i++) {
    double lr = srgb_to_linear(c0.samples[i] / maxv);
    double lg = srgb_to_linear(c1.samples[i] / maxv);
    double lb = srgb_to_linear(c2.samples[i] / maxv);
    double x, y, bp;
    rgb_to_xyb(lr, lg, lb, &x, &y, &bp);
    c0.samples[i] = int32_t(std::lround(x * fh.scale_x));
    c1.samples[i] = int32_t(std::lround(y * fh.scale_y));
    c2.samples[i] = int32_t(std::lround(bp * fh.scale_b));
  }
}

void xyb_ints_to_rgb(Image& img, uint32_t bit_depth, const FrameHeader& fh) {
  double maxv = double((uint64_t(1) << bit_depth) - 1);
  Channel& c0 = img.channels[0];
  Channel& c1 = img.channels[1];
  Channel& c2 = img.channels[2];
  for (size_t i = 0; i < c0.samples.size(); i++) {
    double lr, lg, lb;
    xyb_to_rgb(c0.samples[i] / double(fh.scale_x),
               c1.samples[i] / double(fh.scale_y),
               c2.samples[i] / double(fh.scale_b), &lr, &lg, &lb);
    int64_t r = std::lround(linear_to_srgb(lr) * maxv);
    int64_t g = std::lround(linear_to_srgb(lg) * maxv);
    int64_t b = std::lround(linear_to_srgb(lb) * maxv);
    c0.samples[i] = int32_t(clamp_val<int64_t>(r, 0, int64_t(maxv)));
    c1.samples[i] = int32_t(clamp_val<int64_t>(g, 0, int64_t(maxv)));
    c2.samples[i] = int32_t(clamp_val<int64_t>(b, 0, int64_t(maxv)));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Headers

void write_image_header(BitWriter& bw, const ImageHeader& h) {
  check(h.stored_width >= 1 && h.stored_width <= kMaxImageDim &&
            h.stored_height >= 1 && h.stored_height <= kMaxImageDim,
        "image dimensions out of range");
  check(h.orientation >= 1 && h.orientation <= 8, "bad orientation");
  check(h.bit_depth >= 1 && h.bit_depth <= 31, "bad bit depth");
  check(h.num_color_channels == 1 || h.num_color_channels == 3,
        "color channel count must be 1 or 3");
  check(h.num_extra_channels <= kMaxExtraChannels, "too many extra channels");
  check(!h.xyb || h.num_color_channels == 3,
        "opponent color needs three channels");
  bw.write(4, kContainerVersion);
  write_size(bw, h.stored_width, h.stored_height);
  bw.write(3, h.orientation - 1);
  write_u32(bw, kBitDepthSpec, h.bit_depth);
  bw.write_bit(h.num_color_channels == 3);
  write_u32(bw, kNumExtraSpec, h.num_extra_channels);
  bw.write_bit(h.xyb);
}

ImageHeader read_image_header(BitReader& br) {
  check_corrupt(br.read(4) == kContainerVersion,
                "unsupported container version");
  ImageHeader h;
  read_size(br, &h.stored_width, &h.stored_height);
  h.orientation = br.read(3) + 1;
  h.bit_depth = read_u32(br, kBitDepthSpec);
  check_corrupt(h.bit_depth >= 1 && h.bit_depth <= 31, "bad bit depth");
  h.num_color_channels = br.read_bit() ? 3 : 1;
  h.num_extra_channels = read_u32(br, kNumExtraSpec);
  check_corrupt(h.num_extra_channels <= kMaxExtraChannels,
                "too many extra channels");
  h.xyb = br.read_bit();
  check_corrupt(!h.xyb || h.num_color_channels == 3,
                "opponent color needs three channels");
  return h;
}

void write_frame_header(BitWriter& bw, const FrameHeader& f, bool xyb) {
  check(f.group_size_shift <= 3, "bad group size shift");
  bw.write(2, f.group_size_shift);
  bw.write_bit(f.progressive);
  if (xyb) {
    for (uint32_t s : {f.scale_x, f.scale_y, f.scale_b}) {
      check(s >= 1 && s <= 65536, "scale out of range");
      write_u32(bw, kScaleSpec, s);
    }
  }
}

FrameHeader read_frame_header(BitReader& br, bool xyb) {
  FrameHeader f;
  f.group_size_shift = br.read(2);
  f.progressive = br.read_bit();
  if (xyb) {
    f.scale_x = read_u32(br, kScaleSpec);
    f.scale_y = read_u32(br, kScaleSpec);
    f.scale_b = read_u32(br, kScaleSpec);
  }
  return f;
}

// ---------------------------------------------------------------------------
// Table of contents

namespace {

// Fenwick tree over [0, n) for rank and k-th order statistics, so hostile
// many-section permutations stay near-linear.
class OrderTracker {
 public:
  explicit OrderTracker(size_t n) : n_(n), bit_(n + 1, 0) {
    for (size_t v = 0; v < n_; v++) add(v, 1);
  }

  size_t count_less(size_t v) const {  // members strictly below v
    int64_t s = 0;
    for (size_t i = v; i > 0; i -= i & (0 - i)) s += bit_[i];
    return size_t(s);
  }

  // k-th smallest member (0-based).
  size_t kth(size_t k) const {
    size_t pos = 0;
    int64_t rem = int64_t(k) + 1;
    for (size_t mask = size_t(1) << floor_log2(n_); mask > 0; mask >>= 1) {
      size_t next = pos + mask;
      if (next <= n_ && bit_[next] < rem) {
        pos = next;
        rem -= bit_[next];
      }
    }
    return pos;  // indices below pos hold exactly k members, so pos is next
  }

  void remove(size_t v) { add(v, -1); }

 private:
  void add(size_t v, int d) {
    for (size_t i = v + 1; i <= n_; i += i & (0 - i)) bit_[i] += d;
  }

  size_t n_;
  std::vector<int64_t> bit_;
};

uint32_t lehmer_context(uint32_t prev) {
  return std::min<uint32_t>(ceil_log2(uint64_t(prev) + 1), 7);
}

}  // namespace

std::vector<uint32_t> lehmer_code(const std::vector<uint32_t>& perm) {
  size_t n = perm.size();
  OrderTracker t(n);
  std::vector<uint32_t> code(n);
  for (size_t i = 0; i < n; i++) {
    check(perm[i] < n, "permutation value out of range");
    size_t rank = t.count_less(perm[i]);
    check(t.count_less(perm[i] + 1) > rank, "duplicate permutation value");
    code[i] = uint32_t(rank);
    t.remove(perm[i]);
  }
  return code;
}

std::vector<uint32_t> lehmer_decode(const std::vector<uint32_t>& code,
                                    size_t n) {
  check(code.size() <= n, "more codes than elements");
  OrderTracker t(n);
  std::vector<uint32_t> perm(n);
  for (size_t i = 0; i < n; i++) {
    uint32_t c = i < code.size() ? code[i] : 0;
    check_corrupt(c < n - i, "permutation code out of range");
    size_t v = t.kth(c);
    perm[i] = uint32_t(v);
    t.remove(v);
  }
  return perm;
}

void write_permutation(BitWriter& bw, const std::vector<uint32_t>& perm) {
  std::vector<uint32_t> code = lehmer_code(perm);
  while (!code.empty() && code.back() == 0) code.pop_back();
  EntropyEncoder enc(8);
  enc.put(0, uint32_t(code.size()));
  uint32_t ctx = 0;
  for (uint32_t c : code) {
    enc.put(ctx, c);
    ctx = lehmer_context(c);
  }
  EntropyEncodeOptions opts;
  enc.finish(bw, opts);
}

std::vector<uint32_t> read_permutation(BitReader& br, uint32_t n) {
  EntropyDecoder dec(br, 8, 1);
  uint32_t count = dec.read(0);
  check_corrupt(count <= n, "permutation longer than section count");
  std::vector<uint32_t> code(count);
  uint32_t ctx = 0;
  for (uint32_t i = 0; i < count; i++) {
    code[i] = dec.read(ctx);
    ctx = lehmer_context(code[i]);
  }
  dec.finalize();
  return lehmer_decode(code, n);
}

void write_toc(BitWriter& bw, const std::vector<uint32_t>& sizes,
               const std::vector<uint32_t>* perm) {
  bw.write_bit(perm != nullptr);
  if (perm) {
    check(perm->size() == sizes.size(), "permutation size mismatch");
    write_permutation(bw, *perm);
  }
  for (uint32_t s : sizes) {
    check(u32_can_encode(kTocEntrySpec, s), "section too large");
    write_u32(bw, kTocEntrySpec, s);
  }
  bw.align_to_byte();
}

Toc read_toc(BitReader& br, uint32_t num_sections) {
  Toc t;
  t.permuted = br.read_bit();
  if (t.permuted) {
    t.perm = read_permutation(br, num_sections);
  } else {
    t.perm.resize(num_sections);
    std::iota(t.perm.begin(), t.perm.end(), 0);
  }
  t.sizes.resize(num_sections);
  for (uint32_t i = 0; i < num_sections; i++)
    t.sizes[i] = read_u32(br, kTocEntrySpec);
  br.align_to_byte();
  return t;
}

// ---------------------------------------------------------------------------
// Orientation

namespace {

void orient_point(uint32_t orientation, uint32_t w, uint32_t h, uint32_t x,
                  uint32_t y, uint32_t* ox, uint32_t* oy) {
  switch (orientation) {
    case 1: *ox = x; *oy = y; break;
    case 2: *ox = w - 1 - x; *oy = y; break;
    case 3: *ox = w - 1 - x; *oy = h - 1 - y; break;
    case 4: *ox = x; *oy = h - 1 - y; break;
    case 5: *ox = y; *oy = x; break;
    case 6: *ox = h - 1 - y; *oy = x; break;
    case 7: *ox = h - 1 - y; *oy = w - 1 - x; break;
    case 8: *ox = y; *oy = w - 1 - x; break;
    default: fail("bad orientation");
  }
}

constexpr uint32_t kInverseOrientation[9] = {0, 1, 2, 3, 4, 5, 8, 7, 6};

}  // namespace

Image apply_orientation(const Image& stored, uint32_t orientation) {
  check(orientation >= 1 && orientation <= 8, "bad orientation");
  if (orientation == 1) return stored;
  bool t = orientation >= 5;
  Image out;
  out.width = t ? stored.height : stored.width;
  out.height = t ? stored.width : stored.height;
  out.bit_depth = stored.bit_depth;
  for (const Channel& ch : stored.channels) {
    check(ch.width == stored.width && ch.height == stored.height,
          "orientation needs full-size channels");
    Channel oc(out.width, out.height);
    for (uint32_t y = 0; y < ch.height; y++) {
      for (uint32_t x = 0; x < ch.width; x++) {
        uint32_t ox, oy;
        orient_point(orientation, ch.width, ch.height, x, y, &ox, &oy);
        oc.at(ox, oy) = ch.at(x, y);
      }
    }
    out.channels.push_back(std::move(oc));
  }
  return out;
}

Image undo_orientation(const Image& display, uint32_t orientation) {
  check(orientation >= 1 && orientation <= 8, "bad orientation");
  if (orientation == 1) return display;
  bool t = orientation >= 5;
  Image out;
  out.width = t ? display.height : display.width;
  out.height = t ? display.width : display.height;
  out.bit_depth = display.bit_depth;
  for (const Channel& ch : display.channels) {
    check(ch.width == display.width && ch.height == display.height,
          "orientation needs full-size channels");
    Channel sc(out.width, out.height);
    for (uint32_t y = 0; y < out.height; y++) {
      for (uint32_t x = 0; x < out.width; x++) {
        uint32_t dx, dy;
        orient_point(orientation, out.width, out.height, x, y, &dx, &dy);
        sc.at(x, y) = ch.at(dx, dy);
      }
    }
    out.channels.push_back(std::move(sc));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<uint8_t> encode_image(const Image& image, const EncodeParams& p) {
  check(p.orientation >= 1 && p.orientation <= 8, "orientation must be 1..8");
  check(p.group_size_shift <= 3, "group size shift must be 0..3");
  check(p.num_color_channels == 1 || p.num_color_channels == 3,
        "color channel count must be 1 or 3");
  check(image.channels.size() >= p.num_color_channels, "missing channels");
  size_t num_extra = image.channels.size() - p.num_color_channels;
  check(num_extra <= kMaxExtraChannels, "too many extra channels");
  check(image.width >= 1 && image.width <= kMaxImageDim &&
            image.height >= 1 && image.height <= kMaxImageDim,
        "image dimensions out of range");
  check(image.bit_depth >= 1 && image.bit_depth <= kMaxEncodeBitDepth,
        "bit depth must be 1..28");
  check(!p.lossy || p.num_color_channels == 3,
        "lossy coding needs three color channels");
  check(!(p.progressive && !p.lossy && image.bit_depth > 26),
        "progressive coding limited to 26-bit samples");
  for (uint32_t s : {p.scale_x, p.scale_y, p.scale_b})
    check(s >= 1 && s <= 65536, "scale out of range");
  int64_t max_sample = (int64_t(1) << image.bit_depth) - 1;
  for (const Channel& ch : image.channels) {
    check(ch.width == image.width && ch.height == image.height,
          "channel dimensions must match the image");
    for (int32_t v : ch.samples)
      check(v >= 0 && v <= max_sample, "sample exceeds the bit depth");
  }
  EffortConfig cfg = effort_config(p.effort);

  ImageHeader hdr;
  hdr.orientation = p.orientation;
  hdr.bit_depth = image.bit_depth;
  hdr.num_color_channels = p.num_color_channels;
  hdr.num_extra_channels = uint32_t(num_extra);
  hdr.xyb = p.lossy;
  FrameHeader fh;
  fh.group_size_shift = p.group_size_shift;
  fh.progressive = p.progressive;
  fh.scale_x = p.scale_x;
  fh.scale_y = p.scale_y;
  fh.scale_b = p.scale_b;

  Image stored = undo_orientation(image, p.orientation);
  hdr.stored_width = stored.width;
  hdr.stored_height = stored.height;
  if (p.lossy) rgb_to_xyb_ints(stored, hdr.bit_depth, fh);

  TransformPolicy pol;
  pol.effort = cfg;
  pol.num_color_channels = p.num_color_channels;
  pol.bit_depth = p.lossy ? 18 : image.bit_depth;
  pol.progressive = p.progressive;
  pol.lossy = p.lossy;
  std::vector<TransformSpec> chain = choose_transforms(stored, pol);
  apply_chain(stored, chain);

  Layout lay = compute_layout(hdr.stored_width, hdr.stored_height,
                              fh.group_dim());
  std::vector<char> global = global_flags(stored, lay);

  std::vector<Channel*> global_ptrs;
  for (size_t c = 0; c < stored.channels.size(); c++)
    if (global[c]) global_ptrs.push_back(&stored.channels[c]);

  uint32_t grouped = lay.collapsed ? 0 : lay.num_groups;
  std::vector<std::vector<Channel>> slices(grouped);
  for (uint32_t g = 0; g < grouped; g++) {
    for (size_t c = 0; c < stored.channels.size(); c++) {
      if (global[c]) continue;
      const Channel& ch = stored.channels[c];
      Rect r = channel_group_rect(ch, lay, g);
      if (r.empty()) continue;
      Channel slice(r.w(), r.h());
      for (uint32_t y = 0; y < r.h(); y++)
        std::copy_n(ch.row(r.y0 + y) + r.x0, r.w(), slice.row(y));
      slices[g].push_back(std::move(slice));
    }
  }

  MaTree tree;
  if (cfg.learn_trees) {
    uint64_t total = 0;
    for (const Channel* ch : global_ptrs)
      total += uint64_t(ch->width) * ch->height;
    for (const std::vector<Channel>& list : slices)
      for (const Channel& ch : list) total += uint64_t(ch.width) * ch.height;
    TreeSamples ts(cfg.tree_predictors, cfg.num_props(), cfg.wp_property,
                   total, cfg.max_tree_samples);
    std::vector<const Channel*> cptrs(global_ptrs.begin(), global_ptrs.end());
    if (!cptrs.empty()) ts.add_stream(cptrs, 0, WpParams{});
    for (uint32_t g = 0; g < grouped; g++) {
      cptrs.clear();
      for (const Channel& ch : slices[g]) cptrs.push_back(&ch);
      if (!cptrs.empty()) ts.add_stream(cptrs, 1 + g, WpParams{});
    }
    tree = learn_tree(ts);
  } else if (p.effort == 1) {
    tree = MaTree::single_leaf(kPredGradient);
  } else {
    tree = fixed_context_tree();
  }

  ModularEncodeOptions mo;
  mo.global_tree = &tree;
  mo.entropy.try_lz77 = cfg.lz77;

  std::vector<std::vector<uint8_t>> sections(lay.num_sections);
  {
    BitWriter sw;
    write_transform_chain(sw, chain);
    sw.write_bit(true);  // a global tree is always present
    write_tree(sw, tree);
    sw.write_bit(!global_ptrs.empty());
    if (!global_ptrs.empty()) encode_modular_stream(sw, global_ptrs, 0, mo);
    sw.align_to_byte();
    sections[0] = sw.take();
  }
  run_parallel(p.num_threads, grouped, [&](size_t g) {
    if (slices[g].empty()) return;  // zero-length section
    BitWriter sw;
    std::vector<Channel*> ptrs;
    for (Channel& ch : slices[g]) ptrs.push_back(&ch);
    encode_modular_stream(sw, ptrs, uint32_t(1 + g), mo);
    sw.align_to_byte();
    sections[1 + g] = sw.take();
  });

  std::vector<uint32_t> perm(lay.num_sections);
  std::iota(perm.begin(), perm.end(), 0);
  if (p.center_first && grouped > 1) {
    std::vector<std::pair<uint64_t, uint32_t>> order;
    for (uint32_t g = 0; g < grouped; g++) {
      uint64_t gx0 = uint64_t(g % lay.gx_count) * lay.gdim;
      uint64_t gy0 = uint64_t(g / lay.gx_count) * lay.gdim;
      uint64_t gx1 = std::min<uint64_t>(gx0 + lay.gdim, hdr.stored_width);
      uint64_t gy1 = std::min<uint64_t>(gy0 + lay.gdim, hdr.stored_height);
      // squared distance of group center to image center, in half-pixels
      int64_t dx = int64_t(gx0 + gx1) - int64_t(hdr.stored_width);
      int64_t dy = int64_t(gy0 + gy1) - int64_t(hdr.stored_height);
      order.emplace_back(uint64_t(dx * dx) + uint64_t(dy * dy), g);
    }
    std::sort(order.begin(), order.end());
    for (uint32_t i = 0; i < grouped; i++) perm[1 + i] = 1 + order[i].second;
  }

  BitWriter bw;
  bw.write(8, kSignature[0]);
  bw.write(8, kSignature[1]);
  write_image_header(bw, hdr);
  write_frame_header(bw, fh, hdr.xyb);
  std::vector<uint32_t> sizes(lay.num_sections);
  for (uint32_t i = 0; i < lay.num_sections; i++)
    sizes[i] = uint32_t(sections[perm[i]].size());
  bool permuted = p.center_first && grouped > 1;
  write_toc(bw, sizes, permuted ? &perm : nullptr);
  for (uint32_t i = 0; i < lay.num_sections; i++)
    bw.append_bytes(sections[perm[i]]);
  return bw.take();
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

struct Parsed {
  ImageHeader hdr;
  FrameHeader fh;
  Layout lay;
  Toc toc;
  std::vector<uint64_t> offset;  // per file position
  std::vector<uint32_t> pos_of;  // canonical index -> file position
  uint64_t total_bytes = 0;
};

Parsed parse_container(const std::vector<uint8_t>& bytes,
                       bool allow_truncated) {
  Parsed p;
  BitReader br(bytes);
  try {
    check_corrupt(br.bits_remaining() >= 16 && br.read(8) == kSignature[0] &&
                      br.read(8) == kSignature[1],
                  "bad signature");
    p.hdr = read_image_header(br);
    p.fh = read_frame_header(br, p.hdr.xyb);
    p.lay = compute_layout(p.hdr.stored_width, p.hdr.stored_height,
                           p.fh.group_dim());
    p.toc = read_toc(br, p.lay.num_sections);
  } catch (const Error& e) {
    throw CorruptError("header parse error near bit " +
                       std::to_string(br.bits_read()) + ": " + e.what());
  }
  uint64_t off = br.bits_read() / 8;
  p.offset.resize(p.lay.num_sections);
  for (uint32_t i = 0; i < p.lay.num_sections; i++) {
    p.offset[i] = off;
    off += p.toc.sizes[i];
  }
  p.total_bytes = off;
  if (!allow_truncated)
    check_corrupt(bytes.size() == p.total_bytes, "file length mismatch");
  p.pos_of.assign(p.lay.num_sections, 0);
  for (uint32_t i = 0; i < p.lay.num_sections; i++)
    p.pos_of[p.toc.perm[i]] = i;
  return p;
}

[[noreturn]] void rethrow_in_section(const char* name, const Error& e) {
  throw CorruptError(std::string(name) + ": " + e.what());
}

// Chain-dependent group selection: the callback sees the transform chain and
// says which groups to decode; the rest keep zero residuals.
Image decode_core(
    const std::vector<uint8_t>& bytes, const Parsed& p,
    const std::function<std::vector<bool>(const std::vector<TransformSpec>&)>&
        select_groups,
    uint32_t num_threads) {
  const ImageHeader& hdr = p.hdr;
  uint32_t gpos = p.pos_of[0];
  uint64_t goff = p.offset[gpos], gsize = p.toc.sizes[gpos];
  check_corrupt(goff + gsize <= bytes.size(), "global section truncated");
  BitReader gbr(bytes.data() + goff, size_t(gsize));

  std::vector<TransformSpec> chain;
  std::vector<TransformSpec> resolved;
  MaTree tree;
  bool has_tree = false;
  Image img;
  try {
    chain = read_transform_chain(gbr);
    has_tree = gbr.read_bit();
    if (has_tree) tree = read_tree(gbr);

    img.width = hdr.stored_width;
    img.height = hdr.stored_height;
    img.bit_depth = hdr.bit_depth;
    img.channels.resize(hdr.num_channels());
    for (Channel& ch : img.channels) {
      ch.width = hdr.stored_width;
      ch.height = hdr.stored_height;
    }
    resolved = meta_apply_chain(img, chain);
    for (Channel& ch : img.channels)
      ch.samples.assign(size_t(ch.width) * ch.height, 0);
  } catch (const Error& e) {
    rethrow_in_section("global section", e);
  }

  std::vector<char> global = global_flags(img, p.lay);
  std::vector<Channel*> global_ptrs;
  for (size_t c = 0; c < img.channels.size(); c++)
    if (global[c]) global_ptrs.push_back(&img.channels[c]);

  try {
    bool has_globals = gbr.read_bit();
    check_corrupt(has_globals == !global_ptrs.empty(),
                  "global channel presence flag mismatch");
    if (has_globals)
      decode_modular_stream(gbr, global_ptrs, 0,
                            has_tree ? &tree : nullptr);
    gbr.align_to_byte();
    check_corrupt(gbr.bits_remaining() == 0,
                  "trailing data in global section");
  } catch (const Error& e) {
    rethrow_in_section("global section", e);
  }

  if (!p.lay.collapsed) {
    std::vector<bool> want = select_groups(chain);
    check(want.size() == p.lay.num_groups, "bad group selection");
    std::vector<uint32_t> todo;
    for (uint32_t g = 0; g < p.lay.num_groups; g++)
      if (want[g]) todo.push_back(g);

    run_parallel(num_threads, todo.size(), [&](size_t i) {
      uint32_t g = todo[i];
      uint32_t pos = p.pos_of[1 + g];
      uint64_t off = p.offset[pos], size = p.toc.sizes[pos];
      try {
        check_corrupt(off + size <= bytes.size(), "section truncated");
        std::vector<Channel> tmp;
        std::vector<Rect> rects;
        std::vector<uint32_t> ids;
        for (size_t c = 0; c < img.channels.size(); c++) {
          if (global[c]) continue;
          Rect r = channel_group_rect(img.channels[c], p.lay, g);
          if (r.empty()) continue;
          tmp.emplace_back(r.w(), r.h());
          rects.push_back(r);
          ids.push_back(uint32_t(c));
        }
        if (tmp.empty()) {
          check_corrupt(size == 0, "unexpected data in empty group section");
          return;
        }
        BitReader sbr(bytes.data() + off, size_t(size));
        std::vector<Channel*> ptrs;
        for (Channel& ch : tmp) ptrs.push_back(&ch);
        decode_modular_stream(sbr, ptrs, 1 + g, has_tree ? &tree : nullptr);
        sbr.align_to_byte();
        check_corrupt(sbr.bits_remaining() == 0, "trailing data in section");
        for (size_t k = 0; k < tmp.size(); k++) {
          Channel& dst = img.channels[ids[k]];
          const Rect& r = rects[k];
          for (uint32_t y = 0; y < r.h(); y++)
            std::copy_n(tmp[k].row(y), r.w(), dst.row(r.y0 + y) + r.x0);
        }
      } catch (const Error& e) {
        throw CorruptError("group section " + std::to_string(g) + ": " +
                           e.what());
      }
    });
  }

  try {
    undo_chain(img, resolved);
  } catch (const Error& e) {
    throw CorruptError(std::string("undoing transforms: ") + e.what());
  }
  if (hdr.xyb) xyb_ints_to_rgb(img, hdr.bit_depth, p.fh);
  Image display = apply_orientation(img, hdr.orientation);
  display.bit_depth = hdr.bit_depth;
  return display;
}

std::vector<bool> all_groups(const Layout& lay) {
  return std::vector<bool>(lay.num_groups, true);
}

}  // namespace

Image decode_image(const std::vector<uint8_t>& bytes, ImageHeader* header,
                   const DecodeOptions& opts) {
  Parsed p = parse_container(bytes, false);
  if (header) *header = p.hdr;
  return decode_core(
      bytes, p, [&](const std::vector<TransformSpec>&) { return all_groups(p.lay); },
      opts.num_threads);
}

Image decode_roi(const std::vector<uint8_t>& bytes, uint32_t x, uint32_t y,
                 uint32_t w, uint32_t h, ImageHeader* header,
                 const DecodeOptions& opts) {
  Parsed p = parse_container(bytes, false);
  if (header) *header = p.hdr;
  check(w >= 1 && h >= 1, "empty region");
  check(x + uint64_t(w) <= p.hdr.display_width() &&
            y + uint64_t(h) <= p.hdr.display_height(),
        "region outside the image");

  // map the display-space rectangle into stored coordinates
  uint32_t inv = kInverseOrientation[p.hdr.orientation];
  uint32_t ax, ay, bx, by;
  orient_point(inv, p.hdr.display_width(), p.hdr.display_height(), x, y, &ax,
               &ay);
  orient_point(inv, p.hdr.display_width(), p.hdr.display_height(), x + w - 1,
               y + h - 1, &bx, &by);
  Rect stored{std::min(ax, bx), std::min(ay, by), std::max(ax, bx) + 1,
              std::max(ay, by) + 1};

  auto selector = [&](const std::vector<TransformSpec>& chain) {
    Rect need = stored;
    for (const TransformSpec& spec : chain) {
      bool widens = spec.kind == TransformKind::kSqueeze ||
                    (spec.kind == TransformKind::kPalette &&
                     spec.num_deltas > 0);
      if (widens) {
        need.x0 = 0;
        need.y0 = 0;
        break;
      }
    }
    std::vector<bool> want(p.lay.num_groups, false);
    for (uint32_t g = 0; g < p.lay.num_groups; g++) {
      uint64_t gx0 = uint64_t(g % p.lay.gx_count) * p.lay.gdim;
      uint64_t gy0 = uint64_t(g / p.lay.gx_count) * p.lay.gdim;
      want[g] = gx0 < need.x1 && gx0 + p.lay.gdim > need.x0 &&
                gy0 < need.y1 && gy0 + p.lay.gdim > need.y0;
    }
    return want;
  };

  Image full = decode_core(bytes, p, selector, opts.num_threads);
  Image out;
  out.width = w;
  out.height = h;
  out.bit_depth = full.bit_depth;
  for (const Channel& ch : full.channels) {
    Channel oc(w, h);
    for (uint32_t yy = 0; yy < h; yy++)
      std::copy_n(ch.row(y + yy) + x, w, oc.row(yy));
    out.channels.push_back(std::move(oc));
  }
  return out;
}

Image decode_progressive(const std::vector<uint8_t>& prefix,
                         ProgressiveInfo* info, ImageHeader* header) {
  Parsed p = parse_container(prefix, true);
  if (header) *header = p.hdr;

  std::vector<bool> avail(p.lay.num_sections, false);
  for (uint32_t i = 0; i < p.lay.num_sections; i++)
    avail[i] = p.offset[i] + p.toc.sizes[i] <= prefix.size();
  check_corrupt(avail[p.pos_of[0]], "global section beyond the prefix");

  if (info) {
    info->sections_total = p.lay.num_sections;
    info->sections_used = 0;
    info->used.clear();
    for (uint32_t i = 0; i < p.lay.num_sections; i++) {
      if (!avail[i]) continue;
      info->sections_used++;
      info->used.push_back(p.toc.perm[i]);
    }
  }

  auto selector = [&](const std::vector<TransformSpec>&) {
    std::vector<bool> want(p.lay.num_groups, false);
    for (uint32_t g = 0; g < p.lay.num_groups; g++)
      want[g] = avail[p.pos_of[1 + g]];
    return want;
  };
  return decode_core(prefix, p, selector, 1);
}

std::vector<uint32_t> missing_sections(const std::vector<uint8_t>& prefix) {
  Parsed p = parse_container(prefix, true);
  std::vector<uint32_t> missing;
  for (uint32_t i = 0; i < p.lay.num_sections; i++)
    if (p.offset[i] + p.toc.sizes[i] > prefix.size())
      missing.push_back(p.toc.perm[i]);
  return missing;
}

// ---------------------------------------------------------------------------
// Inspection

ContainerInfo inspect_container(const std::vector<uint8_t>& bytes) {
  Parsed p = parse_container(bytes, false);
  ContainerInfo info;
  info.header = p.hdr;
  info.frame = p.fh;
  info.permuted = p.toc.permuted;
  info.perm = p.toc.perm;
  info.sizes = p.toc.sizes;
  info.header_bytes = uint32_t(p.offset[0]);

  uint32_t gpos = p.pos_of[0];
  BitReader gbr(bytes.data() + p.offset[gpos], size_t(p.toc.sizes[gpos]));
  try {
    info.chain = read_transform_chain(gbr);
    info.has_global_tree = gbr.read_bit();
    if (info.has_global_tree) {
      info.tree = read_tree(gbr);
      info.tree_nodes = uint32_t(info.tree.nodes.size());
      info.tree_leaves = info.tree.num_leaves;
    }
    info.has_global_channels = gbr.read_bit();
  } catch (const Error& e) {
    rethrow_in_section("global section", e);
  }
  return info;
}

}  // namespace modcodec
