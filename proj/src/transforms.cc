#include "modcodec/transforms.h"

#include <algorithm>
#include <limits>
#include <optional>
#include <unordered_map>

#include "modcodec/common.h"
#include "modcodec/modular.h"

namespace modcodec {

namespace {

constexpr size_t kMaxChannels = 1 << 16;
constexpr uint64_t kMaxPaletteSamples = uint64_t(1) << 24;

int32_t fit32(int64_t v, bool from_wire) {
  if (v < std::numeric_limits<int32_t>::min() ||
      v > std::numeric_limits<int32_t>::max()) {
    if (from_wire) fail_corrupt("transform output exceeds 32-bit range");
    fail("transform output exceeds 32-bit range");
  }
  return int32_t(v);
}

inline int64_t fd2(int64_t v) { return v >> 1; }  // floor division by 2

// Slot k of the permuted triple reads source channel kRctPerm[p][k].
constexpr int kRctPerm[6][3] = {{0, 1, 2}, {1, 2, 0}, {2, 0, 1},
                                {0, 2, 1}, {1, 0, 2}, {2, 1, 0}};

void check_rct_channels(const Channel& c0, const Channel& c1,
                        const Channel& c2, uint32_t rct_type, bool from_wire) {
  bool ok = rct_type < kNumRctTypes && c0.width == c1.width &&
            c0.width == c2.width && c0.height == c1.height &&
            c0.height == c2.height;
  if (from_wire) check_corrupt(ok, "rct spec invalid");
  else check(ok, "rct spec invalid");
}

}  // namespace

void rct_forward(Channel& c0, Channel& c1, Channel& c2, uint32_t rct_type) {
  check_rct_channels(c0, c1, c2, rct_type, false);
  const int* perm = kRctPerm[rct_type / 7];
  uint32_t m = rct_type % 7;
  int32_t* s[3] = {c0.samples.data(), c1.samples.data(), c2.samples.data()};
  size_t n = c0.samples.size();
  for (size_t i = 0; i < n; i++) {
    int64_t in[3] = {s[0][i], s[1][i], s[2][i]};
    int64_t a = in[perm[0]], b = in[perm[1]], c = in[perm[2]];
    int64_t o0 = a, o1 = b, o2 = c;
    switch (m) {
      case 0: break;
      case 1: o2 = c - a; break;
      case 2: o1 = b - a; break;
      case 3: o1 = b - a; o2 = c - a; break;
      case 4: o1 = b - fd2(a + c); break;
      case 5: o1 = b - fd2(a + c); o2 = c - a; break;
      case 6: {
        int64_t t = c + fd2(a - c);
        o0 = t + fd2(b - t);
        o1 = a - c;
        o2 = b - t;
        break;
      }
    }
    s[0][i] = fit32(o0, false);
    s[1][i] = fit32(o1, false);
    s[2][i] = fit32(o2, false);
  }
}

void rct_inverse(Channel& c0, Channel& c1, Channel& c2, uint32_t rct_type) {
  check_rct_channels(c0, c1, c2, rct_type, true);
  const int* perm = kRctPerm[rct_type / 7];
  uint32_t m = rct_type % 7;
  int32_t* s[3] = {c0.samples.data(), c1.samples.data(), c2.samples.data()};
  size_t n = c0.samples.size();
  for (size_t i = 0; i < n; i++) {
    int64_t o0 = s[0][i], o1 = s[1][i], o2 = s[2][i];
    int64_t a = o0, b = o1, c = o2;
    switch (m) {
      case 0: break;
      case 1: c = o2 + a; break;
      case 2: b = o1 + a; break;
      case 3: b = o1 + a; c = o2 + a; break;
      case 4: b = o1 + fd2(a + c); break;
      case 5: c = o2 + a; b = o1 + fd2(a + c); break;
      case 6: {
        int64_t t = o0 - fd2(o2);
        c = t - fd2(o1);
        a = c + o1;
        b = o2 + t;
        break;
      }
    }
    int64_t out[3];
    out[perm[0]] = a;
    out[perm[1]] = b;
    out[perm[2]] = c;
    s[0][i] = fit32(out[0], true);
    s[1][i] = fit32(out[1], true);
    s[2][i] = fit32(out[2], true);
  }
}

// ---------------------------------------------------------------------------
// Palette

int64_t implicit_palette_color(uint32_t j, uint32_t component,
                               uint32_t bit_depth) {
  check_corrupt(j < kImplicitColors, "implicit palette index out of range");
  if (component >= 3) return 0;
  int64_t maxval = (int64_t(1) << bit_depth) - 1;
  if (j < 64) {
    uint32_t d = component == 0 ? j / 16 : component == 1 ? (j / 4) % 4 : j % 4;
    return ((2 * int64_t(d) + 1) * maxval + 4) / 8;
  }
  uint32_t i = j - 64;
  uint32_t d = component == 0 ? i / 25 : component == 1 ? (i / 5) % 5 : i % 5;
  return (int64_t(d) * maxval + 2) / 4;
}

const std::array<std::array<int32_t, 3>, 71>& implicit_delta_bases() {
  static const std::array<std::array<int32_t, 3>, 71> kBases = {{
      {0, 0, 1},   {0, 1, 0},   {1, 0, 0},   {0, 1, -1},  {0, 1, 1},
      {1, -1, 0},  {1, 0, -1},  {1, 0, 1},   {1, 1, 0},   {1, -1, -1},
      {1, -1, 1},  {1, 1, -1},  {1, 1, 1},   {0, 0, 2},   {0, 2, 0},
      {2, 0, 0},   {0, 1, -2},  {0, 1, 2},   {0, 2, -1},  {0, 2, 1},
      {1, -2, 0},  {1, 0, -2},  {1, 0, 2},   {1, 2, 0},   {2, -1, 0},
      {2, 0, -1},  {2, 0, 1},   {2, 1, 0},   {1, -2, -1}, {1, -2, 1},
      {1, -1, -2}, {1, -1, 2},  {1, 1, -2},  {1, 1, 2},   {1, 2, -1},
      {1, 2, 1},   {2, -1, -1}, {2, -1, 1},  {2, 1, -1},  {2, 1, 1},
      {0, 2, -2},  {0, 2, 2},   {2, -2, 0},  {2, 0, -2},  {2, 0, 2},
      {2, 2, 0},   {0, 0, 3},   {0, 3, 0},   {1, -2, -2}, {1, -2, 2},
      {1, 2, -2},  {1, 2, 2},   {2, -2, -1}, {2, -2, 1},  {2, -1, -2},
      {2, -1, 2},  {2, 1, -2},  {2, 1, 2},   {2, 2, -1},  {2, 2, 1},
      {3, 0, 0},   {0, 1, -3},  {0, 1, 3},   {0, 3, -1},  {0, 3, 1},
      {1, -3, 0},  {1, 0, -3},  {1, 0, 3},   {1, 3, 0},   {3, -1, 0},
      {3, 0, -1},
  }};
  return kBases;
}

int64_t implicit_delta_value(uint32_t j, uint32_t component) {
  check_corrupt(j < kImplicitDeltas, "implicit delta index out of range");
  if (j == 0 || component >= 3) return 0;
  int64_t v = implicit_delta_bases()[(j - 1) / 2][component];
  return (j & 1) ? v : -v;
}

namespace {

// Component of the value the palette assigns to index v.
int64_t palette_value(const Channel& palette, int64_t num_colors,
                      uint32_t bit_depth, int64_t v, uint32_t c) {
  if (v < 0) return implicit_delta_value(uint32_t(-v - 1), c);
  if (v < num_colors) return palette.at(uint32_t(v), c);
  return implicit_palette_color(uint32_t(v - num_colors), c, bit_depth);
}

struct TupleHash {
  size_t operator()(const std::vector<int32_t>& v) const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (int32_t x : v) {
      h ^= uint32_t(x);
      h *= 0x100000001b3ull;
    }
    return size_t(h);
  }
};

void check_palette_range(const Image& image, const TransformSpec& spec,
                         bool from_wire) {
  size_t begin = spec.begin_c, num = spec.num_c;
  bool ok = num >= 1 && begin >= image.nb_meta_channels &&
            begin + num <= image.channels.size() &&
            image.channels.size() + 1 <= kMaxChannels &&
            spec.num_colors <= kMaxPaletteColors &&
            spec.num_deltas <= spec.num_colors &&
            spec.predictor < kNumPredictors;
  if (ok) {
    const Channel& first = image.channels[begin];
    for (size_t c = begin + 1; c < begin + num && ok; c++) {
      const Channel& ch = image.channels[c];
      ok = ch.width == first.width && ch.height == first.height &&
           ch.hshift == first.hshift && ch.vshift == first.vshift;
    }
  }
  if (from_wire) check_corrupt(ok, "palette spec invalid");
  else check(ok, "palette spec invalid");
}

void palette_forward(Image& image, TransformSpec& spec) {
  check(spec.num_deltas == 0, "palette forward builds plain palettes only");
  check_palette_range(image, spec, false);
  size_t begin = spec.begin_c, num = spec.num_c;
  const Channel& first = image.channels[begin];
  size_t n_px = first.samples.size();

  std::unordered_map<std::vector<int32_t>, uint32_t, TupleHash> lookup;
  std::vector<std::vector<int32_t>> colors;
  std::vector<int32_t> key(num);
  for (size_t i = 0; i < n_px; i++) {
    for (size_t c = 0; c < num; c++) key[c] = image.channels[begin + c].samples[i];
    if (lookup.emplace(key, 0).second) {
      check(colors.size() < kMaxPaletteColors,
            "too many distinct colors for a palette");
      colors.push_back(key);
    }
  }
  std::sort(colors.begin(), colors.end());
  uint32_t n = uint32_t(colors.size());
  for (uint32_t i = 0; i < n; i++) lookup[colors[i]] = i;

  Channel meta(n, uint32_t(num));
  for (uint32_t i = 0; i < n; i++)
    for (uint32_t c = 0; c < num; c++) meta.at(i, c) = colors[i][c];

  Channel index(first.width, first.height, first.hshift, first.vshift);
  for (size_t i = 0; i < n_px; i++) {
    for (size_t c = 0; c < num; c++) key[c] = image.channels[begin + c].samples[i];
    index.samples[i] = int32_t(lookup.find(key)->second);
  }

  image.channels[begin] = std::move(index);
  image.channels.erase(image.channels.begin() + begin + 1,
                       image.channels.begin() + begin + num);
  image.channels.insert(image.channels.begin(), std::move(meta));
  image.nb_meta_channels++;
  spec.num_colors = n;
}

void meta_palette(Image& image, const TransformSpec& spec) {
  check_palette_range(image, spec, true);
  check_corrupt(uint64_t(spec.num_colors) * spec.num_c <= kMaxPaletteSamples,
                "palette metachannel too large");
  size_t begin = spec.begin_c, num = spec.num_c;
  image.channels.erase(image.channels.begin() + begin + 1,
                       image.channels.begin() + begin + num);
  image.channels.insert(image.channels.begin(),
                        Channel(spec.num_colors, spec.num_c));
  image.nb_meta_channels++;
}

void palette_inverse(Image& image, const TransformSpec& spec) {
  auto& chans = image.channels;
  size_t begin = spec.begin_c, num = spec.num_c;
  check_corrupt(num >= 1 && image.nb_meta_channels >= 1 &&
                    begin + 1 >= image.nb_meta_channels &&
                    begin + 1 < chans.size(),
                "palette spec invalid");
  check_corrupt(spec.predictor < kNumPredictors, "palette spec invalid");
  Channel palette = std::move(chans[0]);
  check_corrupt(palette.width == spec.num_colors && palette.height == num,
                "palette metachannel shape mismatch");
  Channel index = std::move(chans[begin + 1]);

  int64_t n = spec.num_colors, d = spec.num_deltas;
  bool need_pred = false;
  for (int32_t v : index.samples) {
    check_corrupt(v >= -int64_t(kImplicitDeltas) && v < n + kImplicitColors,
                  "palette index out of range");
    if (v < d) need_pred = true;
  }

  uint32_t w = index.width, h = index.height;
  std::vector<Channel> out;
  out.reserve(num);
  for (size_t c = 0; c < num; c++)
    out.emplace_back(w, h, index.hshift, index.vshift);
  for (uint32_t c = 0; c < num; c++) {
    Channel& oc = out[c];
    if (!need_pred) {
      for (size_t i = 0; i < index.samples.size(); i++) {
        oc.samples[i] = fit32(
            palette_value(palette, n, image.bit_depth, index.samples[i], c),
            true);
      }
      continue;
    }
    // Deltas add the prediction at the position being filled, so
    // reconstruction runs in scanline order over already-written samples.
    std::optional<WeightedPredictor> wp;
    if (spec.predictor == kPredWeighted) wp.emplace(w, WpParams{});
    for (uint32_t y = 0; y < h; y++) {
      for (uint32_t x = 0; x < w; x++) {
        int64_t v = index.at(x, y);
        int64_t value = palette_value(palette, n, image.bit_depth, v, c);
        int64_t wp_pred = 0, dummy = 0;
        Neighbors nb{};
        if (wp || v < d) nb = gather_neighbors(oc, x, y);
        if (wp) wp_pred = wp->predict(x, y, nb, &dummy);
        if (v < d) {
          value += wp ? wp_pred : predict_static(spec.predictor, nb);
        }
        oc.at(x, y) = fit32(value, true);
        if (wp) wp->commit(x, y, oc.at(x, y));
      }
    }
  }

  chans.erase(chans.begin());
  image.nb_meta_channels--;
  chans[begin] = std::move(out[0]);
  chans.insert(chans.begin() + begin + 1,
               std::make_move_iterator(out.begin() + 1),
               std::make_move_iterator(out.end()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Squeeze

int64_t squeeze_avg(int64_t a, int64_t b) {
  return (a + b + (a > b ? 1 : 0)) >> 1;
}

int64_t tendency(int64_t a, int64_t b, int64_t c) {
  auto round12 = [](int64_t n) {  // nearest, half away from zero
    return n >= 0 ? (n + 6) / 12 : -((-n + 6) / 12);
  };
  if (a >= b && b >= c) {
    int64_t t = round12(4 * a - 3 * c - b);
    if (t - (t & 1) > 2 * (a - b)) t = 2 * (a - b) + 1;
    if (t + (t & 1) > 2 * (b - c)) t = 2 * (b - c);
    return t;
  }
  if (a <= b && b <= c) {
    int64_t t = round12(4 * a - 3 * c - b);
    if (t + (t & 1) < 2 * (a - b)) t = 2 * (a - b) - 1;
    if (t - (t & 1) < 2 * (b - c)) t = 2 * (b - c);
    return t;
  }
  return 0;
}

namespace {

void squeeze_rows(const Channel& ch, Channel& down, Channel& res) {
  uint32_t w = ch.width;
  for (uint32_t y = 0; y < ch.height; y++) {
    const int32_t* in = ch.row(y);
    int32_t* dn = down.row(y);
    int32_t* rs = res.row(y);
    for (uint32_t x = 0; x < res.width; x++) {
      int64_t a = in[2 * x], b = in[2 * x + 1];
      int64_t avg = squeeze_avg(a, b);
      dn[x] = int32_t(avg);
      int64_t next = avg;
      if (2 * x + 3 < w) next = squeeze_avg(in[2 * x + 2], in[2 * x + 3]);
      else if (2 * x + 2 < w) next = in[2 * x + 2];
      int64_t left = x > 0 ? in[2 * x - 1] : avg;
      rs[x] = fit32(a - b - tendency(left, avg, next), false);
    }
    if (w & 1) dn[down.width - 1] = in[w - 1];
  }
}

void squeeze_cols(const Channel& ch, Channel& down, Channel& res) {
  uint32_t h = ch.height;
  for (uint32_t y = 0; y < res.height; y++) {
    const int32_t* in0 = ch.row(2 * y);
    const int32_t* in1 = ch.row(2 * y + 1);
    const int32_t* nx0 = 2 * y + 2 < h ? ch.row(2 * y + 2) : nullptr;
    const int32_t* nx1 = 2 * y + 3 < h ? ch.row(2 * y + 3) : nullptr;
    const int32_t* up = y > 0 ? ch.row(2 * y - 1) : nullptr;
    int32_t* dn = down.row(y);
    int32_t* rs = res.row(y);
    for (uint32_t x = 0; x < ch.width; x++) {
      int64_t a = in0[x], b = in1[x];
      int64_t avg = squeeze_avg(a, b);
      dn[x] = int32_t(avg);
      int64_t next = avg;
      if (nx1) next = squeeze_avg(nx0[x], nx1[x]);
      else if (nx0) next = nx0[x];
      int64_t left = up ? up[x] : avg;
      rs[x] = fit32(a - b - tendency(left, avg, next), false);
    }
  }
  if (h & 1) std::copy_n(ch.row(h - 1), ch.width, down.row(down.height - 1));
}

void unsqueeze_rows(const Channel& down, const Channel& res, Channel& out) {
  for (uint32_t y = 0; y < out.height; y++) {
    const int32_t* dn = down.row(y);
    const int32_t* rs = res.row(y);
    int32_t* o = out.row(y);
    for (uint32_t x = 0; x < res.width; x++) {
      int64_t avg = dn[x];
      int64_t next = x + 1 < down.width ? dn[x + 1] : avg;
      int64_t left = x > 0 ? o[2 * x - 1] : avg;
      int64_t d = int64_t(rs[x]) + tendency(left, avg, next);
      int64_t hi = avg + d / 2;  // truncating division
      o[2 * x] = fit32(hi, true);
      o[2 * x + 1] = fit32(hi - d, true);
    }
    if (out.width & 1) o[out.width - 1] = dn[down.width - 1];
  }
}

void unsqueeze_cols(const Channel& down, const Channel& res, Channel& out) {
  for (uint32_t y = 0; y < res.height; y++) {
    const int32_t* dn = down.row(y);
    const int32_t* rs = res.row(y);
    const int32_t* up = y > 0 ? out.row(2 * y - 1) : nullptr;
    int32_t* o0 = out.row(2 * y);
    int32_t* o1 = out.row(2 * y + 1);
    for (uint32_t x = 0; x < out.width; x++) {
      int64_t avg = dn[x];
      int64_t next = y + 1 < down.height ? down.at(x, y + 1) : avg;
      int64_t left = up ? up[x] : avg;
      int64_t d = int64_t(rs[x]) + tendency(left, avg, next);
      int64_t hi = avg + d / 2;
      o0[x] = fit32(hi, true);
      o1[x] = fit32(hi - d, true);
    }
  }
  if (out.height & 1)
    std::copy_n(down.row(down.height - 1), out.width, out.row(out.height - 1));
}

void squeeze_step_impl(Image& image, const SqueezeStep& s, bool with_data,
                       bool from_wire) {
  auto& chans = image.channels;
  size_t begin = s.begin_c, num = s.num_c, end = begin + num;
  bool ok = num >= 1 && begin >= image.nb_meta_channels &&
            end <= chans.size() && chans.size() + num <= kMaxChannels;
  if (from_wire) check_corrupt(ok, "squeeze step range invalid");
  else check(ok, "squeeze step range invalid");
  size_t offset = s.in_place ? end : chans.size();
  for (size_t c = begin; c < end; c++) {
    Channel src = std::move(chans[c]);
    uint32_t dim = s.horizontal ? src.width : src.height;
    int shift = s.horizontal ? src.hshift : src.vshift;
    bool dim_ok = dim >= 2 && shift < 30;
    if (from_wire) check_corrupt(dim_ok, "channel cannot be squeezed");
    else check(dim_ok, "channel cannot be squeezed");
    uint32_t dd = (dim + 1) / 2, rd = dim - dd;
    Channel down, res;
    if (s.horizontal) {
      down = Channel(dd, src.height, src.hshift + 1, src.vshift);
      res = Channel(rd, src.height, src.hshift + 1, src.vshift);
      if (with_data) squeeze_rows(src, down, res);
    } else {
      down = Channel(src.width, dd, src.hshift, src.vshift + 1);
      res = Channel(src.width, rd, src.hshift, src.vshift + 1);
      if (with_data) squeeze_cols(src, down, res);
    }
    chans[c] = std::move(down);
    chans.insert(chans.begin() + offset + (c - begin), std::move(res));
  }
}

}  // namespace

void squeeze_step_forward(Image& image, const SqueezeStep& step) {
  squeeze_step_impl(image, step, true, false);
}

void squeeze_step_inverse(Image& image, const SqueezeStep& s) {
  auto& chans = image.channels;
  size_t begin = s.begin_c, num = s.num_c, end = begin + num;
  check_corrupt(num >= 1 && begin >= image.nb_meta_channels &&
                    end <= chans.size() && end + num <= chans.size(),
                "squeeze step range invalid");
  size_t offset = s.in_place ? end : chans.size() - num;
  for (size_t c = begin; c < end; c++) {
    Channel down = std::move(chans[c]);
    Channel res = std::move(chans[offset + (c - begin)]);
    Channel out;
    if (s.horizontal) {
      check_corrupt(res.height == down.height &&
                        (res.width == down.width || res.width + 1 == down.width),
                    "squeeze channel shapes inconsistent");
      out = Channel(down.width + res.width, down.height, down.hshift - 1,
                    down.vshift);
      unsqueeze_rows(down, res, out);
    } else {
      check_corrupt(res.width == down.width &&
                        (res.height == down.height ||
                         res.height + 1 == down.height),
                    "squeeze channel shapes inconsistent");
      out = Channel(down.width, down.height + res.height, down.hshift,
                    down.vshift - 1);
      unsqueeze_cols(down, res, out);
    }
    chans[c] = std::move(out);
  }
  chans.erase(chans.begin() + offset, chans.begin() + offset + num);
}

std::vector<SqueezeStep> default_squeeze_order(const Image& image) {
  std::vector<SqueezeStep> steps;
  size_t begin = image.nb_meta_channels;
  if (begin >= image.channels.size()) return steps;
  uint64_t w = image.channels[begin].width;
  uint64_t h = image.channels[begin].height;
  SqueezeStep s;
  s.in_place = true;
  s.begin_c = uint32_t(begin);
  s.num_c = uint32_t(image.channels.size() - begin);
  while (w > 8 || h > 8) {
    s.horizontal = w >= h;
    if (s.horizontal) w = (w + 1) / 2;
    else h = (h + 1) / 2;
    steps.push_back(s);
  }
  return steps;
}

// ---------------------------------------------------------------------------
// Transform chain

void apply_transform(Image& image, TransformSpec& spec) {
  switch (spec.kind) {
    case TransformKind::kRct: {
      size_t b = spec.begin_c;
      check(b >= image.nb_meta_channels && b + 3 <= image.channels.size(),
            "rct channel range invalid");
      rct_forward(image.channels[b], image.channels[b + 1],
                  image.channels[b + 2], spec.rct_type);
      break;
    }
    case TransformKind::kPalette:
      palette_forward(image, spec);
      break;
    case TransformKind::kSqueeze: {
      std::vector<SqueezeStep> steps =
          spec.steps.empty() ? default_squeeze_order(image) : spec.steps;
      for (const SqueezeStep& s : steps) squeeze_step_forward(image, s);
      break;
    }
  }
}

void apply_chain(Image& image, std::vector<TransformSpec>& specs) {
  for (TransformSpec& spec : specs) apply_transform(image, spec);
}

std::vector<TransformSpec> meta_apply_chain(
    Image& image, const std::vector<TransformSpec>& specs) {
  std::vector<TransformSpec> resolved = specs;
  for (TransformSpec& spec : resolved) {
    switch (spec.kind) {
      case TransformKind::kRct: {
        size_t b = spec.begin_c;
        check_corrupt(b >= image.nb_meta_channels &&
                          b + 3 <= image.channels.size(),
                      "rct channel range invalid");
        check_rct_channels(image.channels[b], image.channels[b + 1],
                           image.channels[b + 2], spec.rct_type, true);
        break;
      }
      case TransformKind::kPalette:
        meta_palette(image, spec);
        break;
      case TransformKind::kSqueeze: {
        if (spec.steps.empty()) spec.steps = default_squeeze_order(image);
        for (const SqueezeStep& s : spec.steps)
          squeeze_step_impl(image, s, false, true);
        break;
      }
    }
  }
  return resolved;
}

void undo_transform(Image& image, const TransformSpec& spec) {
  switch (spec.kind) {
    case TransformKind::kRct: {
      size_t b = spec.begin_c;
      check_corrupt(b >= image.nb_meta_channels &&
                        b + 3 <= image.channels.size(),
                    "rct channel range invalid");
      rct_inverse(image.channels[b], image.channels[b + 1],
                  image.channels[b + 2], spec.rct_type);
      break;
    }
    case TransformKind::kPalette:
      palette_inverse(image, spec);
      break;
    case TransformKind::kSqueeze:
      for (auto it = spec.steps.rbegin(); it != spec.steps.rend(); ++it)
        squeeze_step_inverse(image, *it);
      break;
  }
}

void undo_chain(Image& image, const std::vector<TransformSpec>& specs) {
  for (auto it = specs.rbegin(); it != specs.rend(); ++it)
    undo_transform(image, *it);
}

// ---------------------------------------------------------------------------
// Wire format

namespace {

constexpr U32Spec kChainCount =
    u32spec(u32val(0), u32val(1), u32bits(2, 4), u32bits(18, 8));
constexpr U32Spec kBeginC =
    u32spec(u32bits(0, 3), u32bits(8, 6), u32bits(72, 10), u32bits(1096, 13));
constexpr U32Spec kPaletteNumC =
    u32spec(u32val(1), u32val(3), u32val(4), u32bits(1, 13));
constexpr U32Spec kNumColors = u32spec(u32bits(0, 8), u32bits(256, 10),
                                       u32bits(1280, 12), u32bits(5376, 16));
constexpr U32Spec kNumDeltas = u32spec(u32val(0), u32bits(1, 8),
                                       u32bits(257, 10), u32bits(1281, 16));
constexpr U32Spec kStepCount =
    u32spec(u32val(0), u32bits(1, 4), u32bits(17, 6), u32bits(81, 8));
constexpr U32Spec kStepNumC =
    u32spec(u32val(1), u32val(2), u32val(3), u32bits(4, 8));

}  // namespace

void write_transform_chain(BitWriter& bw,
                           const std::vector<TransformSpec>& specs) {
  write_u32(bw, kChainCount, uint32_t(specs.size()));
  for (const TransformSpec& t : specs) {
    bw.write(2, uint32_t(t.kind));
    switch (t.kind) {
      case TransformKind::kRct:
        write_u32(bw, kBeginC, t.begin_c);
        check(t.rct_type < kNumRctTypes, "rct_type out of range");
        bw.write(6, t.rct_type);
        break;
      case TransformKind::kPalette:
        write_u32(bw, kBeginC, t.begin_c);
        write_u32(bw, kPaletteNumC, t.num_c);
        write_u32(bw, kNumColors, t.num_colors);
        write_u32(bw, kNumDeltas, t.num_deltas);
        check(t.predictor < kNumPredictors, "palette predictor out of range");
        bw.write(4, t.predictor);
        break;
      case TransformKind::kSqueeze:
        write_u32(bw, kStepCount, uint32_t(t.steps.size()));
        for (const SqueezeStep& s : t.steps) {
          bw.write_bit(s.horizontal);
          bw.write_bit(s.in_place);
          write_u32(bw, kBeginC, s.begin_c);
          write_u32(bw, kStepNumC, s.num_c);
        }
        break;
    }
  }
}

std::vector<TransformSpec> read_transform_chain(BitReader& br) {
  uint32_t count = read_u32(br, kChainCount);
  std::vector<TransformSpec> specs(count);
  for (TransformSpec& t : specs) {
    uint32_t kind = br.read(2);
    check_corrupt(kind <= uint32_t(TransformKind::kSqueeze),
                  "unknown transform kind");
    t.kind = TransformKind(kind);
    t.steps.clear();
    switch (t.kind) {
      case TransformKind::kRct:
        t.begin_c = read_u32(br, kBeginC);
        t.rct_type = br.read(6);
        check_corrupt(t.rct_type < kNumRctTypes, "rct_type out of range");
        break;
      case TransformKind::kPalette:
        t.begin_c = read_u32(br, kBeginC);
        t.num_c = read_u32(br, kPaletteNumC);
        t.num_colors = read_u32(br, kNumColors);
        t.num_deltas = read_u32(br, kNumDeltas);
        t.predictor = br.read(4);
        check_corrupt(t.predictor < kNumPredictors,
                      "palette predictor out of range");
        break;
      case TransformKind::kSqueeze: {
        uint32_t n = read_u32(br, kStepCount);
        t.steps.resize(n);
        for (SqueezeStep& s : t.steps) {
          s.horizontal = br.read_bit();
          s.in_place = br.read_bit();
          s.begin_c = read_u32(br, kBeginC);
          s.num_c = read_u32(br, kStepNumC);
        }
        break;
      }
    }
  }
  return specs;
}

}  // namespace modcodec
