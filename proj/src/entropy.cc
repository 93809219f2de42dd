#include "modcodec/entropy.h"

#include <algorithm>
#include <cmath>
#include <queue>
#include <utility>

#include "modcodec/heuristics.h"

namespace modcodec {

namespace {

constexpr U32Spec kLz77MinSymbolSpec =
    u32spec(u32val(224), u32bits(512, 9), u32bits(4096, 12), u32bits(8, 15));
constexpr U32Spec kLz77MinLengthSpec =
    u32spec(u32val(3), u32bits(4, 2), u32bits(8, 4), u32bits(16, 8));

// Frequencies in the general distribution shape are coded with this.
constexpr HybridUintConfig kDistConfig{4, 1, 0};

double histogram_cost_bits(const std::vector<uint64_t>& hist) {
  uint64_t total = 0;
  for (uint64_t c : hist) total += c;
  if (total == 0) return 0.0;
  double bits = 0.0;
  for (uint64_t c : hist)
    if (c) bits += double(c) * std::log2(double(total) / double(c));
  return bits;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scalar codings

uint32_t read_u8_coded(BitReader& br) {
  if (!br.read_bit()) return 0;
  uint32_t n = br.read(3);
  return (1u << n) + br.read(n);
}

void write_u8_coded(BitWriter& bw, uint32_t value) {
  check(value <= 255, "u8 value out of range");
  if (value == 0) {
    bw.write_bit(false);
    return;
  }
  bw.write_bit(true);
  uint32_t n = floor_log2(value);
  bw.write(3, n);
  bw.write(n, value - (1u << n));
}

void write_hybrid_config(BitWriter& bw, const HybridUintConfig& cfg) {
  check(cfg.valid(), "invalid hybrid config");
  bw.write(4, cfg.split_exponent);
  uint32_t n = ceil_log2(cfg.split_exponent + 1);
  bw.write(n, cfg.msb_in_token);
  bw.write(n, cfg.lsb_in_token);
}

HybridUintConfig read_hybrid_config(BitReader& br) {
  HybridUintConfig cfg;
  cfg.split_exponent = br.read(4);
  uint32_t n = ceil_log2(cfg.split_exponent + 1);
  cfg.msb_in_token = br.read(n);
  cfg.lsb_in_token = br.read(n);
  check_corrupt(cfg.valid(), "invalid hybrid config");
  return cfg;
}

// ---------------------------------------------------------------------------
// Move-to-front

void mtf_apply(std::vector<uint8_t>& values) {
  uint8_t table[256];
  for (int i = 0; i < 256; i++) table[i] = uint8_t(i);
  for (auto& v : values) {
    uint8_t sym = v;
    int idx = 0;
    while (table[idx] != sym) idx++;
    v = uint8_t(idx);
    for (; idx > 0; idx--) table[idx] = table[idx - 1];
    table[0] = sym;
  }
}

void mtf_undo(std::vector<uint8_t>& values) {
  uint8_t table[256];
  for (int i = 0; i < 256; i++) table[i] = uint8_t(i);
  for (auto& v : values) {
    int idx = v;
    uint8_t sym = table[idx];
    v = sym;
    for (; idx > 0; idx--) table[idx] = table[idx - 1];
    table[0] = sym;
  }
}

// ---------------------------------------------------------------------------
// Histogram normalization

std::vector<uint32_t> normalize_histogram(const std::vector<uint64_t>& counts) {
  uint64_t total = 0;
  size_t last = 0;
  for (size_t i = 0; i < counts.size(); i++) {
    total += counts[i];
    if (counts[i]) last = i;
  }
  check(total > 0, "empty histogram");
  std::vector<uint32_t> freq(last + 1, 0);
  // Integer part of each ideal share first; the remainder goes to the largest
  // fractional parts, ties to the lower index.
  std::vector<std::pair<uint64_t, size_t>> rem;
  uint64_t assigned = 0;
  for (size_t i = 0; i <= last; i++) {
    if (!counts[i]) continue;
    unsigned __int128 share = (unsigned __int128)counts[i] << kAnsPrecision;
    freq[i] = uint32_t(share / total);
    assigned += freq[i];
    rem.push_back({uint64_t(share % total), i});
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (size_t k = 0; assigned < kAnsTotal; k++) {
    freq[rem[k % rem.size()].second]++;
    assigned++;
  }
  // Every observed symbol needs a nonzero frequency; if the bumps overshoot,
  // take back from the largest entries.
  for (size_t i = 0; i <= last; i++) {
    if (counts[i] && freq[i] == 0) {
      freq[i] = 1;
      assigned++;
    }
  }
  while (assigned > kAnsTotal) {
    size_t best = 0;
    for (size_t i = 0; i <= last; i++)
      if (freq[i] > freq[best]) best = i;
    check(freq[best] > 1, "cannot normalize histogram");
    freq[best]--;
    assigned--;
  }
  return freq;
}

// ---------------------------------------------------------------------------
// Distribution serialization

void write_distribution(BitWriter& bw, const std::vector<uint32_t>& freq) {
  size_t n = freq.size();
  check(n >= 1 && n <= 256, "bad alphabet size");
  check(freq.back() != 0, "trailing zero frequencies");
  uint64_t total = 0;
  size_t nonzero = 0, last = 0;
  for (size_t i = 0; i < n; i++) {
    total += freq[i];
    if (freq[i]) {
      nonzero++;
      last = i;
    }
  }
  check(total == kAnsTotal, "frequencies must sum to 4096");
  if (nonzero == 1) {
    bw.write(2, 0);
    write_u8_coded(bw, uint32_t(last));
    return;
  }
  if (nonzero == 2) {
    bw.write(2, 1);
    size_t v1 = 0;
    while (!freq[v1]) v1++;
    size_t v2 = v1 + 1;
    while (!freq[v2]) v2++;
    write_u8_coded(bw, uint32_t(v1));
    write_u8_coded(bw, uint32_t(v2));
    bw.write(12, freq[v1]);
    return;
  }
  if (nonzero == n) {
    uint32_t q = kAnsTotal / uint32_t(n), r = kAnsTotal % uint32_t(n);
    bool uniform = true;
    for (size_t i = 0; i < n && uniform; i++)
      uniform = freq[i] == (i < r ? q + 1 : q);
    if (uniform) {
      bw.write(2, 2);
      write_u8_coded(bw, uint32_t(n - 1));
      return;
    }
  }
  bw.write(2, 3);
  write_u8_coded(bw, uint32_t(last));
  for (size_t i = 0; i < last;) {
    if (freq[i] == 0) {
      size_t run = 1;
      while (i + run < last && freq[i + run] == 0) run++;
      size_t chunk = std::min<size_t>(run, 256);
      bw.write_bit(true);
      write_u8_coded(bw, uint32_t(chunk - 1));
      i += chunk;
    } else {
      bw.write_bit(false);
      uint32_t tok, nb, bits;
      kDistConfig.split(freq[i], &tok, &nb, &bits);
      bw.write(5, tok);
      bw.write(nb, bits);
      i++;
    }
  }
}

std::vector<uint32_t> read_distribution(BitReader& br, uint32_t max_alphabet) {
  uint32_t tag = br.read(2);
  if (tag == 0) {
    uint32_t idx = read_u8_coded(br);
    check_corrupt(idx < max_alphabet, "distribution alphabet too large");
    std::vector<uint32_t> freq(idx + 1, 0);
    freq[idx] = kAnsTotal;
    return freq;
  }
  if (tag == 1) {
    uint32_t v1 = read_u8_coded(br);
    uint32_t v2 = read_u8_coded(br);
    uint32_t k = br.read(12);
    check_corrupt(v1 != v2 && std::max(v1, v2) < max_alphabet && k >= 1 &&
                      k <= kAnsTotal - 1,
                  "bad two-symbol distribution");
    std::vector<uint32_t> freq(std::max(v1, v2) + 1, 0);
    freq[v1] = k;
    freq[v2] = kAnsTotal - k;
    return freq;
  }
  if (tag == 2) {
    uint32_t m = read_u8_coded(br);
    uint32_t a = m + 1;
    check_corrupt(a <= max_alphabet, "distribution alphabet too large");
    uint32_t q = kAnsTotal / a, r = kAnsTotal % a;
    std::vector<uint32_t> freq(a);
    for (uint32_t i = 0; i < a; i++) freq[i] = i < r ? q + 1 : q;
    return freq;
  }
  uint32_t last = read_u8_coded(br);
  check_corrupt(last < max_alphabet, "distribution alphabet too large");
  std::vector<uint32_t> freq(last + 1, 0);
  uint64_t sum = 0;
  uint32_t i = 0;
  while (i < last) {
    if (br.read_bit()) {
      uint32_t run = read_u8_coded(br) + 1;
      check_corrupt(i + run <= last, "zero run overflows alphabet");
      i += run;
    } else {
      uint32_t tok = br.read(5);
      uint32_t nb = kDistConfig.raw_bits_for_token(tok);
      uint32_t bits = nb ? br.read(nb) : 0;
      uint32_t f = kDistConfig.merge(tok, bits);
      check_corrupt(f >= 1 && sum + f <= kAnsTotal - 1,
                    "frequencies exceed total");
      freq[i] = f;
      sum += f;
      i++;
    }
  }
  freq[last] = uint32_t(kAnsTotal - sum);
  return freq;
}

// ---------------------------------------------------------------------------
// Canonical prefix codes

PrefixCode PrefixCode::from_lengths(const std::vector<uint8_t>& lengths) {
  PrefixCode pc;
  pc.lengths = lengths;
  pc.codes.assign(lengths.size(), 0);
  uint32_t count[16] = {0};
  size_t used = 0;
  int last_used = -1;
  for (size_t i = 0; i < lengths.size(); i++) {
    check_corrupt(lengths[i] <= 15, "code length exceeds 15");
    if (lengths[i]) {
      count[lengths[i]]++;
      used++;
      last_used = int(i);
    }
  }
  check_corrupt(used > 0, "empty prefix code");
  if (used == 1) {
    pc.single_symbol = last_used;
    return pc;
  }
  uint64_t kraft = 0;
  for (int l = 1; l <= 15; l++) kraft += uint64_t(count[l]) << (15 - l);
  check_corrupt(kraft == (1ull << 15), "code lengths do not form a full tree");
  uint32_t code = 0;
  uint32_t next[16] = {0};
  for (int l = 1; l <= 15; l++) {
    code = (code + count[l - 1]) << 1;
    next[l] = code;
    pc.first_code_[l] = code;
  }
  uint32_t off = 0;
  for (int l = 1; l <= 15; l++) {
    pc.offset_[l] = off;
    off += count[l];
  }
  pc.offset_[16] = off;
  pc.sorted_.resize(used);
  uint32_t fill[17];
  std::copy(pc.offset_, pc.offset_ + 17, fill);
  for (size_t i = 0; i < lengths.size(); i++) {
    if (!lengths[i]) continue;
    pc.codes[i] = uint16_t(next[lengths[i]]++);
    pc.sorted_[fill[lengths[i]]++] = uint16_t(i);
  }
  return pc;
}

void PrefixCode::encode(BitWriter& bw, uint32_t symbol) const {
  check(symbol < lengths.size(), "symbol out of alphabet");
  if (single_symbol >= 0) {
    check(int(symbol) == single_symbol, "symbol has no code");
    return;
  }
  uint32_t len = lengths[symbol];
  check(len > 0, "symbol has no code");
  uint32_t code = codes[symbol];
  for (uint32_t b = len; b-- > 0;) bw.write_bit((code >> b) & 1);
}

uint32_t PrefixCode::decode(BitReader& br) const {
  if (single_symbol >= 0) return uint32_t(single_symbol);
  uint32_t code = 0;
  for (int l = 1; l <= 15; l++) {
    code = (code << 1) | (br.read_bit() ? 1u : 0u);
    uint32_t cnt = offset_[l + 1] - offset_[l];
    if (cnt && code >= first_code_[l] && code - first_code_[l] < cnt)
      return sorted_[offset_[l] + (code - first_code_[l])];
  }
  fail_corrupt("invalid prefix code word");
}

std::vector<uint8_t> build_prefix_lengths(const std::vector<uint64_t>& counts) {
  size_t n = counts.size();
  check(n >= 1 && n <= kMaxAlphabet, "bad alphabet size");
  std::vector<size_t> used;
  for (size_t i = 0; i < n; i++)
    if (counts[i]) used.push_back(i);
  check(!used.empty(), "empty histogram");
  std::vector<uint8_t> lengths(n, 0);
  if (used.size() == 1) {
    lengths[used[0]] = 1;
    return lengths;
  }
  std::vector<uint64_t> w(used.size());
  for (size_t i = 0; i < used.size(); i++) w[i] = counts[used[i]];
  for (;;) {
    size_t m = w.size();
    std::vector<uint64_t> weight(w);
    weight.resize(2 * m - 1, 0);
    std::vector<int> parent(2 * m - 1, -1);
    using Node = std::pair<uint64_t, int>;
    std::priority_queue<Node, std::vector<Node>, std::greater<Node>> heap;
    for (size_t i = 0; i < m; i++) heap.push({weight[i], int(i)});
    int next = int(m);
    while (heap.size() > 1) {
      Node a = heap.top();
      heap.pop();
      Node b = heap.top();
      heap.pop();
      parent[a.second] = next;
      parent[b.second] = next;
      weight[next] = a.first + b.first;
      heap.push({weight[next], next});
      next++;
    }
    uint32_t maxd = 0;
    std::vector<uint32_t> depth(m);
    for (size_t i = 0; i < m; i++) {
      uint32_t d = 0;
      for (int p = parent[int(i)]; p >= 0; p = parent[p]) d++;
      depth[i] = d;
      maxd = std::max(maxd, d);
    }
    if (maxd <= 15) {
      for (size_t i = 0; i < m; i++) lengths[used[i]] = uint8_t(depth[i]);
      return lengths;
    }
    // Too deep: flatten the weights and rebuild.
    for (auto& x : w) x = (x + 1) / 2;
  }
}

void write_prefix_lengths(BitWriter& bw, const std::vector<uint8_t>& lengths) {
  size_t n = lengths.size();
  check(n >= 1 && n <= kMaxAlphabet, "bad alphabet size");
  size_t used = 0, last = 0;
  for (size_t i = 0; i < n; i++)
    if (lengths[i]) {
      used++;
      last = i;
    }
  check(used >= 1, "no symbols used");
  if (used == 1 && last == 0) {
    // Only symbol 0: the always-zero shortcut covers it.
    bw.write_bit(true);
    return;
  }
  bw.write_bit(false);
  size_t alpha = last + 1;  // >= 2 here
  uint32_t v = uint32_t(alpha - 1);
  uint32_t nn = floor_log2(v);
  bw.write(4, nn);
  bw.write(nn, v - (1u << nn));
  for (size_t i = 0; i < alpha;) {
    if (lengths[i] == 0) {
      size_t run = 1;
      while (i + run < alpha && lengths[i + run] == 0) run++;
      if (run >= 2) {
        size_t chunk = std::min<size_t>(run, 257);
        bw.write(5, 16);
        write_u8_coded(bw, uint32_t(chunk - 2));
        i += chunk;
        continue;
      }
    }
    bw.write(5, lengths[i]);
    i++;
  }
}

std::vector<uint8_t> read_prefix_lengths(BitReader& br) {
  if (br.read_bit()) return {};
  uint32_t nn = br.read(4);
  uint32_t m = br.read(nn);
  uint64_t size = 1ull + (1ull << nn) + m;
  check_corrupt(size <= kMaxAlphabet, "alphabet too large");
  std::vector<uint8_t> lengths(size_t(size), 0);
  uint64_t i = 0;
  while (i < size) {
    uint32_t item = br.read(5);
    if (item == 16) {
      uint64_t run = uint64_t(read_u8_coded(br)) + 2;
      check_corrupt(i + run <= size, "zero run overflows alphabet");
      i += run;
    } else {
      check_corrupt(item <= 15, "bad code length");
      lengths[size_t(i++)] = uint8_t(item);
    }
  }
  return lengths;
}

// ---------------------------------------------------------------------------
// LZ77 distances

namespace {

struct SpecialTable {
  int entries[kNumSpecialDistances][2];
  SpecialTable() {
    std::vector<std::pair<int, int>> cands;  // (dx, dy)
    for (int dy = 0; dy <= 8; dy++)
      for (int dx = -7; dx <= 7; dx++)
        if (!(dy == 0 && dx <= 0)) cands.push_back({dx, dy});
    std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
      int na = a.first * a.first + a.second * a.second;
      int nb = b.first * b.first + b.second * b.second;
      if (na != nb) return na < nb;
      if (std::abs(a.first) != std::abs(b.first))
        return std::abs(a.first) < std::abs(b.first);
      return a.first > b.first;  // positive dx before negative
    });
    for (uint32_t i = 0; i < kNumSpecialDistances; i++) {
      entries[i][0] = cands[i].first;
      entries[i][1] = cands[i].second;
    }
  }
};

}  // namespace

const int (*special_distance_table())[2] {
  static const SpecialTable t;
  return t.entries;
}

uint32_t lz77_max_special_distance(uint32_t channel_width) {
  const int(*tab)[2] = special_distance_table();
  int64_t mx = 1;
  for (uint32_t i = 0; i < kNumSpecialDistances; i++) {
    int64_t d = int64_t(tab[i][1]) * channel_width + tab[i][0];
    if (d < 1) d = 1;
    mx = std::max(mx, d);
  }
  return uint32_t(std::min<int64_t>(mx, kLz77Window));
}

uint32_t lz77_linear_distance(uint32_t dist_value, uint32_t channel_width) {
  if (dist_value < kNumSpecialDistances) {
    const int(*tab)[2] = special_distance_table();
    int64_t d =
        int64_t(tab[dist_value][1]) * channel_width + tab[dist_value][0];
    if (d < 1) d = 1;
    check_corrupt(d <= kLz77Window, "copy distance exceeds window");
    return uint32_t(d);
  }
  uint64_t d = uint64_t(dist_value) - kNumSpecialDistances + 1 +
               lz77_max_special_distance(channel_width);
  check_corrupt(d <= kLz77Window, "copy distance exceeds window");
  return uint32_t(d);
}

Lz77DistanceCoder::Lz77DistanceCoder(uint32_t channel_width) {
  max_special_ = lz77_max_special_distance(channel_width);
  const int(*tab)[2] = special_distance_table();
  std::vector<std::pair<uint32_t, uint32_t>> tmp;
  for (uint32_t i = 0; i < kNumSpecialDistances; i++) {
    int64_t d = int64_t(tab[i][1]) * channel_width + tab[i][0];
    if (d < 1) d = 1;
    if (d > kLz77Window) continue;
    tmp.push_back({uint32_t(d), i});
  }
  std::sort(tmp.begin(), tmp.end());
  for (auto& p : tmp)
    if (special_.empty() || special_.back().first != p.first)
      special_.push_back(p);  // lowest code per distance
}

bool Lz77DistanceCoder::encode(uint32_t linear_distance,
                               uint32_t* dist_value) const {
  if (linear_distance < 1 || linear_distance > kLz77Window) return false;
  if (linear_distance <= max_special_) {
    auto it = std::lower_bound(special_.begin(), special_.end(),
                               std::make_pair(linear_distance, 0u));
    if (it != special_.end() && it->first == linear_distance) {
      *dist_value = it->second;
      return true;
    }
    return false;
  }
  *dist_value = uint32_t(uint64_t(linear_distance) - max_special_ - 1 +
                         kNumSpecialDistances);
  return true;
}

// ---------------------------------------------------------------------------
// Context map

void write_context_map(BitWriter& bw, const std::vector<uint8_t>& map,
                       int depth) {
  check(!map.empty(), "empty context map");
  uint32_t mx = 0;
  for (uint8_t v : map) mx = std::max<uint32_t>(mx, v);
  check(mx < kMaxClusters, "too many clusters");

  std::vector<uint8_t> best_bytes;
  size_t best_bits = ~size_t(0);
  auto consider = [&](BitWriter& w) {
    if (w.bits_written() < best_bits) {
      best_bits = w.bits_written();
      best_bytes = w.take();
    }
  };
  if (mx <= 7) {
    BitWriter w;
    w.write_bit(false);
    uint32_t width = mx == 0 ? 0 : ceil_log2(mx + 1);
    w.write(2, width);
    for (uint8_t v : map) w.write(width, v);
    consider(w);
  }
  if (depth < 2) {
    for (bool mtf : {false, true}) {
      BitWriter w;
      w.write_bit(true);
      w.write_bit(mtf);
      std::vector<uint8_t> vals(map);
      if (mtf) mtf_apply(vals);
      EntropyEncoder enc(1);
      for (uint8_t v : vals) enc.put(0, v);
      EntropyEncodeOptions o;
      o.try_lz77 = depth + 1 <= 1 && vals.size() >= 64;
      o.recursion_depth = depth + 1;
      enc.finish(w, o);
      consider(w);
    }
  }
  check(best_bits != ~size_t(0), "no context map encoding available");

  BitReader rb(best_bytes);
  size_t left = best_bits;
  while (left) {
    size_t chunk = std::min<size_t>(left, 32);
    bw.write(chunk, rb.read(chunk));
    left -= chunk;
  }
}

std::vector<uint8_t> read_context_map(BitReader& br, size_t num_contexts,
                                      int depth, uint32_t* num_clusters) {
  check(num_contexts >= 1, "need at least one context");
  std::vector<uint8_t> map(num_contexts);
  if (!br.read_bit()) {
    uint32_t width = br.read(2);
    for (auto& v : map) v = uint8_t(width ? br.read(width) : 0);
  } else {
    check_corrupt(depth < 2, "context map nesting too deep");
    bool mtf = br.read_bit();
    EntropyDecoder dec(br, 1, 1, depth + 1);
    for (auto& v : map) {
      uint32_t x = dec.read(0);
      check_corrupt(x <= 255, "context map entry out of range");
      v = uint8_t(x);
    }
    dec.finalize();
    if (mtf) mtf_undo(map);
  }
  uint32_t mx = 0;
  for (uint8_t v : map) mx = std::max<uint32_t>(mx, v);
  check_corrupt(mx < kMaxClusters, "too many clusters");
  std::vector<bool> seen(mx + 1, false);
  for (uint8_t v : map) seen[v] = true;
  for (bool s : seen) check_corrupt(s, "context map skips a cluster index");
  *num_clusters = mx + 1;
  return map;
}

// ---------------------------------------------------------------------------
// ANS tables

namespace {

struct AnsTable {
  std::vector<uint32_t> freq;
  std::vector<uint32_t> cum;  // size freq.size() + 1
  std::vector<uint16_t> slot_symbol;

  void build(const std::vector<uint32_t>& f) {
    freq = f;
    cum.assign(f.size() + 1, 0);
    for (size_t i = 0; i < f.size(); i++) cum[i + 1] = cum[i] + f[i];
    check_corrupt(cum.back() == kAnsTotal, "frequencies must sum to 4096");
    slot_symbol.assign(kAnsTotal, 0);
    size_t s = 0;
    for (size_t i = 0; i < f.size(); i++)
      for (uint32_t k = 0; k < f[i]; k++) slot_symbol[s++] = uint16_t(i);
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Decoder

struct EntropyDecoder::Cluster {
  HybridUintConfig config;
  AnsTable ans;
  PrefixCode prefix;
};

EntropyDecoder::EntropyDecoder(BitReader& br, size_t num_contexts,
                               uint32_t channel_width, int depth)
    : br_(br), channel_width_(channel_width) {
  check(num_contexts >= 1, "need at least one context");
  check(channel_width >= 1, "bad channel width");
  num_base_contexts_ = num_contexts;
  lz77_.enabled = br_.read_bit();
  if (lz77_.enabled) {
    check_corrupt(depth <= 1, "LZ77 not allowed at this nesting depth");
    lz77_.min_symbol = read_u32(br_, kLz77MinSymbolSpec);
    lz77_.min_length = read_u32(br_, kLz77MinLengthSpec);
    lz77_.len_config = read_hybrid_config(br_);
  }
  size_t num_total = num_contexts + (lz77_.enabled ? 1 : 0);
  ctx_map_ = read_context_map(br_, num_total, depth, &num_clusters_);
  use_prefix_ = br_.read_bit();
  if (use_prefix_) {
    max_alphabet_ = kMaxAlphabet;
  } else {
    uint32_t sel = br_.read(2);
    max_alphabet_ = 32u << sel;
  }
  clusters_.resize(num_clusters_);
  for (auto& c : clusters_) c.config = read_hybrid_config(br_);
  for (auto& c : clusters_) {
    if (use_prefix_) {
      auto lengths = read_prefix_lengths(br_);
      if (lengths.empty()) lengths.assign(1, 1);
      c.prefix = PrefixCode::from_lengths(lengths);
    } else {
      c.ans.build(read_distribution(br_, max_alphabet_));
    }
  }
  if (!use_prefix_) state_ = br_.read(32);
}

EntropyDecoder::~EntropyDecoder() = default;

uint32_t EntropyDecoder::read_token(uint32_t cluster) {
  Cluster& c = clusters_[cluster];
  if (use_prefix_) return c.prefix.decode(br_);
  uint32_t slot = state_ & (kAnsTotal - 1);
  uint32_t sym = c.ans.slot_symbol[slot];
  state_ = c.ans.freq[sym] * (state_ >> kAnsPrecision) + slot - c.ans.cum[sym];
  if (state_ < (1u << 16)) state_ = (state_ << 16) | br_.read(16);
  return sym;
}

uint32_t EntropyDecoder::read_value(uint32_t cluster) {
  uint32_t token = read_token(cluster);
  const HybridUintConfig& cfg = clusters_[cluster].config;
  uint32_t nbits = cfg.raw_bits_for_token(token);
  uint32_t bits = nbits ? br_.read(nbits) : 0;
  return cfg.merge(token, bits);
}

uint32_t EntropyDecoder::read(uint32_t ctx) {
  check(ctx < num_base_contexts_, "context out of range");
  uint32_t value;
  if (copy_remaining_ > 0) {
    value = window_[size_t(copy_pos_ & (kLz77Window - 1))];
    copy_pos_++;
    copy_remaining_--;
  } else if (!lz77_.enabled) {
    value = read_value(ctx_map_[ctx]);
  } else {
    uint32_t cluster = ctx_map_[ctx];
    uint32_t token = read_token(cluster);
    if (token >= lz77_.min_symbol) {
      uint32_t len_tok = token - lz77_.min_symbol;
      uint32_t nb = lz77_.len_config.raw_bits_for_token(len_tok);
      uint32_t bits = nb ? br_.read(nb) : 0;
      uint64_t length =
          uint64_t(lz77_.len_config.merge(len_tok, bits)) + lz77_.min_length;
      uint32_t dist_value = read_value(ctx_map_[num_base_contexts_]);
      uint64_t dist = lz77_linear_distance(dist_value, channel_width_);
      check_corrupt(dist <= num_decoded_, "copy reaches before stream start");
      copy_pos_ = num_decoded_ - dist;
      copy_remaining_ = length;
      value = window_[size_t(copy_pos_ & (kLz77Window - 1))];
      copy_pos_++;
      copy_remaining_--;
    } else {
      const HybridUintConfig& cfg = clusters_[cluster].config;
      uint32_t nb = cfg.raw_bits_for_token(token);
      uint32_t bits = nb ? br_.read(nb) : 0;
      value = cfg.merge(token, bits);
    }
  }
  if (lz77_.enabled) {
    if (num_decoded_ < kLz77Window)
      window_.push_back(value);
    else
      window_[size_t(num_decoded_ & (kLz77Window - 1))] = value;
  }
  num_decoded_++;
  return value;
}

void EntropyDecoder::finalize() {
  check_corrupt(copy_remaining_ == 0, "unfinished copy at end of stream");
  if (!use_prefix_)
    check_corrupt(state_ == kAnsInitialState,
                  "entropy stream checksum mismatch");
}

// ---------------------------------------------------------------------------
// Encoder

void EntropyEncoder::finish(BitWriter& bw, const EntropyEncodeOptions& opts) {
  const uint32_t max_token_limit =
      opts.use_prefix_code ? kMaxAlphabet - 1 : 255;
  const size_t n = tokens_.size();

  auto bump = [](std::vector<uint64_t>& h, uint32_t tok) {
    if (h.size() <= tok) h.resize(size_t(tok) + 1, 0);
    h[tok]++;
  };

  // LZ77 planning: greedy hash-chain matching over the raw values, kept only
  // if an entropy estimate says the plan beats plain literals.
  Lz77Params lz = opts.lz77;
  lz.enabled = false;
  struct Copy {
    size_t pos;
    uint32_t length;
    uint32_t dist_value;
  };
  std::vector<Copy> copies;
  if (opts.try_lz77 && opts.recursion_depth <= 1 && n >= 32 &&
      opts.lz77.min_symbol <= max_token_limit &&
      u32_can_encode(kLz77MinSymbolSpec, opts.lz77.min_symbol) &&
      u32_can_encode(kLz77MinLengthSpec, opts.lz77.min_length)) {
    uint32_t len_budget = max_token_limit - opts.lz77.min_symbol;
    uint32_t max_len_value = 0;
    for (uint64_t v = 1; v <= (1ull << 24); v <<= 1) {
      uint32_t tok, nb, bits;
      opts.lz77.len_config.split(uint32_t(v - 1), &tok, &nb, &bits);
      if (tok <= len_budget) max_len_value = uint32_t(v - 1);
    }
    uint64_t max_length = uint64_t(max_len_value) + opts.lz77.min_length;
    Lz77DistanceCoder dc(opts.channel_width);
    const uint32_t kHashSize = 1u << 16;
    std::vector<int64_t> head(kHashSize, -1);
    std::vector<int64_t> prev(n, -1);
    auto hash3 = [&](size_t i) {
      uint64_t h = tokens_[i].value;
      h = h * 0x9E3779B185EBCA87ull + tokens_[i + 1].value;
      h = h * 0x9E3779B185EBCA87ull + tokens_[i + 2].value;
      return uint32_t((h * 0xC2B2AE3D27D4EB4Full) >> 48);
    };
    auto insert_pos = [&](size_t i) {
      if (i + 3 > n) return;
      uint32_t h = hash3(i);
      prev[i] = head[h];
      head[h] = int64_t(i);
    };
    uint64_t covered = 0;
    size_t i = 0;
    while (i + 3 <= n && i + opts.lz77.min_length <= n) {
      uint32_t h = hash3(i);
      uint32_t best_len = 0, best_dv = 0, best_dist = 0;
      int depth_left = 32;
      uint32_t cap = uint32_t(std::min<uint64_t>(max_length, n - i));
      for (int64_t j = head[h]; j >= 0 && depth_left-- > 0; j = prev[j]) {
        uint64_t dist = uint64_t(i) - uint64_t(j);
        if (dist > kLz77Window) break;
        uint32_t dv;
        if (!dc.encode(uint32_t(dist), &dv)) continue;
        uint32_t len = 0;
        while (len < cap && tokens_[j + len].value == tokens_[i + len].value)
          len++;
        if (len > best_len) {
          best_len = len;
          best_dv = dv;
          best_dist = uint32_t(dist);
        }
      }
      if (best_len >= opts.lz77.min_length &&
          (best_len >= 4 || best_dist <= 8)) {
        copies.push_back({i, best_len, best_dv});
        covered += best_len;
        size_t end = i + best_len;
        for (; i < end; i++) insert_pos(i);
      } else {
        insert_pos(i);
        i++;
      }
    }
    // Short chance matches can replace cheap literals with an expensive
    // length token plus a wide raw distance, so the plan is kept only when
    // a per-context entropy estimate of both layouts favors it. Both sides
    // use the default split and the same signaling proxy as the config
    // search, which keeps the comparison fair.
    if (covered > 0) {
      HybridUintConfig def = opts.base_config;
      auto hist_cost = [](const std::vector<std::vector<uint64_t>>& hs,
                          uint64_t raw) {
        double cost = double(raw);
        for (const auto& h : hs)
          cost += histogram_cost_bits(h) + double(h.size()) * 1.5;
        return cost;
      };
      std::vector<std::vector<uint64_t>> lit_h(num_contexts_);
      uint64_t lit_raw = 0;
      for (const auto& t : tokens_) {
        uint32_t tok, nb, bits;
        def.split(t.value, &tok, &nb, &bits);
        bump(lit_h[t.ctx], tok);
        lit_raw += nb;
      }
      std::vector<std::vector<uint64_t>> lz_h(num_contexts_ + 1);
      uint64_t lz_raw = 0;
      size_t ci = 0;
      for (size_t k = 0; k < n;) {
        if (ci < copies.size() && copies[ci].pos == k) {
          const Copy& c = copies[ci++];
          uint32_t tok, nb, bits;
          opts.lz77.len_config.split(c.length - opts.lz77.min_length, &tok,
                                     &nb, &bits);
          bump(lz_h[tokens_[k].ctx], opts.lz77.min_symbol + tok);
          lz_raw += nb;
          def.split(c.dist_value, &tok, &nb, &bits);
          bump(lz_h[num_contexts_], tok);
          lz_raw += nb;
          k += c.length;
        } else {
          uint32_t tok, nb, bits;
          def.split(tokens_[k].value, &tok, &nb, &bits);
          bump(lz_h[tokens_[k].ctx], tok);
          lz_raw += nb;
          k++;
        }
      }
      if (hist_cost(lz_h, lz_raw) + 16.0 < hist_cost(lit_h, lit_raw)) {
        lz = opts.lz77;
        lz.enabled = true;
      } else {
        copies.clear();
      }
    }
  }

  const size_t num_ctx_total = num_contexts_ + (lz.enabled ? 1 : 0);
  const uint32_t dist_ctx = uint32_t(num_contexts_);

  // Replays the stream plan: literals, copy tokens (in the context of the
  // first replaced symbol) and distance values.
  auto walk = [&](auto&& literal, auto&& copy_token, auto&& distance) {
    size_t ci = 0, i = 0;
    while (i < n) {
      if (ci < copies.size() && copies[ci].pos == i) {
        const Copy& c = copies[ci++];
        uint32_t tok, nb, bits;
        lz.len_config.split(c.length - lz.min_length, &tok, &nb, &bits);
        copy_token(tokens_[i].ctx, lz.min_symbol + tok, nb, bits);
        distance(c.dist_value);
        i += c.length;
      } else {
        literal(tokens_[i].ctx, tokens_[i].value);
        i++;
      }
    }
  };
  // Cluster contexts by their token histograms under the base config.
  std::vector<std::vector<uint64_t>> hists(num_ctx_total);
  HybridUintConfig def = opts.base_config;
  walk(
      [&](uint32_t ctx, uint32_t v) {
        check(ctx < num_contexts_, "context out of range");
        uint32_t tok, nb, bits;
        def.split(v, &tok, &nb, &bits);
        bump(hists[ctx], tok);
      },
      [&](uint32_t ctx, uint32_t tok, uint32_t, uint32_t) {
        bump(hists[ctx], tok);
      },
      [&](uint32_t dv) {
        uint32_t tok, nb, bits;
        def.split(dv, &tok, &nb, &bits);
        bump(hists[dist_ctx], tok);
      });
  std::vector<uint8_t> ctx_map = cluster_histograms(hists, kMaxClusters);
  uint32_t num_clusters = 0;
  for (uint8_t c : ctx_map)
    num_clusters = std::max<uint32_t>(num_clusters, c + 1u);

  // Literal tokens must stay below the copy-token range and inside the
  // backend's alphabet.
  const uint32_t literal_limit =
      lz.enabled ? std::min(lz.min_symbol, max_token_limit + 1)
                 : max_token_limit + 1;

  std::vector<HybridUintConfig> configs(num_clusters, opts.base_config);
  if (opts.search_configs) {
    std::vector<std::vector<uint32_t>> cluster_vals(num_clusters);
    walk(
        [&](uint32_t ctx, uint32_t v) {
          cluster_vals[ctx_map[ctx]].push_back(v);
        },
        [&](uint32_t, uint32_t, uint32_t, uint32_t) {},
        [&](uint32_t dv) { cluster_vals[ctx_map[dist_ctx]].push_back(dv); });
    static const HybridUintConfig kCandidates[] = {
        {0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {2, 1, 0}, {3, 0, 0},
        {3, 1, 0}, {4, 0, 0}, {4, 1, 0}, {4, 2, 0}, {4, 1, 1},
        {5, 1, 0}, {5, 2, 0}, {6, 1, 0}, {7, 0, 0},
    };
    for (uint32_t c = 0; c < num_clusters; c++) {
      const auto& vals = cluster_vals[c];
      if (vals.empty()) continue;
      double best_cost = 0;
      int best = -1;
      for (size_t k = 0; k < sizeof(kCandidates) / sizeof(kCandidates[0]);
           k++) {
        const HybridUintConfig& cand = kCandidates[k];
        std::vector<uint64_t> h;
        uint64_t raw = 0;
        bool ok = true;
        for (uint32_t v : vals) {
          uint32_t tok, nb, bits;
          cand.split(v, &tok, &nb, &bits);
          if (tok >= literal_limit) {
            ok = false;
            break;
          }
          bump(h, tok);
          raw += nb;
        }
        if (!ok) continue;
        double cost =
            histogram_cost_bits(h) + double(raw) + double(h.size()) * 1.5;
        if (best < 0 || cost < best_cost) {
          best = int(k);
          best_cost = cost;
        }
      }
      if (best >= 0) configs[c] = kCandidates[best];
    }
  }

  // Final histograms under the chosen configs.
  std::vector<std::vector<uint64_t>> final_hist(num_clusters);
  walk(
      [&](uint32_t ctx, uint32_t v) {
        uint32_t cl = ctx_map[ctx];
        uint32_t tok, nb, bits;
        configs[cl].split(v, &tok, &nb, &bits);
        check(tok < literal_limit, "literal token collides with copy range");
        bump(final_hist[cl], tok);
      },
      [&](uint32_t ctx, uint32_t tok, uint32_t, uint32_t) {
        bump(final_hist[ctx_map[ctx]], tok);
      },
      [&](uint32_t dv) {
        uint32_t cl = ctx_map[dist_ctx];
        uint32_t tok, nb, bits;
        configs[cl].split(dv, &tok, &nb, &bits);
        bump(final_hist[cl], tok);
      });
  for (auto& h : final_hist) {
    if (h.empty()) h.assign(1, 1);
    check(h.size() <= size_t(max_token_limit) + 1, "alphabet too large");
  }

  // Header.
  bw.write_bit(lz.enabled);
  if (lz.enabled) {
    write_u32(bw, kLz77MinSymbolSpec, lz.min_symbol);
    write_u32(bw, kLz77MinLengthSpec, lz.min_length);
    write_hybrid_config(bw, lz.len_config);
  }
  write_context_map(bw, ctx_map, opts.recursion_depth);
  bw.write_bit(opts.use_prefix_code);
  if (!opts.use_prefix_code) {
    size_t largest = 1;
    for (auto& h : final_hist) largest = std::max(largest, h.size());
    uint32_t sel = 0;
    while (sel < 3 && (32u << sel) < largest) sel++;
    check((32u << sel) >= largest, "alphabet too large for the ANS backend");
    bw.write(2, sel);
  }
  for (auto& c : configs) write_hybrid_config(bw, c);

  std::vector<PrefixCode> prefix_codes;
  std::vector<std::vector<uint32_t>> freqs;
  std::vector<std::vector<uint32_t>> cums;
  if (opts.use_prefix_code) {
    prefix_codes.resize(num_clusters);
    for (uint32_t c = 0; c < num_clusters; c++) {
      auto lengths = build_prefix_lengths(final_hist[c]);
      write_prefix_lengths(bw, lengths);
      prefix_codes[c] = PrefixCode::from_lengths(lengths);
    }
  } else {
    freqs.resize(num_clusters);
    cums.resize(num_clusters);
    for (uint32_t c = 0; c < num_clusters; c++) {
      freqs[c] = normalize_histogram(final_hist[c]);
      write_distribution(bw, freqs[c]);
      cums[c].assign(freqs[c].size() + 1, 0);
      for (size_t i = 0; i < freqs[c].size(); i++)
        cums[c][i + 1] = cums[c][i] + freqs[c][i];
    }
  }

  // Payload plan: tokens and raw-bit packets in decode order.
  struct Emission {
    uint8_t kind;  // 0 = token, 1 = raw bits
    uint8_t cluster;
    uint16_t token;
    uint8_t nbits;
    uint32_t bits;
  };
  std::vector<Emission> plan;
  plan.reserve(n + n / 2);
  auto emit_token = [&](uint32_t cl, uint32_t tok) {
    plan.push_back({0, uint8_t(cl), uint16_t(tok), 0, 0});
  };
  auto emit_raw = [&](uint32_t nb, uint32_t bits) {
    if (nb) plan.push_back({1, 0, 0, uint8_t(nb), bits});
  };
  walk(
      [&](uint32_t ctx, uint32_t v) {
        uint32_t cl = ctx_map[ctx];
        uint32_t tok, nb, bits;
        configs[cl].split(v, &tok, &nb, &bits);
        emit_token(cl, tok);
        emit_raw(nb, bits);
      },
      [&](uint32_t ctx, uint32_t tok, uint32_t nb, uint32_t bits) {
        emit_token(ctx_map[ctx], tok);
        emit_raw(nb, bits);
      },
      [&](uint32_t dv) {
        uint32_t cl = ctx_map[dist_ctx];
        uint32_t tok, nb, bits;
        configs[cl].split(dv, &tok, &nb, &bits);
        emit_token(cl, tok);
        emit_raw(nb, bits);
      });

  if (opts.use_prefix_code) {
    for (const Emission& e : plan) {
      if (e.kind == 0)
        prefix_codes[e.cluster].encode(bw, e.token);
      else
        bw.write(e.nbits, e.bits);
    }
  } else {
    // Reverse pass: the ANS state transitions run backwards, recording where
    // the 16-bit flushes land; the forward pass then interleaves them with
    // the raw bits in decode order.
    std::vector<uint32_t> flush(plan.size(), 0);
    std::vector<uint8_t> has_flush(plan.size(), 0);
    uint32_t state = kAnsInitialState;
    for (size_t k = plan.size(); k-- > 0;) {
      const Emission& e = plan[k];
      if (e.kind != 0) continue;
      uint32_t f = freqs[e.cluster][e.token];
      uint32_t cum = cums[e.cluster][e.token];
      check(f > 0, "token with zero frequency");
      if (uint64_t(state) >= (uint64_t(f) << (32 - kAnsPrecision))) {
        flush[k] = state & 0xFFFF;
        has_flush[k] = 1;
        state >>= 16;
      }
      state = ((state / f) << kAnsPrecision) + (state % f) + cum;
    }
    bw.write(32, state);
    for (size_t k = 0; k < plan.size(); k++) {
      const Emission& e = plan[k];
      if (e.kind == 0) {
        if (has_flush[k]) bw.write(16, flush[k]);
      } else {
        bw.write(e.nbits, e.bits);
      }
    }
  }
  tokens_.clear();
}

}  // namespace modcodec
