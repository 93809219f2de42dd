#pragma once

#include <cstdint>
#include <vector>

#include "modcodec/bitio.h"
#include "modcodec/common.h"

namespace modcodec {

// ---------------------------------------------------------------------------
// Scalar codings

// Zigzag mapping 0,-1,1,-2,2,... -> 0,1,2,3,4,...
inline uint32_t pack_signed(int64_t v) {
  check(v >= -(int64_t(1) << 31) && v < (int64_t(1) << 31),
        "pack_signed: value out of 32-bit range");
  return v >= 0 ? uint32_t(v) << 1 : (uint32_t(-(v + 1)) << 1) + 1;
}

inline int64_t unpack_signed(uint32_t u) {
  return (u & 1) ? -int64_t(u >> 1) - 1 : int64_t(u >> 1);
}

// Small-integer coding for values in [0, 255]: a zero bit, else 3-bit
// exponent n plus n mantissa bits giving 2^n + m.
uint32_t read_u8_coded(BitReader& br);
void write_u8_coded(BitWriter& bw, uint32_t value);

// ---------------------------------------------------------------------------
// Hybrid integer coding: small values go entirely into the token; larger
// values put the magnitude class and a few top/bottom bits into the token and
// the middle bits into the raw-bit stream.

struct HybridUintConfig {
  uint32_t split_exponent = 4;
  uint32_t msb_in_token = 1;
  uint32_t lsb_in_token = 0;

  bool valid() const {
    return split_exponent <= 15 &&
           msb_in_token + lsb_in_token <= split_exponent;
  }

  void split(uint32_t value, uint32_t* token, uint32_t* nbits,
             uint32_t* bits) const {
    if (value < (1u << split_exponent)) {
      *token = value;
      *nbits = 0;
      *bits = 0;
      return;
    }
    uint32_t p = floor_log2(value);
    uint32_t msb = (value >> (p - msb_in_token)) & ((1u << msb_in_token) - 1);
    uint32_t lsb = value & ((1u << lsb_in_token) - 1);
    *token = (1u << split_exponent) +
             (((p - split_exponent) << (msb_in_token + lsb_in_token)) |
              (msb << lsb_in_token) | lsb);
    *nbits = p - msb_in_token - lsb_in_token;
    *bits = (value >> lsb_in_token) & ((1u << *nbits) - 1);
  }

  // Number of raw bits implied by a token (0 for direct tokens).
  uint32_t raw_bits_for_token(uint32_t token) const {
    if (token < (1u << split_exponent)) return 0;
    uint32_t t = token - (1u << split_exponent);
    uint32_t p = (t >> (msb_in_token + lsb_in_token)) + split_exponent;
    check_corrupt(p >= msb_in_token + lsb_in_token && p <= 31,
                  "hybrid token implies invalid bit count");
    return p - msb_in_token - lsb_in_token;
  }

  uint32_t merge(uint32_t token, uint32_t raw) const {
    if (token < (1u << split_exponent)) return token;
    uint32_t t = token - (1u << split_exponent);
    uint32_t p = (t >> (msb_in_token + lsb_in_token)) + split_exponent;
    uint32_t msb = (t >> lsb_in_token) & ((1u << msb_in_token) - 1);
    uint32_t lsb = t & ((1u << lsb_in_token) - 1);
    uint64_t v =
        ((uint64_t(1u << msb_in_token) | msb) << (p - msb_in_token)) |
        (uint64_t(raw) << lsb_in_token) | lsb;
    check_corrupt(v <= 0xFFFFFFFFull, "hybrid value out of range");
    return uint32_t(v);
  }
};

// Wire format: 4-bit split exponent, then the two sub-splits in
// ceil(log2(split+1)) bits each.
void write_hybrid_config(BitWriter& bw, const HybridUintConfig& cfg);
HybridUintConfig read_hybrid_config(BitReader& br);

// ---------------------------------------------------------------------------
// Move-to-front transform over the byte alphabet.

void mtf_apply(std::vector<uint8_t>& values);
void mtf_undo(std::vector<uint8_t>& values);

// ---------------------------------------------------------------------------
// Distributions

constexpr uint32_t kAnsPrecision = 12;  // frequencies sum to 4096
constexpr uint32_t kAnsTotal = 1u << kAnsPrecision;
constexpr uint32_t kAnsInitialState = 0x00130000;
constexpr uint32_t kMaxAlphabet = 1u << 15;  // prefix-code bound
constexpr uint32_t kMaxClusters = 255;

// Rescales counts to sum exactly 4096; every observed token keeps a nonzero
// frequency. Largest-remainder apportionment, ties to the lower index.
std::vector<uint32_t> normalize_histogram(const std::vector<uint64_t>& counts);

void write_distribution(BitWriter& bw, const std::vector<uint32_t>& freq);
std::vector<uint32_t> read_distribution(BitReader& br, uint32_t max_alphabet);

// ---------------------------------------------------------------------------
// Canonical prefix codes, maximum length 15. A table with exactly one used
// symbol codes that symbol in zero bits.

struct PrefixCode {
  std::vector<uint8_t> lengths;
  std::vector<uint16_t> codes;  // canonical, written MSB first
  int single_symbol = -1;       // >= 0: zero-bit mode

  static PrefixCode from_lengths(const std::vector<uint8_t>& lengths);
  void encode(BitWriter& bw, uint32_t symbol) const;
  uint32_t decode(BitReader& br) const;

 private:
  uint32_t first_code_[17] = {0};
  uint32_t offset_[17] = {0};
  std::vector<uint16_t> sorted_;
};

// Optimal-ish code lengths (Huffman with iterative count halving to meet the
// 15-bit cap). Zero counts get zero lengths.
std::vector<uint8_t> build_prefix_lengths(const std::vector<uint64_t>& counts);

// Wire format: single-bit always-zero shortcut, else alphabet size as
// 4-bit n + n-bit m (size = 1 + 2^n + m) and 5-bit length items where
// item 16 escapes a zero run of length u8_coded + 2.
void write_prefix_lengths(BitWriter& bw, const std::vector<uint8_t>& lengths);
std::vector<uint8_t> read_prefix_lengths(BitReader& br);

// ---------------------------------------------------------------------------
// Context map: surjection from pre-clustering contexts onto [0, num_clusters).
// depth guards LZ77 nesting: a map read for a depth-d stream codes its
// entries with a depth-(d+1) stream, and LZ77 is allowed at depths 0 and 1.

void write_context_map(BitWriter& bw, const std::vector<uint8_t>& map,
                       int depth = 0);
std::vector<uint8_t> read_context_map(BitReader& br, size_t num_contexts,
                                      int depth, uint32_t* num_clusters);

// ---------------------------------------------------------------------------
// LZ77 over token streams

constexpr uint32_t kLz77WindowBits = 20;
constexpr uint32_t kLz77Window = 1u << kLz77WindowBits;
constexpr uint32_t kNumSpecialDistances = 120;

struct Lz77Params {
  bool enabled = false;
  uint32_t min_symbol = 224;
  uint32_t min_length = 3;
  HybridUintConfig len_config{4, 1, 0};
};

// The 2D special-distance table: 120 (dx, dy) pairs, frozen constant.
const int (*special_distance_table())[2];

// Map a decoded distance value to a linear window offset (>= 1).
uint32_t lz77_linear_distance(uint32_t dist_value, uint32_t channel_width);
// Largest linear distance reachable through the special table.
uint32_t lz77_max_special_distance(uint32_t channel_width);

// Encoder-side mapping from linear distances to codable values; distances in
// [1, max_special] are representable only via exact special-table hits.
class Lz77DistanceCoder {
 public:
  explicit Lz77DistanceCoder(uint32_t channel_width);
  // Returns false if the distance has no representation.
  bool encode(uint32_t linear_distance, uint32_t* dist_value) const;

 private:
  std::vector<std::pair<uint32_t, uint32_t>> special_;  // (linear, code)
  uint32_t max_special_;
};

// ---------------------------------------------------------------------------
// Entropy streams. A stream codes values addressed by pre-clustering context;
// the header carries LZ77 parameters, the context map, the backend selector,
// per-cluster hybrid configs and per-cluster distributions.

struct EntropyEncodeOptions {
  bool use_prefix_code = false;
  bool try_lz77 = false;
  uint32_t channel_width = 1;  // feeds the 2D special-distance table
  Lz77Params lz77;             // parameters used if LZ77 is accepted
  bool search_configs = true;  // per-cluster hybrid config search
  // Clustering basis; also the config every cluster keeps when the search
  // is off.
  HybridUintConfig base_config;
  int recursion_depth = 0;     // context-map nesting level
};

class EntropyEncoder {
 public:
  explicit EntropyEncoder(size_t num_contexts) : num_contexts_(num_contexts) {}

  void put(uint32_t ctx, uint32_t value) { tokens_.push_back({ctx, value}); }

  // Serializes header and payload. The encoder object is spent afterwards.
  void finish(BitWriter& bw, const EntropyEncodeOptions& opts);

  size_t num_values() const { return tokens_.size(); }

 private:
  struct Item {
    uint32_t ctx;
    uint32_t value;
  };
  size_t num_contexts_;
  std::vector<Item> tokens_;
};

class EntropyDecoder {
 public:
  // Reads the stream header. channel_width feeds the special-distance table.
  EntropyDecoder(BitReader& br, size_t num_contexts, uint32_t channel_width,
                 int depth = 0);
  ~EntropyDecoder();

  uint32_t read(uint32_t ctx);

  // Must be called after the last value: checks the ANS checksum state and
  // that no LZ77 copy is left dangling.
  void finalize();

  bool lz77_enabled() const { return lz77_.enabled; }

 private:
  struct Cluster;
  uint32_t read_token(uint32_t cluster);
  uint32_t read_value(uint32_t cluster);

  BitReader& br_;
  Lz77Params lz77_;
  std::vector<uint8_t> ctx_map_;
  size_t num_base_contexts_ = 0;
  uint32_t num_clusters_ = 0;
  bool use_prefix_ = false;
  uint32_t max_alphabet_ = 0;
  std::vector<Cluster> clusters_;
  uint32_t state_ = 0;
  uint32_t channel_width_ = 1;
  // LZ77 state
  std::vector<uint32_t> window_;
  uint64_t num_decoded_ = 0;
  uint64_t copy_pos_ = 0;
  uint64_t copy_remaining_ = 0;
};

}  // namespace modcodec
